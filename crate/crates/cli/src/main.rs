use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};
use parallax_cli::commands::{run_command, Command};
use parallax_cli::config::{KeyValues, RunConfig};
use parallax_cli::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "parallax", version, about = "Planar-parallax geometry, masks, losses and evaluation")]
struct Cli {
    /// Worker threads; all outputs are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run parameters file (key = value).
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn run(cli: &Cli) -> CliResult<String> {
    let kv = match &cli.params {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::empty(),
    };
    let run = RunConfig::from_key_values(&kv)?;
    let threads = cli.threads.or(run.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    info!("event=start threads={}", rayon::current_num_threads());
    run_command(&cli.command, &run)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| writeln!(buf, "level={} target={} {}", record.level(), record.target(), record.args()))
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("event=error code={} message={:?}", e.exit_code(), e.to_string());
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
