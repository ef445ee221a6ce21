//! Monocular depth metrics with depth capping and optional median scaling.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::grid::DepthField;

/// Default evaluation cap, meters.
pub const DEFAULT_CAP: f64 = 80.0;
/// Lower clamp on predictions before metrics.
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub count: usize,
}

impl DepthMetrics {
    pub const COLUMNS: [&'static str; 7] = ["abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    /// Aligned two-line table: header then values.
    pub fn table(&self) -> String {
        let header: Vec<String> = Self::COLUMNS.iter().map(|c| format!("{c:>10}")).collect();
        let values: Vec<String> = self.values().iter().map(|v| format!("{v:>10.4}")).collect();
        format!("{}\n{}", header.join(""), values.join(""))
    }
}

impl fmt::Display for DepthMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    sq_log: f64,
    d1: usize,
    d2: usize,
    d3: usize,
    count: usize,
}

/// Metrics over pixels where `gt ∈ (0, cap]` and both fields are valid.
///
/// With `median_scale`, `pred` is first multiplied by `med(gt)/med(pred)`
/// over those pixels. Predictions are then clamped to `[1e-3, cap]`.
/// Accumulation runs row by row and reduces rows in order, so results do not
/// depend on the thread count.
pub fn evaluate(pred: &DepthField, gt: &DepthField, cap: f64, median_scale: bool) -> Result<DepthMetrics> {
    check_dims(gt.dims(), pred.dims())?;
    if !(cap > MIN_DEPTH) {
        return Err(Error::InvalidParameter {
            name: "cap",
            reason: format!("must exceed {MIN_DEPTH}, got {cap}"),
        });
    }
    let (w, h) = gt.dims();
    let pair = |x: usize, y: usize| -> Option<(f64, f64)> {
        let g = gt.at(x, y)?;
        let p = pred.at(x, y)?;
        (g > 0.0 && g <= cap && p.is_finite()).then_some((p, g))
    };
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let Some(pg) = pair(x, y) {
                pairs.push(pg);
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyMask("ground truth"));
    }
    let ratio = if median_scale {
        let mp = median(pairs.iter().map(|p| p.0).collect());
        let mg = median(pairs.iter().map(|p| p.1).collect());
        if !(mp > 0.0) {
            return Err(Error::DegenerateFit(format!("median prediction {mp} is not positive")));
        }
        mg / mp
    } else {
        1.0
    };
    let t1 = 1.25;
    let (t2, t3) = (t1 * t1, t1 * t1 * t1);
    let row_sums: Vec<Sums> = {
        use rayon::prelude::*;
        (0..h)
            .into_par_iter()
            .map(|y| {
                let mut s = Sums::default();
                for x in 0..w {
                    let Some((p, g)) = pair(x, y) else { continue };
                    let p = (p * ratio).clamp(MIN_DEPTH, cap);
                    let diff = p - g;
                    s.abs_rel += diff.abs() / g;
                    s.sq_rel += diff * diff / g;
                    s.sq += diff * diff;
                    let dl = p.ln() - g.ln();
                    s.sq_log += dl * dl;
                    let thresh = (p / g).max(g / p);
                    s.d1 += usize::from(thresh < t1);
                    s.d2 += usize::from(thresh < t2);
                    s.d3 += usize::from(thresh < t3);
                    s.count += 1;
                }
                s
            })
            .collect()
    };
    let total = row_sums.iter().fold(Sums::default(), |a, s| Sums {
        abs_rel: a.abs_rel + s.abs_rel,
        sq_rel: a.sq_rel + s.sq_rel,
        sq: a.sq + s.sq,
        sq_log: a.sq_log + s.sq_log,
        d1: a.d1 + s.d1,
        d2: a.d2 + s.d2,
        d3: a.d3 + s.d3,
        count: a.count + s.count,
    });
    let n = total.count as f64;
    Ok(DepthMetrics {
        abs_rel: total.abs_rel / n,
        sq_rel: total.sq_rel / n,
        rmse: (total.sq / n).sqrt(),
        rmse_log: (total.sq_log / n).sqrt(),
        delta1: total.d1 as f64 / n,
        delta2: total.d2 as f64 / n,
        delta3: total.d3 as f64 / n,
        count: total.count,
    })
}
