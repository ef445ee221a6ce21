//! Dense per-pixel storage.
//!
//! Every per-pixel map in the kernel (images aside) is a [`Grid`], optionally
//! paired with a validity [`Mask`] in a [`MaskedField`]. Invalid pixels hold
//! the type's default value; no NaN is ever stored.
//!
//! Row-parallel construction goes through [`Grid::from_fn`], which splits the
//! work by rows on the current rayon pool. Reductions sum each row
//! sequentially and then add the row sums in row order, so results are
//! bit-identical for any thread count.

use std::ops::Deref;

use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel boolean map.
pub type Mask = Grid<bool>;
/// Per-pixel real map.
pub type ScalarField = Grid<f64>;
/// Per-pixel 2-vector map (pixels).
pub type VectorField = Grid<[f64; 2]>;

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values ({width}x{height})", width * height),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T: Send> Grid<T> {
    /// Builds a grid by evaluating `f(x, y)` for every pixel, row-parallel.
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> T + Sync,
    {
        let mut rows: Vec<Vec<T>> = (0..height)
            .into_par_iter()
            .map(|y| (0..width).map(|x| f(x, y)).collect())
            .collect();
        let mut data = Vec::with_capacity(width * height);
        for row in rows.iter_mut() {
            data.append(row);
        }
        Self {
            width,
            height,
            data,
        }
    }
}

impl<T: Sync> Grid<T> {
    pub fn map<U: Send, F>(&self, f: F) -> Grid<U>
    where
        F: Fn(&T) -> U + Sync,
    {
        Grid::from_fn(self.width, self.height, |x, y| f(self.get(x, y)))
    }

    /// Row-ordered deterministic sum of `f(x, y, value)`.
    pub fn sum_by<F>(&self, f: F) -> f64
    where
        F: Fn(usize, usize, &T) -> f64 + Sync,
    {
        let row_sums: Vec<f64> = (0..self.height)
            .into_par_iter()
            .map(|y| {
                let mut acc = 0.0;
                for x in 0..self.width {
                    acc += f(x, y, self.get(x, y));
                }
                acc
            })
            .collect();
        row_sums.iter().sum()
    }
}

impl Grid<f64> {
    pub fn sum(&self) -> f64 {
        self.sum_by(|_, _, v| *v)
    }

    /// Sum and count over pixels where `mask` is set.
    pub fn masked_sum(&self, mask: &Mask) -> Result<(f64, usize)> {
        check_dims(self.dims(), mask.dims())?;
        let sum = self.sum_by(|x, y, v| if *mask.get(x, y) { *v } else { 0.0 });
        Ok((sum, mask.count()))
    }

    /// Masked mean; `None` when the mask is empty.
    pub fn masked_mean(&self, mask: &Mask) -> Result<Option<f64>> {
        let (sum, count) = self.masked_sum(mask)?;
        Ok((count > 0).then(|| sum / count as f64))
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        check_dims(self.dims(), other.dims())?;
        Ok(Grid::from_fn(self.width, self.height, |x, y| {
            *self.get(x, y) && *other.get(x, y)
        }))
    }

    pub fn not(&self) -> Mask {
        self.map(|v| !*v)
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|v| *v)
    }

    pub fn none(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    /// Keeps pixels whose whole `(2r+1)²` neighborhood is set and inside the grid.
    pub fn eroded(&self, radius: usize) -> Mask {
        let (w, h) = self.dims();
        Grid::from_fn(w, h, |x, y| {
            if x < radius || y < radius || x + radius >= w || y + radius >= h {
                return false;
            }
            (y - radius..=y + radius).all(|yy| (x - radius..=x + radius).all(|xx| *self.get(xx, yy)))
        })
    }

    /// Number of pixels where the two masks differ.
    pub fn differing(&self, other: &Mask) -> Result<usize> {
        check_dims(self.dims(), other.dims())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a != b)
            .count())
    }
}

/// A grid with a per-pixel validity flag. Invalid pixels hold `T::default()`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedField<T> {
    values: Grid<T>,
    valid: Mask,
}

impl<T: Default + Clone> MaskedField<T> {
    /// Pairs values with a validity mask, resetting invalid entries to the default.
    pub fn new(mut values: Grid<T>, valid: Mask) -> Result<Self> {
        check_dims(values.dims(), valid.dims())?;
        for (v, ok) in values.data.iter_mut().zip(valid.data()) {
            if !ok {
                *v = T::default();
            }
        }
        Ok(Self { values, valid })
    }

    /// Every pixel valid.
    pub fn all_valid(values: Grid<T>) -> Self {
        let valid = Grid::filled(values.width, values.height, true);
        Self { values, valid }
    }
}

impl<T: Default + Send> MaskedField<T> {
    /// Builds from a per-pixel closure; `None` marks the pixel invalid.
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> Option<T> + Sync,
    {
        let both = Grid::from_fn(width, height, |x, y| match f(x, y) {
            Some(v) => (v, true),
            None => (T::default(), false),
        });
        let (values, valid): (Vec<T>, Vec<bool>) = both.data.into_iter().unzip();
        Self {
            values: Grid {
                width,
                height,
                data: values,
            },
            valid: Grid {
                width,
                height,
                data: valid,
            },
        }
    }
}

impl<T> MaskedField<T> {
    pub fn values(&self) -> &Grid<T> {
        &self.values
    }

    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    pub fn width(&self) -> usize {
        self.values.width
    }

    pub fn height(&self) -> usize {
        self.values.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        *self.valid.get(x, y)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    pub fn into_parts(self) -> (Grid<T>, Mask) {
        (self.values, self.valid)
    }
}

impl<T: Copy> MaskedField<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<T> {
        self.is_valid(x, y).then(|| *self.values.get(x, y))
    }
}

impl MaskedField<f64> {
    /// Mean over valid pixels, `None` if nothing is valid.
    pub fn valid_mean(&self) -> Option<f64> {
        self.values.masked_mean(&self.valid).ok().flatten()
    }

    /// Multiplies every valid value by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.map(|v| v * k),
            valid: self.valid.clone(),
        }
    }
}

macro_rules! masked_newtype {
    ($(#[$meta:meta])* $name:ident, $t:ty) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(MaskedField<$t>);

        impl $name {
            pub fn into_inner(self) -> MaskedField<$t> {
                self.0
            }

            pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
            where
                F: Fn(usize, usize) -> Option<$t> + Sync,
            {
                Self(MaskedField::from_fn(width, height, f))
            }

            pub fn new(values: Grid<$t>, valid: Mask) -> Result<Self> {
                MaskedField::new(values, valid).map(Self)
            }

            pub fn all_valid(values: Grid<$t>) -> Self {
                Self(MaskedField::all_valid(values))
            }
        }

        impl From<MaskedField<$t>> for $name {
            fn from(field: MaskedField<$t>) -> Self {
                Self(field)
            }
        }

        impl Deref for $name {
            type Target = MaskedField<$t>;

            fn deref(&self) -> &Self::Target {
                &self.0
            }
        }
    };
}

masked_newtype!(
    /// Metric depth along the optical axis (meters), positive where valid.
    DepthField,
    f64
);

impl DepthField {
    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.scaled(k))
    }
}

masked_newtype!(
    /// Structure γ = height above the reference plane / depth.
    StructureField,
    f64
);

masked_newtype!(
    /// Residual parallax flow in pixels.
    ResidualFlowField,
    [f64; 2]
);

masked_newtype!(
    /// Unit surface normals in the camera frame.
    NormalField,
    nalgebra::Vector3<f64>
);

/// Per-pixel epipolar flow multiplier S, with the bin bounds it was mapped
/// into when it came from [`crate::parallax::bin_flowscale`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowScaleField {
    field: MaskedField<f64>,
    bounds: Option<(f64, f64)>,
}

impl FlowScaleField {
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> Option<f64> + Sync,
    {
        Self {
            field: MaskedField::from_fn(width, height, f),
            bounds: None,
        }
    }

    pub fn new(values: Grid<f64>, valid: Mask) -> Result<Self> {
        Ok(Self {
            field: MaskedField::new(values, valid)?,
            bounds: None,
        })
    }

    pub fn with_bounds(mut self, f_min: f64, f_max: f64) -> Self {
        self.bounds = Some((f_min, f_max));
        self
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn into_inner(self) -> MaskedField<f64> {
        self.field
    }
}

impl From<MaskedField<f64>> for FlowScaleField {
    fn from(field: MaskedField<f64>) -> Self {
        Self {
            field,
            bounds: None,
        }
    }
}

impl Deref for FlowScaleField {
    type Target = MaskedField<f64>;

    fn deref(&self) -> &Self::Target {
        &self.field
    }
}
