//! Dense-grid numerical kernel: time grids, sampled curves, trapezoid
//! quadrature, and local-linear smoothing in one and two dimensions.

mod cv;
mod smooth1d;
mod smooth2d;

pub use cv::{
    default_candidates, fold_assignment, grouped_fold_assignment, select_bandwidth_cv,
    select_bandwidth_cv_folds, CvCurve, DEFAULT_FOLDS,
};
pub use smooth1d::{local_linear_smooth_1d, smooth_1d_values, Aggregated};
pub use smooth2d::{
    local_linear_smooth_2d, smooth_gridded, GriddedPlan, ScatterPoint2d,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the daily domain in hours.
pub const DAY_HOURS: f64 = 24.0;

/// Number of kernel bandwidths beyond which the Gaussian kernel is cut off.
pub(crate) const KERNEL_SUPPORT: f64 = 4.0;

/// How many times a degenerate local fit doubles its bandwidth before failing.
pub(crate) const MAX_WIDENINGS: usize = 3;

#[inline]
pub(crate) fn kernel(u: f64) -> f64 {
    if u.abs() > KERNEL_SUPPORT {
        0.0
    } else {
        (-0.5 * u * u).exp()
    }
}

// =============================================================================
// TimeGrid
// =============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    #[serde(with = "crate::hexfloat::vec")]
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidGrid("points must be finite and nonnegative".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// The 15-minute daily grid `t_j = j/4`, `j = 1..=96`.
    pub fn daily() -> Self {
        Self::uniform_steps(0.25, 96)
    }

    /// `t_j = j·step` for `j = 1..=n`.
    pub fn uniform_steps(step: f64, n: usize) -> Self {
        Self {
            points: (1..=n).map(|j| j as f64 * step).collect(),
        }
    }

    /// `n` equally spaced points from `start` to `end` inclusive.
    pub fn linspace(start: f64, end: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid("linspace needs n >= 2".into()));
        }
        let step = (end - start) / (n - 1) as f64;
        Self::new((0..n).map(|i| start + i as f64 * step).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.last() - self.first()
    }

    /// Median spacing between consecutive points.
    pub fn step(&self) -> f64 {
        let mut gaps: Vec<f64> = self.points.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.points)
    }

    /// Index of the grid point closest to `t` (ties go to the earlier point).
    pub fn nearest_index(&self, t: f64) -> usize {
        let idx = self.points.partition_point(|&p| p < t);
        if idx == 0 {
            return 0;
        }
        if idx == self.points.len() {
            return idx - 1;
        }
        if t - self.points[idx - 1] <= self.points[idx] - t {
            idx - 1
        } else {
            idx
        }
    }

    /// Exact index of `t` if it lies on the grid (within 1e-9 hours).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.nearest_index(t);
        ((self.points[i] - t).abs() < 1e-9).then_some(i)
    }

    /// Points with indices in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "subgrid {range:?} of a {}-point grid",
                self.len()
            )));
        }
        Ok(Self {
            points: self.points[range].to_vec(),
        })
    }

    /// Index range of the points lying in `[lo, hi]` (with 1e-9 slack).
    pub fn range_within(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.points.partition_point(|&p| p < lo - 1e-9);
        let end = self.points.partition_point(|&p| p <= hi + 1e-9);
        start..end.max(start)
    }
}

pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let half = 0.5 * (points[i + 1] - points[i]);
        w[i] += half;
        w[i + 1] += half;
    }
    w
}

/// Trapezoid inner product `Σ w_i f_i g_i` with precomputed weights.
#[inline]
pub fn weighted_dot(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
}

/// Trapezoid integral of `values` over `points`.
pub fn integrate(points: &[f64], values: &[f64]) -> f64 {
    points
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

// =============================================================================
// SampledCurve / Surface / Bandwidth
// =============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    pub grid: TimeGrid,
    #[serde(with = "crate::hexfloat::vec")]
    pub values: Vec<f64>,
    pub id: String,
}

impl SampledCurve {
    pub fn new(grid: TimeGrid, values: Vec<f64>, id: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("curve values must be finite".into()));
        }
        Ok(Self {
            grid,
            values,
            id: id.into(),
        })
    }

    pub fn from_fn(grid: &TimeGrid, id: impl Into<String>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self {
            grid: grid.clone(),
            values,
            id: id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Restriction to the grid points with indices in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Ok(Self {
            grid: self.grid.slice(range.clone())?,
            values: self.values[range].to_vec(),
            id: self.id.clone(),
        })
    }

    pub fn norm_sq(&self) -> f64 {
        weighted_dot(&self.grid.trapezoid_weights(), &self.values, &self.values)
    }
}

pub fn inner_product(f: &SampledCurve, g: &SampledCurve) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch(format!(
            "inner product of curves on {}- and {}-point grids",
            f.grid.len(),
            g.grid.len()
        )));
    }
    Ok(weighted_dot(&f.grid.trapezoid_weights(), &f.values, &g.values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub grid_s: TimeGrid,
    pub grid_t: TimeGrid,
    #[serde(with = "crate::hexfloat::matrix")]
    pub values: DMatrix<f64>,
}

impl Surface {
    pub fn new(grid_s: TimeGrid, grid_t: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid_s.len() || values.ncols() != grid_t.len() {
            return Err(Error::GridMismatch(format!(
                "{}x{} surface on {}x{} grids",
                values.nrows(),
                values.ncols(),
                grid_s.len(),
                grid_t.len()
            )));
        }
        Ok(Self {
            grid_s,
            grid_t,
            values,
        })
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.values;
        if m.nrows() != m.ncols() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..i {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bandwidth(#[serde(with = "crate::hexfloat")] f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Self(h))
        } else {
            Err(Error::InvalidBandwidth(h))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub(crate) fn doubled(self) -> Self {
        Self(self.0 * 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth2 {
    pub s: Bandwidth,
    pub t: Bandwidth,
}

impl Bandwidth2 {
    pub fn isotropic(h: Bandwidth) -> Self {
        Self { s: h, t: h }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_curves_integrate_to_domain_length() {
        let grid = TimeGrid::linspace(0.0, 24.0, 97).unwrap();
        let one = SampledCurve::from_fn(&grid, "1", |_| 1.0);
        assert!((inner_product(&one, &one).unwrap() - 24.0).abs() < 1e-12);
    }

    #[test]
    fn t_squared_within_trapezoid_bound() {
        let grid = TimeGrid::linspace(0.0, 24.0, 96).unwrap();
        let f = SampledCurve::from_fn(&grid, "t", |t| t);
        let approx = inner_product(&f, &f).unwrap();
        // |E| <= (b-a) h^2 max|f''| / 12 with f = t^2.
        let h = 24.0 / 95.0;
        let bound = 24.0 * h * h * 2.0 / 12.0;
        assert!((approx - 4608.0).abs() <= bound, "{approx}");
        assert!(approx > 4608.0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = SampledCurve::from_fn(&TimeGrid::daily(), "a", |t| t);
        let b = SampledCurve::from_fn(&TimeGrid::linspace(0.0, 24.0, 96).unwrap(), "b", |t| t);
        assert!(matches!(inner_product(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![1.0]).is_err());
        assert!(TimeGrid::new(vec![1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![-1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, f64::NAN]).is_err());
        let g = TimeGrid::daily();
        assert_eq!(g.len(), 96);
        assert_eq!(g.first(), 0.25);
        assert_eq!(g.last(), 24.0);
        assert_eq!(g.index_of(8.0), Some(31));
        assert_eq!(g.index_of(8.1), None);
        assert_eq!(g.nearest_index(8.1), 31);
        assert_eq!(g.range_within(7.0, 8.0), 27..32);
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(Bandwidth::new(0.0).is_err());
        assert!(Bandwidth::new(-1.0).is_err());
        assert!(Bandwidth::new(f64::INFINITY).is_err());
        assert_eq!(Bandwidth::new(2.0).unwrap().get(), 2.0);
    }

    proptest! {
        #[test]
        fn inner_product_symmetric_and_bilinear(
            f in prop::collection::vec(-10.0..10.0f64, 96),
            g in prop::collection::vec(-10.0..10.0f64, 96),
            h in prop::collection::vec(-10.0..10.0f64, 96),
            a in -3.0..3.0f64,
        ) {
            let grid = TimeGrid::daily();
            let cf = SampledCurve::new(grid.clone(), f.clone(), "f").unwrap();
            let cg = SampledCurve::new(grid.clone(), g.clone(), "g").unwrap();
            let mix: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + y).collect();
            let cm = SampledCurve::new(grid.clone(), mix, "m").unwrap();
            let ch = SampledCurve::new(grid, h, "h").unwrap();
            let fg = inner_product(&cf, &cg).unwrap();
            prop_assert!((fg - inner_product(&cg, &cf).unwrap()).abs() <= 1e-12 * (1.0 + fg.abs()));
            let lhs = inner_product(&cm, &cg).unwrap();
            let rhs = a * fg + inner_product(&ch, &cg).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
