//! Functional principal component analysis of a group of curves: mean and
//! covariance estimation, the quadrature-weighted eigenproblem, component
//! selection, scores, and restriction to observed/future subdomains.

mod eigen;
mod estimate;
mod restrict;

pub use eigen::eigendecompose;
pub use estimate::{
    estimate_covariance, estimate_mean, fit_cluster_model, CovarianceEstimate, Estimator,
    FpcaBandwidths, FpcaOptions,
};
pub(crate) use eigen::weighted_eigen;
pub(crate) use estimate::fit_rows;
pub use restrict::{block_model, restrict_model, restrict_window, SubdomainModel};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{weighted_dot, SampledCurve, Surface, TimeGrid};

/// Default fraction of variance explained by the retained components.
pub const DEFAULT_DELTA: f64 = 0.9;

/// Mean, eigenpairs and covariance of one cluster on its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub label: usize,
    pub grid: TimeGrid,
    #[serde(with = "crate::hexfloat::vec")]
    pub mean: Vec<f64>,
    /// All strictly positive eigenvalues, nonincreasing.
    #[serde(with = "crate::hexfloat::vec")]
    pub eigenvalues: Vec<f64>,
    /// The leading `num_components` eigenfunctions.
    #[serde(with = "crate::hexfloat::vec2")]
    pub eigenfunctions: Vec<Vec<f64>>,
    pub num_components: usize,
    /// FVE threshold the components were selected at.
    #[serde(with = "crate::hexfloat")]
    pub delta: f64,
    #[serde(with = "crate::hexfloat")]
    pub noise_variance: f64,
    /// The σ² estimate came out negative and was clamped to zero.
    pub noise_clamped: bool,
    #[serde(with = "crate::hexfloat::matrix")]
    pub covariance: DMatrix<f64>,
    pub bandwidths: Option<FpcaBandwidths>,
    pub n_curves: usize,
}

impl ClusterModel {
    /// Assembles a model from a covariance kernel, selecting components at
    /// `delta` (optionally capped at `max_components`).
    pub fn from_covariance(
        label: usize,
        grid: TimeGrid,
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        noise_variance: f64,
        delta: f64,
        max_components: Option<usize>,
    ) -> Result<Self> {
        if mean.len() != grid.len() {
            return Err(Error::GridMismatch("mean does not match grid".into()));
        }
        let surface = Surface::new(grid.clone(), grid.clone(), covariance)?;
        let (eigenvalues, mut eigenfunctions) = eigendecompose(&surface)?;
        // Variance at round-off level relative to the curves' own size is
        // no variance at all.
        let w = grid.trapezoid_weights();
        let level = weighted_dot(&w, &mean, &mean).max(1.0);
        if eigenvalues.iter().sum::<f64>() <= 1e-13 * level {
            return Err(Error::NoVariance);
        }
        let mut m = select_num_components(&eigenvalues, delta)?;
        if let Some(cap) = max_components {
            m = m.min(cap.max(1));
        }
        eigenfunctions.truncate(m);
        Ok(Self {
            label,
            grid,
            mean,
            eigenvalues,
            eigenfunctions,
            num_components: m,
            delta,
            noise_variance,
            noise_clamped: false,
            covariance: surface.values,
            bandwidths: None,
            n_curves: 0,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.grid.trapezoid_weights()
    }

    pub fn mean_curve(&self) -> SampledCurve {
        SampledCurve {
            grid: self.grid.clone(),
            values: self.mean.clone(),
            id: format!("mean{}", self.label),
        }
    }

    pub fn eigenfunction(&self, j: usize) -> SampledCurve {
        SampledCurve {
            grid: self.grid.clone(),
            values: self.eigenfunctions[j].clone(),
            id: format!("phi{}_{}", self.label, j + 1),
        }
    }

    pub fn covariance_surface(&self) -> Surface {
        Surface {
            grid_s: self.grid.clone(),
            grid_t: self.grid.clone(),
            values: self.covariance.clone(),
        }
    }

    /// Scores `⟨y − μ, φ_j⟩`, `j < M`, with precomputed quadrature weights.
    pub fn project(&self, values: &[f64], weights: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = values.iter().zip(&self.mean).map(|(y, m)| y - m).collect();
        self.eigenfunctions
            .iter()
            .map(|phi| weighted_dot(weights, &centered, phi))
            .collect()
    }

    /// `μ + Σ ξ_j φ_j`.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (xi, phi) in scores.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += xi * p;
            }
        }
        out
    }

    /// Squared L² distance from `values` to its truncated projection.
    pub fn residual_norm_sq(&self, values: &[f64], weights: &[f64]) -> f64 {
        let fitted = self.reconstruct(&self.project(values, weights));
        let resid: Vec<f64> = values.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        weighted_dot(weights, &resid, &resid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    #[serde(with = "crate::hexfloat::vec")]
    pub scores: Vec<f64>,
    pub cluster: usize,
}

/// Smallest `L` whose leading eigenvalues explain at least `delta` of the
/// positive spectrum.
pub fn select_num_components(eigenvalues: &[f64], delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("FVE threshold {delta} outside (0, 1]")));
    }
    let total: f64 = eigenvalues.iter().filter(|&&l| l > 0.0).sum();
    if !(total > 0.0) {
        return Err(Error::NoVariance);
    }
    let mut acc = 0.0;
    for (l, &lambda) in eigenvalues.iter().filter(|&&l| l > 0.0).enumerate() {
        acc += lambda;
        if acc / total >= delta - 1e-12 {
            return Ok(l + 1);
        }
    }
    Ok(eigenvalues.iter().filter(|&&l| l > 0.0).count())
}

/// Scores of `curve` against `model` on the model's own grid (pass a block
/// model from [`restrict_model`] for the observed segment).
pub fn compute_scores(curve: &SampledCurve, model: &ClusterModel) -> Result<ScoreVector> {
    if curve.grid != model.grid {
        return Err(Error::GridMismatch(format!(
            "curve on a {}-point grid scored against a {}-point model",
            curve.grid.len(),
            model.grid.len()
        )));
    }
    Ok(ScoreVector {
        scores: model.project(&curve.values, &model.weights()),
        cluster: model.label,
    })
}
