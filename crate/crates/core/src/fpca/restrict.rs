use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::eigen::weighted_eigen;
use super::{select_num_components, ClusterModel};
use crate::error::{Error, Result};
use crate::numerics::{Surface, TimeGrid};

/// A cluster model split at the current time τ into the observed segment
/// `[τ − ω, τ]` (all of `[0, τ]` by default) and the future `[τ, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainModel {
    #[serde(with = "crate::hexfloat")]
    pub tau: f64,
    pub tau_index: usize,
    pub observed_range: Range<usize>,
    pub observed: ClusterModel,
    pub future: ClusterModel,
    #[serde(with = "crate::hexfloat::matrix")]
    pub cross_block: DMatrix<f64>,
}

impl SubdomainModel {
    pub fn future_range(&self) -> Range<usize> {
        self.tau_index..self.tau_index + self.future.grid.len()
    }

    pub fn cross_surface(&self) -> Surface {
        Surface {
            grid_s: self.observed.grid.clone(),
            grid_t: self.future.grid.clone(),
            values: self.cross_block.clone(),
        }
    }
}

/// The model restricted to the grid indices in `range`: the covariance block
/// is re-eigendecomposed and components are reselected at the model's δ,
/// capped at its full-domain count. A block without variance keeps zero
/// components.
pub fn block_model(model: &ClusterModel, range: Range<usize>) -> Result<ClusterModel> {
    let grid = model.grid.slice(range.clone())?;
    let cov = model
        .covariance
        .view((range.start, range.start), (range.len(), range.len()))
        .into_owned();
    let (eigenvalues, mut eigenfunctions) = weighted_eigen(&cov, &grid.trapezoid_weights())?;
    let m = match select_num_components(&eigenvalues, model.delta) {
        Ok(m) => m.min(model.num_components),
        Err(Error::NoVariance) => 0,
        Err(e) => return Err(e),
    };
    eigenfunctions.truncate(m);
    Ok(ClusterModel {
        label: model.label,
        grid,
        mean: model.mean[range].to_vec(),
        eigenvalues,
        eigenfunctions,
        num_components: m,
        delta: model.delta,
        noise_variance: model.noise_variance,
        noise_clamped: model.noise_clamped,
        covariance: cov,
        bandwidths: model.bandwidths,
        n_curves: model.n_curves,
    })
}

/// Grid index of τ, snapping off-grid values to the nearest point.
pub(crate) fn tau_index(grid: &TimeGrid, tau: f64) -> Result<usize> {
    if !(tau.is_finite() && tau > 0.0 && tau < grid.last()) {
        return Err(Error::Domain(format!(
            "current time {tau} must lie strictly inside (0, {})",
            grid.last()
        )));
    }
    let idx = grid.nearest_index(tau);
    if grid.index_of(tau).is_none() {
        log::warn!("current time {tau} is off the grid; using {}", grid.points()[idx]);
    }
    if idx == grid.len() - 1 {
        return Err(Error::Domain(format!("current time {tau} leaves no future segment")));
    }
    Ok(idx)
}

/// Index range of the observed window `[τ − ω, τ]` ending at `tau_index`.
pub(crate) fn observed_range(
    grid: &TimeGrid,
    tau_index: usize,
    omega: Option<f64>,
) -> Result<Range<usize>> {
    let tau = grid.points()[tau_index];
    let start = match omega {
        None => 0,
        Some(w) if w > 0.0 => grid.range_within(tau - w, tau).start,
        Some(w) => return Err(Error::Config(format!("window length {w} must be positive"))),
    };
    if tau_index + 1 - start < 2 {
        return Err(Error::TooEarly {
            tau,
            min_points: 2,
        });
    }
    Ok(start..tau_index + 1)
}

pub fn restrict_window(model: &ClusterModel, tau: f64, omega: Option<f64>) -> Result<SubdomainModel> {
    let idx = tau_index(&model.grid, tau)?;
    let obs = observed_range(&model.grid, idx, omega)?;
    let fut = idx..model.grid.len();
    let cross_block = model
        .covariance
        .view((obs.start, fut.start), (obs.len(), fut.len()))
        .into_owned();
    Ok(SubdomainModel {
        tau: model.grid.points()[idx],
        tau_index: idx,
        observed: block_model(model, obs.clone())?,
        future: block_model(model, fut)?,
        observed_range: obs,
        cross_block,
    })
}

pub fn restrict_model(model: &ClusterModel, tau: f64) -> Result<SubdomainModel> {
    restrict_window(model, tau, None)
}
