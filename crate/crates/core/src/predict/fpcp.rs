use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fpca::{weighted_eigen, ClusterModel, SubdomainModel};

/// Pivots of the Cholesky factor whose squared ratio falls below this mark
/// the system as ill-conditioned.
const CONDITION_FLOOR: f64 = 1e-12;

/// The covariance surface with its negative spectrum removed. A smoothed
/// surface need not be positive semidefinite, and its negative directions
/// would make `Σ_OO + σ²I` nearly singular when σ² is small.
pub(crate) fn psd_covariance(model: &ClusterModel) -> Result<DMatrix<f64>> {
    let (values, functions) = weighted_eigen(&model.covariance, &model.weights())?;
    let n = model.grid.len();
    let mut out = DMatrix::zeros(n, n);
    for (l, phi) in values.iter().zip(&functions) {
        let v = DVector::from_column_slice(phi);
        out += *l * &v * v.transpose();
    }
    Ok(out)
}

/// Gaussian conditional expectation of the full-domain scores given the
/// observed window, `ξ̂_j = λ_j φ_j(O)ᵀ (Σ_OO + σ²I)⁻¹ (Y_O − μ_O)` with
/// `Σ` from [`psd_covariance`], and the reconstruction `μ + Σ ξ̂_j φ_j` on
/// the future segment. The second value reports whether a ridge of
/// `1e-8·trace` was needed.
pub(crate) fn conditional_expectation(
    model: &ClusterModel,
    covariance: &DMatrix<f64>,
    block: &SubdomainModel,
    observed: &[f64],
) -> Result<(Vec<f64>, bool)> {
    let o = block.observed_range.clone();
    let f = block.future_range();
    if observed.len() != o.len() {
        return Err(Error::GridMismatch(format!(
            "{} observed values for a {}-point window",
            observed.len(),
            o.len()
        )));
    }
    let n = o.len();
    let mut sigma = DMatrix::from_fn(n, n, |a, b| covariance[(o.start + a, o.start + b)]);
    for i in 0..n {
        sigma[(i, i)] += model.noise_variance;
    }
    let resid = DVector::from_iterator(n, observed.iter().zip(&model.mean[o.clone()]).map(|(y, m)| y - m));
    let (solved, ridge) = solve_spd(sigma, &resid);
    let mut out = model.mean[f.clone()].to_vec();
    for (j, phi) in model.eigenfunctions.iter().enumerate() {
        let xi = model.eigenvalues[j] * (0..n).map(|a| phi[o.start + a] * solved[a]).sum::<f64>();
        for (v, p) in out.iter_mut().zip(&phi[f.clone()]) {
            *v += xi * p;
        }
    }
    Ok((out, ridge))
}

fn solve_spd(mut a: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    if let Some(ch) = a.clone().cholesky() {
        let d = ch.l_dirty().diagonal();
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(0.0, f64::max);
        if hi > 0.0 && (lo / hi).powi(2) > CONDITION_FLOOR {
            return (ch.solve(b), false);
        }
    }
    let bump = 1e-8 * a.trace();
    if !(bump > 0.0) {
        // No variance at all: the conditional expectation is the mean.
        return (DVector::zeros(b.len()), true);
    }
    for i in 0..a.nrows() {
        a[(i, i)] += bump;
    }
    match a.clone().cholesky() {
        Some(ch) => (ch.solve(b), true),
        None => (
            a.lu().solve(b).unwrap_or_else(|| DVector::zeros(b.len())),
            true,
        ),
    }
}
