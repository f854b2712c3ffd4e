use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Span;
use crate::error::{Error, Result};
use crate::fpca::{restrict_window, ClusterModel, SubdomainModel};
use crate::numerics::{default_candidates, select_bandwidth_cv, smooth_1d_values, Aggregated, TimeGrid};

/// Eigenvalues of the observed block below this are treated as zero.
const LAMBDA_FLOOR: f64 = 1e-12;

/// Score-regression coefficients of one cluster: per current time τ a
/// `M_𝒯(τ) × M_𝒮(τ)` matrix indexed by (response k, predictor j).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBetas {
    #[serde(with = "crate::hexfloat::matrices")]
    pub raw: Vec<DMatrix<f64>>,
    #[serde(with = "crate::hexfloat::matrices")]
    pub smoothed: Vec<DMatrix<f64>>,
    /// Some observed-block eigenvalue fell below 1e-12 at this τ and its
    /// coefficients were set to zero.
    pub near_singular: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCoefficients {
    pub omega: Span,
    pub tau_grid: TimeGrid,
    pub clusters: Vec<ClusterBetas>,
}

/// Observed/future block models of `model` at every τ of `tau_grid`.
pub fn window_blocks(model: &ClusterModel, tau_grid: &TimeGrid, omega: Span) -> Result<Vec<SubdomainModel>> {
    tau_grid
        .points()
        .iter()
        .map(|&tau| block_at(model, tau, omega))
        .collect()
}

pub(crate) fn block_at(model: &ClusterModel, tau: f64, omega: Span) -> Result<SubdomainModel> {
    restrict_window(model, tau, omega.hours())
}

/// Observed- and future-block scores of the curves `rows` (full-grid values).
pub(crate) fn block_scores(rows: &[&[f64]], block: &SubdomainModel) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let ws = block.observed.weights();
    let wt = block.future.weights();
    let fut = block.future_range();
    rows.iter()
        .map(|r| {
            (
                block.observed.project(&r[block.observed_range.clone()], &ws),
                block.future.project(&r[fut.clone()], &wt),
            )
        })
        .unzip()
}

/// `β̃_kj = Σ_i (ξ_𝒮ij − ξ̄_𝒮j)(ξ_𝒯ik − ξ̄_𝒯k) / ((n − 1) λ_𝒮j)`.
pub fn raw_beta(xs: &[Vec<f64>], xt: &[Vec<f64>], lambda_s: &[f64], m_s: usize, m_t: usize) -> (DMatrix<f64>, bool) {
    let n = xs.len();
    let mean = |v: &[Vec<f64>], j: usize| v.iter().map(|r| r[j]).sum::<f64>() / n as f64;
    let ms: Vec<f64> = (0..m_s).map(|j| mean(xs, j)).collect();
    let mt: Vec<f64> = (0..m_t).map(|k| mean(xt, k)).collect();
    let mut near_singular = false;
    let mut beta = DMatrix::zeros(m_t, m_s);
    for j in 0..m_s {
        if !(lambda_s[j] >= LAMBDA_FLOOR) {
            near_singular = true;
            continue;
        }
        for k in 0..m_t {
            let cross: f64 = xs.iter().zip(xt).map(|(a, b)| (a[j] - ms[j]) * (b[k] - mt[k])).sum();
            beta[(k, j)] = cross / ((n as f64 - 1.0) * lambda_s[j]);
        }
    }
    (beta, near_singular)
}

/// Raw coefficients for every cluster and τ; `smoothed` starts as a copy of
/// `raw`. `members[c]` holds the full-grid values of cluster `c`'s curves.
pub fn fit_beta(
    models: &[ClusterModel],
    members: &[Vec<&[f64]>],
    tau_grid: &TimeGrid,
    omega: Span,
) -> Result<RegressionCoefficients> {
    if models.len() != members.len() {
        return Err(Error::InsufficientData("one curve set per cluster is required".into()));
    }
    let mut clusters = Vec::with_capacity(models.len());
    for (model, rows) in models.iter().zip(members) {
        if rows.len() < model.num_components + 2 {
            return Err(Error::InsufficientData(format!(
                "cluster {} has {} curves for {} components",
                model.label,
                rows.len(),
                model.num_components
            )));
        }
        let mut raw = Vec::with_capacity(tau_grid.len());
        let mut flags = Vec::with_capacity(tau_grid.len());
        for &tau in tau_grid.points() {
            let block = block_at(model, tau, omega)?;
            let (xs, xt) = block_scores(rows, &block);
            let (b, flag) = raw_beta(
                &xs,
                &xt,
                &block.observed.eigenvalues,
                block.observed.num_components,
                block.future.num_components,
            );
            raw.push(b);
            flags.push(flag);
        }
        clusters.push(ClusterBetas {
            smoothed: raw.clone(),
            raw,
            near_singular: flags,
        });
    }
    Ok(RegressionCoefficients {
        omega,
        tau_grid: tau_grid.clone(),
        clusters,
    })
}

/// Local-linear smoothing of each coefficient sequence over τ with a
/// cross-validated bandwidth. A `(k, j)` entry only exists at the τ where
/// both blocks keep that many components; it is smoothed over those τ.
/// Sequences that cannot be smoothed are left as they are.
pub fn smooth_beta(coefs: &RegressionCoefficients, folds: usize, seed: u64) -> Result<RegressionCoefficients> {
    let taus = coefs.tau_grid.points();
    if taus.len() < 4 {
        return Err(Error::InsufficientData(format!("{} prediction times; at least 4 are needed", taus.len())));
    }
    let candidates = default_candidates(&coefs.tau_grid);
    let mut out = coefs.clone();
    for (c, cb) in out.clusters.iter_mut().enumerate() {
        let rows = cb.raw.iter().map(|b| b.nrows()).max().unwrap_or(0);
        let cols = cb.raw.iter().map(|b| b.ncols()).max().unwrap_or(0);
        for k in 0..rows {
            for j in 0..cols {
                let at: Vec<usize> = (0..taus.len())
                    .filter(|&q| k < cb.raw[q].nrows() && j < cb.raw[q].ncols())
                    .collect();
                if at.len() < 4 {
                    continue;
                }
                let xs: Vec<f64> = at.iter().map(|&q| taus[q]).collect();
                let ys: Vec<f64> = at.iter().map(|&q| cb.raw[q][(k, j)]).collect();
                let sub_seed = crate::rng::derive_seed(seed, &[c as u64, k as u64, j as u64]);
                let smoothed = select_bandwidth_cv(&xs, &ys, &candidates, folds.min(at.len()).max(2), sub_seed)
                    .and_then(|h| {
                        let data = Aggregated::new(&xs, &ys, &vec![1.0; xs.len()])?;
                        smooth_1d_values(&data, h, &xs)
                    });
                match smoothed {
                    Ok(vals) => {
                        for (&q, v) in at.iter().zip(vals) {
                            cb.smoothed[q][(k, j)] = v;
                        }
                    }
                    Err(e) => log::debug!("coefficient ({k}, {j}) of cluster {} kept raw: {e}", c + 1),
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coefs_from(seq: &[f64]) -> RegressionCoefficients {
        let tau_grid = TimeGrid::new((0..seq.len()).map(|q| 8.0 + 0.25 * q as f64).collect()).unwrap();
        let raw: Vec<DMatrix<f64>> = seq.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
        RegressionCoefficients {
            omega: Span::Full,
            tau_grid,
            clusters: vec![ClusterBetas {
                smoothed: raw.clone(),
                raw,
                near_singular: vec![false; seq.len()],
            }],
        }
    }

    fn smoothed(seq: &[f64]) -> Vec<f64> {
        smooth_beta(&coefs_from(seq), 10, 1).unwrap().clusters[0]
            .smoothed
            .iter()
            .map(|m| m[(0, 0)])
            .collect()
    }

    #[test]
    fn constants_and_ramps_are_reproduced() {
        let constant = vec![0.7; 49];
        for (a, b) in smoothed(&constant).iter().zip(&constant) {
            assert!((a - b).abs() < 1e-12);
        }
        let ramp: Vec<f64> = (0..49).map(|q| 0.3 - 0.02 * q as f64).collect();
        for (a, b) in smoothed(&ramp).iter().zip(&ramp) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn smoothing_reduces_total_variation() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let raw: Vec<f64> = (0..49)
            .map(|q| (q as f64 / 10.0).sin() + noise.sample(&mut rng))
            .collect();
        let tv = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        assert!(tv(&smoothed(&raw)) < tv(&raw));
    }

    #[test]
    fn raw_beta_matches_simple_regression() {
        let xs: Vec<Vec<f64>> = [1.0, -2.0, 0.5, 3.0, -1.5].iter().map(|&v| vec![v]).collect();
        let xt: Vec<Vec<f64>> = [2.1, -3.9, 1.2, 6.3, -2.8].iter().map(|&v| vec![v]).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().map(|r| r[0]).sum::<f64>() / n;
        let var = xs.iter().map(|r| (r[0] - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let (b, flag) = raw_beta(&xs, &xt, &[var], 1, 1);
        // Least-squares slope with intercept.
        let my = xt.iter().map(|r| r[0]).sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&xt).map(|(a, b)| (a[0] - mx) * (b[0] - my)).sum();
        let sxx: f64 = xs.iter().map(|a| (a[0] - mx).powi(2)).sum();
        assert!(!flag);
        assert!((b[(0, 0)] - sxy / sxx).abs() < 1e-12);
    }

    #[test]
    fn vanishing_eigenvalue_is_flagged() {
        let xs = vec![vec![1.0], vec![-1.0], vec![0.0]];
        let (b, flag) = raw_beta(&xs, &xs, &[1e-14], 1, 1);
        assert!(flag && b[(0, 0)] == 0.0);
    }
}
