use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::ClusterModel;
use crate::numerics::weighted_dot;

/// Principal-angle sines below this count as zero.
const ANGLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairIdentifiability {
    /// 1-based cluster labels.
    pub clusters: (usize, usize),
    /// Largest principal-angle sine between the smaller subspace and the
    /// larger one.
    pub max_sine: f64,
    pub nested: bool,
    /// The mean difference lies in the larger subspace (or vanishes).
    pub mean_in_span: bool,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub pairs: Vec<PairIdentifiability>,
}

impl IdentifiabilityReport {
    pub fn violations(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().filter(|p| p.violation).map(|p| p.clusters).collect()
    }

    pub fn is_identifiable(&self) -> bool {
        self.pairs.iter().all(|p| !p.violation)
    }
}

/// Flags cluster pairs that projection distances cannot tell apart: one
/// eigenspace contained in the other while the mean difference also lies in
/// the larger eigenspace, so curves of the smaller cluster are reproduced
/// exactly by the larger one.
pub fn check_identifiability(models: &[ClusterModel]) -> Result<IdentifiabilityReport> {
    let Some(first) = models.first() else {
        return Ok(IdentifiabilityReport { pairs: vec![] });
    };
    if models.iter().any(|m| m.grid != first.grid) {
        return Err(Error::GridMismatch("cluster models on different grids".into()));
    }
    let w = first.weights();
    let mut pairs = Vec::new();
    for a in 0..models.len() {
        for b in a + 1..models.len() {
            let (small, large) = if models[a].num_components <= models[b].num_components {
                (&models[a], &models[b])
            } else {
                (&models[b], &models[a])
            };
            let max_sine = max_principal_sine(&small.eigenfunctions, &large.eigenfunctions, &w);
            let nested = max_sine < ANGLE_TOL;
            let diff: Vec<f64> = small.mean.iter().zip(&large.mean).map(|(x, y)| x - y).collect();
            let scale = weighted_dot(&w, &large.mean, &large.mean).max(1.0).sqrt();
            let residual = out_of_span_norm(&diff, &large.eigenfunctions, &w);
            let mean_in_span = residual < ANGLE_TOL * scale;
            pairs.push(PairIdentifiability {
                clusters: (models[a].label, models[b].label),
                max_sine,
                nested,
                mean_in_span,
                violation: nested && mean_in_span,
            });
        }
    }
    Ok(IdentifiabilityReport { pairs })
}

/// `sin θ_max` for `span(u) ⊆? span(v)`: `√(1 − σ_min²)` of the cross-Gram
/// matrix, both bases orthonormal.
fn max_principal_sine(u: &[Vec<f64>], v: &[Vec<f64>], w: &[f64]) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    if v.is_empty() {
        return 1.0;
    }
    let c = DMatrix::from_fn(u.len(), v.len(), |i, j| weighted_dot(w, &u[i], &v[j]));
    if u.len() > v.len() {
        return 1.0;
    }
    let sv = c.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    (1.0 - smin * smin).max(0.0).sqrt()
}

fn out_of_span_norm(f: &[f64], basis: &[Vec<f64>], w: &[f64]) -> f64 {
    let mut r = f.to_vec();
    for phi in basis {
        let c = weighted_dot(w, &r, phi);
        r.iter_mut().zip(phi).for_each(|(x, p)| *x -= c * p);
    }
    weighted_dot(w, &r, &r).max(0.0).sqrt()
}
