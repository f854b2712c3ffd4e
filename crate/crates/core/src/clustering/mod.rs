//! Subspace-projected clustering of complete curves, cluster identifiability,
//! and bootstrap selection of the number of clusters.

mod fit;
mod identifiability;
mod kmeans;
mod select_k;


pub use fit::{fit_clusters, fit_clusters_from, initial_clusters, relative_distances};
pub use identifiability::{check_identifiability, IdentifiabilityReport, PairIdentifiability};
pub use kmeans::kmeans;
pub use select_k::{select_num_clusters, ClusterCountTest, NullScheme, PairTest, SelectKOptions, SelectKResult, MIN_BOOTSTRAP};


use serde::{Deserialize, Serialize};

use crate::classify::{LogitCoefficients, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::fpca::{ClusterModel, FpcaOptions};
use crate::numerics::{SampledCurve, TimeGrid};

pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 4;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringOptions {
    pub fpca: FpcaOptions,
    /// Zero fits the models and logit on the initial partition and stops.
    pub max_iterations: usize,
    pub min_cluster_size: usize,
    pub kmeans_restarts: usize,
    pub kmeans_reseeds: usize,
    pub ridge: f64,
}

impl Default for ClusteringOptions {
    fn default() -> Self {
        Self {
            fpca: FpcaOptions::default(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            kmeans_restarts: 10,
            kmeans_reseeds: 10,
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Hard assignments (0-based cluster index; the model for cluster `c` carries
/// label `c + 1`) with posterior membership probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub assignments: Vec<usize>,
    #[serde(with = "crate::hexfloat::vec2")]
    pub posterior: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub models: Vec<ClusterModel>,
    pub membership: Membership,
    pub gamma: LogitCoefficients,
    #[serde(with = "crate::hexfloat::vec2")]
    pub distances: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Per iteration, how many curves sat in their maximum-posterior cluster
    /// before reassignment.
    pub objective_trace: Vec<usize>,
}

impl ClusteringResult {
    pub fn num_clusters(&self) -> usize {
        self.models.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.models.len()];
        self.membership.assignments.iter().for_each(|&c| sizes[c] += 1);
        sizes
    }
}

pub(crate) fn curve_rows(curves: &[SampledCurve]) -> Result<(TimeGrid, Vec<&[f64]>)> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InsufficientData("no curves".into()))?;
    if curves.iter().any(|c| c.grid != first.grid) {
        return Err(Error::GridMismatch("curves do not share a common grid".into()));
    }
    Ok((first.grid.clone(), curves.iter().map(|c| c.values.as_slice()).collect()))
}

/// Fraction of curves misassigned under the best relabeling of `predicted`
/// (exhaustive over permutations, so meant for small `K`).
pub fn clustering_error(truth: &[usize], predicted: &[usize], k: usize) -> f64 {
    assert_eq!(truth.len(), predicted.len());
    if truth.is_empty() {
        return 0.0;
    }
    let perm = best_matching(truth, predicted, k);
    let hits = truth.iter().zip(predicted).filter(|&(&t, &p)| perm[p.min(k - 1)] == t.min(k - 1)).count();
    1.0 - hits as f64 / truth.len() as f64
}

/// Relabelling `perm[predicted] = truth` with the most agreements; ties go
/// to the first permutation visited.
pub fn best_matching(truth: &[usize], predicted: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        counts[p.min(k - 1)][t.min(k - 1)] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (0, perm.clone());
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = (0..k).map(|c| counts[c][p[c]]).sum();
        if hits > best.0 {
            best = (hits, p.to_vec());
        }
    });
    best.1
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustering_error_ignores_label_names() {
        assert_eq!(clustering_error(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1], 3), 0.0);
        assert!((clustering_error(&[0, 0, 1, 1], &[1, 1, 1, 0], 2) - 0.25).abs() < 1e-15);
    }
}
