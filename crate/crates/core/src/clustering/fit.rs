use super::kmeans::kmeans;
use super::{curve_rows, ClusteringOptions, ClusteringResult, Membership};
use crate::classify::{argmax, covariate, fit_logit, posterior, relative_distance_values, LogitCoefficients};
use crate::error::{Error, Result};
use crate::fpca::{fit_rows, ClusterModel, FpcaBandwidths};
use crate::numerics::{SampledCurve, TimeGrid};
use crate::rng::{derive_seed, stream};

/// Relative L² distances of a complete curve to each cluster's truncated
/// projection; they sum to one.
pub fn relative_distances(curve: &SampledCurve, models: &[ClusterModel]) -> Result<Vec<f64>> {
    if let Some(m) = models.first() {
        if m.grid != curve.grid {
            return Err(Error::GridMismatch("curve and cluster models on different grids".into()));
        }
    }
    Ok(relative_distance_values(&curve.values, models)?.0)
}

/// Starting partition: k-means++ on the leading FPC scores of a single
/// FPCA of all curves.
pub fn initial_clusters(
    curves: &[SampledCurve],
    k: usize,
    seed: u64,
    opts: &ClusteringOptions,
) -> Result<Vec<usize>> {
    let (grid, rows) = curve_rows(curves)?;
    initial_rows(&grid, &rows, k, seed, opts)
}

pub(crate) fn initial_rows(
    grid: &TimeGrid,
    rows: &[&[f64]],
    k: usize,
    seed: u64,
    opts: &ClusteringOptions,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("number of clusters must be at least 1".into()));
    }
    if k == 1 {
        return Ok(vec![0; rows.len()]);
    }
    let mut fpca = opts.fpca.clone();
    fpca.seed = derive_seed(seed, &[stream::FPCA_CV, u64::MAX]);
    let scores: Vec<Vec<f64>> = match fit_rows(grid, rows, 0, &fpca) {
        Ok(model) => {
            let w = grid.trapezoid_weights();
            rows.iter().map(|r| model.project(r, &w)).collect()
        }
        // Curves without variation leave nothing to separate; k-means then
        // fails on its own terms.
        Err(Error::NoVariance) => vec![vec![0.0]; rows.len()],
        Err(e) => return Err(e),
    };
    kmeans(
        &scores,
        k,
        opts.kmeans_restarts,
        opts.kmeans_reseeds,
        derive_seed(seed, &[stream::CLUSTER_INIT]),
    )
}

/// Iterative subspace-projected clustering from a k-means start.
pub fn fit_clusters(
    curves: &[SampledCurve],
    k: usize,
    seed: u64,
    opts: &ClusteringOptions,
) -> Result<ClusteringResult> {
    let (grid, rows) = curve_rows(curves)?;
    let start = initial_rows(&grid, &rows, k, seed, opts)?;
    fit_rows_from(&grid, &rows, start, k, seed, opts)
}

/// Iterative clustering from a given 0-based partition.
pub fn fit_clusters_from(
    curves: &[SampledCurve],
    initial: Vec<usize>,
    k: usize,
    seed: u64,
    opts: &ClusteringOptions,
) -> Result<ClusteringResult> {
    let (grid, rows) = curve_rows(curves)?;
    fit_rows_from(&grid, &rows, initial, k, seed, opts)
}

struct Iterate {
    models: Vec<ClusterModel>,
    labels: Vec<usize>,
    gamma: LogitCoefficients,
    distances: Vec<Vec<f64>>,
    posterior: Vec<Vec<f64>>,
}

impl Iterate {
    fn finish(self, iterations: usize, converged: bool, objective_trace: Vec<usize>) -> ClusteringResult {
        ClusteringResult {
            models: self.models,
            membership: Membership {
                assignments: self.labels,
                posterior: self.posterior,
            },
            gamma: self.gamma,
            distances: self.distances,
            iterations,
            converged,
            objective_trace,
        }
    }
}

fn check_sizes(labels: &[usize], k: usize, min: usize) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    for (c, m) in members.iter().enumerate() {
        if m.len() < min {
            return Err(Error::ClusterTooSmall {
                cluster: c + 1,
                size: m.len(),
                min,
            });
        }
    }
    Ok(members)
}

pub(crate) fn fit_rows_from(
    grid: &TimeGrid,
    rows: &[&[f64]],
    initial: Vec<usize>,
    k: usize,
    seed: u64,
    opts: &ClusteringOptions,
) -> Result<ClusteringResult> {
    if k == 0 {
        return Err(Error::Config("number of clusters must be at least 1".into()));
    }
    if initial.len() != rows.len() || initial.iter().any(|&l| l >= k) {
        return Err(Error::Config(format!("initial partition is not a labeling of {} curves into {k} clusters", rows.len())));
    }
    let min = if k == 1 { 1 } else { opts.min_cluster_size };
    // Bandwidths come from cross-validation on the first fit of each
    // cluster and stay fixed afterwards.
    let mut bandwidths: Vec<Option<FpcaBandwidths>> = vec![opts.fpca.bandwidths; k];
    let mut labels = initial;
    let mut trace = Vec::new();
    let mut best: Option<(usize, Iterate)> = None;

    for it in 0..opts.max_iterations.max(1) {
        let members = check_sizes(&labels, k, min)?;
        let mut models = Vec::with_capacity(k);
        for (c, idx) in members.iter().enumerate() {
            let mut fpca = opts.fpca.clone();
            fpca.bandwidths = bandwidths[c];
            // Seeded by content, not by label, so relabeling the start
            // cannot change the fit.
            fpca.seed = derive_seed(seed, &[stream::FPCA_CV, idx[0] as u64]);
            let sub: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
            let model = fit_rows(grid, &sub, c + 1, &fpca)?;
            if bandwidths[c].is_none() {
                bandwidths[c] = model.bandwidths;
            }
            models.push(model);
        }
        let distances = rows
            .iter()
            .map(|r| relative_distance_values(r, &models).map(|d| d.0))
            .collect::<Result<Vec<_>>>()?;

        if k == 1 {
            let n = rows.len();
            let current = Iterate {
                models,
                labels,
                gamma: LogitCoefficients::null(1),
                distances,
                posterior: vec![vec![1.0]; n],
            };
            return Ok(current.finish(0, true, vec![n]));
        }

        let xs: Vec<Vec<f64>> = distances.iter().map(|d| covariate(d)).collect();
        let gamma = fit_logit(&xs, &labels, k, opts.ridge)?;
        let post: Vec<Vec<f64>> = xs.iter().map(|x| posterior(x, &gamma)).collect();
        let objective = labels.iter().zip(&post).filter(|(&l, p)| argmax(p) == l).count();
        trace.push(objective);

        let next: Vec<usize> = if it == 0 {
            distances
                .iter()
                .map(|d| {
                    let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                    argmax(&neg)
                })
                .collect()
        } else {
            post.iter().map(|p| argmax(p)).collect()
        };
        let current = Iterate {
            models,
            labels,
            gamma,
            distances,
            posterior: post,
        };
        if next == current.labels {
            return Ok(current.finish(it + 1, true, trace));
        }
        if opts.max_iterations == 0 {
            return Ok(current.finish(0, false, trace));
        }
        labels = next;
        if best.as_ref().is_none_or(|(o, _)| objective > *o) {
            best = Some((objective, current));
        }
    }
    log::warn!("clustering did not converge in {} iterations; returning the best iterate", opts.max_iterations);
    let (_, it) = best.expect("at least one iteration ran");
    Ok(it.finish(opts.max_iterations.max(1), false, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::clustering_error;
    use crate::fpca::Estimator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn unit(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let w = grid.trapezoid_weights();
        let raw: Vec<f64> = grid.points().iter().map(|&t| f(t)).collect();
        let n = raw.iter().zip(&w).map(|(a, w)| w * a * a).sum::<f64>().sqrt();
        raw.iter().map(|a| a / n).collect()
    }

    /// Two groups along `φ`, centred at `±5`, with small variation along it.
    fn two_groups(n: usize, seed: u64) -> (Vec<SampledCurve>, Vec<usize>) {
        let grid = TimeGrid::daily();
        let phi = unit(&grid, |t| (std::f64::consts::PI * t / 24.0).sin());
        let psi = unit(&grid, |t| (2.0 * std::f64::consts::PI * t / 24.0).cos());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let mut curves = Vec::new();
        let mut truth = Vec::new();
        for i in 0..2 * n {
            let g = i % 2;
            let sign = if g == 0 { 5.0 } else { -5.0 };
            let basis = if g == 0 { &phi } else { &psi };
            let a = z.sample(&mut rng);
            let values = (0..grid.len()).map(|j| sign * phi[j] + a * basis[j]).collect();
            curves.push(SampledCurve { grid: grid.clone(), values, id: i.to_string() });
            truth.push(g);
        }
        (curves, truth)
    }

    fn raw_opts() -> ClusteringOptions {
        let mut o = ClusteringOptions::default();
        o.fpca.estimator = Estimator::Raw;
        o
    }

    #[test]
    fn well_separated_groups_are_recovered() {
        let (curves, truth) = two_groups(12, 1);
        let fit = fit_clusters(&curves, 2, 7, &raw_opts()).unwrap();
        assert!(fit.converged);
        assert_eq!(clustering_error(&truth, &fit.membership.assignments, 2), 0.0);
        for p in &fit.membership.posterior {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for d in &fit.distances {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_estimator_recovers_groups_too() {
        let (curves, truth) = two_groups(10, 2);
        let fit = fit_clusters(&curves, 2, 3, &ClusteringOptions::default()).unwrap();
        assert_eq!(clustering_error(&truth, &fit.membership.assignments, 2), 0.0);
        assert!(fit.models.iter().all(|m| m.bandwidths.is_some()));
    }

    #[test]
    fn single_cluster_is_trivial() {
        let (curves, _) = two_groups(5, 3);
        let fit = fit_clusters(&curves, 1, 0, &raw_opts()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 0);
        assert!(fit.membership.assignments.iter().all(|&c| c == 0));
        assert_eq!(fit.models[0].label, 1);
    }

    #[test]
    fn identical_curves_cannot_be_split() {
        let grid = TimeGrid::daily();
        let curves: Vec<SampledCurve> = (0..10)
            .map(|i| SampledCurve::from_fn(&grid, i.to_string(), |t| t.sin()))
            .collect();
        assert!(matches!(
            fit_clusters(&curves, 2, 0, &raw_opts()),
            Err(Error::EmptyCluster { .. })
        ));
    }

    #[test]
    fn relabeled_start_gives_the_same_partition() {
        let (curves, _) = two_groups(10, 4);
        // A deliberately poor start so the iterations have work to do.
        let start: Vec<usize> = (0..curves.len()).map(|i| usize::from(i % 3 == 0)).collect();
        let flipped: Vec<usize> = start.iter().map(|&l| 1 - l).collect();
        let a = fit_clusters_from(&curves, start, 2, 5, &raw_opts()).unwrap();
        let b = fit_clusters_from(&curves, flipped, 2, 5, &raw_opts()).unwrap();
        assert_eq!(clustering_error(&a.membership.assignments, &b.membership.assignments, 2), 0.0);
    }

    #[test]
    fn undersized_cluster_is_reported() {
        let (curves, _) = two_groups(6, 5);
        let start: Vec<usize> = (0..curves.len()).map(|i| usize::from(i < 2)).collect();
        assert!(matches!(
            fit_clusters_from(&curves, start, 2, 0, &raw_opts()),
            Err(Error::ClusterTooSmall { cluster: 2, size: 2, min: 4 })
        ));
    }
}
