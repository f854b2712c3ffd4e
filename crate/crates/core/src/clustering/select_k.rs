use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_rows_from, initial_rows};
use super::{curve_rows, ClusteringOptions};
use crate::error::{Error, Result};
use crate::fpca::{fit_rows, select_num_components, ClusterModel, Estimator, FpcaOptions};
use crate::numerics::{weighted_dot, SampledCurve, TimeGrid};
use crate::rng::{derive_seed, rng_for, stream};

pub const MIN_BOOTSTRAP: usize = 50;

/// How reference data for a pooled pair are generated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullScheme {
    /// Gaussian curves from a single-cluster fit of the pooled pair plus
    /// white noise at the residual level.
    #[default]
    Gaussian,
    /// Curves drawn with replacement from the pooled pair. Keeps any real
    /// structure in the reference data, so it is conservative.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectKOptions {
    pub max_k: usize,
    pub bootstrap: usize,
    pub level: f64,
    pub null: NullScheme,
    pub clustering: ClusteringOptions,
}

impl Default for SelectKOptions {
    fn default() -> Self {
        Self {
            max_k: 5,
            bootstrap: 200,
            level: 0.05,
            null: NullScheme::Gaussian,
            clustering: ClusteringOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    /// 1-based labels in the `K`-cluster fit.
    pub clusters: (usize, usize),
    pub mean_statistic: f64,
    pub subspace_statistic: f64,
    /// Bootstrap p-values `#{T_b ≥ T_obs} / B` for equal means (H01) and
    /// equal eigenspaces (H02).
    pub h01_p: f64,
    pub h02_p: f64,
    pub h01_reject: bool,
    pub h02_reject: bool,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCountTest {
    pub k: usize,
    pub adjusted_level: f64,
    pub pairs: Vec<PairTest>,
    /// Why the `K`-cluster fit itself failed, if it did.
    pub fit_error: Option<String>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectKResult {
    pub k: usize,
    pub tests: Vec<ClusterCountTest>,
}

/// Forward selection: `K` is accepted when every pair of its clusters
/// rejects equal means or equal eigenspaces at the Bonferroni level
/// `α / (K(K−1)/2)`; the search stops at the first `K` that is not.
pub fn select_num_clusters(curves: &[SampledCurve], seed: u64, opts: &SelectKOptions) -> Result<SelectKResult> {
    if opts.bootstrap < MIN_BOOTSTRAP {
        return Err(Error::Config(format!(
            "{} bootstrap samples; at least {MIN_BOOTSTRAP} are required",
            opts.bootstrap
        )));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Config(format!("level {} outside (0, 1)", opts.level)));
    }
    for k in 2..=opts.max_k {
        let adjusted = adjusted_level(opts.level, k);
        // With B replicates the smallest attainable test has size 1/(B+1).
        if (opts.bootstrap as f64 + 1.0) * adjusted < 0.5 {
            return Err(Error::Config(format!(
                "{} bootstrap samples cannot resolve the adjusted level {adjusted:.2e} at K = {k}",
                opts.bootstrap
            )));
        }
    }
    let (grid, rows) = curve_rows(curves)?;
    let mut tests = Vec::new();
    let mut chosen = 1;
    for k in 2..=opts.max_k {
        let adjusted = adjusted_level(opts.level, k);
        let fit_seed = derive_seed(seed, &[stream::SELECT_K, k as u64]);
        let fit = initial_rows(&grid, &rows, k, fit_seed, &opts.clustering)
            .and_then(|start| fit_rows_from(&grid, &rows, start, k, fit_seed, &opts.clustering));
        let fit = match fit {
            Ok(f) => f,
            Err(e) => {
                log::info!("K = {k}: clustering failed ({e}); stopping");
                tests.push(ClusterCountTest {
                    k,
                    adjusted_level: adjusted,
                    pairs: vec![],
                    fit_error: Some(e.to_string()),
                    accepted: false,
                });
                break;
            }
        };
        let mut pairs = Vec::new();
        for a in 0..k {
            for b in a + 1..k {
                let (pooled, split): (Vec<&[f64]>, Vec<usize>) = fit
                    .membership
                    .assignments
                    .iter()
                    .zip(&rows)
                    .filter(|(&c, _)| c == a || c == b)
                    .map(|(&c, r)| (*r, usize::from(c == b)))
                    .unzip();
                let pair_seed = derive_seed(seed, &[stream::SELECT_K, k as u64, a as u64, b as u64]);
                let mut t = pair_test(&grid, &pooled, &split, pair_seed, opts)?;
                t.clusters = (a + 1, b + 1);
                t.h01_reject = t.h01_p < adjusted;
                t.h02_reject = t.h02_p < adjusted;
                pairs.push(t);
            }
        }
        // A pair is distinct when either null is rejected; two clusters are
        // merged only when neither their means nor their eigenspaces differ.
        let accepted = pairs.iter().all(|p| p.h01_reject || p.h02_reject);
        log::info!("K = {k}: {}", if accepted { "accepted" } else { "not accepted" });
        tests.push(ClusterCountTest {
            k,
            adjusted_level: adjusted,
            pairs,
            fit_error: None,
            accepted,
        });
        if !accepted {
            break;
        }
        chosen = k;
    }
    Ok(SelectKResult { k: chosen, tests })
}

/// Bonferroni over the `K(K−1)/2` pairs; each pair's two nulls are tested
/// at this level.
fn adjusted_level(level: f64, k: usize) -> f64 {
    level / (k * (k - 1) / 2) as f64
}

/// Mean and subspace statistics of two cluster models:
/// `∫(μ_a − μ_b)²` and `½‖P_a − P_b‖²_HS`.
pub(crate) fn pair_statistics(a: &ClusterModel, b: &ClusterModel) -> (f64, f64) {
    let w = a.weights();
    let w = w.as_slice();
    let diff: Vec<f64> = a.mean.iter().zip(&b.mean).map(|(x, y)| x - y).collect();
    let t1 = weighted_dot(w, &diff, &diff);
    let cross: f64 = a
        .eigenfunctions
        .iter()
        .flat_map(|p| b.eigenfunctions.iter().map(move |q| weighted_dot(w, p, q).powi(2)))
        .sum();
    let t2 = 0.5 * (a.num_components + b.num_components) as f64 - cross;
    (t1, t2.max(0.0))
}

/// Integrated total variation `Σ_i ∫(x_i − x̄)²`.
fn total_variation(w: &[f64], rows: &[&[f64]]) -> f64 {
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..w.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    rows.iter()
        .map(|r| {
            let d: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
            weighted_dot(w, &d, &d)
        })
        .sum()
}

/// Statistics of a two-way split. The mean statistic is the between-group
/// share of the total variation, `(n_a n_b / n) ∫(μ_a − μ_b)² / Σ_i ∫(x_i − x̄)²`,
/// so that it does not grow with the spread of the pooled data.
fn split_pair_statistics(grid: &TimeGrid, rows: &[&[f64]], a: &ClusterModel, b: &ClusterModel, sizes: (usize, usize)) -> (f64, f64) {
    let (t1, t2) = pair_statistics(a, b);
    let w = grid.trapezoid_weights();
    let total = total_variation(&w, rows);
    let n = rows.len() as f64;
    let between = sizes.0 as f64 * sizes.1 as f64 / n * t1;
    (if total > 0.0 { between / total } else { 0.0 }, t2)
}

fn split_options(opts: &SelectKOptions, components: usize) -> ClusteringOptions {
    let mut c = opts.clustering.clone();
    c.fpca.estimator = Estimator::Raw;
    c.fpca.bandwidths = None;
    c.fpca.max_components = Some(components);
    c
}

/// Re-splits `rows` in two with the raw-moment clustering and returns the
/// statistics of the split.
fn split_statistics(grid: &TimeGrid, rows: &[&[f64]], seed: u64, opts: &ClusteringOptions) -> Result<(f64, f64)> {
    let start = initial_rows(grid, rows, 2, seed, opts)?;
    let fit = fit_rows_from(grid, rows, start, 2, seed, opts)?;
    let sizes = fit.cluster_sizes();
    Ok(split_pair_statistics(grid, rows, &fit.models[0], &fit.models[1], (sizes[0], sizes[1])))
}

/// Share of variance the null model keeps as smooth components; the rest
/// becomes white noise.
const NULL_FVE: f64 = 0.99;

/// Single-cluster null for a pooled pair: its mean, leading eigenpairs and
/// the per-point variance left after projecting on them.
struct NullModel {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
    noise_sd: f64,
    /// Dimension the subspaces are compared at: the usual FVE count.
    compare: usize,
}

impl NullModel {
    fn fit(grid: &TimeGrid, pooled: &[&[f64]], opts: &SelectKOptions) -> Result<Self> {
        let fpca = FpcaOptions { delta: NULL_FVE.max(opts.clustering.fpca.delta), ..opts.clustering.fpca.clone() };
        let model = fit_rows(grid, pooled, 1, &fpca)?;
        let mut compare = select_num_components(&model.eigenvalues, opts.clustering.fpca.delta)?.min(model.num_components);
        if let Some(cap) = opts.clustering.fpca.max_components {
            compare = compare.min(cap.max(1));
        }
        let w = model.weights();
        let m = grid.len();
        let resid: f64 = pooled
            .iter()
            .map(|r| {
                let fitted = model.reconstruct(&model.project(r, &w));
                r.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum::<f64>()
            })
            .sum();
        Ok(Self {
            eigenvalues: model.eigenvalues[..model.num_components].to_vec(),
            eigenfunctions: model.eigenfunctions,
            mean: model.mean,
            noise_sd: (resid / (pooled.len() * m) as f64).sqrt(),
            compare,
        })
    }

    fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut y = self.mean.clone();
        for (l, phi) in self.eigenvalues.iter().zip(&self.eigenfunctions) {
            let xi = l.sqrt() * rng.sample::<f64, _>(StandardNormal);
            y.iter_mut().zip(phi).for_each(|(v, p)| *v += xi * p);
        }
        for v in y.iter_mut() {
            *v += self.noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        y
    }
}

/// The observed statistic and every reference statistic come from the same
/// two-way split procedure, applied to the pooled curves and to reference
/// samples of the same size, so under a single cluster the observed value
/// is exchangeable with the references. Subspaces are compared at the
/// dimension of the pooled single-cluster fit.
fn pair_test(grid: &TimeGrid, pooled: &[&[f64]], split: &[usize], seed: u64, opts: &SelectKOptions) -> Result<PairTest> {
    let null = NullModel::fit(grid, pooled, opts)?;
    let sopts = split_options(opts, null.compare);
    let observed = match split_statistics(grid, pooled, derive_seed(seed, &[0]), &sopts) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("re-splitting a pooled pair failed ({e}); using the fitted split");
            let part = |g: usize| -> Vec<&[f64]> {
                pooled.iter().zip(split).filter(|(_, &s)| s == g).map(|(r, _)| *r).collect()
            };
            let (pa, pb) = (part(0), part(1));
            let a = fit_rows(grid, &pa, 1, &sopts.fpca)?;
            let b = fit_rows(grid, &pb, 2, &sopts.fpca)?;
            split_pair_statistics(grid, pooled, &a, &b, (pa.len(), pb.len()))
        }
    };

    let n = pooled.len();
    let refs: Vec<Option<(f64, f64)>> = (0..opts.bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, &[stream::BOOTSTRAP, b as u64]);
            let data: Vec<Vec<f64>> = match opts.null {
                NullScheme::Gaussian => (0..n).map(|_| null.draw(&mut rng)).collect(),
                NullScheme::Resample => (0..n).map(|_| pooled[rng.random_range(0..n)].to_vec()).collect(),
            };
            let rows: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
            split_statistics(grid, &rows, derive_seed(seed, &[stream::BOOTSTRAP, b as u64, 1]), &sopts).ok()
        })
        .collect();
    let refs: Vec<(f64, f64)> = refs.into_iter().flatten().collect();
    if refs.len() * 2 < opts.bootstrap {
        return Err(Error::IntervalFailure {
            successes: refs.len(),
            requested: opts.bootstrap,
        });
    }
    let b = refs.len() as f64;
    let h01_p = refs.iter().filter(|r| r.0 >= observed.0).count() as f64 / b;
    let h02_p = refs.iter().filter(|r| r.1 >= observed.1).count() as f64 / b;
    Ok(PairTest {
        clusters: (1, 2),
        mean_statistic: observed.0,
        subspace_statistic: observed.1,
        h01_p,
        h02_p,
        h01_reject: false,
        h02_reject: false,
        replicates: refs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let w = grid.trapezoid_weights();
        let raw: Vec<f64> = grid.points().iter().map(|&t| f(t)).collect();
        let n = weighted_dot(&w, &raw, &raw).sqrt();
        raw.iter().map(|a| a / n).collect()
    }

    fn curves(n: usize, groups: usize, seed: u64) -> Vec<SampledCurve> {
        let grid = TimeGrid::daily();
        let pi = std::f64::consts::PI;
        let bases = [
            unit(&grid, |t| (pi * t / 24.0).sin()),
            unit(&grid, |t| (2.0 * pi * t / 24.0).sin()),
            unit(&grid, |t| (3.0 * pi * t / 24.0).sin()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let g = i % groups;
                let shift = 6.0 * g as f64;
                let a: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
                let b: f64 = rng.sample::<f64, _>(StandardNormal) * 0.7;
                let values = (0..grid.len())
                    .map(|j| shift + a * bases[g][j] + b * bases[(g + 1) % 3][j] + 0.05 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                SampledCurve { grid: grid.clone(), values, id: i.to_string() }
            })
            .collect()
    }

    fn fast() -> SelectKOptions {
        let mut o = SelectKOptions { max_k: 3, bootstrap: 60, ..Default::default() };
        o.clustering.fpca.estimator = Estimator::Raw;
        o
    }

    #[test]
    fn small_bootstrap_is_a_config_error() {
        let c = curves(20, 1, 0);
        let o = SelectKOptions { bootstrap: 20, ..fast() };
        assert!(matches!(select_num_clusters(&c, 0, &o), Err(Error::Config(_))));
        let o = SelectKOptions { bootstrap: 60, max_k: 8, ..fast() };
        assert!(matches!(select_num_clusters(&c, 0, &o), Err(Error::Config(_))));
    }

    #[test]
    fn two_distinct_groups_are_detected() {
        let c = curves(40, 2, 1);
        let r = select_num_clusters(&c, 3, &fast()).unwrap();
        assert_eq!(r.k, 2, "{r:#?}");
        assert!(r.tests[0].accepted);
    }

    #[test]
    fn statistics_of_identical_models_vanish() {
        let c = curves(20, 1, 4);
        let grid = c[0].grid.clone();
        let rows: Vec<&[f64]> = c.iter().map(|x| x.values.as_slice()).collect();
        let m = fit_rows(&grid, &rows, 1, &crate::fpca::FpcaOptions { estimator: Estimator::Raw, ..Default::default() }).unwrap();
        let (t1, t2) = pair_statistics(&m, &m);
        assert!(t1 == 0.0 && t2.abs() < 1e-12);
    }

    #[test]
    fn reproducible() {
        let c = curves(24, 1, 2);
        let o = SelectKOptions { max_k: 2, ..fast() };
        assert_eq!(select_num_clusters(&c, 9, &o).unwrap(), select_num_clusters(&c, 9, &o).unwrap());
    }
}
