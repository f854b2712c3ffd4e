//! Synthetic daily curves from known cluster processes, and replicated
//! studies over them.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{best_matching, clustering_error};
use crate::error::{Error, Result};
use crate::eval::{MethodTable, TableCell};
use crate::numerics::{weighted_dot, SampledCurve, TimeGrid};
use crate::pipeline::{compare_methods, PipelineConfig};
use crate::predict::{Predictor, Span};
use crate::rng::{derive_seed, rng_for, stream};

/// One cluster process `μ + Σ ξ_j φ_j + ε`, `ξ_j ~ N(0, λ_j)`,
/// `ε ~ N(0, σ²)` independently at each grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub noise_variance: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub grid: TimeGrid,
    pub clusters: Vec<ClusterSpec>,
    pub replicates: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        default_config()
    }
}

/// Orthonormalizes `raw` under the trapezoid inner product of `grid`.
pub fn orthonormalize(grid: &TimeGrid, raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let w = grid.trapezoid_weights();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
    for f in raw {
        let mut v = f.clone();
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for u in &out {
                let c = weighted_dot(&w, &v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = weighted_dot(&w, &v, &v).sqrt();
        if !(norm > 1e-10) {
            return Err(Error::Config("eigenfunction candidates are linearly dependent".into()));
        }
        v.iter_mut().for_each(|a| *a /= norm);
        out.push(v);
    }
    Ok(out)
}

fn bump(t: f64, centre: f64, width: f64) -> f64 {
    (-((t - centre) / width).powi(2)).exp()
}

/// Three clusters: a high, highly variable day with a broad daytime peak; a
/// lower, steadier day peaking at midday; and a day whose variability sits
/// in the evening.
pub fn default_config() -> SimulationConfig {
    let grid = TimeGrid::daily();
    let sample = |f: &dyn Fn(f64) -> f64| grid.points().iter().map(|&t| f(t)).collect::<Vec<f64>>();
    let spec = |mean: Vec<f64>, raw: Vec<Vec<f64>>, eigenvalues: Vec<f64>, noise: f64, n_train, n_test| ClusterSpec {
        mean,
        eigenfunctions: orthonormalize(&grid, &raw).expect("default eigenfunctions are independent"),
        eigenvalues,
        noise_variance: noise,
        n_train,
        n_test,
    };
    // Every cluster carries a whole-day level component so that short
    // windows still see variation above the noise.
    let broad = spec(
        sample(&|t| 25.0 + 60.0 * bump(t, 13.0, 5.5)),
        vec![
            sample(&|t| bump(t, 13.0, 5.5)),
            sample(&|t| (t - 13.0) / 6.0 * bump(t, 13.0, 6.0)),
            sample(&|t| bump(t, 12.0, 9.0)),
        ],
        vec![400.0, 120.0, 150.0],
        9.0,
        21,
        3,
    );
    let midday = spec(
        sample(&|t| 20.0 + 50.0 * bump(t, 12.5, 3.5)),
        vec![
            sample(&|t| bump(t, 12.5, 3.0)),
            sample(&|t| bump(t, 12.0, 9.0)),
            sample(&|t| (t - 12.5) / 3.0 * bump(t, 12.5, 3.5)),
        ],
        vec![150.0, 100.0, 20.0],
        6.0,
        31,
        8,
    );
    let evening = spec(
        sample(&|t| 22.0 + 30.0 * bump(t, 8.0, 2.0) + 25.0 * bump(t, 12.5, 3.0) + 40.0 * bump(t, 17.5, 2.5)),
        vec![
            sample(&|t| bump(t, 17.5, 2.5)),
            sample(&|t| bump(t, 12.0, 9.0)),
            sample(&|t| (t - 17.5) / 2.5 * bump(t, 17.5, 2.5)),
        ],
        vec![350.0, 120.0, 40.0],
        9.0,
        18,
        3,
    );
    SimulationConfig { grid, clusters: vec![broad, midday, evening], replicates: 100 }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Config("simulation needs at least one cluster".into()));
        }
        let w = self.grid.trapezoid_weights();
        for (c, spec) in self.clusters.iter().enumerate() {
            let label = c + 1;
            if spec.mean.len() != self.grid.len() {
                return Err(Error::Config(format!("cluster {label}: mean does not match the grid")));
            }
            if spec.eigenfunctions.len() != spec.eigenvalues.len() {
                return Err(Error::Config(format!(
                    "cluster {label}: {} eigenfunctions but {} eigenvalues",
                    spec.eigenfunctions.len(),
                    spec.eigenvalues.len()
                )));
            }
            if spec.eigenvalues.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
                return Err(Error::Config(format!("cluster {label}: eigenvalues must be finite and nonnegative")));
            }
            if !(spec.noise_variance >= 0.0) || !spec.noise_variance.is_finite() {
                return Err(Error::Config(format!("cluster {label}: noise variance must be finite and nonnegative")));
            }
            for (i, f) in spec.eigenfunctions.iter().enumerate() {
                if f.len() != self.grid.len() {
                    return Err(Error::Config(format!("cluster {label}: eigenfunction {} does not match the grid", i + 1)));
                }
                for (j, g) in spec.eigenfunctions.iter().enumerate().take(i + 1) {
                    let target = if i == j { 1.0 } else { 0.0 };
                    let dev = (weighted_dot(&w, f, g) - target).abs();
                    if dev > 1e-6 {
                        return Err(Error::Config(format!(
                            "cluster {label}: eigenfunctions {} and {} deviate from orthonormality by {dev:.2e}",
                            j + 1,
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn analytic_covariance(&self, cluster: usize) -> Vec<Vec<f64>> {
        let spec = &self.clusters[cluster];
        let n = self.grid.len();
        let mut cov = vec![vec![0.0; n]; n];
        for (l, phi) in spec.eigenvalues.iter().zip(&spec.eigenfunctions) {
            for i in 0..n {
                for j in 0..n {
                    cov[i][j] += l * phi[i] * phi[j];
                }
            }
        }
        cov
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SampledCurve>,
    /// 0-based cluster of each training curve.
    pub train_labels: Vec<usize>,
    pub test: Vec<SampledCurve>,
    pub test_labels: Vec<usize>,
}

fn draw(spec: &ClusterSpec, grid: &TimeGrid, id: String, rng: &mut impl Rng) -> SampledCurve {
    let mut values = spec.mean.clone();
    for (l, phi) in spec.eigenvalues.iter().zip(&spec.eigenfunctions) {
        let z: f64 = StandardNormal.sample(rng);
        let xi = l.sqrt() * z;
        values.iter_mut().zip(phi).for_each(|(v, p)| *v += xi * p);
    }
    let sd = spec.noise_variance.sqrt();
    if sd > 0.0 {
        for v in values.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
    }
    SampledCurve { grid: grid.clone(), values, id }
}

/// Training curves cluster by cluster, then test curves; each cluster and
/// split draws from its own stream.
pub fn generate_dataset(config: &SimulationConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut data = Dataset { train: Vec::new(), train_labels: Vec::new(), test: Vec::new(), test_labels: Vec::new() };
    for (c, spec) in config.clusters.iter().enumerate() {
        let mut rng = rng_for(seed, &[stream::GENERATE, c as u64, 0]);
        for i in 0..spec.n_train {
            data.train.push(draw(spec, &config.grid, format!("train{}_{}", c + 1, i + 1), &mut rng));
            data.train_labels.push(c);
        }
        let mut rng = rng_for(seed, &[stream::GENERATE, c as u64, 1]);
        for i in 0..spec.n_test {
            data.test.push(draw(spec, &config.grid, format!("test{}_{}", c + 1, i + 1), &mut rng));
            data.test_labels.push(c);
        }
    }
    Ok(data)
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub clustering_error: f64,
    /// Misclassification of test curves at each τ, by maximum posterior on
    /// the whole past (or the first window when that was not fitted).
    pub classification_error: Vec<f64>,
    pub table: MethodTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub seed: u64,
    pub requested: usize,
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<(usize, String)>,
    /// Mean TMIPE with its standard error over successful replicates.
    pub summary: MethodTable,
    pub config: SimulationConfig,
    pub pipeline: PipelineConfig,
}

pub fn run_replicate(config: &SimulationConfig, pipeline: &PipelineConfig, replicate: usize, seed: u64) -> Result<ReplicateResult> {
    let data = generate_dataset(config, derive_seed(seed, &[stream::GENERATE]))?;
    let fit_seed = derive_seed(seed, &[stream::REPLICATE]);
    let outcome = compare_methods(
        &data.train,
        Some(&data.train_labels),
        &data.test,
        Some(&data.test_labels),
        pipeline,
        fit_seed,
    )?;
    let k = outcome.trained.mixture.num_clusters().max(config.clusters.len());
    let clustering_error = clustering_error(&data.train_labels, &outcome.trained.assignments, k);
    // Classification error against the best matching of fitted to true
    // labels.
    let perm = best_matching(&data.train_labels, &outcome.trained.assignments, k);
    let omega = if pipeline.mixture.omegas.contains(&Span::Full) { Span::Full } else { pipeline.mixture.omegas[0] };
    let predictor = Predictor::new(&outcome.trained.mixture, omega)?;
    let mut classification_error = Vec::with_capacity(outcome.trained.mixture.tau_grid.len());
    for q in 0..outcome.trained.mixture.tau_grid.len() {
        let mut wrong = 0;
        for (curve, &truth) in data.test.iter().zip(&data.test_labels) {
            let obs = predictor.observed_values(q, curve)?;
            let p = predictor.posterior(q, &obs)?;
            if perm[crate::classify::argmax(&p)] != truth {
                wrong += 1;
            }
        }
        classification_error.push(wrong as f64 / data.test.len() as f64);
    }
    Ok(ReplicateResult { replicate, seed, clustering_error, classification_error, table: outcome.table })
}

/// Runs `config.replicates` independent replicates in parallel. Failed
/// replicates are logged and skipped; more than a fifth failing is an error.
pub fn run_study(config: &SimulationConfig, pipeline: &PipelineConfig, seed: u64) -> Result<StudyReport> {
    config.validate()?;
    if config.replicates == 0 {
        return Err(Error::Config("a study needs at least one replicate".into()));
    }
    let results: Vec<(usize, Result<ReplicateResult>)> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let rseed = derive_seed(seed, &[stream::REPLICATE, r as u64]);
            (r, run_replicate(config, pipeline, r, rseed))
        })
        .collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(v) => replicates.push(v),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    if failures.len() * 5 > config.replicates || replicates.is_empty() {
        return Err(Error::StudyFailure { failures: failures.len(), replicates: config.replicates });
    }
    let summary = summarize(&replicates.iter().map(|r| &r.table).collect::<Vec<_>>())?;
    Ok(StudyReport {
        seed,
        requested: config.replicates,
        replicates,
        failures,
        summary,
        config: config.clone(),
        pipeline: pipeline.clone(),
    })
}

/// Cell-wise mean and standard error of TMIPE, and mean traces.
pub fn summarize(tables: &[&MethodTable]) -> Result<MethodTable> {
    let first = *tables.first().ok_or_else(|| Error::InsufficientData("no tables to summarize".into()))?;
    let n = tables.len() as f64;
    let mut cells = Vec::with_capacity(first.cells.len());
    for (i, cell) in first.cells.iter().enumerate() {
        let values: Vec<f64> = tables.iter().map(|t| t.cells[i].tmipe).collect();
        let mean = values.iter().sum::<f64>() / n;
        let se = if tables.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        let mut trace = vec![0.0; cell.trace.len()];
        for t in tables {
            trace.iter_mut().zip(&t.cells[i].trace).for_each(|(a, b)| *a += b / n);
        }
        cells.push(TableCell { method: cell.method, kappa: cell.kappa, omega: cell.omega, tmipe: mean, se: Some(se), trace });
    }
    Ok(MethodTable {
        methods: first.methods.clone(),
        kappas: first.kappas.clone(),
        omegas: first.omegas.clone(),
        tau_grid: first.tau_grid.clone(),
        cells,
        failures: tables.iter().map(|t| t.failures).sum(),
    })
}

impl StudyReport {
    /// One row per replicate: `replicate,seed,clustering_error` and the
    /// classification error at each τ.
    pub fn replicates_csv(&self) -> String {
        let mut out = String::from("replicate,seed,clustering_error");
        for tau in self.summary.tau_grid.points() {
            out.push_str(&format!(",class_error_tau={tau}"));
        }
        out.push('\n');
        for r in &self.replicates {
            out.push_str(&format!("{},{},{}", r.replicate, r.seed, r.clustering_error));
            for e in &r.classification_error {
                out.push_str(&format!(",{e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn mean_clustering_error(&self) -> f64 {
        self.replicates.iter().map(|r| r.clustering_error).sum::<f64>() / self.replicates.len() as f64
    }

    pub fn mean_classification_error(&self) -> Vec<f64> {
        let n = self.replicates.len() as f64;
        let mut out = vec![0.0; self.summary.tau_grid.len()];
        for r in &self.replicates {
            out.iter_mut().zip(&r.classification_error).for_each(|(a, b)| *a += b / n);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_specs_are_valid() {
        let cfg = default_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.clusters.iter().map(|c| c.n_train).collect::<Vec<_>>(), vec![21, 31, 18]);
        assert_eq!(cfg.clusters.iter().map(|c| c.n_test).collect::<Vec<_>>(), vec![3, 8, 3]);
        assert_eq!(cfg.grid, TimeGrid::daily());
    }

    #[test]
    fn skewed_eigenfunctions_rejected() {
        let mut cfg = default_config();
        cfg.clusters[0].eigenfunctions[1][10] += 0.01;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_degenerate_spec_reproduces_the_mean() {
        let mut cfg = default_config();
        for c in &mut cfg.clusters {
            c.noise_variance = 0.0;
            c.eigenvalues.iter_mut().for_each(|l| *l = 0.0);
        }
        let data = generate_dataset(&cfg, 5).unwrap();
        for (curve, &c) in data.train.iter().chain(&data.test).zip(data.train_labels.iter().chain(&data.test_labels)) {
            assert_eq!(curve.values, cfg.clusters[c].mean);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = default_config();
        assert_eq!(generate_dataset(&cfg, 11).unwrap(), generate_dataset(&cfg, 11).unwrap());
        assert_ne!(generate_dataset(&cfg, 11).unwrap().train[0], generate_dataset(&cfg, 12).unwrap().train[0]);
    }
}
