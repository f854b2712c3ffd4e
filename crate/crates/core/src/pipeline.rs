//! End-to-end training from complete curves, and the method comparison
//! built on it.

use serde::{Deserialize, Serialize};

use crate::clustering::{fit_clusters, select_num_clusters, ClusteringOptions, SelectKOptions, SelectKResult};
use crate::error::{Error, Result};
use crate::eval::{evaluate_methods, Method, MethodTable, Roster};
use crate::numerics::SampledCurve;
use crate::predict::{BootstrapOptions, MixtureModel, MixtureOptions, Span};
use crate::rng::derive_seed;

/// A fixed number of clusters, or selection by the bootstrap tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterCount {
    Auto,
    Fixed(usize),
}

impl Serialize for ClusterCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClusterCount::Auto => s.serialize_str("auto"),
            ClusterCount::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(ClusterCount::Fixed(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for ClusterCount {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(ClusterCount::Auto),
            other => other
                .parse()
                .map(ClusterCount::Fixed)
                .map_err(|_| Error::Config(format!("number of clusters {other:?} is neither an integer nor \"auto\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationOptions {
    pub methods: Vec<Method>,
    pub kappas: Vec<Span>,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Fp, Method::FmpHard, Method::FmpSoft, Method::Fpcp, Method::FpcpHard, Method::FpcpSoft],
            kappas: vec![Span::Hours(1.0), Span::Hours(4.0), Span::Hours(8.0), Span::Full],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub num_clusters: ClusterCount,
    pub seed: u64,
    pub clustering: ClusteringOptions,
    /// Used when `num_clusters` is `auto`; its clustering options are
    /// replaced by `clustering`.
    pub select_k: SelectKOptions,
    pub mixture: MixtureOptions,
    pub bootstrap: BootstrapOptions,
    pub evaluation: EvaluationOptions,
    /// Also fit the single-cluster model behind FP and FPCP.
    pub fit_pooled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_clusters: ClusterCount::Fixed(3),
            seed: 0,
            clustering: ClusteringOptions::default(),
            select_k: SelectKOptions::default(),
            mixture: MixtureOptions::default(),
            bootstrap: BootstrapOptions::default(),
            evaluation: EvaluationOptions::default(),
            fit_pooled: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub mixture: MixtureModel,
    pub pooled: Option<MixtureModel>,
    /// 0-based cluster of each training curve.
    pub assignments: Vec<usize>,
    pub posterior: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub select_k: Option<SelectKResult>,
}

/// Clusters the curves (choosing K first when asked), then fits the score
/// regressions and, if configured, the pooled model.
pub fn train(curves: &[SampledCurve], config: &PipelineConfig, seed: u64) -> Result<TrainOutcome> {
    let (k, select_k) = match config.num_clusters {
        ClusterCount::Fixed(0) => return Err(Error::Config("number of clusters must be at least 1".into())),
        ClusterCount::Fixed(k) => (k, None),
        ClusterCount::Auto => {
            let mut opts = config.select_k.clone();
            opts.clustering = config.clustering.clone();
            let res = select_num_clusters(curves, derive_seed(seed, &[10]), &opts)?;
            (res.k, Some(res))
        }
    };
    let clustering = fit_clusters(curves, k, derive_seed(seed, &[11]), &config.clustering)?;
    let assignments = clustering.membership.assignments.clone();
    let posterior = clustering.membership.posterior.clone();
    let gamma = (k > 1).then(|| clustering.gamma.clone());
    let mixture = MixtureModel::fit(
        curves,
        &assignments,
        clustering.models,
        gamma,
        &config.mixture,
        derive_seed(seed, &[12]),
    )?;
    let pooled = if config.fit_pooled && k > 1 {
        Some(fit_with_labels(curves, &vec![0; curves.len()], 1, config, derive_seed(seed, &[13]))?)
    } else if config.fit_pooled {
        Some(mixture.clone())
    } else {
        None
    };
    Ok(TrainOutcome {
        mixture,
        pooled,
        assignments,
        posterior,
        iterations: clustering.iterations,
        converged: clustering.converged,
        select_k,
    })
}

/// A mixture on given 0-based labels: per-cluster FPCA, the logit on
/// relative distances and the regressions, without reclustering.
pub fn fit_with_labels(
    curves: &[SampledCurve],
    labels: &[usize],
    k: usize,
    config: &PipelineConfig,
    seed: u64,
) -> Result<MixtureModel> {
    let mut opts = config.clustering.clone();
    opts.max_iterations = 0;
    let res = crate::clustering::fit_clusters_from(curves, labels.to_vec(), k, seed, &opts)?;
    let gamma = (k > 1).then(|| res.gamma.clone());
    MixtureModel::fit(curves, labels, res.models, gamma, &config.mixture, derive_seed(seed, &[1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub trained: TrainOutcome,
    pub oracle: Option<MixtureModel>,
    pub table: MethodTable,
}

/// Trains on `train`, then scores every configured method on `test`.
/// FMP_S* needs labels for both sets.
pub fn compare_methods(
    train_curves: &[SampledCurve],
    train_labels: Option<&[usize]>,
    test: &[SampledCurve],
    test_labels: Option<&[usize]>,
    config: &PipelineConfig,
    seed: u64,
) -> Result<Comparison> {
    let methods = &config.evaluation.methods;
    let wants_oracle = methods.contains(&Method::FmpOracle);
    if wants_oracle && (train_labels.is_none() || test_labels.is_none()) {
        return Err(Error::Config("FMP_S* needs ground-truth labels for training and test curves".into()));
    }
    let mut cfg = config.clone();
    cfg.fit_pooled = methods.iter().any(|m| matches!(m, Method::Fp | Method::Fpcp));
    let trained = train(train_curves, &cfg, seed)?;
    let oracle = if wants_oracle {
        let labels = train_labels.unwrap();
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Some(fit_with_labels(train_curves, labels, k, &cfg, derive_seed(seed, &[14]))?)
    } else {
        None
    };
    let roster = Roster { main: &trained.mixture, pooled: trained.pooled.as_ref(), oracle: oracle.as_ref() };
    let table = evaluate_methods(
        roster,
        test,
        test_labels,
        methods,
        &config.mixture.omegas,
        &config.evaluation.kappas,
    )?;
    Ok(Comparison { trained, oracle, table })
}
