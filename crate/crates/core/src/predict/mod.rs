//! Functional mixture prediction: per-cluster score regressions from the
//! observed window to the future, their smoothing over the current time τ,
//! conditional and mixture predictions, the FPCP baseline and bootstrap
//! bands.

mod bootstrap;
mod fpcp;
mod regression;

pub use bootstrap::{bootstrap_interval, BootstrapOptions};
pub use regression::{
    fit_beta, raw_beta, smooth_beta, window_blocks, ClusterBetas,
    RegressionCoefficients,
};

use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classify::{argmax, covariate, fit_logit, normalize_residuals, partial_distances, posterior, LogitCoefficients};
use crate::error::{Error, Result};
use crate::fpca::{ClusterModel, SubdomainModel};
use crate::numerics::{SampledCurve, TimeGrid, DEFAULT_FOLDS};
use crate::rng::{derive_seed, stream};

/// A window length in hours, or the whole available span (`ω*`, `κ*`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Span {
    #[default]
    Full,
    Hours(f64),
}

impl Span {
    pub fn hours(self) -> Option<f64> {
        match self {
            Span::Full => None,
            Span::Hours(h) => Some(h),
        }
    }

    pub fn label(self, star: &str) -> String {
        match self {
            Span::Full => star.to_string(),
            Span::Hours(h) => format!("{h}"),
        }
    }
}

impl std::str::FromStr for Span {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" | "*" => Ok(Span::Full),
            t => match t.parse::<f64>() {
                Ok(h) if h > 0.0 && h.is_finite() => Ok(Span::Hours(h)),
                _ => Err(Error::Config(format!("window length {t:?} is neither positive nor \"full\""))),
            },
        }
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Span::Full => s.serialize_str("full"),
            Span::Hours(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(h) if h > 0.0 && h.is_finite() => Ok(Span::Hours(h)),
            Raw::Num(h) => Err(serde::de::Error::custom(format!("window length {h} must be positive"))),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureOptions {
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_step: f64,
    /// Observed-window lengths to fit regressions for.
    pub omegas: Vec<Span>,
    pub smooth_beta: bool,
    pub beta_folds: usize,
    /// Refit the logit on partial-curve distances at every τ and window
    /// instead of reusing the full-curve fit.
    pub refit_gamma_per_tau: bool,
    pub ridge: f64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self {
            tau_start: 8.0,
            tau_end: 20.0,
            tau_step: 0.25,
            omegas: vec![Span::Full],
            smooth_beta: true,
            beta_folds: DEFAULT_FOLDS,
            refit_gamma_per_tau: false,
            ridge: crate::classify::DEFAULT_RIDGE,
        }
    }
}

impl MixtureOptions {
    pub fn tau_grid(&self) -> Result<TimeGrid> {
        if !(self.tau_step > 0.0 && self.tau_end > self.tau_start) {
            return Err(Error::Config(format!(
                "prediction times {}..{} by {} do not form a grid",
                self.tau_start, self.tau_end, self.tau_step
            )));
        }
        let q = ((self.tau_end - self.tau_start) / self.tau_step).round() as usize + 1;
        TimeGrid::new((0..q).map(|i| self.tau_start + i as f64 * self.tau_step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub omega: Span,
    pub betas: RegressionCoefficients,
    /// Per-τ logits on partial distances, when refitting is enabled.
    pub gammas: Option<Vec<LogitCoefficients>>,
}

/// The fitted prediction machine: cluster models, the logit on relative
/// distances (absent for a single cluster) and score regressions per
/// observed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub clusters: Vec<ClusterModel>,
    pub gamma: Option<LogitCoefficients>,
    pub tau_grid: TimeGrid,
    pub windows: Vec<WindowFit>,
    pub options: MixtureOptions,
}

impl MixtureModel {
    /// Fits the regressions (and optional per-τ logits) for already
    /// clustered training curves; `assignments` are 0-based.
    pub fn fit(
        curves: &[SampledCurve],
        assignments: &[usize],
        clusters: Vec<ClusterModel>,
        gamma: Option<LogitCoefficients>,
        opts: &MixtureOptions,
        seed: u64,
    ) -> Result<Self> {
        let k = clusters.len();
        if k == 0 {
            return Err(Error::InsufficientData("no cluster models".into()));
        }
        if assignments.len() != curves.len() || assignments.iter().any(|&a| a >= k) {
            return Err(Error::Config("assignments do not match the curves and clusters".into()));
        }
        if k > 1 && gamma.is_none() {
            return Err(Error::Config("a mixture of several clusters needs logit coefficients".into()));
        }
        if curves.iter().any(|c| c.grid != clusters[0].grid) {
            return Err(Error::GridMismatch("training curves and cluster models on different grids".into()));
        }
        let tau_grid = opts.tau_grid()?;
        let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
        for (c, &a) in curves.iter().zip(assignments) {
            members[a].push(c.values.as_slice());
        }
        let mut windows = Vec::with_capacity(opts.omegas.len());
        for (w, &omega) in opts.omegas.iter().enumerate() {
            let raw = fit_beta(&clusters, &members, &tau_grid, omega)?;
            let betas = if opts.smooth_beta {
                smooth_beta(&raw, opts.beta_folds, derive_seed(seed, &[stream::BETA_CV, w as u64]))?
            } else {
                raw
            };
            let gammas = if opts.refit_gamma_per_tau && k > 1 {
                let mut per_tau = Vec::with_capacity(tau_grid.len());
                for &tau in tau_grid.points() {
                    let blocks: Vec<SubdomainModel> = clusters
                        .iter()
                        .map(|m| regression::block_at(m, tau, omega))
                        .collect::<Result<_>>()?;
                    let observed: Vec<ClusterModel> = blocks.iter().map(|b| b.observed.clone()).collect();
                    let range = blocks[0].observed_range.clone();
                    let xs = curves
                        .iter()
                        .map(|c| partial_distances(&c.values[range.clone()], &observed).map(|d| covariate(&d)))
                        .collect::<Result<Vec<_>>>()?;
                    per_tau.push(fit_logit(&xs, assignments, k, opts.ridge)?);
                }
                Some(per_tau)
            } else {
                None
            };
            windows.push(WindowFit { omega, betas, gammas });
        }
        Ok(Self {
            clusters,
            gamma: if k > 1 { gamma } else { None },
            tau_grid,
            windows,
            options: opts.clone(),
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.clusters[0].grid
    }

    pub fn window(&self, omega: Span) -> Result<usize> {
        self.windows.iter().position(|w| w.omega == omega).ok_or_else(|| {
            Error::Config(format!(
                "no regression was fitted for the window {}; fitted: {}",
                omega.label("full"),
                self.windows.iter().map(|w| w.omega.label("full")).collect::<Vec<_>>().join(", ")
            ))
        })
    }

    /// Position of τ on the prediction grid; values inside the grid's range
    /// snap to the nearest point.
    pub fn tau_position(&self, tau: f64) -> Result<usize> {
        if let Some(q) = self.tau_grid.index_of(tau) {
            return Ok(q);
        }
        let (lo, hi) = (self.tau_grid.first(), self.tau_grid.last());
        if !(tau.is_finite() && tau >= lo - 1e-9 && tau <= hi + 1e-9) {
            return Err(Error::Domain(format!(
                "current time {tau} lies outside the prediction grid {lo}..{hi}"
            )));
        }
        let q = self.tau_grid.nearest_index(tau);
        log::warn!("current time {tau} is off the prediction grid; using {}", self.tau_grid.points()[q]);
        Ok(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Posterior-weighted mixture of the regression predictions.
    #[default]
    Soft,
    /// The regression prediction of the most probable cluster.
    Hard,
    /// Posterior-weighted mixture of the conditional-expectation predictions.
    FpcpSoft,
    FpcpHard,
}

impl Mode {
    pub fn is_hard(self) -> bool {
        matches!(self, Mode::Hard | Mode::FpcpHard)
    }

    pub fn is_fpcp(self) -> bool {
        matches!(self, Mode::FpcpSoft | Mode::FpcpHard)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Mode::Soft),
            "hard" => Ok(Mode::Hard),
            "fpcp" | "fpcp-soft" => Ok(Mode::FpcpSoft),
            "fpcp-hard" => Ok(Mode::FpcpHard),
            other => Err(Error::Config(format!("unknown prediction mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    #[serde(with = "crate::hexfloat")]
    pub level: f64,
    #[serde(with = "crate::hexfloat::vec")]
    pub lower: Vec<f64>,
    #[serde(with = "crate::hexfloat::vec")]
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tau: f64,
    pub future_grid: TimeGrid,
    pub mixture_curve: SampledCurve,
    pub per_cluster_curves: Vec<SampledCurve>,
    pub posterior: Vec<f64>,
    pub bands: Option<Bands>,
    /// The conditional-expectation solve needed a ridge.
    pub ridge_used: bool,
}

/// `Σ_c w_c p_c(t)`.
pub(crate) fn combine(weights: &[f64], curves: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; curves[0].len()];
    for (w, curve) in weights.iter().zip(curves) {
        if *w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(curve) {
            *o += w * v;
        }
    }
    out
}

pub(crate) fn indicator(p: &[f64]) -> Vec<f64> {
    let top = argmax(p);
    (0..p.len()).map(|c| if c == top { 1.0 } else { 0.0 }).collect()
}

/// Prediction at the τ-grid points for one observed window, with the block
/// models built lazily and shared between calls.
pub struct Predictor<'a> {
    mixture: &'a MixtureModel,
    window: usize,
    blocks: Vec<OnceLock<std::result::Result<Vec<SubdomainModel>, String>>>,
    psd: Vec<OnceLock<std::result::Result<nalgebra::DMatrix<f64>, String>>>,
}

impl<'a> Predictor<'a> {
    pub fn new(mixture: &'a MixtureModel, omega: Span) -> Result<Self> {
        let window = mixture.window(omega)?;
        Ok(Self {
            mixture,
            window,
            blocks: (0..mixture.tau_grid.len()).map(|_| OnceLock::new()).collect(),
            psd: (0..mixture.num_clusters()).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn mixture(&self) -> &MixtureModel {
        self.mixture
    }

    pub fn omega(&self) -> Span {
        self.mixture.windows[self.window].omega
    }

    pub fn blocks(&self, q: usize) -> Result<&[SubdomainModel]> {
        let tau = self.mixture.tau_grid.points()[q];
        let omega = self.omega();
        self.blocks[q]
            .get_or_init(|| {
                self.mixture
                    .clusters
                    .iter()
                    .map(|m| regression::block_at(m, tau, omega))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.to_string())
            })
            .as_deref()
            .map_err(|e| Error::Domain(e.clone()))
    }

    /// The observed-window values of `curve`, which must lie on a contiguous
    /// piece of the model grid covering the window.
    pub fn observed_values(&self, q: usize, curve: &SampledCurve) -> Result<Vec<f64>> {
        let range = self.blocks(q)?[0].observed_range.clone();
        let grid = self.mixture.grid();
        let offset = grid.index_of(curve.grid.first()).ok_or_else(|| {
            Error::GridMismatch("partial curve does not start on a model grid point".into())
        })?;
        let aligned = curve.grid.len() + offset <= grid.len()
            && curve
                .grid
                .points()
                .iter()
                .zip(&grid.points()[offset..])
                .all(|(a, b)| (a - b).abs() < 1e-9);
        if !aligned {
            return Err(Error::GridMismatch("partial curve is not on the model grid".into()));
        }
        if offset > range.start || offset + curve.len() < range.end {
            return Err(Error::InsufficientData(format!(
                "partial curve covers {}..{} h but the window needs {}..{} h",
                curve.grid.first(),
                curve.grid.last(),
                grid.points()[range.start],
                grid.points()[range.end - 1]
            )));
        }
        Ok(curve.values[range.start - offset..range.end - offset].to_vec())
    }

    /// Posterior membership of an observed window.
    pub fn posterior(&self, q: usize, observed: &[f64]) -> Result<Vec<f64>> {
        let k = self.mixture.num_clusters();
        if k == 1 {
            return Ok(vec![1.0]);
        }
        let blocks = self.blocks(q)?;
        let w = blocks[0].observed.weights();
        let resid: Vec<f64> = blocks.iter().map(|b| b.observed.residual_norm_sq(observed, &w)).collect();
        let x = covariate(&normalize_residuals(&resid).0);
        let gamma = match &self.mixture.windows[self.window].gammas {
            Some(per_tau) => &per_tau[q],
            None => self.mixture.gamma.as_ref().ok_or_else(|| {
                Error::Artifact("mixture of several clusters without logit coefficients".into())
            })?,
        };
        Ok(posterior(&x, gamma))
    }

    /// `μ_𝒯 + Σ_k (Σ_j β̂_kj ξ*_j) φ_𝒯k` for cluster `c`.
    pub fn conditional(&self, q: usize, c: usize, observed: &[f64]) -> Result<Vec<f64>> {
        let block = &self.blocks(q)?[c];
        let beta = &self.mixture.windows[self.window].betas.clusters[c].smoothed[q];
        conditional_prediction(block, beta, observed)
    }

    pub fn fpcp_conditional(&self, q: usize, c: usize, observed: &[f64]) -> Result<(Vec<f64>, bool)> {
        let block = &self.blocks(q)?[c];
        let cov = self.psd[c]
            .get_or_init(|| fpcp::psd_covariance(&self.mixture.clusters[c]).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::InvalidCovariance(e.clone()))?;
        fpcp::conditional_expectation(&self.mixture.clusters[c], cov, block, observed)
    }

    pub fn tau_position(&self, tau: f64) -> Result<usize> {
        self.mixture.tau_position(tau)
    }

    pub fn blocks_future_grid(&self, q: usize) -> Result<TimeGrid> {
        Ok(self.blocks(q)?[0].future.grid.clone())
    }

    /// Prediction from an observed window at τ-grid position `q`.
    pub fn predict_observed(&self, q: usize, observed: &[f64], mode: Mode) -> Result<Prediction> {
        let k = self.mixture.num_clusters();
        let block0 = &self.blocks(q)?[0];
        let mut ridge_used = false;
        let mut per_cluster = Vec::with_capacity(k);
        for c in 0..k {
            if mode.is_fpcp() {
                let (p, ridge) = self.fpcp_conditional(q, c, observed)?;
                ridge_used |= ridge;
                per_cluster.push(p);
            } else {
                per_cluster.push(self.conditional(q, c, observed)?);
            }
        }
        let post = self.posterior(q, observed)?;
        let weights = if mode.is_hard() { indicator(&post) } else { post.clone() };
        let mixture = if k == 1 { per_cluster[0].clone() } else { combine(&weights, &per_cluster) };
        let future_grid = block0.future.grid.clone();
        let as_curve = |values: Vec<f64>, id: String| SampledCurve {
            grid: future_grid.clone(),
            values,
            id,
        };
        Ok(Prediction {
            tau: block0.tau,
            mixture_curve: as_curve(mixture, "mixture".into()),
            per_cluster_curves: per_cluster
                .into_iter()
                .enumerate()
                .map(|(c, v)| as_curve(v, format!("cluster{}", c + 1)))
                .collect(),
            future_grid: future_grid.clone(),
            posterior: post,
            bands: None,
            ridge_used,
        })
    }

    pub fn predict(&self, curve: &SampledCurve, tau: f64, mode: Mode) -> Result<Prediction> {
        let q = self.tau_position(tau)?;
        let observed = self.observed_values(q, curve)?;
        self.predict_observed(q, &observed, mode)
    }
}

pub(crate) fn conditional_prediction(
    block: &SubdomainModel,
    beta: &nalgebra::DMatrix<f64>,
    observed: &[f64],
) -> Result<Vec<f64>> {
    let obs = &block.observed;
    let fut = &block.future;
    if observed.len() != obs.grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} observed values for a {}-point window",
            observed.len(),
            obs.grid.len()
        )));
    }
    if beta.nrows() != fut.num_components || beta.ncols() != obs.num_components {
        return Err(Error::Artifact(format!(
            "regression of shape {}x{} for blocks with {} and {} components",
            beta.nrows(),
            beta.ncols(),
            fut.num_components,
            obs.num_components
        )));
    }
    let xi = obs.project(observed, &obs.weights());
    let scores: Vec<f64> = (0..fut.num_components)
        .map(|k| (0..obs.num_components).map(|j| beta[(k, j)] * xi[j]).sum())
        .collect();
    Ok(fut.reconstruct(&scores))
}

/// Posterior membership of a partially observed curve at τ; the logit is
/// the one fitted on complete training curves.
pub fn classify_partial(curve: &SampledCurve, mixture: &MixtureModel, tau: f64, omega: Span) -> Result<Vec<f64>> {
    let p = Predictor::new(mixture, omega)?;
    let q = p.tau_position(tau)?;
    let observed = p.observed_values(q, curve)?;
    p.posterior(q, &observed)
}

pub fn predict_conditional(
    curve: &SampledCurve,
    mixture: &MixtureModel,
    cluster: usize,
    tau: f64,
    omega: Span,
) -> Result<SampledCurve> {
    if cluster >= mixture.num_clusters() {
        return Err(Error::Config(format!("cluster index {cluster} out of range")));
    }
    let p = Predictor::new(mixture, omega)?;
    let q = p.tau_position(tau)?;
    let observed = p.observed_values(q, curve)?;
    let values = p.conditional(q, cluster, &observed)?;
    Ok(SampledCurve {
        grid: p.blocks(q)?[cluster].future.grid.clone(),
        values,
        id: format!("cluster{}", cluster + 1),
    })
}

pub fn predict_mixture(curve: &SampledCurve, mixture: &MixtureModel, tau: f64, omega: Span, mode: Mode) -> Result<Prediction> {
    Predictor::new(mixture, omega)?.predict(curve, tau, mode)
}

pub fn predict_fpcp(curve: &SampledCurve, mixture: &MixtureModel, tau: f64, omega: Span, hard: bool) -> Result<Prediction> {
    let mode = if hard { Mode::FpcpHard } else { Mode::FpcpSoft };
    Predictor::new(mixture, omega)?.predict(curve, tau, mode)
}
