use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ClusterModel, DEFAULT_DELTA};
use crate::error::{Error, Result};
use crate::numerics::{
    default_candidates, fold_assignment, grouped_fold_assignment, select_bandwidth_cv_folds,
    smooth_1d_values, Aggregated, Bandwidth, Bandwidth2, CvCurve, GriddedPlan, SampledCurve,
    Surface, TimeGrid, DEFAULT_FOLDS,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Local-linear mean, local-plane covariance with the diagonal excluded,
    /// bandwidths by cross-validation.
    #[default]
    Smoothed,
    /// Sample mean and sample covariance (divisor `n − 1`), no noise term.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpcaBandwidths {
    pub mean: Bandwidth,
    pub covariance: Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpcaOptions {
    pub delta: f64,
    pub estimator: Estimator,
    pub folds: usize,
    /// Bandwidth candidates in hours; the default grid when absent.
    pub candidates: Option<Vec<Bandwidth>>,
    /// Skip cross-validation and use these bandwidths.
    pub bandwidths: Option<FpcaBandwidths>,
    pub max_components: Option<usize>,
    pub seed: u64,
}

impl Default for FpcaOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            estimator: Estimator::Smoothed,
            folds: DEFAULT_FOLDS,
            candidates: None,
            bandwidths: None,
            max_components: None,
            seed: 0,
        }
    }
}

impl FpcaOptions {
    fn candidates(&self, grid: &TimeGrid) -> Vec<Bandwidth> {
        self.candidates.clone().unwrap_or_else(|| default_candidates(grid))
    }
}

fn check_rows(grid: &TimeGrid, rows: &[&[f64]], min: usize, what: &str) -> Result<()> {
    if rows.len() < min {
        return Err(Error::InsufficientData(format!(
            "{what} needs at least {min} curves, got {}",
            rows.len()
        )));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != grid.len()) {
        return Err(Error::GridMismatch(format!(
            "curve of length {} on a {}-point grid",
            r.len(),
            grid.len()
        )));
    }
    Ok(())
}

fn common_grid(curves: &[SampledCurve]) -> Result<TimeGrid> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InsufficientData("no curves".into()))?;
    if curves.iter().any(|c| c.grid != first.grid) {
        return Err(Error::GridMismatch("curves do not share a common grid".into()));
    }
    Ok(first.grid.clone())
}

// =============================================================================
// Mean
// =============================================================================

pub(crate) fn mean_values(
    grid: &TimeGrid,
    rows: &[&[f64]],
    opts: &FpcaOptions,
) -> Result<(Vec<f64>, Option<Bandwidth>)> {
    check_rows(grid, rows, 2, "mean estimation")?;
    let n = rows.len();
    let m = grid.len();
    let mut sums = vec![0.0; m];
    for r in rows {
        for (s, v) in sums.iter_mut().zip(r.iter()) {
            *s += v;
        }
    }
    if opts.estimator == Estimator::Raw {
        return Ok((sums.iter().map(|s| s / n as f64).collect(), None));
    }
    let h = match opts.bandwidths {
        Some(b) => b.mean,
        None => {
            let xs: Vec<f64> = (0..n).flat_map(|_| grid.points().iter().copied()).collect();
            let ys: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            let ws = vec![1.0; xs.len()];
            let folds = opts.folds.max(2);
            let fold_of = if n >= folds {
                let group_of: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();
                grouped_fold_assignment(&group_of, n, folds, opts.seed)
            } else {
                fold_assignment(xs.len(), folds, opts.seed)
            };
            select_bandwidth_cv_folds(&xs, &ys, &ws, &fold_of, folds, &opts.candidates(grid))?
                .choose()?
        }
    };
    let data = Aggregated::from_sums(grid.points().to_vec(), vec![n as f64; m], sums);
    Ok((smooth_1d_values(&data, h, grid.points())?, Some(h)))
}

pub fn estimate_mean(curves: &[SampledCurve], opts: &FpcaOptions) -> Result<SampledCurve> {
    let grid = common_grid(curves)?;
    let rows: Vec<&[f64]> = curves.iter().map(|c| c.values.as_slice()).collect();
    let (values, _) = mean_values(&grid, &rows, opts)?;
    Ok(SampledCurve {
        grid,
        values,
        id: "mean".into(),
    })
}

// =============================================================================
// Covariance
// =============================================================================

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub surface: Surface,
    pub noise_variance: f64,
    /// The raw σ² estimate was negative and has been clamped to zero.
    pub noise_clamped: bool,
    pub bandwidth: Option<Bandwidth>,
}

fn off_diagonal_ones(m: usize) -> DMatrix<f64> {
    let mut w = DMatrix::from_element(m, m, 1.0);
    w.fill_diagonal(0.0);
    w
}

thread_local! {
    static PLANS: std::cell::RefCell<std::collections::HashMap<(u64, u64), std::rc::Rc<GriddedPlan>>> =
        Default::default();
}

/// The covariance smoother on a grid depends only on the grid and `h`, and
/// clustering refits it many times at fixed bandwidths, so plans are memoized
/// per thread.
fn covariance_plan(grid: &TimeGrid, h: Bandwidth) -> Result<std::rc::Rc<GriddedPlan>> {
    use std::hash::{Hash, Hasher};
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    for p in grid.points() {
        p.to_bits().hash(&mut hasher);
    }
    let key = (hasher.finish(), h.get().to_bits());
    if let Some(plan) = PLANS.with(|c| c.borrow().get(&key).cloned()) {
        return Ok(plan);
    }
    let m = grid.len();
    let plan = std::rc::Rc::new(GriddedPlan::new(
        grid,
        grid,
        &off_diagonal_ones(m),
        Bandwidth2::isotropic(h),
        grid,
        grid,
    )?);
    PLANS.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() >= 64 {
            c.clear();
        }
        c.insert(key, plan.clone());
    });
    Ok(plan)
}

/// Out-of-fold error of the off-diagonal raw products, with folds over curves.
///
/// For a held-out set `F` the error `Σ_{i∈F} Σ_{j≠l} (P_ijl − Ĝ_jl)²` expands
/// into per-fold cell sums `Σ P` and `Σ P²`, both of which are matrix products
/// of the residuals, so no per-curve product surface is ever formed.
fn covariance_cv(
    grid: &TimeGrid,
    resid: &DMatrix<f64>,
    candidates: &[Bandwidth],
    folds: usize,
    seed: u64,
) -> Result<CvCurve> {
    let (n, m) = resid.shape();
    let folds = folds.min(n).max(2);
    let fold_of = fold_assignment(n, folds, seed);
    let total = resid.transpose() * resid;
    let mut fold_p = Vec::with_capacity(folds);
    let mut fold_q = Vec::with_capacity(folds);
    let mut fold_n = Vec::with_capacity(folds);
    for f in 0..folds {
        let idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let rf = resid.select_rows(&idx);
        let rf2 = rf.map(|v| v * v);
        fold_p.push(rf.transpose() * &rf);
        fold_q.push(rf2.transpose() * &rf2);
        fold_n.push(idx.len());
    }
    let offdiag = |a: &DMatrix<f64>| a.sum() - a.diagonal().sum();
    let q_total: f64 = fold_q.iter().map(offdiag).sum();
    let cells = (n * m * (m - 1)) as f64;

    let mut scores = Vec::with_capacity(candidates.len());
    for &h in candidates {
        let plan = covariance_plan(grid, h)?;
        let mut sse = q_total;
        let mut ok = true;
        for f in 0..folds {
            let n_train = n - fold_n[f];
            if n_train == 0 || fold_n[f] == 0 {
                continue;
            }
            let v = (&total - &fold_p[f]) / n_train as f64;
            match plan.apply(&v) {
                Ok(g) => {
                    let cross = g.component_mul(&fold_p[f]);
                    let sq = g.component_mul(&g);
                    sse += -2.0 * offdiag(&cross) + fold_n[f] as f64 * offdiag(&sq);
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        scores.push(ok.then_some(sse / cells));
    }
    Ok(CvCurve {
        candidates: candidates.to_vec(),
        scores,
        scale: q_total / cells,
    })
}

pub(crate) fn covariance_values(
    grid: &TimeGrid,
    rows: &[&[f64]],
    mean: &[f64],
    opts: &FpcaOptions,
) -> Result<CovarianceEstimate> {
    check_rows(grid, rows, 3, "covariance estimation")?;
    if mean.len() != grid.len() {
        return Err(Error::GridMismatch("mean does not match grid".into()));
    }
    let n = rows.len();
    let m = grid.len();
    let resid = DMatrix::from_fn(n, m, |i, j| rows[i][j] - mean[j]);

    if opts.estimator == Estimator::Raw {
        let g = resid.transpose() * &resid / (n - 1) as f64;
        let g = (&g + g.transpose()) * 0.5;
        return Ok(CovarianceEstimate {
            surface: Surface::new(grid.clone(), grid.clone(), g)?,
            noise_variance: 0.0,
            noise_clamped: false,
            bandwidth: None,
        });
    }

    let h = match opts.bandwidths {
        Some(b) => b.covariance,
        None => covariance_cv(grid, &resid, &opts.candidates(grid), opts.folds, opts.seed ^ 0x9e37)?
            .choose()?,
    };
    let cell_mean = resid.transpose() * &resid / n as f64;
    let g = covariance_plan(grid, h)?.apply(&cell_mean)?;
    let g = (&g + g.transpose()) * 0.5;

    // The diagonal of the raw products carries G(t,t) + σ².
    let diag = Aggregated::from_sums(
        grid.points().to_vec(),
        vec![n as f64; m],
        cell_mean.diagonal().iter().map(|v| v * n as f64).collect(),
    );
    let smoothed_diag = smooth_1d_values(&diag, h, grid.points())?;
    let w = grid.trapezoid_weights();
    let gap: f64 = (0..m).map(|j| w[j] * (smoothed_diag[j] - g[(j, j)])).sum::<f64>()
        / w.iter().sum::<f64>();
    let (noise_variance, noise_clamped) = if gap < 0.0 { (0.0, true) } else { (gap, false) };
    Ok(CovarianceEstimate {
        surface: Surface::new(grid.clone(), grid.clone(), g)?,
        noise_variance,
        noise_clamped,
        bandwidth: Some(h),
    })
}

pub fn estimate_covariance(
    curves: &[SampledCurve],
    mean: &SampledCurve,
    opts: &FpcaOptions,
) -> Result<CovarianceEstimate> {
    let grid = common_grid(curves)?;
    if mean.grid != grid {
        return Err(Error::GridMismatch("mean and curves on different grids".into()));
    }
    let rows: Vec<&[f64]> = curves.iter().map(|c| c.values.as_slice()).collect();
    covariance_values(&grid, &rows, &mean.values, opts)
}

// =============================================================================
// Full fit
// =============================================================================

/// Fits a [`ClusterModel`] to curve values given as rows on `grid`.
pub(crate) fn fit_rows(
    grid: &TimeGrid,
    rows: &[&[f64]],
    label: usize,
    opts: &FpcaOptions,
) -> Result<ClusterModel> {
    let (mean, h_mean) = mean_values(grid, rows, opts)?;
    if opts.estimator == Estimator::Raw && rows.len() < grid.len() {
        let mut model = raw_from_gram(grid, rows, mean, opts)?;
        model.label = label;
        return Ok(model);
    }
    let cov = covariance_values(grid, rows, &mean, opts)?;
    let mut model = ClusterModel::from_covariance(
        label,
        grid.clone(),
        mean,
        cov.surface.values,
        cov.noise_variance,
        opts.delta,
        opts.max_components,
    )?;
    model.noise_clamped = cov.noise_clamped;
    model.n_curves = rows.len();
    model.bandwidths = match (h_mean, cov.bandwidth) {
        (Some(mean), Some(covariance)) => Some(FpcaBandwidths { mean, covariance }),
        _ => None,
    };
    Ok(model)
}

/// Sample-covariance model through the `n × n` Gram matrix: with
/// `A = R W^{1/2} / √(n−1)` the weighted covariance operator is `AᵀA`, whose
/// nonzero spectrum matches that of `AAᵀ`, and `ψ = Aᵀu/√λ`.
fn raw_from_gram(
    grid: &TimeGrid,
    rows: &[&[f64]],
    mean: Vec<f64>,
    opts: &FpcaOptions,
) -> Result<ClusterModel> {
    check_rows(grid, rows, 3, "covariance estimation")?;
    let n = rows.len();
    let m = grid.len();
    let w = grid.trapezoid_weights();
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let resid = DMatrix::from_fn(n, m, |i, j| rows[i][j] - mean[j]);
    let covariance = resid.transpose() * &resid / (n - 1) as f64;
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let a = DMatrix::from_fn(n, m, |i, j| resid[(i, j)] * sw[j] / ((n - 1) as f64).sqrt());
    let gram = &a * a.transpose();
    let (values, vectors) = super::eigen::weighted_eigen(&gram, &vec![1.0; n])?;
    let level = crate::numerics::weighted_dot(&w, &mean, &mean).max(1.0);
    if values.iter().sum::<f64>() <= 1e-13 * level {
        return Err(Error::NoVariance);
    }
    let mut k = super::select_num_components(&values, opts.delta)?;
    if let Some(cap) = opts.max_components {
        k = k.min(cap.max(1));
    }
    let eigenfunctions = (0..k)
        .map(|j| {
            let u = nalgebra::DVector::from_column_slice(&vectors[j]);
            let psi = a.transpose() * u / values[j].sqrt();
            let mut phi: Vec<f64> = (0..m).map(|i| psi[i] / sw[i]).collect();
            let norm = crate::numerics::weighted_dot(&w, &phi, &phi).sqrt();
            phi.iter_mut().for_each(|p| *p /= norm);
            super::eigen::orient(&mut phi, &w);
            phi
        })
        .collect();
    Ok(ClusterModel {
        label: 0,
        grid: grid.clone(),
        mean,
        eigenvalues: values,
        eigenfunctions,
        num_components: k,
        delta: opts.delta,
        noise_variance: 0.0,
        noise_clamped: false,
        covariance,
        bandwidths: None,
        n_curves: n,
    })
}

pub fn fit_cluster_model(
    curves: &[SampledCurve],
    label: usize,
    opts: &FpcaOptions,
) -> Result<ClusterModel> {
    let grid = common_grid(curves)?;
    let rows: Vec<&[f64]> = curves.iter().map(|c| c.values.as_slice()).collect();
    fit_rows(&grid, &rows, label, opts)
}
