//! Prediction-error metrics and the method comparison table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::ClusterModel;
use crate::numerics::{integrate, SampledCurve, TimeGrid};
use crate::predict::{MixtureModel, Mode, Predictor, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FP")]
    Fp,
    #[serde(rename = "FMP_H")]
    FmpHard,
    #[serde(rename = "FMP_S")]
    FmpSoft,
    /// Soft mixture with cluster memberships known for training and test
    /// curves.
    #[serde(rename = "FMP_S*")]
    FmpOracle,
    #[serde(rename = "FPCP")]
    Fpcp,
    #[serde(rename = "FPCP_H")]
    FpcpHard,
    #[serde(rename = "FPCP_S")]
    FpcpSoft,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Fp,
        Method::FmpHard,
        Method::FmpSoft,
        Method::FmpOracle,
        Method::Fpcp,
        Method::FpcpHard,
        Method::FpcpSoft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fp => "FP",
            Method::FmpHard => "FMP_H",
            Method::FmpSoft => "FMP_S",
            Method::FmpOracle => "FMP_S*",
            Method::Fpcp => "FPCP",
            Method::FpcpHard => "FPCP_H",
            Method::FpcpSoft => "FPCP_S",
        }
    }

    fn uses_pooled(self) -> bool {
        matches!(self, Method::Fp | Method::Fpcp)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Current time τ with the observed window `[max(0, τ−ω), τ]` and the
/// evaluated future `[τ, min(τ+κ, T)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationWindow {
    pub tau: f64,
    pub omega: Span,
    pub kappa: Span,
}

impl EvaluationWindow {
    pub fn observed(&self) -> (f64, f64) {
        match self.omega {
            Span::Full => (0.0, self.tau),
            Span::Hours(w) => ((self.tau - w).max(0.0), self.tau),
        }
    }

    pub fn future(&self, horizon: f64) -> (f64, f64) {
        match self.kappa {
            Span::Full => (self.tau, horizon),
            Span::Hours(k) => (self.tau, (self.tau + k).min(horizon)),
        }
    }
}

/// Number of leading future-grid points inside `[τ, min(τ+κ, T)]`.
fn future_points(future_grid: &TimeGrid, kappa: Span) -> usize {
    match kappa {
        Span::Full => future_grid.len(),
        Span::Hours(k) => {
            let end = future_grid.first() + k;
            future_grid.points().partition_point(|&t| t <= end + 1e-9)
        }
    }
}

/// `ℓ⁻¹ ∫ (ŷ − y)²` over the first `len` future points, `ℓ` the length of
/// that interval.
pub fn window_error(future_grid: &TimeGrid, prediction: &[f64], truth: &[f64], kappa: Span) -> Result<f64> {
    let n = future_points(future_grid, kappa);
    if n < 2 {
        return Err(Error::Domain(format!(
            "future window of {} h starting at {} holds fewer than two grid points",
            kappa.label("full"),
            future_grid.first()
        )));
    }
    let pts = &future_grid.points()[..n];
    let sq: Vec<f64> = prediction[..n].iter().zip(&truth[..n]).map(|(p, y)| (p - y).powi(2)).collect();
    Ok(integrate(pts, &sq) / (pts[n - 1] - pts[0]))
}

/// Mean over curves of `T⁻¹ ∫ (Ẑ − Y)²` for the `M_c`-term reconstructions.
pub fn reconstruction_mipe(curves: &[SampledCurve], model: &ClusterModel) -> Result<f64> {
    if curves.is_empty() {
        return Err(Error::InsufficientData("no curves to reconstruct".into()));
    }
    let w = model.weights();
    let span = model.grid.span();
    let mut total = 0.0;
    for c in curves {
        if c.grid != model.grid {
            return Err(Error::GridMismatch("curve and model on different grids".into()));
        }
        total += model.residual_norm_sq(&c.values, &w) / span;
    }
    Ok(total / curves.len() as f64)
}

/// Trapezoid integral of a per-τ error trace over the τ-grid.
pub fn tmipe(tau_grid: &TimeGrid, mipe: &[f64]) -> f64 {
    integrate(tau_grid.points(), mipe)
}

/// Fitted mixtures a comparison draws on.
#[derive(Clone, Copy)]
pub struct Roster<'a> {
    pub main: &'a MixtureModel,
    /// The single-cluster fit behind FP and FPCP.
    pub pooled: Option<&'a MixtureModel>,
    /// A mixture fitted on the true training labels, for FMP_S*.
    pub oracle: Option<&'a MixtureModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub method: Method,
    pub kappa: Span,
    pub omega: Span,
    pub tmipe: f64,
    pub se: Option<f64>,
    /// MIPE at each τ of the grid.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub methods: Vec<Method>,
    pub kappas: Vec<Span>,
    pub omegas: Vec<Span>,
    pub tau_grid: TimeGrid,
    pub cells: Vec<TableCell>,
    /// Curve-level predictions that failed and were left out.
    pub failures: usize,
}

impl MethodTable {
    pub fn get(&self, method: Method, kappa: Span, omega: Span) -> Option<&TableCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.kappa == kappa && c.omega == omega)
    }

    /// Rows `method, kappa` and one column per ω, as in the printed tables.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,kappa");
        for w in &self.omegas {
            out.push(',');
            out.push_str(&format!("omega={}", w.label("omega*")));
        }
        out.push('\n');
        for &m in &self.methods {
            for &k in &self.kappas {
                out.push_str(&format!("{},{}", m.name(), k.label("kappa*")));
                for &w in &self.omegas {
                    match self.get(m, k, w) {
                        Some(c) => match c.se {
                            Some(se) => out.push_str(&format!(",{:.6} ({:.6})", c.tmipe, se)),
                            None => out.push_str(&format!(",{:.6}", c.tmipe)),
                        },
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Long format: `method,kappa,omega,tau,mipe`.
    pub fn traces_csv(&self) -> String {
        let mut out = String::from("method,kappa,omega,tau,mipe\n");
        for c in &self.cells {
            for (tau, v) in self.tau_grid.points().iter().zip(&c.trace) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.method.name(),
                    c.kappa.label("kappa*"),
                    c.omega.label("omega*"),
                    tau,
                    v
                ));
            }
        }
        out
    }
}

/// TMIPE of every requested method over the (κ, ω) grid. Predictions use
/// the observed window only; errors are taken on `[τ, τ+κ]`.
pub fn evaluate_methods(
    roster: Roster<'_>,
    test: &[SampledCurve],
    test_labels: Option<&[usize]>,
    methods: &[Method],
    omegas: &[Span],
    kappas: &[Span],
) -> Result<MethodTable> {
    if test.is_empty() {
        return Err(Error::InsufficientData("no test curves".into()));
    }
    for &m in methods {
        if m.uses_pooled() && roster.pooled.is_none() {
            return Err(Error::Config(format!("{} needs the pooled single-cluster fit", m.name())));
        }
        if m == Method::FmpOracle && (roster.oracle.is_none() || test_labels.is_none()) {
            return Err(Error::Config("FMP_S* needs ground-truth cluster labels".into()));
        }
    }
    if let Some(labels) = test_labels {
        if labels.len() != test.len() {
            return Err(Error::Config("test labels do not match the test curves".into()));
        }
    }
    let tau_grid = roster.main.tau_grid.clone();
    let horizon = roster.main.grid().last();
    let _ = horizon;
    let mut cells = Vec::new();
    let mut failures = 0;
    for &omega in omegas {
        let main = Predictor::new(roster.main, omega)?;
        let pooled = roster.pooled.map(|m| Predictor::new(m, omega)).transpose()?;
        let oracle = roster.oracle.map(|m| Predictor::new(m, omega)).transpose()?;
        // errors[q][method][kappa] = (sum, count)
        let per_tau: Vec<(Vec<Vec<(f64, usize)>>, usize)> = (0..tau_grid.len())
            .into_par_iter()
            .map(|q| {
                let mut acc = vec![vec![(0.0, 0usize); kappas.len()]; methods.len()];
                let mut failed = 0;
                for (i, curve) in test.iter().enumerate() {
                    for (mi, &m) in methods.iter().enumerate() {
                        let result = (|| -> Result<(TimeGrid, Vec<f64>)> {
                            let (p, mode) = match m {
                                Method::Fp => (pooled.as_ref().unwrap(), Mode::Soft),
                                Method::Fpcp => (pooled.as_ref().unwrap(), Mode::FpcpSoft),
                                Method::FmpHard => (&main, Mode::Hard),
                                Method::FmpSoft => (&main, Mode::Soft),
                                Method::FpcpHard => (&main, Mode::FpcpHard),
                                Method::FpcpSoft => (&main, Mode::FpcpSoft),
                                Method::FmpOracle => {
                                    let p = oracle.as_ref().unwrap();
                                    let obs = p.observed_values(q, curve)?;
                                    let c = test_labels.unwrap()[i];
                                    let pred = p.conditional(q, c, &obs)?;
                                    let grid = p.blocks_future_grid(q)?;
                                    return Ok((grid, pred));
                                }
                            };
                            let obs = p.observed_values(q, curve)?;
                            let pred = p.predict_observed(q, &obs, mode)?;
                            Ok((pred.future_grid, pred.mixture_curve.values))
                        })();
                        match result {
                            Ok((grid, pred)) => {
                                let start = curve.len() - grid.len();
                                let truth = &curve.values[start..];
                                for (ki, &kappa) in kappas.iter().enumerate() {
                                    match window_error(&grid, &pred, truth, kappa) {
                                        Ok(e) => {
                                            acc[mi][ki].0 += e;
                                            acc[mi][ki].1 += 1;
                                        }
                                        Err(_) => failed += 1,
                                    }
                                }
                            }
                            Err(e) => {
                                log::debug!("{} failed on curve {} at τ = {}: {e}", m.name(), curve.id, tau_grid.points()[q]);
                                failed += kappas.len();
                            }
                        }
                    }
                }
                (acc, failed)
            })
            .collect();
        for (mi, &m) in methods.iter().enumerate() {
            for (ki, &kappa) in kappas.iter().enumerate() {
                let mut trace = Vec::with_capacity(tau_grid.len());
                for (q, (acc, _)) in per_tau.iter().enumerate() {
                    let (sum, count) = acc[mi][ki];
                    if count == 0 {
                        return Err(Error::InsufficientData(format!(
                            "{} produced no prediction at τ = {} (κ = {}, ω = {})",
                            m.name(),
                            tau_grid.points()[q],
                            kappa.label("κ*"),
                            omega.label("ω*")
                        )));
                    }
                    trace.push(sum / count as f64);
                }
                cells.push(TableCell {
                    method: m,
                    kappa,
                    omega,
                    tmipe: tmipe(&tau_grid, &trace),
                    se: None,
                    trace,
                });
            }
        }
        failures += per_tau.iter().map(|(_, f)| f).sum::<usize>();
    }
    Ok(MethodTable {
        methods: methods.to_vec(),
        kappas: kappas.to_vec(),
        omegas: omegas.to_vec(),
        tau_grid,
        cells,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_predictor_scores_delta_squared() {
        let grid = TimeGrid::daily();
        let fut = grid.slice(47..96).unwrap();
        let truth: Vec<f64> = fut.points().iter().map(|t| (t / 3.0).sin() * 10.0).collect();
        for delta in [1.0, 0.5, 3.0] {
            let pred: Vec<f64> = truth.iter().map(|y| y + delta).collect();
            for kappa in [Span::Hours(1.0), Span::Hours(4.0), Span::Hours(8.0), Span::Full, Span::Hours(30.0)] {
                let e = window_error(&fut, &pred, &truth, kappa).unwrap();
                assert!((e - delta * delta).abs() < 1e-12, "{e} for {kappa:?}");
            }
        }
        assert_eq!(window_error(&fut, &truth, &truth, Span::Full).unwrap(), 0.0);
    }

    #[test]
    fn full_future_error_matches_direct_integration() {
        let grid = TimeGrid::daily();
        let fut = grid.slice(60..96).unwrap();
        let truth = vec![0.0; fut.len()];
        let pred: Vec<f64> = fut.points().iter().map(|t| t - 15.0).collect();
        // ∫_{15.25}^{24} (t − 15)² dt / 8.75 by the trapezoid rule on a
        // quarter-hour grid: exact value plus h²/12 · (b − a) · f''.
        let (a, b) = (15.25f64, 24.0f64);
        let exact = ((b - 15.0).powi(3) - (a - 15.0).powi(3)) / 3.0;
        let trapezoid = exact + 0.25f64.powi(2) / 12.0 * (b - a) * 2.0;
        let e = window_error(&fut, &pred, &truth, Span::Full).unwrap();
        assert!((e - trapezoid / (b - a)).abs() < 1e-10);
    }

    #[test]
    fn tmipe_of_constant_trace() {
        let grid = TimeGrid::new((0..49).map(|q| 8.0 + 0.25 * q as f64).collect()).unwrap();
        assert!((tmipe(&grid, &vec![2.5; 49]) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn windows_clip_to_the_day() {
        let w = EvaluationWindow { tau: 20.0, omega: Span::Hours(30.0), kappa: Span::Hours(8.0) };
        assert_eq!(w.observed(), (0.0, 20.0));
        assert_eq!(w.future(24.0), (20.0, 24.0));
        let w = EvaluationWindow { tau: 9.0, omega: Span::Full, kappa: Span::Full };
        assert_eq!(w.observed(), (0.0, 9.0));
        assert_eq!(w.future(24.0), (9.0, 24.0));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
