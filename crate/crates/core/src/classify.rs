//! Multiclass logit on relative L² distances: fitting, posterior membership
//! probabilities, and distances of partially observed curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::ClusterModel;

pub const DEFAULT_RIDGE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 100;
const LOGLIK_TOLERANCE: f64 = 1e-9;
const SEPARATION_NORM: f64 = 1e4;

/// `K − 1` coefficient vectors of length `K` (intercept, then `d^(1..K−1)`);
/// class `K` is the baseline with an implicit zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitCoefficients {
    pub num_classes: usize,
    #[serde(with = "crate::hexfloat::vec2")]
    pub gamma: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Coefficient norm exceeded 1e4: the classes are (quasi-)separated and
    /// only the ridge keeps the estimate finite.
    pub separated: bool,
}

impl LogitCoefficients {
    /// All-zero coefficients: uniform posteriors.
    pub fn null(num_classes: usize) -> Self {
        Self {
            num_classes,
            gamma: vec![vec![0.0; num_classes]; num_classes.saturating_sub(1)],
            iterations: 0,
            converged: true,
            separated: false,
        }
    }

    pub fn norm(&self) -> f64 {
        self.gamma.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// `(1, d^(1), …, d^(K−1))`.
pub fn covariate(distances: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(distances.len().max(1));
    x.push(1.0);
    x.extend_from_slice(&distances[..distances.len().saturating_sub(1)]);
    x
}

/// Relative squared projection residuals `d^(c) = r_c / Σ_k r_k`, computed on
/// the models' common grid. The flag marks the all-zero case, where the
/// uniform vector is returned.
pub fn relative_distance_values(values: &[f64], models: &[ClusterModel]) -> Result<(Vec<f64>, bool)> {
    let first = models
        .first()
        .ok_or_else(|| Error::InsufficientData("no cluster models".into()))?;
    if models.iter().any(|m| m.grid != first.grid) || values.len() != first.grid.len() {
        return Err(Error::GridMismatch("curve and cluster models on different grids".into()));
    }
    let w = first.weights();
    let resid: Vec<f64> = models.iter().map(|m| m.residual_norm_sq(values, &w)).collect();
    Ok(normalize_residuals(&resid))
}

pub(crate) fn normalize_residuals(resid: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = resid.iter().sum();
    if !(total > 0.0) {
        let k = resid.len() as f64;
        return (vec![1.0 / k; resid.len()], true);
    }
    (resid.iter().map(|r| r / total).collect(), false)
}

/// Distances of a partially observed curve against each cluster's
/// observed-segment block model.
pub fn partial_distances(partial: &[f64], observed_models: &[ClusterModel]) -> Result<Vec<f64>> {
    if partial.len() < 2 {
        return Err(Error::TooEarly {
            tau: observed_models.first().map_or(0.0, |m| m.grid.last()),
            min_points: 2,
        });
    }
    Ok(relative_distance_values(partial, observed_models)?.0)
}

/// Softmax over `{γ_c·x}` and the baseline's 0, shifted by the maximum.
pub fn posterior(x: &[f64], coef: &LogitCoefficients) -> Vec<f64> {
    let k = coef.num_classes;
    if k <= 1 {
        return vec![1.0];
    }
    debug_assert_eq!(x.len(), k);
    let mut scores: Vec<f64> = coef
        .gamma
        .iter()
        .map(|g| g.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    scores.push(0.0);
    softmax(&scores)
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn penalized_loglik(xs: &[Vec<f64>], labels: &[usize], coef: &LogitCoefficients, ridge: f64) -> f64 {
    let ll: f64 = xs
        .iter()
        .zip(labels)
        .map(|(x, &y)| posterior(x, coef)[y].max(f64::MIN_POSITIVE).ln())
        .sum();
    ll - ridge * coef.norm().powi(2)
}

/// Ridge-penalized multinomial logit by damped Newton (IRLS).
///
/// `labels` are 0-based class indices; class `K − 1` is the baseline.
pub fn fit_logit(
    covariates: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    ridge: f64,
) -> Result<LogitCoefficients> {
    let k = num_classes;
    if covariates.len() != labels.len() {
        return Err(Error::InsufficientData("covariates and labels differ in length".into()));
    }
    if k <= 1 {
        return Ok(LogitCoefficients::null(k.max(1)));
    }
    if covariates.iter().any(|x| x.len() != k) {
        return Err(Error::InsufficientData(format!(
            "covariates must have length {k} (intercept plus {} distances)",
            k - 1
        )));
    }
    if labels.iter().any(|&y| y >= k) {
        return Err(Error::InsufficientData("label outside 0..K".into()));
    }
    let mut present = vec![false; k];
    labels.iter().for_each(|&y| present[y] = true);
    if present.iter().any(|p| !p) {
        return Err(Error::InsufficientData(format!(
            "logit fit needs all {k} classes present in the labels"
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge {ridge} must be nonnegative")));
    }

    let p = k;
    let dim = (k - 1) * p;
    let mut coef = LogitCoefficients::null(k);
    let mut ll = penalized_loglik(covariates, labels, &coef, ridge);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let theta = DVector::from_iterator(dim, coef.gamma.iter().flatten().copied());
        let mut grad = -2.0 * ridge * &theta;
        let mut hess = DMatrix::<f64>::identity(dim, dim) * (2.0 * ridge);
        for (x, &y) in covariates.iter().zip(labels) {
            let pi = posterior(x, &coef);
            for a in 0..k - 1 {
                let resid = if y == a { 1.0 } else { 0.0 } - pi[a];
                for u in 0..p {
                    grad[a * p + u] += resid * x[u];
                }
                for b in 0..k - 1 {
                    let wab = if a == b { pi[a] * (1.0 - pi[a]) } else { -pi[a] * pi[b] };
                    if wab == 0.0 {
                        continue;
                    }
                    for u in 0..p {
                        for v in 0..p {
                            hess[(a * p + u, b * p + v)] += wab * x[u] * x[v];
                        }
                    }
                }
            }
        }
        // Tiny jitter keeps the factorization alive when ridge = 0 and the
        // design is rank deficient.
        for i in 0..dim {
            hess[(i, i)] += 1e-12;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hess.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        // Step halving guarantees the penalized likelihood never decreases.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial_theta = &theta + scale * &step;
            let mut trial = coef.clone();
            for a in 0..k - 1 {
                for u in 0..p {
                    trial.gamma[a][u] = trial_theta[a * p + u];
                }
            }
            let trial_ll = penalized_loglik(covariates, labels, &trial, ridge);
            if trial_ll >= ll {
                accepted = Some((trial, trial_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            converged = true;
            break;
        };
        let gain = next_ll - ll;
        coef = next;
        ll = next_ll;
        if gain < LOGLIK_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("logit fit did not converge in {MAX_ITERATIONS} iterations");
    }
    coef.iterations = iterations;
    coef.converged = converged;
    coef.separated = coef.norm() > SEPARATION_NORM;
    if coef.separated {
        log::debug!("logit coefficients separated (norm {:.3e})", coef.norm());
    }
    Ok(coef)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn null_coefficients_are_uniform() {
        let p = posterior(&[1.0, 0.3, 0.2], &LogitCoefficients::null(3));
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(posterior(&[1.0], &LogitCoefficients::null(1)), vec![1.0]);
    }

    #[test]
    fn closed_form_softmax() {
        let mut coef = LogitCoefficients::null(3);
        coef.gamma[0] = vec![2f64.ln(), 0.0, 0.0];
        let p = posterior(&[1.0, 0.4, 0.1], &coef);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15 && (p[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant_and_overflow_safe() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[1001.0, 1002.0, 1003.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        let c = softmax(&[1e308, 0.0]);
        assert!(c[0] == 1.0 && c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn covariate_drops_last_distance() {
        assert_eq!(covariate(&[0.2, 0.3, 0.5]), vec![1.0, 0.2, 0.3]);
    }

    #[test]
    fn separable_data_classified_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..60 {
            let class = i % 2;
            let d1 = if class == 0 { rng.random_range(0.0..0.05) } else { rng.random_range(0.9..1.0) };
            xs.push(covariate(&[d1, 1.0 - d1]));
            ys.push(class);
        }
        let coef = fit_logit(&xs, &ys, 2, DEFAULT_RIDGE).unwrap();
        let correct = xs.iter().zip(&ys).filter(|(x, &y)| argmax(&posterior(x, &coef)) == y).count();
        assert_eq!(correct, 60);
    }

    #[test]
    fn null_signal_recovers_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4000;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random();
            let b: f64 = rng.random::<f64>() * (1.0 - a);
            xs.push(covariate(&[a, b, 1.0 - a - b]));
            let u: f64 = rng.random();
            ys.push(if u < 0.2 { 0 } else if u < 0.5 { 1 } else { 2 });
        }
        let coef = fit_logit(&xs, &ys, 3, DEFAULT_RIDGE).unwrap();
        assert!(coef.converged);
        let freq: Vec<f64> = (0..3).map(|c| ys.iter().filter(|&&y| y == c).count() as f64 / n as f64).collect();
        let avg: Vec<f64> = (0..3)
            .map(|c| xs.iter().map(|x| posterior(x, &coef)[c]).sum::<f64>() / n as f64)
            .collect();
        for c in 0..3 {
            assert!((avg[c] - freq[c]).abs() < 0.05);
            // Individual posteriors stay near the frequencies too.
            assert!((posterior(&xs[0], &coef)[c] - freq[c]).abs() < 0.05);
        }
    }

    /// Independent binary logistic regression by plain Newton iterations on
    /// the penalized likelihood, written out in scalar form.
    fn binary_oracle(xs: &[Vec<f64>], ys: &[usize], ridge: f64) -> Vec<f64> {
        let mut b = [0.0f64; 2];
        for _ in 0..200 {
            let mut g = [-2.0 * ridge * b[0], -2.0 * ridge * b[1]];
            let mut h = [[2.0 * ridge, 0.0], [0.0, 2.0 * ridge]];
            for (x, &y) in xs.iter().zip(ys) {
                let eta = b[0] * x[0] + b[1] * x[1];
                let p = 1.0 / (1.0 + (-eta).exp());
                let t = if y == 0 { 1.0 } else { 0.0 };
                for u in 0..2 {
                    g[u] += (t - p) * x[u];
                    for v in 0..2 {
                        h[u][v] += p * (1.0 - p) * x[u] * x[v];
                    }
                }
            }
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            b[0] += (h[1][1] * g[0] - h[0][1] * g[1]) / det;
            b[1] += (h[0][0] * g[1] - h[1][0] * g[0]) / det;
        }
        b.to_vec()
    }

    #[test]
    fn binary_case_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..300 {
            let d: f64 = rng.random();
            let p0 = 1.0 / (1.0 + (-(2.0 - 5.0 * d)).exp());
            ys.push(if rng.random::<f64>() < p0 { 0 } else { 1 });
            xs.push(covariate(&[d, 1.0 - d]));
        }
        let coef = fit_logit(&xs, &ys, 2, DEFAULT_RIDGE).unwrap();
        let oracle = binary_oracle(&xs, &ys, DEFAULT_RIDGE);
        for (a, b) in coef.gamma[0].iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn ridge_path_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..400 {
            let a: f64 = rng.random();
            let b: f64 = rng.random::<f64>() * (1.0 - a);
            let scores = [1.0 - 3.0 * a, 0.5 - 2.0 * b, 0.0];
            let p = softmax(&scores);
            let u: f64 = rng.random();
            ys.push(if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 });
            xs.push(covariate(&[a, b, 1.0 - a - b]));
        }
        let mut prev = fit_logit(&xs, &ys, 3, 1e-3).unwrap();
        let mut ridge = 1e-3;
        for _ in 0..8 {
            ridge /= 2.0;
            let next = fit_logit(&xs, &ys, 3, ridge).unwrap();
            let diff: f64 = next
                .gamma
                .iter()
                .flatten()
                .zip(prev.gamma.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            prev = next;
            if ridge < 1e-5 {
                assert!(diff < 1e-4, "ridge {ridge}: {diff}");
            }
        }
    }

    #[test]
    fn missing_class_rejected() {
        let xs = vec![covariate(&[0.1, 0.9]); 4];
        assert!(matches!(fit_logit(&xs, &[0, 0, 0, 0], 2, 1e-6), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn residual_normalization() {
        let (d, degenerate) = normalize_residuals(&[0.0, 2.0]);
        assert_eq!(d, vec![0.0, 1.0]);
        assert!(!degenerate);
        let (d, degenerate) = normalize_residuals(&[0.0, 0.0, 0.0]);
        assert!(degenerate && d.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let (d, _) = normalize_residuals(&[3.0, 3.0]);
        assert_eq!(d, vec![0.5, 0.5]);
    }
}
