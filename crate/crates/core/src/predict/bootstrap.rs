use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regression::{block_scores, raw_beta};
use super::{indicator, Bands, Mode, Predictor, Span};
use crate::classify::{covariate, fit_logit, partial_distances, posterior, relative_distance_values};
use crate::error::{Error, Result};
use crate::fpca::ClusterModel;
use crate::numerics::SampledCurve;
use crate::rng::{rng_for, stream};

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    /// Also refit the logit on each resample.
    pub resample_gamma: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 200,
            level: 0.95,
            resample_gamma: false,
        }
    }
}

/// Pointwise bootstrap band for the future of `curve`.
///
/// Each replicate resamples the training curves within their clusters,
/// refits the score regressions at this τ (the cluster models and, by
/// default, the logit stay fixed), picks a cluster by the membership weights
/// and adds the future residual of one of its resampled curves to that
/// cluster's prediction. The band is the pair of empirical quantiles,
/// widened where needed to contain the point prediction.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_interval(
    curve: &SampledCurve,
    mixture: &super::MixtureModel,
    training: &[SampledCurve],
    assignments: &[usize],
    tau: f64,
    omega: Span,
    mode: Mode,
    opts: &BootstrapOptions,
    seed: u64,
) -> Result<Bands> {
    if opts.replicates < MIN_REPLICATES {
        return Err(Error::Config(format!(
            "{} bootstrap replicates; at least {MIN_REPLICATES} are required",
            opts.replicates
        )));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Config(format!("band level {} outside (0, 1)", opts.level)));
    }
    if mode.is_fpcp() {
        return Err(Error::Config("bootstrap bands are built for the regression predictor".into()));
    }
    let k = mixture.num_clusters();
    if training.len() != assignments.len() || assignments.iter().any(|&a| a >= k) {
        return Err(Error::Config("training assignments do not match the mixture".into()));
    }
    let predictor = Predictor::new(mixture, omega)?;
    let q = predictor.tau_position(tau)?;
    let observed = predictor.observed_values(q, curve)?;
    let point = predictor.predict_observed(q, &observed, mode)?;
    let blocks = predictor.blocks(q)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    // Scores and future values of every training curve in its own cluster.
    let fut = blocks[0].future_range();
    let prepared: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..k)
        .map(|c| {
            let rows: Vec<&[f64]> = members[c].iter().map(|&i| training[i].values.as_slice()).collect();
            block_scores(&rows, &blocks[c])
        })
        .collect();
    let new_scores: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| b.observed.project(&observed, &b.observed.weights()))
        .collect();
    let full_distances: Option<Vec<Vec<f64>>> = if opts.resample_gamma && k > 1 {
        Some(
            training
                .iter()
                .map(|t| relative_distance_values(&t.values, &mixture.clusters).map(|d| d.0))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let partial_x = if k > 1 {
        let observed_models: Vec<ClusterModel> = blocks.iter().map(|b| b.observed.clone()).collect();
        Some(covariate(&partial_distances(&observed, &observed_models)?))
    } else {
        None
    };

    let samples: Vec<Option<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, &[stream::BOOTSTRAP, b as u64]);
            let draws: Vec<Vec<usize>> = members
                .iter()
                .map(|m| (0..m.len()).map(|_| rng.random_range(0..m.len())).collect())
                .collect();
            let mut preds = Vec::with_capacity(k);
            let mut betas = Vec::with_capacity(k);
            for c in 0..k {
                let (xs, xt) = &prepared[c];
                let rs: Vec<Vec<f64>> = draws[c].iter().map(|&i| xs[i].clone()).collect();
                let rt: Vec<Vec<f64>> = draws[c].iter().map(|&i| xt[i].clone()).collect();
                let block = &blocks[c];
                let (beta, _) = raw_beta(
                    &rs,
                    &rt,
                    &block.observed.eigenvalues,
                    block.observed.num_components,
                    block.future.num_components,
                );
                if beta.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                let scores: Vec<f64> = (0..beta.nrows())
                    .map(|r| (0..beta.ncols()).map(|j| beta[(r, j)] * new_scores[c][j]).sum())
                    .collect();
                preds.push(block.future.reconstruct(&scores));
                betas.push(beta);
            }
            let post = match (&full_distances, &partial_x) {
                (Some(dist), Some(x)) => {
                    let mut xs = Vec::new();
                    let mut labels = Vec::new();
                    for c in 0..k {
                        for &i in &draws[c] {
                            xs.push(covariate(&dist[members[c][i]]));
                            labels.push(c);
                        }
                    }
                    let gamma = fit_logit(&xs, &labels, k, mixture.options.ridge).ok()?;
                    posterior(x, &gamma)
                }
                _ => point.posterior.clone(),
            };
            let weights = if mode.is_hard() { indicator(&post) } else { post };
            // A draw from the predictive mixture: a cluster picked by the
            // membership weights, its prediction, and the future residual of
            // one of its resampled training curves.
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = k - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    c = i;
                    break;
                }
            }
            let pick = draws[c][rng.random_range(0..draws[c].len())];
            let row = &training[members[c][pick]].values[fut.clone()];
            let beta = &betas[c];
            let xs = &prepared[c].0[pick];
            let scores: Vec<f64> = (0..beta.nrows())
                .map(|r| (0..beta.ncols()).map(|j| beta[(r, j)] * xs[j]).sum())
                .collect();
            let fitted = blocks[c].future.reconstruct(&scores);
            let mut sample = preds.swap_remove(c);
            for ((s, y), f) in sample.iter_mut().zip(row).zip(&fitted) {
                *s += y - f;
            }
            Some(sample)
        })
        .collect();
    let samples: Vec<Vec<f64>> = samples.into_iter().flatten().collect();
    if (samples.len() as f64) < 0.8 * opts.replicates as f64 {
        return Err(Error::IntervalFailure {
            successes: samples.len(),
            requested: opts.replicates,
        });
    }
    let alpha = (1.0 - opts.level) / 2.0;
    let len = point.mixture_curve.len();
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut column = vec![0.0; samples.len()];
    for t in 0..len {
        for (v, s) in column.iter_mut().zip(&samples) {
            *v = s[t];
        }
        column.sort_by(f64::total_cmp);
        let p = point.mixture_curve.values[t];
        lower.push(quantile(&column, alpha).min(p));
        upper.push(quantile(&column, 1.0 - alpha).max(p));
    }
    Ok(Bands {
        level: opts.level,
        lower,
        upper,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.125), 1.5);
        assert_eq!(quantile(&v, 1.0), 5.0);
    }
}
