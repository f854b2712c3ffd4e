use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::smooth1d::{smooth_1d_values, Aggregated};
use super::{Bandwidth, TimeGrid};
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 10;

/// Ten log-spaced bandwidths from 2 to 32 grid steps.
pub fn default_candidates(grid: &TimeGrid) -> Vec<Bandwidth> {
    let step = grid.step();
    (0..10)
        .map(|i| {
            let steps = 2.0 * 16f64.powf(i as f64 / 9.0);
            Bandwidth::new(steps * step).expect("grid step is positive")
        })
        .collect()
}

/// Random balanced fold labels for `n` units.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    fold_of
}

/// Expands per-group fold labels to the members of each group.
pub fn grouped_fold_assignment(group_of: &[usize], n_groups: usize, folds: usize, seed: u64) -> Vec<usize> {
    let group_fold = fold_assignment(n_groups, folds, seed);
    group_of.iter().map(|&g| group_fold[g]).collect()
}

/// Cross-validation scores of a candidate list; `None` marks a candidate that
/// failed to smooth on some fold.
#[derive(Debug, Clone, PartialEq)]
pub struct CvCurve {
    pub candidates: Vec<Bandwidth>,
    pub scores: Vec<Option<f64>>,
    /// Magnitude of the response, used to resolve ties when every score is
    /// essentially zero.
    pub scale: f64,
}

impl CvCurve {
    /// Minimizing candidate; among scores within 1e-12 (relative) of the
    /// minimum the largest bandwidth wins.
    pub fn choose(&self) -> Result<Bandwidth> {
        let best = self
            .scores
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return Err(Error::BandwidthSelection {
                failed: self.candidates.iter().map(|h| h.get()).collect(),
            });
        }
        let tol = 1e-12 * best.max(self.scale);
        self.candidates
            .iter()
            .zip(&self.scores)
            .filter(|(_, s)| s.is_some_and(|s| s <= best + tol))
            .map(|(h, _)| *h)
            .fold(None, |acc: Option<Bandwidth>, h| match acc {
                Some(a) if a.get() >= h.get() => Some(a),
                _ => Some(h),
            })
            .ok_or(Error::BandwidthSelection { failed: vec![] })
    }
}

/// Weighted out-of-fold squared error of the 1-D smoother for each candidate.
pub fn select_bandwidth_cv_folds(
    xs: &[f64],
    ys: &[f64],
    ws: &[f64],
    fold_of: &[usize],
    folds: usize,
    candidates: &[Bandwidth],
) -> Result<CvCurve> {
    let n = xs.len();
    if ys.len() != n || ws.len() != n || fold_of.len() != n {
        return Err(Error::InsufficientData("cross-validation inputs of unequal length".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Config("empty bandwidth candidate list".into()));
    }
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let total_w: f64 = ws.iter().sum();
    let scale = ys.iter().zip(ws).map(|(y, w)| w * y * y).sum::<f64>() / total_w.max(f64::MIN_POSITIVE);

    let mut sse = vec![Some(0.0); candidates.len()];
    for f in 0..folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] != f);
        if test.is_empty() {
            continue;
        }
        let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let data = Aggregated::new(&pick(&train, xs), &pick(&train, ys), &pick(&train, ws))?;
        let mut eval: Vec<f64> = test.iter().map(|&i| xs[i]).collect();
        eval.sort_by(f64::total_cmp);
        eval.dedup();
        for (c, h) in candidates.iter().enumerate() {
            let Some(acc) = sse[c] else { continue };
            match smooth_1d_values(&data, *h, &eval) {
                Ok(pred) => {
                    let err: f64 = test
                        .iter()
                        .map(|&i| {
                            let k = eval.partition_point(|&x| x < xs[i]);
                            ws[i] * (ys[i] - pred[k]).powi(2)
                        })
                        .sum();
                    sse[c] = Some(acc + err);
                }
                Err(_) => sse[c] = None,
            }
        }
    }
    Ok(CvCurve {
        candidates: candidates.to_vec(),
        scores: sse.into_iter().map(|s| s.map(|v| v / total_w)).collect(),
        scale,
    })
}

/// Point-level K-fold cross-validated bandwidth for the 1-D smoother.
pub fn select_bandwidth_cv(
    xs: &[f64],
    ys: &[f64],
    candidates: &[Bandwidth],
    folds: usize,
    seed: u64,
) -> Result<Bandwidth> {
    if xs.len() < folds {
        return Err(Error::InsufficientData(format!(
            "{} points for {folds}-fold cross-validation",
            xs.len()
        )));
    }
    let ws = vec![1.0; xs.len()];
    let fold_of = fold_assignment(xs.len(), folds, seed);
    select_bandwidth_cv_folds(xs, ys, &ws, &fold_of, folds, candidates)?.choose()
}
