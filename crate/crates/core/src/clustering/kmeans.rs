use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;

const MAX_LLOYD: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
    }
    centers
}

/// One Lloyd run; `None` if a cluster empties.
fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> Option<(Vec<usize>, f64)> {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..MAX_LLOYD {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    if counts.contains(&0) {
        return None;
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    Some((labels, inertia))
}

/// k-means++ with `restarts` successful runs kept by inertia. Runs that end
/// with an empty cluster are redrawn, at most `reseeds` times in total.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, reseeds: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || points.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} curves for {k} clusters",
            points.len()
        )));
    }
    if k == 1 {
        return Ok(vec![0; points.len()]);
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut successes = 0;
    let mut failures = 0;
    let mut attempt = 0u64;
    while successes < restarts.max(1) {
        let mut rng = rng_for(seed, &[attempt]);
        attempt += 1;
        match lloyd(points, seed_centers(points, k, &mut rng)) {
            Some((labels, inertia)) => {
                successes += 1;
                if best.as_ref().is_none_or(|b| inertia < b.1) {
                    best = Some((labels, inertia));
                }
            }
            None => {
                failures += 1;
                if failures > reseeds {
                    break;
                }
            }
        }
    }
    best.map(|b| b.0).ok_or(Error::EmptyCluster { attempts: failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut pts: Vec<Vec<f64>> = (0..10).map(|i| vec![-5.0 + 0.01 * i as f64]).collect();
        pts.extend((0..10).map(|i| vec![5.0 + 0.01 * i as f64]));
        let labels = kmeans(&pts, 2, 10, 10, 1).unwrap();
        assert!(labels[..10].iter().all(|&l| l == labels[0]));
        assert!(labels[10..].iter().all(|&l| l == labels[10]));
        assert_ne!(labels[0], labels[10]);
    }

    #[test]
    fn identical_points_fail_with_empty_cluster() {
        let pts = vec![vec![1.0, 2.0]; 12];
        assert!(matches!(kmeans(&pts, 2, 10, 10, 3), Err(Error::EmptyCluster { attempts: 11 })));
    }
}
