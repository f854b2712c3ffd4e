//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trajmix::fpca::{fit_cluster_model, ClusterModel, Estimator, FpcaOptions};
use trajmix::numerics::{SampledCurve, TimeGrid};
use trajmix::simulate::orthonormalize;

pub const TAU: f64 = 12.0;

/// Generator coefficients, response k by predictor j. With predictor
/// variances (4, 1) the response covariance `β Λ βᵀ` is diagonal, so the
/// future block's eigenfunctions are the generator's.
pub const BETA: [[f64; 2]; 2] = [[0.8, 0.4], [-0.1, 0.8]];
pub const LAMBDA_S: [f64; 2] = [4.0, 1.0];

pub fn raw_options(delta: f64) -> FpcaOptions {
    FpcaOptions { delta, estimator: Estimator::Raw, ..FpcaOptions::default() }
}

pub struct RegressionData {
    pub grid: TimeGrid,
    pub curves: Vec<SampledCurve>,
    /// Observed-block basis (vanishing after τ), then the future-block basis
    /// (vanishing before τ).
    pub psi: Vec<Vec<f64>>,
    pub chi: Vec<Vec<f64>>,
}

/// Noise-free curves `μ + Σ ξ_Sj ψ_j` before τ and `μ + Σ (β ξ_S)_k χ_k`
/// after it. Every basis function vanishes at τ, so the two halves meet
/// there.
pub fn regression_data(n: usize, seed: u64) -> RegressionData {
    let grid = TimeGrid::daily();
    let pi = std::f64::consts::PI;
    let on = |f: &dyn Fn(f64) -> f64, before: bool| -> Vec<f64> {
        grid.points()
            .iter()
            .map(|&t| if (t <= TAU) == before || t == TAU { f(t) } else { 0.0 })
            .collect()
    };
    let raw = vec![
        on(&|t| (pi * t / TAU).sin(), true),
        on(&|t| (2.0 * pi * t / TAU).sin(), true),
        on(&|t| (pi * (t - TAU) / TAU).sin(), false),
        on(&|t| (2.0 * pi * (t - TAU) / TAU).sin(), false),
    ];
    let basis = orthonormalize(&grid, &raw).unwrap();
    let psi = basis[..2].to_vec();
    let chi = basis[2..].to_vec();
    let mean: Vec<f64> = grid.points().iter().map(|t| 30.0 + 10.0 * (t / 4.0).sin()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves = (0..n)
        .map(|i| {
            let xs: Vec<f64> = LAMBDA_S
                .iter()
                .map(|l| l.sqrt() * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            let xt: Vec<f64> = BETA.iter().map(|row| row[0] * xs[0] + row[1] * xs[1]).collect();
            let values = (0..grid.len())
                .map(|p| mean[p] + xs[0] * psi[0][p] + xs[1] * psi[1][p] + xt[0] * chi[0][p] + xt[1] * chi[1][p])
                .collect();
            SampledCurve { grid: grid.clone(), values, id: format!("d{i}") }
        })
        .collect();
    RegressionData { grid, curves, psi, chi }
}

/// Noise-free rank-one curves `μ + ξ φ`, `ξ ~ N(0, λ)`.
pub fn rank_one_curves(n: usize, lambda: f64, seed: u64) -> (Vec<SampledCurve>, Vec<f64>, Vec<f64>) {
    let grid = TimeGrid::daily();
    let phi = orthonormalize(&grid, &[grid.points().iter().map(|t| 1.0 + (t / 5.0).sin()).collect()])
        .unwrap()
        .remove(0);
    let mean: Vec<f64> = grid.points().iter().map(|t| 40.0 + 5.0 * (t / 3.0).cos()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves = (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let xi = lambda.sqrt() * z;
            let values = mean.iter().zip(&phi).map(|(m, p)| m + xi * p).collect();
            SampledCurve { grid: grid.clone(), values, id: format!("r{i}") }
        })
        .collect();
    (curves, mean, phi)
}

pub fn fit_raw(curves: &[SampledCurve], delta: f64) -> ClusterModel {
    fit_cluster_model(curves, 1, &raw_options(delta)).unwrap()
}

pub fn l2(grid: &TimeGrid, f: &[f64]) -> f64 {
    let w = grid.trapezoid_weights();
    f.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}
