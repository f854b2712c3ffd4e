use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::{trapezoid_weights, Surface};

/// Eigenvalues at or below this fraction of the largest are round-off of a
/// rank-deficient kernel and are treated as zero.
const RELATIVE_ZERO: f64 = 1e-12;

/// Positive spectrum of a covariance kernel on its grid.
///
/// Eigenfunctions come back L²-orthonormal under the trapezoid inner
/// product, sorted by nonincreasing eigenvalue and sign-normalized.
pub fn eigendecompose(cov: &Surface) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if cov.grid_s != cov.grid_t {
        return Err(Error::InvalidCovariance("covariance must live on a square grid".into()));
    }
    let scale = cov.values.amax().max(1.0);
    if cov.max_asymmetry() > 1e-8 * scale {
        return Err(Error::InvalidCovariance(format!(
            "asymmetry {:.3e} exceeds tolerance",
            cov.max_asymmetry()
        )));
    }
    weighted_eigen(&cov.values, &trapezoid_weights(cov.grid_s.points()))
}

/// Solves `∫ G(s,t) φ(t) dt = λ φ(s)` with quadrature weights `w` through the
/// symmetric matrix `W^{1/2} G W^{1/2}`.
pub(crate) fn weighted_eigen(g: &DMatrix<f64>, w: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = w.len();
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::GridMismatch("covariance does not match its weights".into()));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance("non-finite covariance entry".into()));
    }
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let mut a = DMatrix::from_fn(n, n, |i, j| sw[i] * 0.5 * (g[(i, j)] + g[(j, i)]) * sw[j]);
    // Exact symmetry keeps the solver's output reproducible.
    for i in 0..n {
        for j in 0..i {
            a[(j, i)] = a[(i, j)];
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    let cutoff = RELATIVE_ZERO * top.max(0.0);

    let mut values = Vec::new();
    let mut functions = Vec::new();
    for &k in &order {
        let lambda = eig.eigenvalues[k];
        if !(lambda > cutoff) || lambda <= 0.0 {
            break;
        }
        let mut phi: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, k)] / sw[i]).collect();
        // Renormalize against round-off in the solver.
        let norm: f64 = phi.iter().zip(w).map(|(p, w)| w * p * p).sum::<f64>().sqrt();
        phi.iter_mut().for_each(|p| *p /= norm);
        orient(&mut phi, w);
        values.push(lambda);
        functions.push(phi);
    }
    Ok((values, functions))
}

/// Sign convention: nonnegative integral; if the integral vanishes, a
/// nonnegative first value.
pub(crate) fn orient(phi: &mut [f64], w: &[f64]) {
    let integral: f64 = phi.iter().zip(w).map(|(p, w)| p * w).sum();
    let span: f64 = w.iter().sum();
    let flip = if integral.abs() > 1e-10 * span.sqrt() {
        integral < 0.0
    } else {
        phi.iter().find(|p| p.abs() > 1e-12).is_some_and(|&p| p < 0.0)
    };
    if flip {
        phi.iter_mut().for_each(|p| *p = -*p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::TimeGrid;

    fn surface(grid: &TimeGrid, f: impl Fn(usize, usize) -> f64) -> Surface {
        let n = grid.len();
        Surface::new(grid.clone(), grid.clone(), DMatrix::from_fn(n, n, f)).unwrap()
    }

    #[test]
    fn rank_one_kernel() {
        let grid = TimeGrid::daily();
        let w = grid.trapezoid_weights();
        let raw: Vec<f64> = grid.points().iter().map(|t| (t / 24.0 * 3.0).sin() - 0.2).collect();
        let norm = raw.iter().zip(&w).map(|(p, w)| w * p * p).sum::<f64>().sqrt();
        let phi: Vec<f64> = raw.iter().map(|p| p / norm).collect();
        let (vals, funcs) = eigendecompose(&surface(&grid, |i, j| 4.0 * phi[i] * phi[j])).unwrap();
        assert_eq!(vals.len(), 1);
        assert!((vals[0] - 4.0).abs() < 1e-10);
        let sign: f64 = if phi.iter().zip(&w).map(|(p, w)| p * w).sum::<f64>() >= 0.0 { 1.0 } else { -1.0 };
        for (a, b) in funcs[0].iter().zip(&phi) {
            assert!((a - sign * b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_surface_has_empty_spectrum() {
        let grid = TimeGrid::daily();
        let (vals, funcs) = eigendecompose(&surface(&grid, |_, _| 0.0)).unwrap();
        assert!(vals.is_empty() && funcs.is_empty());
    }

    #[test]
    fn asymmetric_rejected() {
        let grid = TimeGrid::uniform_steps(1.0, 4);
        let s = surface(&grid, |i, j| if i == 0 && j == 1 { 1.0 } else { 0.0 });
        assert!(matches!(eigendecompose(&s), Err(Error::InvalidCovariance(_))));
    }

    #[test]
    fn odd_function_orients_by_first_value() {
        // φ antisymmetric about the centre: integral zero.
        let grid = TimeGrid::linspace(0.0, 24.0, 97).unwrap();
        let w = grid.trapezoid_weights();
        let raw: Vec<f64> = grid.points().iter().map(|t| 12.0 - t).collect();
        let norm = raw.iter().zip(&w).map(|(p, w)| w * p * p).sum::<f64>().sqrt();
        let phi: Vec<f64> = raw.iter().map(|p| -p / norm).collect();
        let (_, funcs) = eigendecompose(&surface(&grid, |i, j| phi[i] * phi[j])).unwrap();
        assert!(funcs[0][0] > 0.0);
    }
}
