use nalgebra::DMatrix;

use super::{kernel, Bandwidth2, Surface, TimeGrid, KERNEL_SUPPORT, MAX_WIDENINGS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint2d {
    pub s: f64,
    pub t: f64,
    pub value: f64,
    pub weight: f64,
}

/// Intercept of a weighted local plane from its moment sums, or `None` when
/// the local design is (numerically) collinear.
///
/// Moments are ordered `[1, ds, dt, ds², ds·dt, dt²]`, responses `[1, ds, dt]`.
#[inline]
fn plane_intercept(m: &[f64; 6], r: &[f64; 3]) -> Option<f64> {
    let [s00, s10, s01, s20, s11, s02] = *m;
    let c0 = s20 * s02 - s11 * s11;
    let c1 = s11 * s01 - s10 * s02;
    let c2 = s10 * s11 - s20 * s01;
    let det = s00 * c0 + s10 * c1 + s01 * c2;
    if !(s00 > 0.0 && det > 1e-12 * s00 * s20 * s02) {
        return None;
    }
    Some((c0 * r[0] + c1 * r[1] + c2 * r[2]) / det)
}

fn fit_point(points: &[ScatterPoint2d], s0: f64, t0: f64, hs: f64, ht: f64) -> Option<f64> {
    // `points` is sorted by s.
    let lo = points.partition_point(|p| p.s < s0 - KERNEL_SUPPORT * hs);
    let hi = points.partition_point(|p| p.s <= s0 + KERNEL_SUPPORT * hs);
    let mut m = [0.0; 6];
    let mut r = [0.0; 3];
    let mut used = 0usize;
    for p in &points[lo..hi] {
        let dt = p.t - t0;
        let kt = kernel(dt / ht);
        if kt == 0.0 {
            continue;
        }
        let ds = p.s - s0;
        let k = kernel(ds / hs) * kt * p.weight;
        used += 1;
        m[0] += k;
        m[1] += k * ds;
        m[2] += k * dt;
        m[3] += k * ds * ds;
        m[4] += k * ds * dt;
        m[5] += k * dt * dt;
        r[0] += k * p.value;
        r[1] += k * ds * p.value;
        r[2] += k * dt * p.value;
    }
    if used < 3 {
        return None;
    }
    plane_intercept(&m, &r)
}

fn fit_point_widening(
    sorted: &[ScatterPoint2d],
    s0: f64,
    t0: f64,
    h: Bandwidth2,
) -> Result<f64> {
    let (mut hs, mut ht) = (h.s.get(), h.t.get());
    for attempt in 0..=MAX_WIDENINGS {
        if let Some(v) = fit_point(sorted, s0, t0, hs, ht) {
            return Ok(v);
        }
        if attempt < MAX_WIDENINGS {
            hs *= 2.0;
            ht *= 2.0;
        }
    }
    Err(Error::SmoothingFailure {
        location: format!("(s, t) = ({s0}, {t0})"),
        bandwidth: hs.max(ht),
    })
}

fn sorted_by_s(points: &[ScatterPoint2d]) -> Vec<ScatterPoint2d> {
    let mut sorted: Vec<ScatterPoint2d> =
        points.iter().copied().filter(|p| p.weight > 0.0).collect();
    sorted.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.t.total_cmp(&b.t)));
    sorted
}

/// Local-linear plane smoother on arbitrary scatter, evaluated on a grid.
pub fn local_linear_smooth_2d(
    points: &[ScatterPoint2d],
    h: Bandwidth2,
    grid_s: &TimeGrid,
    grid_t: &TimeGrid,
) -> Result<Surface> {
    if points
        .iter()
        .any(|p| !(p.s.is_finite() && p.t.is_finite() && p.value.is_finite() && p.weight >= 0.0))
    {
        return Err(Error::InsufficientData(
            "2-D smoother inputs must be finite with nonnegative weights".into(),
        ));
    }
    let sorted = sorted_by_s(points);
    if sorted.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "plane smoothing needs at least 3 weighted points, got {}",
            sorted.len()
        )));
    }
    let mut values = DMatrix::zeros(grid_s.len(), grid_t.len());
    for (i, &s0) in grid_s.points().iter().enumerate() {
        for (j, &t0) in grid_t.points().iter().enumerate() {
            values[(i, j)] = fit_point_widening(&sorted, s0, t0, h)?;
        }
    }
    Surface::new(grid_s.clone(), grid_t.clone(), values)
}

// =============================================================================
// Gridded fast path
// =============================================================================

/// Kernel matrices `K[a, j] = k((x_j − e_a)/h)·(x_j − e_a)^p` for `p = 0, 1, 2`.
fn kernel_moments(data: &[f64], eval: &[f64], h: f64) -> [DMatrix<f64>; 3] {
    let mut k0 = DMatrix::zeros(eval.len(), data.len());
    let mut k1 = k0.clone();
    let mut k2 = k0.clone();
    for (a, &e) in eval.iter().enumerate() {
        for (j, &x) in data.iter().enumerate() {
            let d = x - e;
            let k = kernel(d / h);
            k0[(a, j)] = k;
            k1[(a, j)] = k * d;
            k2[(a, j)] = k * d * d;
        }
    }
    [k0, k1, k2]
}

/// Precomputed local-plane smoother for data living on a grid with fixed cell
/// weights.
///
/// Every kernel-weighted moment sum factors as `K_s · W · K_tᵀ`, so the whole
/// surface costs a handful of dense products. The design part only depends on
/// the weights and bandwidth; [`GriddedPlan::apply`] then smooths any number
/// of value matrices sharing those weights (cross-validation folds with equal
/// per-cell counts, bootstrap replicates, ...).
#[derive(Debug, Clone)]
pub struct GriddedPlan {
    data_s: Vec<f64>,
    data_t: Vec<f64>,
    eval_s: Vec<f64>,
    eval_t: Vec<f64>,
    weights: DMatrix<f64>,
    h: Bandwidth2,
    ks: [DMatrix<f64>; 3],
    kt_t: [DMatrix<f64>; 2],
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    gamma: DMatrix<f64>,
    degenerate: Vec<(usize, usize)>,
}

impl GriddedPlan {
    pub fn new(
        data_s: &TimeGrid,
        data_t: &TimeGrid,
        weights: &DMatrix<f64>,
        h: Bandwidth2,
        eval_s: &TimeGrid,
        eval_t: &TimeGrid,
    ) -> Result<Self> {
        if weights.nrows() != data_s.len() || weights.ncols() != data_t.len() {
            return Err(Error::GridMismatch("weight matrix does not match data grids".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InsufficientData("cell weights must be finite and nonnegative".into()));
        }
        let ks = kernel_moments(data_s.points(), eval_s.points(), h.s.get());
        let [t0, t1, t2] = kernel_moments(data_t.points(), eval_t.points(), h.t.get());
        let (t0, t1, t2) = (t0.transpose(), t1.transpose(), t2.transpose());

        let w_t0 = weights * &t0;
        let w_t1 = weights * &t1;
        let w_t2 = weights * &t2;
        let s00 = &ks[0] * &w_t0;
        let s10 = &ks[1] * &w_t0;
        let s20 = &ks[2] * &w_t0;
        let s01 = &ks[0] * &w_t1;
        let s11 = &ks[1] * &w_t1;
        let s02 = &ks[0] * &w_t2;

        let (ne_s, ne_t) = (eval_s.len(), eval_t.len());
        let mut alpha = DMatrix::zeros(ne_s, ne_t);
        let mut beta = DMatrix::zeros(ne_s, ne_t);
        let mut gamma = DMatrix::zeros(ne_s, ne_t);
        let mut degenerate = Vec::new();
        for a in 0..ne_s {
            for b in 0..ne_t {
                let m = [
                    s00[(a, b)],
                    s10[(a, b)],
                    s01[(a, b)],
                    s20[(a, b)],
                    s11[(a, b)],
                    s02[(a, b)],
                ];
                // The intercept is linear in the response moments; recover its
                // coefficients by feeding unit responses.
                match (
                    plane_intercept(&m, &[1.0, 0.0, 0.0]),
                    plane_intercept(&m, &[0.0, 1.0, 0.0]),
                    plane_intercept(&m, &[0.0, 0.0, 1.0]),
                ) {
                    (Some(x), Some(y), Some(z)) => {
                        alpha[(a, b)] = x;
                        beta[(a, b)] = y;
                        gamma[(a, b)] = z;
                    }
                    _ => degenerate.push((a, b)),
                }
            }
        }
        Ok(Self {
            data_s: data_s.points().to_vec(),
            data_t: data_t.points().to_vec(),
            eval_s: eval_s.points().to_vec(),
            eval_t: eval_t.points().to_vec(),
            weights: weights.clone(),
            h,
            ks,
            kt_t: [t0, t1],
            alpha,
            beta,
            gamma,
            degenerate,
        })
    }

    pub fn bandwidth(&self) -> Bandwidth2 {
        self.h
    }

    /// Cells whose neighbourhood is degenerate at the nominal bandwidth.
    pub fn degenerate_cells(&self) -> &[(usize, usize)] {
        &self.degenerate
    }

    pub fn apply(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if values.shape() != self.weights.shape() {
            return Err(Error::GridMismatch("value matrix does not match data grids".into()));
        }
        let wv = self.weights.component_mul(values);
        let e = &wv * &self.kt_t[0];
        let f = &wv * &self.kt_t[1];
        let r0 = &self.ks[0] * &e;
        let r1 = &self.ks[1] * &e;
        let r2 = &self.ks[0] * &f;
        let mut out = self.alpha.component_mul(&r0)
            + self.beta.component_mul(&r1)
            + self.gamma.component_mul(&r2);
        if !self.degenerate.is_empty() {
            let mut points = Vec::new();
            for (i, &s) in self.data_s.iter().enumerate() {
                for (j, &t) in self.data_t.iter().enumerate() {
                    let weight = self.weights[(i, j)];
                    if weight > 0.0 {
                        points.push(ScatterPoint2d {
                            s,
                            t,
                            value: values[(i, j)],
                            weight,
                        });
                    }
                }
            }
            let sorted = sorted_by_s(&points);
            for &(a, b) in &self.degenerate {
                out[(a, b)] = fit_point_widening(&sorted, self.eval_s[a], self.eval_t[b], self.h)?;
            }
        }
        Ok(out)
    }
}

/// One-shot gridded smooth; see [`GriddedPlan`].
pub fn smooth_gridded(
    grid_s: &TimeGrid,
    grid_t: &TimeGrid,
    values: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    h: Bandwidth2,
) -> Result<Surface> {
    let plan = GriddedPlan::new(grid_s, grid_t, weights, h, grid_s, grid_t)?;
    Surface::new(grid_s.clone(), grid_t.clone(), plan.apply(values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Bandwidth;

    fn iso(h: f64) -> Bandwidth2 {
        Bandwidth2::isotropic(Bandwidth::new(h).unwrap())
    }

    fn grid24() -> TimeGrid {
        TimeGrid::uniform_steps(1.0, 24)
    }

    fn scatter(grid: &TimeGrid, f: impl Fn(f64, f64) -> f64) -> Vec<ScatterPoint2d> {
        let mut pts = Vec::new();
        for &s in grid.points() {
            for &t in grid.points() {
                pts.push(ScatterPoint2d {
                    s,
                    t,
                    value: f(s, t),
                    weight: 1.0,
                });
            }
        }
        pts
    }

    #[test]
    fn plane_reproduced() {
        let g = grid24();
        for h in [0.6, 2.0, 50.0] {
            let surf = local_linear_smooth_2d(&scatter(&g, |s, t| 1.0 + 2.0 * s - t), iso(h), &g, &g)
                .unwrap();
            for (i, &s) in g.points().iter().enumerate() {
                for (j, &t) in g.points().iter().enumerate() {
                    assert!((surf.values[(i, j)] - (1.0 + 2.0 * s - t)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn product_surface_recovered_on_interior() {
        let g = grid24();
        let surf = local_linear_smooth_2d(&scatter(&g, |s, t| s * t), iso(1.5), &g, &g).unwrap();
        let mut worst: f64 = 0.0;
        for i in 3..21 {
            for j in 3..21 {
                let (s, t) = (g.points()[i], g.points()[j]);
                worst = worst.max((surf.values[(i, j)] - s * t).abs());
            }
        }
        assert!(worst < 0.1 * 576.0, "{worst}");
    }

    #[test]
    fn symmetric_input_gives_symmetric_output() {
        let g = grid24();
        let f = |s: f64, t: f64| (s * 0.3).sin() * (t * 0.3).sin() + (s - t).powi(2) * 0.01;
        let surf = local_linear_smooth_2d(&scatter(&g, f), iso(1.7), &g, &g).unwrap();
        assert!(surf.max_asymmetry() < 1e-10);
        let vals = DMatrix::from_fn(24, 24, |i, j| f(g.points()[i], g.points()[j]));
        let mut w = DMatrix::from_element(24, 24, 1.0);
        w.fill_diagonal(0.0);
        let fast = smooth_gridded(&g, &g, &vals, &w, iso(1.7)).unwrap();
        assert!(fast.max_asymmetry() < 1e-10);
    }

    #[test]
    fn gridded_matches_pointwise() {
        let g = TimeGrid::daily();
        let f = |s: f64, t: f64| (s / 5.0).cos() * (t / 7.0).sin() + 0.01 * s * t;
        let vals = DMatrix::from_fn(96, 96, |i, j| f(g.points()[i], g.points()[j]));
        let mut w = DMatrix::from_fn(96, 96, |i, j| 1.0 + ((i * 7 + j * 3) % 5) as f64);
        w.fill_diagonal(0.0);
        let mut pts = Vec::new();
        for i in 0..96 {
            for j in 0..96 {
                pts.push(ScatterPoint2d {
                    s: g.points()[i],
                    t: g.points()[j],
                    value: vals[(i, j)],
                    weight: w[(i, j)],
                });
            }
        }
        for h in [0.5, 2.0, 8.0] {
            let fast = smooth_gridded(&g, &g, &vals, &w, iso(h)).unwrap();
            let slow = local_linear_smooth_2d(&pts, iso(h), &g, &g).unwrap();
            let diff = (&fast.values - &slow.values).amax();
            assert!(diff < 1e-9, "h={h}: {diff}");
        }
    }

    #[test]
    fn gridded_reproduces_plane_with_missing_diagonal() {
        let g = TimeGrid::daily();
        let vals = DMatrix::from_fn(96, 96, |i, j| 3.0 - g.points()[i] + 0.5 * g.points()[j]);
        let mut w = DMatrix::from_element(96, 96, 1.0);
        w.fill_diagonal(0.0);
        let fast = smooth_gridded(&g, &g, &vals, &w, iso(0.5)).unwrap();
        assert!((&fast.values - &vals).amax() < 1e-8);
    }

    #[test]
    fn collinear_design_fails() {
        // Every point on the line s = t: no plane is identifiable.
        let pts: Vec<ScatterPoint2d> = (0..10)
            .map(|i| ScatterPoint2d {
                s: i as f64,
                t: i as f64,
                value: 1.0,
                weight: 1.0,
            })
            .collect();
        let g = TimeGrid::new(vec![2.0, 3.0]).unwrap();
        let r = local_linear_smooth_2d(&pts, iso(1.0), &g, &g);
        assert!(matches!(r, Err(Error::SmoothingFailure { .. })));
    }

    #[test]
    fn sparse_cells_fall_back_and_widen() {
        let g = TimeGrid::uniform_steps(1.0, 12);
        let vals = DMatrix::from_fn(12, 12, |i, j| (i + 2 * j) as f64);
        // Only a block in the corner carries weight.
        let w = DMatrix::from_fn(12, 12, |i, j| if i < 4 && j < 4 { 1.0 } else { 0.0 });
        let plan = GriddedPlan::new(&g, &g, &w, iso(0.1), &g, &g).unwrap();
        assert!(!plan.degenerate_cells().is_empty());
        // Far corner is beyond 8 × 4h even after widening.
        assert!(matches!(plan.apply(&vals), Err(Error::SmoothingFailure { .. })));
        let plan = GriddedPlan::new(&g, &g, &w, iso(1.0), &g, &g).unwrap();
        let out = plan.apply(&vals).unwrap();
        // Linear data: the widened fits still reproduce it.
        assert!((out[(11, 11)] - 33.0).abs() < 1e-6);
    }
}
