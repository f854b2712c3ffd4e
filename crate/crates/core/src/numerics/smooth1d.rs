use super::{kernel, Bandwidth, SampledCurve, TimeGrid, KERNEL_SUPPORT, MAX_WIDENINGS};
use crate::error::{Error, Result};

/// Scatter data with duplicate abscissae merged.
///
/// A local-linear fit only sees the data through kernel-weighted sums, so
/// replacing the points sharing an `x` by their total weight `W` and weighted
/// response `Σ w·y` leaves every fit unchanged. Pooled curves on a common grid
/// collapse to one entry per grid point this way.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub xs: Vec<f64>,
    pub w: Vec<f64>,
    pub wy: Vec<f64>,
}

impl Aggregated {
    pub fn new(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() != ws.len() {
            return Err(Error::InsufficientData(format!(
                "smoother inputs of unequal length ({}, {}, {})",
                xs.len(),
                ys.len(),
                ws.len()
            )));
        }
        if xs.iter().chain(ys).chain(ws).any(|v| !v.is_finite()) || ws.iter().any(|&w| w < 0.0)
        {
            return Err(Error::InsufficientData(
                "smoother inputs must be finite with nonnegative weights".into(),
            ));
        }
        let mut order: Vec<usize> = (0..xs.len()).filter(|&i| ws[i] > 0.0).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let mut out = Self {
            xs: Vec::new(),
            w: Vec::new(),
            wy: Vec::new(),
        };
        for i in order {
            if out.xs.last() == Some(&xs[i]) {
                *out.w.last_mut().unwrap() += ws[i];
                *out.wy.last_mut().unwrap() += ws[i] * ys[i];
            } else {
                out.xs.push(xs[i]);
                out.w.push(ws[i]);
                out.wy.push(ws[i] * ys[i]);
            }
        }
        Ok(out)
    }

    /// Already-merged data; `xs` must be strictly increasing.
    pub fn from_sums(xs: Vec<f64>, w: Vec<f64>, wy: Vec<f64>) -> Self {
        debug_assert!(xs.windows(2).all(|p| p[0] < p[1]));
        let keep: Vec<usize> = (0..xs.len()).filter(|&i| w[i] > 0.0).collect();
        Self {
            xs: keep.iter().map(|&i| xs[i]).collect(),
            w: keep.iter().map(|&i| w[i]).collect(),
            wy: keep.iter().map(|&i| wy[i]).collect(),
        }
    }

    fn fit_at(&self, x0: f64, h: f64) -> Option<f64> {
        let lo = self.xs.partition_point(|&x| x < x0 - KERNEL_SUPPORT * h);
        let hi = self.xs.partition_point(|&x| x <= x0 + KERNEL_SUPPORT * h);
        if hi - lo < 2 {
            return None;
        }
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in lo..hi {
            let d = self.xs[i] - x0;
            let k = kernel(d / h);
            let kw = k * self.w[i];
            s0 += kw;
            s1 += kw * d;
            s2 += kw * d * d;
            let kwy = k * self.wy[i];
            t0 += kwy;
            t1 += kwy * d;
        }
        let det = s0 * s2 - s1 * s1;
        if !(det > 1e-12 * s0 * s2) {
            return None;
        }
        Some((s2 * t0 - s1 * t1) / det)
    }
}

/// Local-linear estimates at `eval`, widening the bandwidth of a degenerate
/// neighbourhood up to three times.
pub fn smooth_1d_values(data: &Aggregated, h: Bandwidth, eval: &[f64]) -> Result<Vec<f64>> {
    eval.iter()
        .map(|&x0| {
            let mut bw = h;
            for attempt in 0..=MAX_WIDENINGS {
                if let Some(v) = data.fit_at(x0, bw.get()) {
                    return Ok(v);
                }
                if attempt < MAX_WIDENINGS {
                    bw = bw.doubled();
                }
            }
            Err(Error::SmoothingFailure {
                location: format!("t = {x0}"),
                bandwidth: bw.get(),
            })
        })
        .collect()
}

pub fn local_linear_smooth_1d(
    xs: &[f64],
    ys: &[f64],
    weights: &[f64],
    h: Bandwidth,
    eval_grid: &TimeGrid,
) -> Result<SampledCurve> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "local-linear smoothing needs at least 2 points, got {}",
            xs.len()
        )));
    }
    let data = Aggregated::new(xs, ys, weights)?;
    let values = smooth_1d_values(&data, h, eval_grid.points())?;
    Ok(SampledCurve {
        grid: eval_grid.clone(),
        values,
        id: String::from("smooth"),
    })
}
