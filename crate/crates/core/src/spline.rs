//! Cubic smoothing splines and monotone cubic Hermite curves.
//!
//! [`SmoothingSpline`] solves the penalized weighted least-squares problem
//!
//! ```text
//! minimize  sum_i w_i (y_i - s(x_i))^2 + lambda * integral s''(t)^2 dt
//! ```
//!
//! with the Reinsch algorithm: the minimizer is a natural cubic spline with
//! knots at the data abscissae whose second derivatives solve a symmetric
//! pentadiagonal system. The system is factored as `L D L^T` in O(n), and the
//! band of its inverse (needed for the trace of the hat matrix in the GCV
//! criterion) comes from the Hutchinson-de Hoog recursion, also O(n).
//!
//! [`MonotoneSpline`] is a piecewise cubic Hermite interpolant with
//! Fritsch-Carlson slopes. It preserves the monotonicity of its knot values
//! and has an analytic first derivative.

use serde::{Deserialize, Serialize};

use crate::error::{CmheError, Result};

/// Natural cubic spline stored as knot values and knot second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

/// Result of a smoothing fit, with the pieces the GCV criterion needs.
#[derive(Debug, Clone)]
pub struct SmoothingFit {
    pub spline: SmoothingSpline,
    /// Weighted residual sum of squares.
    pub rss: f64,
    /// Trace of the smoother (hat) matrix, the effective degrees of freedom.
    pub trace: f64,
}

impl SmoothingFit {
    pub fn gcv(&self) -> f64 {
        let n = self.spline.knots.len() as f64;
        let denom = (1.0 - self.trace / n).max(1e-12);
        (self.rss / n) / (denom * denom)
    }
}

/// Banded `L D L^T` factor of a symmetric pentadiagonal matrix.
struct PentaLdl {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl PentaLdl {
    /// `diag[i] = A[i][i]`, `off1[i] = A[i][i+1]`, `off2[i] = A[i][i+2]`.
    fn factor(diag: &[f64], off1: &[f64], off2: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut d = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        for i in 0..n {
            // l1[i] = L[i][i-1], l2[i] = L[i][i-2]
            if i >= 2 {
                l2[i] = off2[i - 2] / d[i - 2];
            }
            if i >= 1 {
                let mut v = off1[i - 1];
                if i >= 2 {
                    v -= l2[i] * d[i - 2] * l1[i - 1];
                }
                l1[i] = v / d[i - 1];
            }
            let mut v = diag[i];
            if i >= 1 {
                v -= l1[i] * l1[i] * d[i - 1];
            }
            if i >= 2 {
                v -= l2[i] * l2[i] * d[i - 2];
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(CmheError::Degenerate("smoothing system is not positive definite".into()));
            }
            d[i] = v;
        }
        Ok(Self { d, l1, l2 })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut z = b.to_vec();
        for i in 0..n {
            if i >= 1 {
                z[i] -= self.l1[i] * z[i - 1];
            }
            if i >= 2 {
                z[i] -= self.l2[i] * z[i - 2];
            }
        }
        for i in 0..n {
            z[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            if i + 1 < n {
                z[i] -= self.l1[i + 1] * z[i + 1];
            }
            if i + 2 < n {
                z[i] -= self.l2[i + 2] * z[i + 2];
            }
        }
        z
    }

    /// Entries of the inverse within the band: `(s0[i], s1[i], s2[i])` are
    /// `inv[i][i]`, `inv[i][i+1]`, `inv[i][i+2]`.
    fn inverse_band(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.d.len();
        let mut s0 = vec![0.0; n];
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        // column entries L[k][i] for k = i+1, i+2 are l1[i+1], l2[i+2]
        for i in (0..n).rev() {
            let a = if i + 1 < n { self.l1[i + 1] } else { 0.0 };
            let b = if i + 2 < n { self.l2[i + 2] } else { 0.0 };
            let s11 = if i + 1 < n { s0[i + 1] } else { 0.0 };
            let s22 = if i + 2 < n { s0[i + 2] } else { 0.0 };
            let s12 = if i + 1 < n { s1[i + 1] } else { 0.0 };
            if i + 2 < n {
                s2[i] = -a * s12 - b * s22;
            }
            if i + 1 < n {
                s1[i] = -a * s11 - b * s12;
            }
            s0[i] = 1.0 / self.d[i] - a * s1[i] - b * s2[i];
        }
        (s0, s1, s2)
    }
}

impl SmoothingSpline {
    /// Fits the penalized spline. `x` must be strictly increasing, weights
    /// positive and `lambda >= 0`. With fewer than three points the result is
    /// the piecewise-linear interpolant.
    pub fn fit(x: &[f64], y: &[f64], w: &[f64], lambda: f64) -> Result<SmoothingFit> {
        let n = x.len();
        if n == 0 || y.len() != n || w.len() != n {
            return Err(CmheError::shape("smoothing spline inputs must be non-empty and equally long"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CmheError::invalid(format!("smoothing penalty must be finite and >= 0, got {lambda}")));
        }
        if x.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(CmheError::invalid("smoothing spline abscissae must be strictly increasing"));
        }
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(CmheError::invalid("smoothing spline weights must be positive"));
        }
        if n < 3 {
            return Ok(SmoothingFit {
                spline: SmoothingSpline { knots: x.to_vec(), values: y.to_vec(), second: vec![0.0; n] },
                rss: 0.0,
                trace: n as f64,
            });
        }

        let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
        let m = n - 2;
        // Q is n x m; column j has entries at rows j, j+1, j+2.
        let q = |j: usize| -> [f64; 3] { [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]] };
        let q_entry = |row: usize, col: usize| -> f64 {
            if row >= col && row <= col + 2 {
                q(col)[row - col]
            } else {
                0.0
            }
        };

        // P = Q^T W^{-1} Q, pentadiagonal.
        let mut p0 = vec![0.0; m];
        let mut p1 = vec![0.0; m];
        let mut p2 = vec![0.0; m];
        for a in 0..m {
            for (s, band) in [(0usize, &mut p0), (1, &mut p1), (2, &mut p2)] {
                let b = a + s;
                if b >= m {
                    continue;
                }
                let mut acc = 0.0;
                for r in b..=(a + 2) {
                    acc += q_entry(r, a) * q_entry(r, b) / w[r];
                }
                band[a] = acc;
            }
        }

        let mut diag = vec![0.0; m];
        let mut off1 = vec![0.0; m.saturating_sub(1)];
        let mut off2 = vec![0.0; m.saturating_sub(2)];
        for j in 0..m {
            diag[j] = (h[j] + h[j + 1]) / 3.0 + lambda * p0[j];
            if j + 1 < m {
                off1[j] = h[j + 1] / 6.0 + lambda * p1[j];
            }
            if j + 2 < m {
                off2[j] = lambda * p2[j];
            }
        }
        let ldl = PentaLdl::factor(&diag, &off1, &off2)?;

        let qty: Vec<f64> = (0..m)
            .map(|j| {
                let c = q(j);
                c[0] * y[j] + c[1] * y[j + 1] + c[2] * y[j + 2]
            })
            .collect();
        let gamma = ldl.solve(&qty);

        let mut values = y.to_vec();
        for (j, &gj) in gamma.iter().enumerate() {
            let c = q(j);
            for (s, cs) in c.iter().enumerate() {
                values[j + s] -= lambda * cs * gj / w[j + s];
            }
        }
        let rss = (0..n).map(|i| w[i] * (y[i] - values[i]).powi(2)).sum();

        let (s0, s1, s2) = ldl.inverse_band();
        let mut tr_inner = 0.0;
        for a in 0..m {
            tr_inner += s0[a] * p0[a];
            if a + 1 < m {
                tr_inner += 2.0 * s1[a] * p1[a];
            }
            if a + 2 < m {
                tr_inner += 2.0 * s2[a] * p2[a];
            }
        }
        let trace = n as f64 - lambda * tr_inner;

        let mut second = vec![0.0; n];
        second[1..n - 1].copy_from_slice(&gamma);
        Ok(SmoothingFit { spline: SmoothingSpline { knots: x.to_vec(), values, second }, rss, trace })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the spline; linear extrapolation outside the knot range.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return self.values[0];
        }
        if t <= self.knots[0] {
            return self.values[0] + (t - self.knots[0]) * self.end_slope(true);
        }
        if t >= self.knots[n - 1] {
            return self.values[n - 1] + (t - self.knots[n - 1]) * self.end_slope(false);
        }
        let i = self.knots.partition_point(|&k| k <= t) - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - t) / h;
        let b = 1.0 - a;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }

    fn end_slope(&self, left: bool) -> f64 {
        let n = self.knots.len();
        let (i, j) = if left { (0, 1) } else { (n - 2, n - 1) };
        let h = self.knots[j] - self.knots[i];
        let secant = (self.values[j] - self.values[i]) / h;
        if left {
            secant - h * (2.0 * self.second[i] + self.second[j]) / 6.0
        } else {
            secant + h * (self.second[i] + 2.0 * self.second[j]) / 6.0
        }
    }
}

/// Piecewise cubic Hermite curve, held constant outside its knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSpline {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl MonotoneSpline {
    /// Hermite curve with explicit knot slopes.
    pub fn new(knots: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || values.len() != knots.len() || slopes.len() != knots.len() {
            return Err(CmheError::shape("hermite knots, values and slopes must be non-empty and equally long"));
        }
        if knots.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(CmheError::invalid("hermite knots must be strictly increasing"));
        }
        if knots.iter().chain(&values).chain(&slopes).any(|v| !v.is_finite()) {
            return Err(CmheError::invalid("hermite spline entries must be finite"));
        }
        Ok(Self { knots, values, slopes })
    }

    /// Shape-preserving (Fritsch-Carlson) interpolant through the points.
    pub fn pchip(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let slopes = pchip_slopes(&knots, &values)?;
        Self::new(knots, values, slopes)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if t <= self.knots[0] {
            return self.values[0];
        }
        if t >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        let i = self.knots.partition_point(|&k| k <= t) - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let s = (t - self.knots[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[i] + h10 * h * self.slopes[i] + h01 * self.values[i + 1] + h11 * h * self.slopes[i + 1]
    }

    /// First derivative; zero outside the knot range.
    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 || t < self.knots[0] || t > self.knots[n - 1] {
            return 0.0;
        }
        if t == self.knots[n - 1] {
            return self.slopes[n - 1];
        }
        let i = self.knots.partition_point(|&k| k <= t) - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let s = (t - self.knots[i]) / h;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        d00 * self.values[i] + d10 * self.slopes[i] + d01 * self.values[i + 1] + d11 * self.slopes[i + 1]
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n != y.len() || n == 0 {
        return Err(CmheError::shape("pchip inputs must be non-empty and equally long"));
    }
    if n == 1 {
        return Ok(vec![0.0]);
    }
    let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return Ok(vec![delta[0], delta[0]]);
    }
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        let (d0, d1) = (delta[k - 1], delta[k]);
        if d0 == 0.0 || d1 == 0.0 || d0.signum() != d1.signum() {
            m[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
        }
    }
    m[0] = pchip_end(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = pchip_end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    Ok(m)
}

/// One-sided three-point end slope with the shape-preserving corrections.
fn pchip_end(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}
