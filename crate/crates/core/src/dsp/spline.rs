//! Least-squares cubic B-spline detrending.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// B-spline order (degree + 1). Only cubic splines are supported.
pub const SPLINE_ORDER: usize = 4;
pub const DEFAULT_LOWER_FREQUENCY_HZ: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    /// Frequency that sets the knot density, `k = round(N * f_l / f_s)`.
    pub f_l_hz: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig {
            f_l_hz: DEFAULT_LOWER_FREQUENCY_HZ,
        }
    }
}

impl SplineConfig {
    pub fn knot_count(&self, n: usize, sample_rate_hz: f64) -> usize {
        (n as f64 * self.f_l_hz / sample_rate_hz).round() as usize
    }
}

/// Clamped uniform knot vector over `[0, span]` with `interior` interior knots.
fn knot_vector(interior: usize, span: f64) -> Vec<f64> {
    let d = SPLINE_ORDER - 1;
    let step = span / (interior + 1) as f64;
    let mut knots = vec![0.0; d + 1];
    knots.extend((1..=interior).map(|i| i as f64 * step));
    knots.extend(std::iter::repeat_n(span, d + 1));
    knots
}

/// Index `s` with `knots[s] <= u < knots[s + 1]`, clamped to the last span.
fn find_span(knots: &[f64], n_basis: usize, u: f64) -> usize {
    let d = SPLINE_ORDER - 1;
    if u >= knots[n_basis] {
        return n_basis - 1;
    }
    let (mut lo, mut hi) = (d, n_basis);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The four non-vanishing basis values at `u` (Cox-de Boor).
fn basis_values(knots: &[f64], span: usize, u: f64) -> [f64; SPLINE_ORDER] {
    let d = SPLINE_ORDER - 1;
    let mut n = [0.0; SPLINE_ORDER];
    let mut left = [0.0; SPLINE_ORDER];
    let mut right = [0.0; SPLINE_ORDER];
    n[0] = 1.0;
    for j in 1..=d {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    n
}

/// Least-squares cubic spline through `x`, evaluated at every sample.
pub fn spline_fit(x: &[f64], interior_knots: usize) -> Result<Vec<f64>> {
    let n = x.len();
    let n_basis = interior_knots + SPLINE_ORDER;
    if n < n_basis {
        return Err(Error::Size(format!(
            "{n} samples cannot determine {n_basis} spline coefficients"
        )));
    }
    let span_len = (n - 1).max(1) as f64;
    let knots = knot_vector(interior_knots, span_len);

    let mut gram = DMatrix::<f64>::zeros(n_basis, n_basis);
    let mut rhs = DVector::<f64>::zeros(n_basis);
    let mut rows = Vec::with_capacity(n);
    for (i, &xi) in x.iter().enumerate() {
        let u = i as f64;
        let s = find_span(&knots, n_basis, u);
        let b = basis_values(&knots, s, u);
        let first = s - (SPLINE_ORDER - 1);
        for a in 0..SPLINE_ORDER {
            rhs[first + a] += b[a] * xi;
            for c in 0..SPLINE_ORDER {
                gram[(first + a, first + c)] += b[a] * b[c];
            }
        }
        rows.push((first, b));
    }
    let coef = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("spline normal equations not positive definite".into()))?;
    Ok(rows
        .iter()
        .map(|(first, b)| (0..SPLINE_ORDER).map(|a| b[a] * coef[first + a]).sum())
        .collect())
}

/// Subtracts the low-frequency spline trend from `x`.
pub fn spline_detrend(x: &[f64], sample_rate_hz: f64, cfg: &SplineConfig) -> Result<Vec<f64>> {
    if !(cfg.f_l_hz > 0.0) || cfg.f_l_hz >= sample_rate_hz / 2.0 {
        return Err(Error::Config(format!(
            "f_l {} Hz must lie in (0, {})",
            cfg.f_l_hz,
            sample_rate_hz / 2.0
        )));
    }
    let k = cfg.knot_count(x.len(), sample_rate_hz);
    if k < 1 {
        return Err(Error::Config(format!(
            "{} samples at f_l {} Hz give no spline knots",
            x.len(),
            cfg.f_l_hz
        )));
    }
    let trend = spline_fit(x, k)?;
    Ok(x.iter().zip(trend).map(|(v, t)| v - t).collect())
}
