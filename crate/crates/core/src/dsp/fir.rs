//! Kaiser-window low-pass design and integer-factor decimation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stopband attenuation the designer targets. The contract is 60 dB; the
/// extra margin absorbs the Kaiser formula's approximation error.
const DESIGN_ATTENUATION_DB: f64 = 70.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub group_delay_samples: usize,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Size("FIR filter needs at least one tap".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("non-finite FIR tap".into()));
        }
        let group_delay_samples = (taps.len() - 1) / 2;
        Ok(FirFilter {
            taps,
            group_delay_samples,
        })
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Filters with zero initial state; output has the input's length.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        fir_filter(&self.taps, x)
    }
}

/// Causal FIR with zero-prefixed state.
pub fn fir_filter(taps: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .take(n + 1)
                .enumerate()
                .map(|(k, &h)| h * x[n - k])
                .sum()
        })
        .collect()
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Designs a linear-phase anti-aliasing low-pass for resampling from
/// `source_rate_hz` to `target_rate_hz`.
///
/// The passband ends at `cutoff_hz` and the stopband starts at the target
/// Nyquist frequency. Taps are normalized to unit DC gain.
pub fn design_antialias_fir(
    cutoff_hz: f64,
    source_rate_hz: f64,
    target_rate_hz: f64,
) -> Result<FirFilter> {
    let target_nyquist = target_rate_hz / 2.0;
    if !(cutoff_hz > 0.0) || !cutoff_hz.is_finite() {
        return Err(Error::Design(format!("cutoff {cutoff_hz} Hz must be positive")));
    }
    if cutoff_hz >= target_nyquist {
        return Err(Error::Design(format!(
            "cutoff {cutoff_hz} Hz is not below the target Nyquist {target_nyquist} Hz"
        )));
    }
    if target_nyquist > source_rate_hz / 2.0 {
        return Err(Error::Design(format!(
            "target rate {target_rate_hz} Hz exceeds source rate {source_rate_hz} Hz"
        )));
    }

    let transition = 2.0 * PI * (target_nyquist - cutoff_hz) / source_rate_hz;
    let a = DESIGN_ATTENUATION_DB;
    let beta = if a > 50.0 {
        0.1102 * (a - 8.7)
    } else if a >= 21.0 {
        0.5842 * (a - 21.0).powf(0.4) + 0.07886 * (a - 21.0)
    } else {
        0.0
    };
    let mut order = ((a - 8.0) / (2.285 * transition)).ceil() as usize;
    if order % 2 == 1 {
        order += 1;
    }
    let n_taps = order + 1;
    let center = order as f64 / 2.0;
    // ideal cutoff halfway through the transition band, in cycles/sample
    let fc = (cutoff_hz + target_nyquist) / 2.0 / source_rate_hz;
    let i0_beta = bessel_i0(beta);

    let mut taps: Vec<f64> = (0..n_taps)
        .map(|n| {
            let m = n as f64 - center;
            let ideal = if m == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * m).sin() / (PI * m)
            };
            let r = m / center;
            let window = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            ideal * window
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    FirFilter::new(taps)
}

/// Low-pass filters `x` (delay compensated) and keeps every `factor`-th sample.
///
/// Output length is `ceil(len / factor)`.
pub fn decimate(x: &[f64], filter: &FirFilter, factor: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Size("cannot decimate an empty signal".into()));
    }
    if factor == 0 {
        return Err(Error::Config("decimation factor must be positive".into()));
    }
    let delay = filter.group_delay_samples as isize;
    let len = x.len() as isize;
    let out_len = x.len().div_ceil(factor);
    let out = (0..out_len)
        .map(|n| {
            let center = (n * factor) as isize + delay;
            filter
                .taps
                .iter()
                .enumerate()
                .filter_map(|(k, &h)| {
                    let idx = center - k as isize;
                    (0..len).contains(&idx).then(|| h * x[idx as usize])
                })
                .sum()
        })
        .collect();
    Ok(out)
}

/// Integer ratio between two rates, if there is one.
pub fn decimation_factor(source_rate_hz: f64, target_rate_hz: f64) -> Result<usize> {
    let ratio = source_rate_hz / target_rate_hz;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{source_rate_hz} Hz to {target_rate_hz} Hz is not an integer decimation"
        )));
    }
    Ok(factor as usize)
}
