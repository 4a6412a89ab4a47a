//! Periodic Meyer wavelet transform and soft-threshold denoising.
//!
//! The Meyer scaling filter is band-limited, so the transform is computed
//! exactly in the DFT domain. Each level splits a length-`L` sequence into
//! `L/2` approximation and `L/2` detail coefficients with an orthonormal
//! two-channel filter bank.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEVELS: usize = 10;

/// Normal-consistent MAD scale factor.
pub const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveletConfig {
    pub levels: usize,
    pub threshold_mode: ThresholdMode,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            levels: DEFAULT_LEVELS,
            threshold_mode: ThresholdMode::Soft,
        }
    }
}

/// Daubechies' auxiliary polynomial: 0 below 0, 1 above 1, `v(x) + v(1-x) = 1`.
fn meyer_nu(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x.powi(3))
    }
}

/// Frequency response of the Meyer low-pass at `omega` (radians/sample).
/// Real, even and 2π-periodic.
pub fn meyer_lowpass(omega: f64) -> f64 {
    let w = omega.rem_euclid(2.0 * PI);
    let w = if w > PI { 2.0 * PI - w } else { w };
    if w <= PI / 3.0 {
        SQRT_2
    } else if w <= 2.0 * PI / 3.0 {
        SQRT_2 * (PI / 2.0 * meyer_nu(3.0 * w / PI - 1.0)).cos()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Detail coefficients, finest level first.
    pub details: Vec<Vec<f64>>,
    /// Coarsest approximation.
    pub approximation: Vec<f64>,
}

struct LevelPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    half_forward: Arc<dyn Fft<f64>>,
    half_inverse: Arc<dyn Fft<f64>>,
    low: Vec<f64>,
    phase: Vec<Complex64>,
}

/// Precomputed FFTs and filter responses for one signal length.
pub struct MeyerDwt {
    levels: Vec<LevelPlan>,
}

impl MeyerDwt {
    /// `len` must be divisible by `2^levels`.
    pub fn new(len: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("wavelet levels must be at least 1".into()));
        }
        let block = 1usize
            .checked_shl(levels as u32)
            .ok_or_else(|| Error::Config(format!("{levels} levels is too many")))?;
        if len == 0 || len % block != 0 {
            return Err(Error::Size(format!(
                "length {len} is not a positive multiple of 2^{levels}"
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let plans = (0..levels)
            .map(|j| {
                let l = len >> j;
                let low = (0..l).map(|k| meyer_lowpass(2.0 * PI * k as f64 / l as f64)).collect();
                let phase = (0..l)
                    .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / l as f64))
                    .collect();
                LevelPlan {
                    len: l,
                    forward: planner.plan_fft_forward(l),
                    inverse: planner.plan_fft_inverse(l),
                    half_forward: planner.plan_fft_forward(l / 2),
                    half_inverse: planner.plan_fft_inverse(l / 2),
                    low,
                    phase,
                }
            })
            .collect();
        Ok(MeyerDwt { levels: plans })
    }

    pub fn len(&self) -> usize {
        self.levels[0].len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decompose(&self, x: &[f64]) -> Result<Decomposition> {
        if x.len() != self.len() {
            return Err(Error::Size(format!(
                "signal length {} does not match plan length {}",
                x.len(),
                self.len()
            )));
        }
        let mut approx = x.to_vec();
        let mut details = Vec::with_capacity(self.levels.len());
        for plan in &self.levels {
            let (a, d) = plan.analyze(&approx);
            details.push(d);
            approx = a;
        }
        Ok(Decomposition {
            details,
            approximation: approx,
        })
    }

    pub fn reconstruct(&self, dec: &Decomposition) -> Result<Vec<f64>> {
        if dec.details.len() != self.levels.len() {
            return Err(Error::Size(format!(
                "{} detail levels for a {}-level plan",
                dec.details.len(),
                self.levels.len()
            )));
        }
        let mut approx = dec.approximation.clone();
        for (plan, d) in self.levels.iter().zip(&dec.details).rev() {
            if approx.len() != plan.len / 2 || d.len() != plan.len / 2 {
                return Err(Error::Size("coefficient vector has the wrong length".into()));
            }
            approx = plan.synthesize(&approx, d);
        }
        Ok(approx)
    }
}

impl LevelPlan {
    fn analyze(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = self.len;
        let h = l / 2;
        let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut spec);
        let mut a = vec![Complex64::new(0.0, 0.0); h];
        let mut d = vec![Complex64::new(0.0, 0.0); h];
        for k in 0..h {
            let (x0, x1) = (spec[k], spec[k + h]);
            let (h0, h1) = (self.low[k], self.low[k + h]);
            a[k] = (x0 * h0 + x1 * h1) * 0.5;
            // conj(G(w)) = e^{iw} H(w + pi)
            d[k] = self.phase[k].conj() * (x0 * h1 - x1 * h0) * 0.5;
        }
        self.half_inverse.process(&mut a);
        self.half_inverse.process(&mut d);
        let norm = 1.0 / h as f64;
        (
            a.iter().map(|c| c.re * norm).collect(),
            d.iter().map(|c| c.re * norm).collect(),
        )
    }

    fn synthesize(&self, a: &[f64], d: &[f64]) -> Vec<f64> {
        let l = self.len;
        let h = l / 2;
        let mut sa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut sd: Vec<Complex64> = d.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.half_forward.process(&mut sa);
        self.half_forward.process(&mut sd);
        let mut spec: Vec<Complex64> = (0..l)
            .map(|k| {
                let g = self.phase[k] * self.low[(k + h) % l];
                sa[k % h] * self.low[k] + sd[k % h] * g
            })
            .collect();
        self.inverse.process(&mut spec);
        let norm = 1.0 / l as f64;
        spec.iter().map(|c| c.re * norm).collect()
    }
}

pub fn soft_threshold(c: f64, t: f64) -> f64 {
    c.signum() * (c.abs() - t).max(0.0)
}

/// `sigma * sqrt(2 ln n)`.
pub fn universal_threshold(sigma: f64, n: usize) -> f64 {
    sigma * (2.0 * (n as f64).ln()).sqrt()
}

/// Robust noise scale from the finest detail band: `median(|d|) / 0.6745`.
pub fn estimate_sigma(detail_level1: &[f64]) -> Result<f64> {
    if detail_level1.is_empty() {
        return Err(Error::Size("no detail coefficients".into()));
    }
    let mut mags: Vec<f64> = detail_level1.iter().map(|c| c.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    let median = if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    };
    Ok(median / MAD_SCALE)
}

/// Mirror-extends `x` to `len` samples (`len - x.len() < x.len()`).
fn mirror_extend(x: &[f64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(x);
    let mut i = x.len();
    while out.len() < len {
        i = i.saturating_sub(1);
        out.push(x[i]);
    }
    out
}

/// Denoises with the universal threshold estimated from the data.
pub fn wavelet_denoise(x: &[f64], cfg: &WaveletConfig) -> Result<Vec<f64>> {
    wavelet_denoise_with(x, cfg, None)
}

/// Denoises with either the data-driven threshold or a forced one.
/// A forced threshold of 0 is an analysis/synthesis round trip.
pub fn wavelet_denoise_with(
    x: &[f64],
    cfg: &WaveletConfig,
    forced_threshold: Option<f64>,
) -> Result<Vec<f64>> {
    if cfg.levels == 0 || cfg.levels >= usize::BITS as usize {
        return Err(Error::Config(format!("invalid wavelet levels {}", cfg.levels)));
    }
    let block = 1usize << cfg.levels;
    let n = x.len();
    if n < block {
        return Err(Error::Size(format!(
            "signal of {n} samples is shorter than 2^{} = {block}",
            cfg.levels
        )));
    }
    let padded_len = n.div_ceil(block) * block;
    let padded = mirror_extend(x, padded_len);
    let dwt = MeyerDwt::new(padded_len, cfg.levels)?;
    let mut dec = dwt.decompose(&padded)?;

    let threshold = match forced_threshold {
        Some(t) => t,
        None => universal_threshold(estimate_sigma(&dec.details[0])?, n),
    };
    if threshold > 0.0 {
        match cfg.threshold_mode {
            ThresholdMode::Soft => dec
                .details
                .iter_mut()
                .flatten()
                .for_each(|c| *c = soft_threshold(*c, threshold)),
        }
    }
    let mut y = dwt.reconstruct(&dec)?;
    y.truncate(n);
    Ok(y)
}
