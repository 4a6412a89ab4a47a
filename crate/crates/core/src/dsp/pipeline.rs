//! The full per-record chain: decimate, whiten, detrend, denoise, normalize.

use serde::{Deserialize, Serialize};

use super::ar::{fit_ar_modified_covariance, whiten_device_noise, ArModel, DEFAULT_AR_ORDER};
use super::fir::{decimate, decimation_factor, design_antialias_fir, FirFilter};
use super::spline::{spline_detrend, SplineConfig};
use super::wavelet::{wavelet_denoise, WaveletConfig};
use crate::error::{Error, Result};
use crate::types::{Stage, SwallowRecord, PREPROCESSED_RATE_HZ, RAW_RATE_HZ};

/// Accelerometer bandwidth; default anti-aliasing passband edge.
pub const DEFAULT_CUTOFF_HZ: f64 = 1600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub cutoff_hz: f64,
    pub ar_order: usize,
    /// Per channel, S-I / A-P / M-L.
    pub spline: [SplineConfig; 3],
    pub wavelet: WaveletConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            ar_order: DEFAULT_AR_ORDER,
            spline: [SplineConfig::default(); 3],
            wavelet: WaveletConfig::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn antialias_filter(&self) -> Result<FirFilter> {
        design_antialias_fir(self.cutoff_hz, RAW_RATE_HZ, PREPROCESSED_RATE_HZ)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub record: SwallowRecord,
    /// Set for channels whose variance vanished before normalization;
    /// those channels are emitted unscaled.
    pub variance_guard: [bool; 3],
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn require_raw(rec: &SwallowRecord) -> Result<()> {
    if rec.stage != Stage::Raw20k {
        return Err(Error::Config(format!(
            "record {} is already {:?}",
            rec.id, rec.stage
        )));
    }
    Ok(())
}

/// Fits one device-noise model per axis from a zero-input baseline recording.
/// Models describe the noise after decimation, where whitening is applied.
pub fn fit_baseline_models(baseline: &SwallowRecord, cfg: &PreprocessConfig) -> Result<[ArModel; 3]> {
    require_raw(baseline)?;
    let filter = cfg.antialias_filter()?;
    let factor = decimation_factor(RAW_RATE_HZ, PREPROCESSED_RATE_HZ)?;
    let fit = |ch: &[f32]| -> Result<ArModel> {
        let d = decimate(&to_f64(ch), &filter, factor)?;
        fit_ar_modified_covariance(&d, cfg.ar_order)
    };
    Ok([
        fit(&baseline.channels[0])?,
        fit(&baseline.channels[1])?,
        fit(&baseline.channels[2])?,
    ])
}

/// Z-scores in place; returns false (and leaves `x` alone) when the
/// standard deviation is negligible against `reference_rms`.
fn normalize(x: &mut [f64], reference_rms: f64) -> bool {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-10 * reference_rms) || !sd.is_finite() {
        return false;
    }
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    true
}

fn process_channel(
    raw: &[f32],
    model: &ArModel,
    spline: &SplineConfig,
    cfg: &PreprocessConfig,
    filter: &FirFilter,
    factor: usize,
) -> Result<(Vec<f64>, bool)> {
    let x = decimate(&to_f64(raw), filter, factor)?;
    let reference = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let x = whiten_device_noise(&x, model);
    let x = spline_detrend(&x, PREPROCESSED_RATE_HZ, spline)?;
    let mut x = wavelet_denoise(&x, &cfg.wavelet)?;
    let guarded = !normalize(&mut x, reference);
    Ok((x, guarded))
}

/// Runs every stage on each axis of a raw 20 kHz record.
pub fn preprocess_pipeline(
    rec: &SwallowRecord,
    models: &[ArModel; 3],
    cfg: &PreprocessConfig,
) -> Result<Preprocessed> {
    require_raw(rec)?;
    let filter = cfg.antialias_filter()?;
    let factor = decimation_factor(RAW_RATE_HZ, PREPROCESSED_RATE_HZ)?;
    let mut out: [Vec<f32>; 3] = Default::default();
    let mut guard = [false; 3];
    for c in 0..3 {
        let (x, g) = process_channel(&rec.channels[c], &models[c], &cfg.spline[c], cfg, &filter, factor)?;
        out[c] = x.iter().map(|&v| v as f32).collect();
        guard[c] = g;
    }
    let record = SwallowRecord::new(rec.id.clone(), out, Stage::Preprocessed4k)?;
    Ok(Preprocessed {
        record,
        variance_guard: guard,
    })
}
