//! Labeled synthetic swallows: a band-limited burst over the open interval
//! on top of pink noise, slow drift and AR-colored device noise.
//!
//! The burst is a stand-in signature, not a physiological model.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{KinematicLabel, Stage, SwallowRecord, LABEL_FPS, MAX_FRAMES, RAW_RATE_HZ};

/// Raw samples spanned by one frame chunk (66 samples at 4 kHz).
pub const RAW_SAMPLES_PER_FRAME: usize = 330;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_swallows: usize,
    /// Frame counts are uniform on `min_frames..=max_frames`.
    pub min_frames: usize,
    pub max_frames: usize,
    pub opening_mean_ms: f64,
    pub opening_sd_ms: f64,
    /// Burst power over the open interval against the stationary noise
    /// (pink plus device) on the A-P axis. `None` removes all background.
    pub event_snr_db: Option<f64>,
    /// Peak amplitude of the sub-0.2 Hz drift, in noise standard deviations.
    pub drift_amplitude: f64,
    pub pink_level: f64,
    pub device_level: f64,
    pub device_ar: Vec<f64>,
    /// Burst gain per axis, S-I / A-P / M-L.
    pub channel_gains: [f64; 3],
    pub band_hz: [f64; 2],
    pub baseline_seconds: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_swallows: 200,
            min_frames: 30,
            max_frames: 90,
            opening_mean_ms: 604.9,
            opening_sd_ms: 150.0,
            event_snr_db: Some(10.0),
            drift_amplitude: 5.0,
            pink_level: 1.0,
            device_level: 1.0,
            device_ar: vec![0.75, -0.5],
            channel_gains: [0.6, 1.0, 0.4],
            band_hz: [60.0, 300.0],
            baseline_seconds: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_frames < 5 || self.min_frames > self.max_frames || self.max_frames > MAX_FRAMES {
            return Err(Error::Config(format!(
                "frame range {}..={} must lie in 5..={MAX_FRAMES}",
                self.min_frames, self.max_frames
            )));
        }
        if !(self.opening_sd_ms >= 0.0) || !(self.opening_mean_ms > 0.0) {
            return Err(Error::Config("opening duration distribution is invalid".into()));
        }
        let nyquist = RAW_RATE_HZ / 2.0;
        if !(0.0 < self.band_hz[0] && self.band_hz[0] < self.band_hz[1] && self.band_hz[1] < nyquist) {
            return Err(Error::Config(format!("burst band {:?} is invalid", self.band_hz)));
        }
        if self.event_snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Config("event_snr_db must be finite; omit it for a noise-free corpus".into()));
        }
        let levels = [self.drift_amplitude, self.pink_level, self.device_level, self.baseline_seconds];
        if levels.iter().any(|v| !(*v >= 0.0)) || self.channel_gains.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Config("levels must be non-negative and gains positive".into()));
        }
        if self.baseline_seconds * RAW_RATE_HZ < 1000.0 {
            return Err(Error::Config("baseline must be at least 1000 samples".into()));
        }
        if !ar_is_stable(&self.device_ar) {
            return Err(Error::Config(format!("device AR {:?} is unstable", self.device_ar)));
        }
        Ok(())
    }
}

/// Step-down (reverse Levinson) test: every reflection coefficient below 1.
fn ar_is_stable(a: &[f64]) -> bool {
    let mut c: Vec<f64> = a.to_vec();
    while let Some(&k) = c.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let p = c.len();
        let prev: Vec<f64> = (0..p - 1).map(|i| (c[i] + k * c[p - 2 - i]) / (1.0 - k * k)).collect();
        c = prev;
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSwallow {
    pub record: SwallowRecord,
    pub label: KinematicLabel,
    /// The burst alone, aligned with `record`.
    pub clean_event: [Vec<f32>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub swallows: Vec<SynthSwallow>,
    /// Device noise alone, for fitting whitening models.
    pub baseline: SwallowRecord,
}

pub fn swallow_id(index: usize) -> String {
    format!("syn{index:04}")
}

/// Opening duration in frames for one draw of the configured distribution.
pub fn draw_open_frames(cfg: &SynthConfig, n_frames: usize, rng: &mut impl Rng) -> usize {
    let ms = Normal::new(cfg.opening_mean_ms, cfg.opening_sd_ms)
        .map(|d| d.sample(rng))
        .unwrap_or(cfg.opening_mean_ms);
    let frames = (ms * f64::from(LABEL_FPS) / 1000.0).round();
    (frames.max(0.0) as usize).clamp(2, n_frames - 2)
}

struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Spectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Spectral {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// White Gaussian noise shaped by `gain(frequency_hz)`, scaled to unit
    /// sample variance.
    fn shaped_noise(&self, rng: &mut impl Rng, gain: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.forward.len();
        let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
        self.forward.process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            let bin = k.min(n - k);
            *v *= gain(bin as f64 * RAW_RATE_HZ / n as f64);
        }
        self.inverse.process(&mut buf);
        unit_variance(buf.iter().map(|c| c.re).collect())
    }
}

fn unit_variance(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    x
}

fn device_noise(cfg: &SynthConfig, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let burn = 1000;
    let mut x = vec![0.0; n + burn];
    for i in 0..x.len() {
        let mut v: f64 = rng.sample(StandardNormal);
        for (k, a) in cfg.device_ar.iter().enumerate() {
            if i > k {
                v += a * x[i - 1 - k];
            }
        }
        x[i] = v;
    }
    unit_variance(x.split_off(burn))
}

fn pink_gain(f: f64) -> f64 {
    if f < 0.5 {
        0.0
    } else {
        f.powf(-0.5)
    }
}

/// Tukey window with 20% taper, so the burst starts and ends at zero.
fn taper(i: usize, len: usize) -> f64 {
    let alpha = 0.2;
    let x = i as f64 / (len - 1).max(1) as f64;
    let edge = alpha / 2.0;
    if x < edge {
        0.5 * (1.0 - (std::f64::consts::PI * x / edge).cos())
    } else if x > 1.0 - edge {
        0.5 * (1.0 - (std::f64::consts::PI * (1.0 - x) / edge).cos())
    } else {
        1.0
    }
}

fn swallow_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Swallow `index` of the corpus described by `cfg`; independent of every
/// other index.
pub fn generate_swallow(cfg: &SynthConfig, index: usize) -> Result<SynthSwallow> {
    cfg.validate()?;
    let mut rng = swallow_rng(cfg.seed, index as u64 + 1);
    let n_frames = rng.random_range(cfg.min_frames..=cfg.max_frames);
    let open = draw_open_frames(cfg, n_frames, &mut rng);
    let opening = rng.random_range(1..=n_frames - 1 - open);
    let closure = opening + open;
    let label = KinematicLabel::new(swallow_id(index), n_frames, opening, closure)?;

    let n = n_frames * RAW_SAMPLES_PER_FRAME;
    let start = opening * RAW_SAMPLES_PER_FRAME;
    let len = open * RAW_SAMPLES_PER_FRAME;
    let event_fft = Spectral::new(len);
    let [lo, hi] = cfg.band_hz;
    let band = |f: f64| f64::from(u8::from(f >= lo && f <= hi));
    let noise_power = cfg.pink_level.powi(2) + cfg.device_level.powi(2);
    let amplitude = match cfg.event_snr_db {
        Some(snr) => (noise_power * 10f64.powf(snr / 10.0)).sqrt(),
        None => 1.0,
    };

    let mut clean: [Vec<f32>; 3] = Default::default();
    let bursts: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            event_fft
                .shaped_noise(&mut rng, band)
                .iter()
                .enumerate()
                .map(|(i, v)| v * taper(i, len))
                .collect()
        })
        .collect();
    // Normalize on the A-P axis so its open-interval power is exactly `amplitude^2`.
    let ap_power = bursts[1].iter().map(|v| v * v).sum::<f64>() / len as f64;
    let norm = amplitude / ap_power.sqrt();

    let background = Spectral::new(n);
    let duration = n as f64 / RAW_RATE_HZ;
    let mut channels: [Vec<f32>; 3] = Default::default();
    for c in 0..3 {
        let mut x = vec![0.0f64; n];
        if cfg.event_snr_db.is_some() {
            let pink = background.shaped_noise(&mut rng, pink_gain);
            let dev = device_noise(cfg, n, &mut rng);
            let f = rng.random_range(0.02..0.2);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let slope = rng.random_range(-1.0..1.0);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / RAW_RATE_HZ;
                let drift = (std::f64::consts::TAU * f * t + phase).sin() * 0.7 + slope * 0.3 * t / duration;
                *v = cfg.pink_level * pink[i] + cfg.device_level * dev[i] + cfg.drift_amplitude * drift;
            }
        }
        let mut ev = vec![0.0f32; n];
        let gain = norm * cfg.channel_gains[c] / cfg.channel_gains[1];
        for (i, b) in bursts[c].iter().enumerate() {
            let e = b * gain;
            ev[start + i] = e as f32;
            x[start + i] += e;
        }
        clean[c] = ev;
        channels[c] = x.iter().map(|&v| v as f32).collect();
    }
    let record = SwallowRecord::new(swallow_id(index), channels, Stage::Raw20k)?;
    Ok(SynthSwallow {
        record,
        label,
        clean_event: clean,
    })
}

/// Device noise with no swallow activity.
pub fn generate_baseline(cfg: &SynthConfig) -> Result<SwallowRecord> {
    cfg.validate()?;
    let mut rng = swallow_rng(cfg.seed, 0);
    let n = (cfg.baseline_seconds * RAW_RATE_HZ).round() as usize;
    let level = if cfg.device_level > 0.0 { cfg.device_level } else { 1.0 };
    let channels: [Vec<f32>; 3] = std::array::from_fn(|_| {
        device_noise(cfg, n, &mut rng).iter().map(|v| (v * level) as f32).collect()
    });
    SwallowRecord::new("baseline", channels, Stage::Raw20k)
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let swallows = (0..cfg.n_swallows).map(|i| generate_swallow(cfg, i)).collect::<Result<_>>()?;
    Ok(SynthDataset {
        swallows,
        baseline: generate_baseline(cfg)?,
    })
}
