#![allow(dead_code)]

use dueso::dsp::{fit_baseline_models, PreprocessConfig};
use dueso::model::{Mode, Network};
use dueso::nn::{GruLayerParams, ReadoutParams};
use dueso::synth::{generate_dataset, SynthConfig};
use dueso::train::{prepare_samples, Sample};
use rand::Rng;

/// Plain-loop GRU stack: invalid steps emit zeros and keep the state.
pub fn scalar_gru_stack(x: &[f64], validity: &[bool], layers: &[GruLayerParams], readout: &ReadoutParams) -> Vec<f64> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let steps = validity.len();
    let d0 = layers[0].w_r.shape()[1] - layers[0].w_r.shape()[0];
    let mut states: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.w_r.shape()[0]]).collect();
    let out_dim = readout.u.shape()[0];
    let mut y = vec![0.0; steps * out_dim];
    for t in 0..steps {
        if !validity[t] {
            continue;
        }
        let mut input: Vec<f64> = x[t * d0..(t + 1) * d0].to_vec();
        for (l, p) in layers.iter().enumerate() {
            let h = p.w_r.shape()[0];
            let cols = p.w_r.shape()[1];
            let prev = states[l].clone();
            let w = |m: &dueso::nn::Tensor, i: usize, j: usize| m.data()[i * cols + j];
            let mut next = vec![0.0; h];
            let mut r = vec![0.0; h];
            for i in 0..h {
                let mut a = p.b_r.data()[i];
                for j in 0..h {
                    a += w(&p.w_r, i, j) * prev[j];
                }
                for j in 0..input.len() {
                    a += w(&p.w_r, i, h + j) * input[j];
                }
                r[i] = sig(a);
            }
            for i in 0..h {
                let mut az = p.b_z.data()[i];
                let mut ah = p.b_h.data()[i];
                for j in 0..h {
                    az += w(&p.w_z, i, j) * prev[j];
                    ah += w(&p.w_h, i, j) * r[j] * prev[j];
                }
                for j in 0..input.len() {
                    az += w(&p.w_z, i, h + j) * input[j];
                    ah += w(&p.w_h, i, h + j) * input[j];
                }
                let z = sig(az);
                next[i] = z * ah.tanh() + (1.0 - z) * prev[i];
            }
            states[l] = next.clone();
            input = next;
        }
        for o in 0..out_dim {
            let mut v = readout.c.data()[o];
            for (j, hj) in input.iter().enumerate() {
                v += readout.u.data()[o * input.len() + j] * hj;
            }
            y[t * out_dim + o] = v;
        }
    }
    y
}

pub fn random_gru(input: usize, hidden: usize, rng: &mut impl Rng) -> GruLayerParams {
    let mut p = GruLayerParams::zeros(input, hidden);
    for t in [&mut p.w_r, &mut p.w_z, &mut p.w_h, &mut p.b_r, &mut p.b_z, &mut p.b_h] {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    p
}

/// |H(f)| of an FIR filter by direct DTFT.
pub fn fir_gain(taps: &[f64], f_hz: f64, fs_hz: f64) -> f64 {
    let w = std::f64::consts::TAU * f_hz / fs_hz;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &h)| {
        (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
    });
    (re * re + im * im).sqrt()
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let err: Vec<f64> = clean.iter().zip(noisy).map(|(a, b)| a - b).collect();
    20.0 * (rms(clean) / rms(&err)).log10()
}

/// Sample lag-k autocorrelation.
pub fn autocorr(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let ck: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    ck / c0
}

/// Generates and preprocesses a synthetic corpus.
pub fn synthetic_samples(cfg: &SynthConfig) -> Vec<Sample> {
    let ds = generate_dataset(cfg).unwrap();
    let pp = PreprocessConfig::default();
    let models = fit_baseline_models(&ds.baseline, &pp).unwrap();
    let data: Vec<_> = ds.swallows.iter().map(|s| (s.record.clone(), s.label.clone())).collect();
    prepare_samples(&data, Some(&models), &pp, 66).unwrap()
}

/// Frame accuracy pooled over every valid frame of every sample.
pub fn pooled_frame_accuracy(net: &Network, samples: &[&Sample]) -> f64 {
    let (mut right, mut total) = (0usize, 0usize);
    for s in samples {
        let out = net.forward(&s.seq, Mode::Infer).unwrap();
        for t in 0..s.target.n_frames {
            right += usize::from((out.values[t] >= 0.5) == (s.target.values[t] >= 0.5));
            total += 1;
        }
    }
    right as f64 / total as f64
}

pub fn mean_masked_mse(net: &Network, samples: &[&Sample]) -> f64 {
    samples.iter().map(|s| net.loss(&s.seq, &s.target, Mode::Infer).unwrap()).sum::<f64>() / samples.len() as f64
}
