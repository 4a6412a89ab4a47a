//! Finite-difference verification of the composed network's gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::ChunkSequence;
use crate::model::{Mode, ModelConfig, Network, INPUT_CHANNELS};
use crate::nn::masked_mse;
use crate::types::FrameMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub samples_per_layer: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Magnitudes below this are compared in absolute terms.
    pub denominator_floor: f64,
    pub valid_frames: usize,
    /// Scales the analytic gradient of this layer by 1.5 (negative control).
    pub corrupt_layer: Option<String>,
    pub max_resamples: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            samples_per_layer: 50,
            step: 1e-4,
            tolerance: 1e-4,
            denominator_floor: 1e-7,
            valid_frames: 12,
            corrupt_layer: None,
            max_resamples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub layer: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub layers: Vec<LayerCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }

    pub fn worst(&self) -> f64 {
        self.layers.iter().map(|l| l.max_relative_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A random problem: input chunks, a target mask and perturbed biases, so
/// that every code path carries signal.
pub fn random_problem(cfg: &ModelConfig, valid_frames: usize, seed: u64) -> Result<(Network, ChunkSequence, FrameMask)> {
    if valid_frames < 3 || valid_frames > cfg.max_frames {
        return Err(Error::Config(format!("valid_frames {valid_frames} outside [3, {}]", cfg.max_frames)));
    }
    let mut net = Network::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let names: Vec<String> = net.params.named().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(net.params.tensors_mut()) {
        if name.ends_with(".b") || name.contains(".b_") || name.ends_with(".c") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let width = cfg.chunk_len * INPUT_CHANNELS;
    let chunks = (0..cfg.max_frames)
        .map(|t| {
            if t < valid_frames {
                (0..width).map(|_| rng.random_range(-1.5..1.5)).collect()
            } else {
                vec![0.0; width]
            }
        })
        .collect();
    let seq = ChunkSequence {
        chunks,
        validity: (0..cfg.max_frames).map(|t| t < valid_frames).collect(),
        n_frames: valid_frames,
        chunk_len: cfg.chunk_len,
    };
    let o = rng.random_range(1..valid_frames - 1);
    let c = rng.random_range(o + 1..valid_frames);
    let target = FrameMask {
        values: (0..cfg.max_frames).map(|t| f64::from(u8::from(t >= o && t < c))).collect(),
        validity: seq.validity.clone(),
        n_frames: valid_frames,
    };
    Ok((net, seq, target))
}

fn layer_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Compares analytic gradients with central differences on sampled
/// parameters of every layer. Samples whose ±step perturbation changes a
/// ReLU or max-pool decision are redrawn.
pub fn gradcheck(model_cfg: &ModelConfig, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let (mut net, seq, target) = random_problem(model_cfg, cfg.valid_frames, cfg.seed)?;
    let mode = Mode::Train { dropout_seed: cfg.seed.wrapping_add(1) };
    let base = net.forward_trace(&seq, mode)?;
    let base_sig = base.activation_signature();
    let (_, grad) = net.loss_and_grad(&seq, &target, mode)?;

    let names: Vec<String> = net.params.named().into_iter().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = grad.tensors().iter().map(|t| t.len()).collect();
    let mut layers: Vec<String> = names.iter().map(|n| layer_of(n).to_string()).collect();
    layers.dedup();
    if let Some(bad) = &cfg.corrupt_layer {
        if !layers.contains(bad) {
            return Err(Error::Config(format!("unknown layer {bad:?}; layers are {layers:?}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut out = Vec::new();
    for layer in &layers {
        let members: Vec<usize> = (0..names.len()).filter(|&i| layer_of(&names[i]) == layer).collect();
        let total: usize = members.iter().map(|&i| sizes[i]).sum();
        let locate = |mut flat: usize| {
            for &i in &members {
                if flat < sizes[i] {
                    return (i, flat);
                }
                flat -= sizes[i];
            }
            unreachable!()
        };
        let want = cfg.samples_per_layer.min(total);
        let pool = (want * (cfg.max_resamples + 1)).min(total);
        let candidates = sample(&mut rng, total, pool);
        let scale = if cfg.corrupt_layer.as_deref() == Some(layer) { 1.5 } else { 1.0 };

        let mut check = LayerCheck {
            layer: layer.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_relative_error: 0.0,
            passed: true,
        };
        for flat in candidates.iter() {
            if check.checked == want {
                break;
            }
            let (ti, ei) = locate(flat);
            let original = net.params.tensors()[ti].data()[ei];
            let mut eval = |delta: f64| -> Result<(f64, u64)> {
                net.params.tensors_mut()[ti].data_mut()[ei] = original + delta;
                let tr = net.forward_trace(&seq, mode)?;
                Ok((masked_mse(&target, &tr.probs, target.n_frames)?, tr.activation_signature()))
            };
            let (lp, sp) = eval(cfg.step)?;
            let (lm, sm) = eval(-cfg.step)?;
            net.params.tensors_mut()[ti].data_mut()[ei] = original;
            if sp != base_sig || sm != base_sig {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * cfg.step);
            let analytic = grad.tensors()[ti].data()[ei] * scale;
            let err = relative_error(analytic, numeric, cfg.denominator_floor);
            if err > check.max_relative_error {
                check.max_relative_error = err;
            }
            check.checked += 1;
        }
        check.passed = check.checked == want && check.max_relative_error <= cfg.tolerance;
        log::debug!("{layer}: {} checked, {} kinks, max rel err {:.3e}", check.checked, check.skipped_kinks, check.max_relative_error);
        out.push(check);
    }
    Ok(GradcheckReport { layers: out })
}
