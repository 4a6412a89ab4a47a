//! The segmentation network: per-frame CNN, stacked GRU, dense head.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{preprocess_pipeline, ArModel, PreprocessConfig};
use crate::error::{Error, Result};
use crate::framing::{chunk_swallow, decode_mask_to_events, inferred_frame_count, Prediction, DEFAULT_CHUNK_LEN};
use crate::nn::adam::AdamState;
use crate::nn::gru::{gru_stack_backward, gru_stack_forward_cached, GruStackCache};
use crate::nn::layers::{
    conv1d, conv1d_backward, dense, dense_backward, dropout_mask, maxpool1d, maxpool1d_backward, Activation,
};
use crate::nn::loss::{masked_mse, masked_mse_grad};
use crate::nn::{ConvParams, DenseParams, GruLayerParams, ReadoutParams, Tensor};
use crate::types::{FrameMask, Stage, SwallowRecord, MAX_FRAMES};
use crate::framing::ChunkSequence;

/// Number of accelerometer axes fed to the network.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub chunk_len: usize,
    pub max_frames: usize,
    pub conv_filters: usize,
    pub kernel: usize,
    /// Adds a pooling layer after the second convolution.
    pub second_pool: bool,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub readout_dim: usize,
    pub fc_width: usize,
    /// Hidden ReLU layers before the sigmoid output layer.
    pub fc_layers: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            chunk_len: DEFAULT_CHUNK_LEN,
            max_frames: MAX_FRAMES,
            conv_filters: 16,
            kernel: 5,
            second_pool: false,
            gru_layers: 3,
            gru_hidden: 64,
            readout_dim: 64,
            fc_width: 128,
            fc_layers: 3,
            dropout: 0.2,
        }
    }
}

/// Layer-by-layer dimensions implied by a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeChain {
    pub input: (usize, usize),
    pub conv1: (usize, usize),
    pub pool1: (usize, usize),
    pub conv2: (usize, usize),
    pub pool2: Option<(usize, usize)>,
    pub cnn_features: usize,
    pub gru: Vec<usize>,
    pub readout: usize,
    pub flattened: usize,
    pub fc: Vec<usize>,
    pub output: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("chunk_len", self.chunk_len),
            ("max_frames", self.max_frames),
            ("conv_filters", self.conv_filters),
            ("kernel", self.kernel),
            ("gru_layers", self.gru_layers),
            ("gru_hidden", self.gru_hidden),
            ("readout_dim", self.readout_dim),
            ("fc_width", self.fc_width),
            ("fc_layers", self.fc_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.max_frames > MAX_FRAMES {
            return Err(Error::Config(format!("max_frames above {MAX_FRAMES}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let c1 = self.chunk_len.checked_sub(self.kernel - 1).filter(|&v| v > 0);
        let p1 = c1.map(|v| v / 2);
        let c2 = p1.and_then(|v| v.checked_sub(self.kernel - 1)).filter(|&v| v > 0);
        let last = if self.second_pool { c2.map(|v| v / 2) } else { c2 };
        if last.is_none_or(|v| v == 0) {
            return Err(Error::Config(format!(
                "chunk length {} too short for two kernel-{} convolutions",
                self.chunk_len, self.kernel
            )));
        }
        Ok(())
    }

    pub fn shapes(&self) -> ShapeChain {
        let ch1 = INPUT_CHANNELS * self.conv_filters;
        let l1 = self.chunk_len + 1 - self.kernel;
        let lp = l1 / 2;
        let l2 = lp + 1 - self.kernel;
        let pool2 = self.second_pool.then_some((l2 / 2, ch1));
        let feat_len = pool2.map_or(l2, |p| p.0);
        ShapeChain {
            input: (self.chunk_len, INPUT_CHANNELS),
            conv1: (l1, ch1),
            pool1: (lp, ch1),
            conv2: (l2, ch1),
            pool2,
            cnn_features: feat_len * ch1,
            gru: vec![self.gru_hidden; self.gru_layers],
            readout: self.readout_dim,
            flattened: self.max_frames * self.readout_dim,
            fc: vec![self.fc_width; self.fc_layers],
            output: self.max_frames,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn parameter_count(&self) -> usize {
        ModelParams::zeros(self).named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub gru: Vec<GruLayerParams>,
    pub readout: ReadoutParams,
    /// Hidden layers followed by the output layer.
    pub fc: Vec<DenseParams>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let s = cfg.shapes();
        let ch1 = s.conv1.1;
        let mut gru = Vec::with_capacity(cfg.gru_layers);
        let mut input = s.cnn_features;
        for _ in 0..cfg.gru_layers {
            gru.push(GruLayerParams::zeros(input, cfg.gru_hidden));
            input = cfg.gru_hidden;
        }
        let mut fc = Vec::with_capacity(cfg.fc_layers + 1);
        let mut width = s.flattened;
        for _ in 0..cfg.fc_layers {
            fc.push(DenseParams::zeros(width, cfg.fc_width));
            width = cfg.fc_width;
        }
        fc.push(DenseParams::zeros(width, cfg.max_frames));
        ModelParams {
            conv1: ConvParams::zeros(INPUT_CHANNELS, cfg.conv_filters, cfg.kernel),
            conv2: ConvParams::zeros(ch1, 1, cfg.kernel),
            gru,
            readout: ReadoutParams::zeros(cfg.gru_hidden, cfg.readout_dim),
            fc,
        }
    }

    /// Scaled-uniform weights (variance 2/fan_in before ReLU, 1/fan_in
    /// elsewhere) and zero biases.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ModelParams::zeros(cfg);
        let bound = |var: f64| (3.0 * var).sqrt();
        let relu_w = |t: &mut Tensor, fan_in: usize, rng: &mut ChaCha8Rng| {
            *t = Tensor::uniform(t.shape(), bound(2.0 / fan_in as f64), rng);
        };
        let lin_w = |t: &mut Tensor, fan_in: usize, rng: &mut ChaCha8Rng| {
            *t = Tensor::uniform(t.shape(), bound(1.0 / fan_in as f64), rng);
        };
        relu_w(&mut p.conv1.w, cfg.kernel, rng);
        relu_w(&mut p.conv2.w, cfg.kernel, rng);
        for g in &mut p.gru {
            let fan_in = g.w_r.shape()[1];
            lin_w(&mut g.w_r, fan_in, rng);
            lin_w(&mut g.w_z, fan_in, rng);
            lin_w(&mut g.w_h, fan_in, rng);
        }
        lin_w(&mut p.readout.u, cfg.gru_hidden, rng);
        let n_fc = p.fc.len();
        for (i, d) in p.fc.iter_mut().enumerate() {
            let fan_in = d.inputs();
            if i + 1 < n_fc {
                relu_w(&mut d.w, fan_in, rng);
            } else {
                lin_w(&mut d.w, fan_in, rng);
            }
        }
        p
    }

    /// Tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("conv1.w".to_string(), &self.conv1.w),
            ("conv1.b".to_string(), &self.conv1.b),
            ("conv2.w".to_string(), &self.conv2.w),
            ("conv2.b".to_string(), &self.conv2.b),
        ];
        for (k, g) in self.gru.iter().enumerate() {
            out.push((format!("gru{k}.w_r"), &g.w_r));
            out.push((format!("gru{k}.w_z"), &g.w_z));
            out.push((format!("gru{k}.w_h"), &g.w_h));
            out.push((format!("gru{k}.b_r"), &g.b_r));
            out.push((format!("gru{k}.b_z"), &g.b_z));
            out.push((format!("gru{k}.b_h"), &g.b_h));
        }
        out.push(("readout.u".to_string(), &self.readout.u));
        out.push(("readout.c".to_string(), &self.readout.c));
        for (k, d) in self.fc.iter().enumerate() {
            out.push((format!("fc{k}.w"), &d.w));
            out.push((format!("fc{k}.b"), &d.b));
        }
        out
    }

    /// Same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.conv1.w, &mut self.conv1.b, &mut self.conv2.w, &mut self.conv2.b];
        for g in &mut self.gru {
            out.extend([&mut g.w_r, &mut g.w_z, &mut g.w_h, &mut g.b_r, &mut g.b_z, &mut g.b_h]);
        }
        out.push(&mut self.readout.u);
        out.push(&mut self.readout.c);
        for d in &mut self.fc {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(s));
    }

    pub fn ensure_finite(&self) -> Result<()> {
        self.named().iter().try_for_each(|(n, t)| t.ensure_finite(n))
    }

    /// Checks every tensor shape against the configuration.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = ModelParams::zeros(cfg);
        let have = self.named();
        let expected = want.named();
        if have.len() != expected.len() {
            return Err(Error::Size(format!(
                "{} parameter tensors, config needs {}",
                have.len(),
                expected.len()
            )));
        }
        for ((n, t), (_, e)) in have.iter().zip(&expected) {
            if t.shape() != e.shape() {
                return Err(Error::Size(format!(
                    "{n} has shape {:?}, config needs {:?}",
                    t.shape(),
                    e.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Dropout active; masks drawn from the given seed.
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone)]
struct ChunkTrace {
    input: Vec<f64>,
    conv1: Vec<f64>,
    pool1_arg: Vec<u8>,
    pool1: Vec<f64>,
    conv2: Vec<f64>,
    pool2_arg: Option<Vec<u8>>,
}

/// Forward-pass intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    chunks: Vec<ChunkTrace>,
    features: Vec<f64>,
    gru: GruStackCache,
    flattened: Vec<f64>,
    fc_inputs: Vec<Vec<f64>>,
    fc_outputs: Vec<Vec<f64>>,
    dropout: Vec<Option<Vec<f64>>>,
    sigmoid: Vec<f64>,
    validity: Vec<bool>,
    pub probs: Vec<f64>,
}

/// Dimensions observed while running a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedShapes {
    pub input: (usize, usize),
    pub conv1: (usize, usize),
    pub pool1: (usize, usize),
    pub conv2: (usize, usize),
    pub pool2: Option<(usize, usize)>,
    pub cnn_features: usize,
    pub gru: Vec<usize>,
    pub readout: usize,
    pub flattened: usize,
    pub fc: Vec<usize>,
    pub output: usize,
}

impl Trace {
    /// Hash of every ReLU on/off state and pooling choice. Two parameter
    /// settings with equal signatures lie on the same smooth piece of the loss.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.chunks {
            c.conv1.iter().map(|&v| v > 0.0).collect::<Vec<_>>().hash(&mut h);
            c.pool1_arg.hash(&mut h);
            c.conv2.iter().map(|&v| v > 0.0).collect::<Vec<_>>().hash(&mut h);
            c.pool2_arg.hash(&mut h);
        }
        for o in &self.fc_outputs[..self.fc_outputs.len() - 1] {
            o.iter().map(|&v| v > 0.0).collect::<Vec<_>>().hash(&mut h);
        }
        h.finish()
    }

    pub fn observed_shapes(&self, cfg: &ModelConfig) -> ObservedShapes {
        let ch_in = INPUT_CHANNELS;
        let ch1 = ch_in * cfg.conv_filters;
        let c = &self.chunks[0];
        let steps = self.gru.valid.len();
        ObservedShapes {
            input: (c.input.len() / ch_in, ch_in),
            conv1: (c.conv1.len() / ch1, ch1),
            pool1: (c.pool1.len() / ch1, ch1),
            conv2: (c.conv2.len() / ch1, ch1),
            pool2: c.pool2_arg.as_ref().map(|a| (a.len() / ch1, ch1)),
            cnn_features: self.features.len() / steps,
            gru: self.gru.layers.iter().map(|l| l.h.len() / steps).collect(),
            readout: self.gru.readout.len() / steps,
            flattened: self.flattened.len(),
            fc: self.fc_outputs[..self.fc_outputs.len() - 1].iter().map(Vec::len).collect(),
            output: self.probs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_mask_grad(d: &mut [f64], post: &[f64]) {
    d.iter_mut().zip(post).for_each(|(g, &y)| {
        if y <= 0.0 {
            *g = 0.0
        }
    });
}

impl Network {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(Network { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Network { config, params })
    }

    fn check_sequence(&self, seq: &ChunkSequence) -> Result<()> {
        let cfg = &self.config;
        if seq.chunk_len != cfg.chunk_len
            || seq.chunks.len() != cfg.max_frames
            || seq.validity.len() != cfg.max_frames
            || seq.chunks.iter().any(|c| c.len() != cfg.chunk_len * INPUT_CHANNELS)
        {
            return Err(Error::Size(format!(
                "sequence of {} chunks x {} samples does not match model ({} x {})",
                seq.chunks.len(),
                seq.chunk_len,
                cfg.max_frames,
                cfg.chunk_len
            )));
        }
        let bad = (0..cfg.max_frames).find(|&t| seq.validity[t] && seq.chunks[t].iter().any(|v| !v.is_finite()));
        if let Some(t) = bad {
            return Err(Error::Numerical(format!("non-finite input sample in frame {t}")));
        }
        Ok(())
    }

    fn cnn_forward(&self, chunk: &[f64]) -> Result<(ChunkTrace, Vec<f64>)> {
        let cfg = &self.config;
        let p = &self.params;
        let ch1 = p.conv1.out_channels();
        let mut conv1 = conv1d(chunk, cfg.chunk_len, &p.conv1)?;
        relu_in_place(&mut conv1);
        let l1 = conv1.len() / ch1;
        let (pool1, pool1_arg) = maxpool1d(&conv1, l1, ch1);
        let lp = pool1.len() / ch1;
        let mut conv2 = conv1d(&pool1, lp, &p.conv2)?;
        relu_in_place(&mut conv2);
        let (features, pool2_arg) = if cfg.second_pool {
            let (y, arg) = maxpool1d(&conv2, conv2.len() / ch1, ch1);
            (y, Some(arg))
        } else {
            (conv2.clone(), None)
        };
        Ok((
            ChunkTrace {
                input: chunk.to_vec(),
                conv1,
                pool1_arg,
                pool1,
                conv2,
                pool2_arg,
            },
            features,
        ))
    }

    fn cnn_backward(&self, c: &ChunkTrace, d_feat: &[f64], grad: &mut ModelParams) {
        let cfg = &self.config;
        let p = &self.params;
        let ch1 = p.conv1.out_channels();
        let l2 = c.conv2.len() / ch1;
        let mut d2 = match &c.pool2_arg {
            Some(arg) => maxpool1d_backward(d_feat, arg, l2, ch1),
            None => d_feat.to_vec(),
        };
        relu_mask_grad(&mut d2, &c.conv2);
        let lp = c.pool1.len() / ch1;
        let d_pool1 = conv1d_backward(&c.pool1, lp, &p.conv2, &d2, &mut grad.conv2);
        let mut d1 = maxpool1d_backward(&d_pool1, &c.pool1_arg, c.conv1.len() / ch1, ch1);
        relu_mask_grad(&mut d1, &c.conv1);
        conv1d_backward(&c.input, cfg.chunk_len, &p.conv1, &d1, &mut grad.conv1);
    }

    pub fn forward_trace(&self, seq: &ChunkSequence, mode: Mode) -> Result<Trace> {
        self.check_sequence(seq)?;
        let cfg = &self.config;
        let p = &self.params;
        let valid: Vec<usize> = (0..cfg.max_frames).filter(|&t| seq.validity[t]).collect();

        let mut chunks = Vec::with_capacity(valid.len());
        let mut features = Vec::new();
        for &t in &valid {
            let (trace, f) = self.cnn_forward(&seq.chunks[t])?;
            chunks.push(trace);
            features.extend_from_slice(&f);
        }
        let gru = gru_stack_forward_cached(features.clone(), valid.clone(), &p.gru, &p.readout)?;

        let rd = cfg.readout_dim;
        let mut flattened = vec![0.0; cfg.max_frames * rd];
        for (i, &t) in valid.iter().enumerate() {
            flattened[t * rd..(t + 1) * rd].copy_from_slice(&gru.readout[i * rd..(i + 1) * rd]);
        }

        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            Mode::Infer => None,
        };
        let n_hidden = cfg.fc_layers;
        let mut fc_inputs = Vec::with_capacity(n_hidden + 1);
        let mut fc_outputs = Vec::with_capacity(n_hidden + 1);
        let mut dropout = Vec::with_capacity(n_hidden);
        let mut h = flattened.clone();
        for k in 0..n_hidden {
            let y = dense(&h, &p.fc[k], Activation::Relu)?;
            let mask = match rng.as_mut() {
                Some(r) if k + 1 < n_hidden && cfg.dropout > 0.0 => Some(dropout_mask(y.len(), cfg.dropout, r)),
                _ => None,
            };
            let next = match &mask {
                Some(m) => y.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => y.clone(),
            };
            fc_inputs.push(std::mem::replace(&mut h, next));
            fc_outputs.push(y);
            dropout.push(mask);
        }
        let sigmoid = dense(&h, &p.fc[n_hidden], Activation::Sigmoid)?;
        fc_inputs.push(h);
        fc_outputs.push(sigmoid.clone());
        let probs: Vec<f64> = sigmoid
            .iter()
            .zip(&seq.validity)
            .map(|(&y, &ok)| if ok { y } else { 0.0 })
            .collect();
        if let Some(i) = probs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite network output at frame {i}")));
        }
        Ok(Trace {
            chunks,
            features,
            gru,
            flattened,
            fc_inputs,
            fc_outputs,
            dropout,
            sigmoid,
            validity: seq.validity.clone(),
            probs,
        })
    }

    /// Per-frame probabilities; padded frames are 0.
    pub fn forward(&self, seq: &ChunkSequence, mode: Mode) -> Result<FrameMask> {
        let trace = self.forward_trace(seq, mode)?;
        Ok(FrameMask {
            values: trace.probs,
            validity: seq.validity.clone(),
            n_frames: seq.n_frames,
        })
    }

    /// Gradients of a scalar loss whose derivative at the output is `d_probs`.
    pub fn backward(&self, trace: &Trace, d_probs: &[f64]) -> Result<ModelParams> {
        let cfg = &self.config;
        let p = &self.params;
        if d_probs.len() != cfg.max_frames {
            return Err(Error::Size("output gradient has the wrong length".into()));
        }
        let mut grad = ModelParams::zeros(cfg);
        let n_hidden = cfg.fc_layers;

        let d_sig: Vec<f64> = d_probs
            .iter()
            .zip(&trace.validity)
            .map(|(&d, &ok)| if ok { d } else { 0.0 })
            .collect();
        let mut dh = dense_backward(
            &trace.fc_inputs[n_hidden],
            &trace.sigmoid,
            &p.fc[n_hidden],
            Activation::Sigmoid,
            &d_sig,
            &mut grad.fc[n_hidden],
        );
        for k in (0..n_hidden).rev() {
            if let Some(m) = &trace.dropout[k] {
                dh.iter_mut().zip(m).for_each(|(g, s)| *g *= s);
            }
            dh = dense_backward(
                &trace.fc_inputs[k],
                &trace.fc_outputs[k],
                &p.fc[k],
                Activation::Relu,
                &dh,
                &mut grad.fc[k],
            );
        }

        let rd = cfg.readout_dim;
        let valid = &trace.gru.valid;
        let d_readout: Vec<f64> = valid
            .iter()
            .flat_map(|&t| dh[t * rd..(t + 1) * rd].iter().copied())
            .collect();
        let d_features = gru_stack_backward(
            &trace.gru,
            &p.gru,
            &p.readout,
            &d_readout,
            &mut grad.gru,
            &mut grad.readout,
        );
        let feat = if valid.is_empty() { 0 } else { d_features.len() / valid.len() };
        for (i, c) in trace.chunks.iter().enumerate() {
            self.cnn_backward(c, &d_features[i * feat..(i + 1) * feat], &mut grad);
        }
        grad.ensure_finite()?;
        Ok(grad)
    }

    /// Masked MSE against `target` and its gradient for every parameter.
    pub fn loss_and_grad(&self, seq: &ChunkSequence, target: &FrameMask, mode: Mode) -> Result<(f64, ModelParams)> {
        let trace = self.forward_trace(seq, mode)?;
        let loss = masked_mse(target, &trace.probs, target.n_frames)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss}")));
        }
        let d = masked_mse_grad(target, &trace.probs, target.n_frames)?;
        let grad = self.backward(&trace, &d)?;
        Ok((loss, grad))
    }

    pub fn loss(&self, seq: &ChunkSequence, target: &FrameMask, mode: Mode) -> Result<f64> {
        let trace = self.forward_trace(seq, mode)?;
        masked_mse(target, &trace.probs, target.n_frames)
    }
}

/// Provenance carried alongside trained parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub fold: Option<usize>,
    pub preprocess: Option<PreprocessConfig>,
    pub ar_models: Option<Vec<ArModel>>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<AdamState>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(network: Network, meta: TrainingMeta) -> Self {
        Checkpoint {
            network,
            optimizer: None,
            meta,
        }
    }

    pub fn fingerprint(&self) -> String {
        self.network.config.fingerprint()
    }

    fn ar_models(&self) -> Result<[ArModel; 3]> {
        let models = self
            .meta
            .ar_models
            .as_ref()
            .ok_or_else(|| Error::Config("raw input needs device-noise models in the checkpoint".into()))?;
        <[ArModel; 3]>::try_from(models.clone())
            .map_err(|_| Error::Config("checkpoint must carry exactly 3 device-noise models".into()))
    }
}

/// Per-frame probabilities for one record: preprocesses it if raw, chunks
/// it and runs the network.
///
/// `label_frames` comes from the label when one exists; otherwise the
/// frame count is inferred from the record length.
pub fn predict_mask(rec: &SwallowRecord, label_frames: Option<usize>, ckpt: &Checkpoint) -> Result<FrameMask> {
    let cfg = &ckpt.network.config;
    let pre;
    let rec = match rec.stage {
        Stage::Preprocessed4k => rec,
        Stage::Raw20k => {
            let pp = ckpt.meta.preprocess.clone().unwrap_or_default();
            pre = preprocess_pipeline(rec, &ckpt.ar_models()?, &pp)?.record;
            &pre
        }
    };
    let n_frames = label_frames
        .unwrap_or_else(|| inferred_frame_count(rec.len(), cfg.chunk_len))
        .min(cfg.max_frames);
    let seq = chunk_swallow(rec, n_frames, cfg.chunk_len)?;
    ckpt.network.forward(&seq, Mode::Infer)
}

/// [`predict_mask`] followed by event decoding; fails with
/// `NoOpeningDetected` when no frame reaches the threshold.
pub fn predict(rec: &SwallowRecord, label_frames: Option<usize>, ckpt: &Checkpoint) -> Result<Prediction> {
    let mask = predict_mask(rec, label_frames, ckpt)?;
    let events = decode_mask_to_events(&mask, crate::framing::DEFAULT_THRESHOLD)?;
    Ok(Prediction {
        swallow_id: rec.id.clone(),
        mask,
        events: Some(events),
    })
}
