//! Feed-forward building blocks with explicit backward passes.
//!
//! Sequences are row-major `len x channels` slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::None => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::None => 1.0,
        }
    }
}

/// Channel-wise 1-D convolution with a depth multiplier.
///
/// Weights are `[in_channels, multiplier, kernel]`; output channel
/// `c * multiplier + m` is input channel `c` correlated with filter `m`.
/// No padding, stride 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvParams {
    pub fn zeros(in_channels: usize, multiplier: usize, kernel: usize) -> Self {
        ConvParams {
            w: Tensor::zeros(&[in_channels, multiplier, kernel]),
            b: Tensor::zeros(&[in_channels * multiplier]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn multiplier(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels() * self.multiplier()
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        let k = self.kernel();
        if len < k {
            return Err(Error::Size(format!(
                "sequence of {len} too short for kernel {k}"
            )));
        }
        Ok(len - k + 1)
    }
}

/// Valid depth-multiplied convolution of `x` (`len x in_channels`).
pub fn conv1d(x: &[f64], len: usize, p: &ConvParams) -> Result<Vec<f64>> {
    let (c_in, mult, k) = (p.in_channels(), p.multiplier(), p.kernel());
    if x.len() != len * c_in {
        return Err(Error::Size(format!(
            "conv input has {} values, expected {len} x {c_in}",
            x.len()
        )));
    }
    let out_len = p.output_len(len)?;
    let c_out = c_in * mult;
    let w = p.w.data();
    let mut y = vec![0.0; out_len * c_out];
    for t in 0..out_len {
        let row = &mut y[t * c_out..(t + 1) * c_out];
        row.copy_from_slice(p.b.data());
        for c in 0..c_in {
            for m in 0..mult {
                let f = &w[(c * mult + m) * k..(c * mult + m + 1) * k];
                let mut acc = 0.0;
                for (j, &fj) in f.iter().enumerate() {
                    acc += fj * x[(t + j) * c_in + c];
                }
                row[c * mult + m] += acc;
            }
        }
    }
    Ok(y)
}

/// Accumulates parameter gradients and returns the input gradient.
pub fn conv1d_backward(x: &[f64], len: usize, p: &ConvParams, dy: &[f64], grad: &mut ConvParams) -> Vec<f64> {
    let (c_in, mult, k) = (p.in_channels(), p.multiplier(), p.kernel());
    let out_len = len + 1 - k;
    let c_out = c_in * mult;
    let w = p.w.data();
    let mut dx = vec![0.0; len * c_in];
    {
        let gb = grad.b.data_mut();
        for t in 0..out_len {
            for (g, d) in gb.iter_mut().zip(&dy[t * c_out..(t + 1) * c_out]) {
                *g += d;
            }
        }
    }
    let gw = grad.w.data_mut();
    for t in 0..out_len {
        let drow = &dy[t * c_out..(t + 1) * c_out];
        for c in 0..c_in {
            for m in 0..mult {
                let d = drow[c * mult + m];
                if d == 0.0 {
                    continue;
                }
                let base = (c * mult + m) * k;
                for j in 0..k {
                    gw[base + j] += d * x[(t + j) * c_in + c];
                    dx[(t + j) * c_in + c] += d * w[base + j];
                }
            }
        }
    }
    dx
}

/// Window-2, stride-2 max pooling; returns values and the winning offset
/// (0 or 1) of each output.
pub fn maxpool1d(x: &[f64], len: usize, channels: usize) -> (Vec<f64>, Vec<u8>) {
    let out_len = len / 2;
    let mut y = Vec::with_capacity(out_len * channels);
    let mut arg = Vec::with_capacity(out_len * channels);
    for t in 0..out_len {
        for c in 0..channels {
            let a = x[2 * t * channels + c];
            let b = x[(2 * t + 1) * channels + c];
            if b > a {
                y.push(b);
                arg.push(1);
            } else {
                y.push(a);
                arg.push(0);
            }
        }
    }
    (y, arg)
}

pub fn maxpool1d_backward(dy: &[f64], arg: &[u8], len: usize, channels: usize) -> Vec<f64> {
    let mut dx = vec![0.0; len * channels];
    for (i, (&d, &a)) in dy.iter().zip(arg).enumerate() {
        let (t, c) = (i / channels, i % channels);
        dx[(2 * t + a as usize) * channels + c] = d;
    }
    dx
}

/// Fully connected layer: `w` is `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseParams {
            w: Tensor::zeros(&[outputs, inputs]),
            b: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.w.shape()[0]
    }
}

pub fn dense(x: &[f64], p: &DenseParams, act: Activation) -> Result<Vec<f64>> {
    let (n_in, n_out) = (p.inputs(), p.outputs());
    if x.len() != n_in {
        return Err(Error::Size(format!(
            "dense layer expects {n_in} inputs, got {}",
            x.len()
        )));
    }
    let w = p.w.data();
    Ok((0..n_out)
        .map(|o| {
            let z = p.b.data()[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            act.apply(z)
        })
        .collect())
}

/// `dy` is the gradient at the activation output `y`.
pub fn dense_backward(x: &[f64], y: &[f64], p: &DenseParams, act: Activation, dy: &[f64], grad: &mut DenseParams) -> Vec<f64> {
    let n_in = p.inputs();
    let w = p.w.data();
    let mut dx = vec![0.0; n_in];
    let dz: Vec<f64> = dy
        .iter()
        .zip(y)
        .map(|(&d, &yo)| d * act.derivative_from_output(yo))
        .collect();
    for (g, d) in grad.b.data_mut().iter_mut().zip(&dz) {
        *g += d;
    }
    let gw = grad.w.data_mut();
    for (o, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = o * n_in..(o + 1) * n_in;
        for ((g, &xi), (dxi, &wi)) in gw[row.clone()].iter_mut().zip(x).zip(dx.iter_mut().zip(&w[row])) {
            *g += d * xi;
            *dxi += d * wi;
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Inverted-dropout keep mask: 0 for dropped elements, `1/(1-rate)` for kept.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn dropout(x: &[f64], rate: f64, mode: DropoutMode, rng: &mut impl Rng) -> Vec<f64> {
    match mode {
        DropoutMode::Infer => x.to_vec(),
        DropoutMode::Train => x
            .iter()
            .zip(dropout_mask(x.len(), rate, rng))
            .map(|(v, m)| v * m)
            .collect(),
    }
}
