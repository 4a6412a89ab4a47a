//! Stacked gated recurrent units with a linear readout.
//!
//! Each layer follows
//!
//! ```text
//! r_t = sigmoid(W_r [h_{t-1}, x_t] + b_r)
//! z_t = sigmoid(W_z [h_{t-1}, x_t] + b_z)
//! c_t = tanh(W [r_t * h_{t-1}, x_t] + b)
//! h_t = z_t * c_t + (1 - z_t) * h_{t-1}
//! ```
//!
//! Note the update gate weights the candidate, not the carried state.
//! Weight matrices are `[hidden, hidden + input]` with the state columns first.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, matvec_acc, matvec_t_acc, MatMut, MatRef};
use super::layers::sigmoid;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    pub w_r: Tensor,
    pub w_z: Tensor,
    pub w_h: Tensor,
    pub b_r: Tensor,
    pub b_z: Tensor,
    pub b_h: Tensor,
}

impl GruLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, hidden + input]);
        let b = || Tensor::zeros(&[hidden]);
        GruLayerParams {
            w_r: w(),
            w_z: w(),
            w_h: w(),
            b_r: b(),
            b_z: b(),
            b_h: b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_r.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_r.shape()[1] - self.hidden()
    }

    fn gates(&self) -> [(&Tensor, &Tensor); 3] {
        [(&self.w_r, &self.b_r), (&self.w_z, &self.b_z), (&self.w_h, &self.b_h)]
    }
}

/// `y_t = U h_t + c`; `u` is `[out, hidden]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub u: Tensor,
    pub c: Tensor,
}

impl ReadoutParams {
    pub fn zeros(hidden: usize, out: usize) -> Self {
        ReadoutParams {
            u: Tensor::zeros(&[out, hidden]),
            c: Tensor::zeros(&[out]),
        }
    }

    pub fn outputs(&self) -> usize {
        self.u.shape()[0]
    }
}

/// One recurrence step.
pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> Result<Vec<f64>> {
    let (h, d) = (p.hidden(), p.input());
    if x.len() != d || h_prev.len() != h {
        return Err(Error::Size(format!(
            "gru cell expects input {d} and state {h}, got {} and {}",
            x.len(),
            h_prev.len()
        )));
    }
    let ld = h + d;
    let affine = |w: &Tensor, b: &Tensor, state: &[f64]| {
        let mut a = b.data().to_vec();
        matvec_acc(w.data(), ld, h, h, state, &mut a);
        matvec_acc(&w.data()[h..], ld, h, d, x, &mut a);
        a
    };
    let r: Vec<f64> = affine(&p.w_r, &p.b_r, h_prev).into_iter().map(sigmoid).collect();
    let z: Vec<f64> = affine(&p.w_z, &p.b_z, h_prev).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = affine(&p.w_h, &p.b_h, &rh).into_iter().map(f64::tanh).collect();
    Ok((0..h)
        .map(|i| z[i] * cand[i] + (1.0 - z[i]) * h_prev[i])
        .collect())
}

/// Everything the backward pass of one layer needs; all `steps x hidden`.
#[derive(Debug, Clone)]
pub struct GruCache {
    steps: usize,
    input: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
    /// Layer outputs.
    pub h: Vec<f64>,
}

/// Runs one layer over `steps` consecutive inputs from a zero state.
pub fn gru_layer_forward(x: &[f64], steps: usize, p: &GruLayerParams) -> Result<GruCache> {
    let (hd, d) = (p.hidden(), p.input());
    if x.len() != steps * d {
        return Err(Error::Size(format!(
            "gru layer expects {steps} x {d} inputs, got {}",
            x.len()
        )));
    }
    let ld = hd + d;
    // input projections for all steps at once
    let mut proj: [Vec<f64>; 3] = Default::default();
    for (g, (w, b)) in p.gates().into_iter().enumerate() {
        let mut out: Vec<f64> = (0..steps).flat_map(|_| b.data().iter().copied()).collect();
        if steps > 0 {
            let wx = MatRef::row_major(w.data(), hd, ld).cols(hd, d).t();
            gemm(1.0, MatRef::row_major(x, steps, d), wx, 1.0, MatMut::row_major(&mut out, steps, hd));
        }
        proj[g] = out;
    }

    let n = steps * hd;
    let mut cache = GruCache {
        steps,
        input: x.to_vec(),
        h_prev: vec![0.0; n],
        r: vec![0.0; n],
        z: vec![0.0; n],
        cand: vec![0.0; n],
        rh: vec![0.0; n],
        h: vec![0.0; n],
    };
    let mut state = vec![0.0; hd];
    let mut a = vec![0.0; hd];
    for t in 0..steps {
        let row = t * hd..(t + 1) * hd;
        cache.h_prev[row.clone()].copy_from_slice(&state);

        a.copy_from_slice(&proj[0][row.clone()]);
        matvec_acc(p.w_r.data(), ld, hd, hd, &state, &mut a);
        for (o, &v) in cache.r[row.clone()].iter_mut().zip(&a) {
            *o = sigmoid(v);
        }
        a.copy_from_slice(&proj[1][row.clone()]);
        matvec_acc(p.w_z.data(), ld, hd, hd, &state, &mut a);
        for (o, &v) in cache.z[row.clone()].iter_mut().zip(&a) {
            *o = sigmoid(v);
        }
        for i in 0..hd {
            cache.rh[t * hd + i] = cache.r[t * hd + i] * state[i];
        }
        a.copy_from_slice(&proj[2][row.clone()]);
        matvec_acc(p.w_h.data(), ld, hd, hd, &cache.rh[row.clone()], &mut a);
        for i in 0..hd {
            let k = t * hd + i;
            cache.cand[k] = a[i].tanh();
            state[i] = cache.z[k] * cache.cand[k] + (1.0 - cache.z[k]) * state[i];
        }
        cache.h[row].copy_from_slice(&state);
    }
    Ok(cache)
}

/// Backpropagates `d_h` (gradient at every output) through time.
/// Accumulates into `grad` and returns the input gradient (`steps x input`).
pub fn gru_layer_backward(cache: &GruCache, p: &GruLayerParams, d_h: &[f64], grad: &mut GruLayerParams) -> Vec<f64> {
    let (hd, d) = (p.hidden(), p.input());
    let ld = hd + d;
    let steps = cache.steps;
    let n = steps * hd;
    let mut da = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut carry = vec![0.0; hd];
    let mut d_rh = vec![0.0; hd];
    for t in (0..steps).rev() {
        let off = t * hd;
        let mut dh_prev = vec![0.0; hd];
        for i in 0..hd {
            let k = off + i;
            let dh = d_h[k] + carry[i];
            let z = cache.z[k];
            let c = cache.cand[k];
            let hp = cache.h_prev[k];
            da[2][k] = dh * z * (1.0 - c * c);
            da[1][k] = dh * (c - hp) * z * (1.0 - z);
            dh_prev[i] = dh * (1.0 - z);
        }
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(p.w_h.data(), ld, hd, hd, &da[2][off..off + hd], &mut d_rh);
        for i in 0..hd {
            let k = off + i;
            let r = cache.r[k];
            da[0][k] = d_rh[i] * cache.h_prev[k] * r * (1.0 - r);
            dh_prev[i] += d_rh[i] * r;
        }
        matvec_t_acc(p.w_r.data(), ld, hd, hd, &da[0][off..off + hd], &mut dh_prev);
        matvec_t_acc(p.w_z.data(), ld, hd, hd, &da[1][off..off + hd], &mut dh_prev);
        carry = dh_prev;
    }

    let mut dx = vec![0.0; steps * d];
    if steps == 0 {
        return dx;
    }
    let grads = [
        (&mut grad.w_r, &mut grad.b_r, &p.w_r, &cache.h_prev),
        (&mut grad.w_z, &mut grad.b_z, &p.w_z, &cache.h_prev),
        (&mut grad.w_h, &mut grad.b_h, &p.w_h, &cache.rh),
    ];
    for (g, (gw, gb, w, state_in)) in grads.into_iter().enumerate() {
        let dag = MatRef::row_major(&da[g], steps, hd);
        gemm(1.0, dag.t(), MatRef::row_major(state_in, steps, hd), 1.0, MatMut::row_major(gw.data_mut(), hd, ld).cols(0, hd));
        gemm(1.0, dag.t(), MatRef::row_major(&cache.input, steps, d), 1.0, MatMut::row_major(gw.data_mut(), hd, ld).cols(hd, d));
        for t in 0..steps {
            for (b, v) in gb.data_mut().iter_mut().zip(&da[g][t * hd..(t + 1) * hd]) {
                *b += v;
            }
        }
        let wx = MatRef::row_major(w.data(), hd, ld).cols(hd, d);
        gemm(1.0, dag, wx, 1.0, MatMut::row_major(&mut dx, steps, d));
    }
    dx
}

/// Forward state of a full stack over the valid steps of a sequence.
#[derive(Debug, Clone)]
pub struct GruStackCache {
    /// Indices of the valid steps, in order.
    pub valid: Vec<usize>,
    pub layers: Vec<GruCache>,
    /// Readout outputs for valid steps, `valid.len() x out`.
    pub readout: Vec<f64>,
}

fn check_stack(steps: usize, input_dim: usize, x_len: usize, validity: &[bool], layers: &[GruLayerParams], readout: &ReadoutParams) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Size("gru stack has no layers".into()));
    }
    if validity.len() != steps || x_len != steps * input_dim {
        return Err(Error::Size(format!(
            "gru stack input {x_len} / validity {} inconsistent with {steps} steps of {input_dim}",
            validity.len()
        )));
    }
    if layers[0].input() != input_dim {
        return Err(Error::Size(format!(
            "first gru layer expects {} inputs, sequence has {input_dim}",
            layers[0].input()
        )));
    }
    for pair in layers.windows(2) {
        if pair[1].input() != pair[0].hidden() {
            return Err(Error::Size("gru layer sizes do not chain".into()));
        }
    }
    let last = layers.last().unwrap().hidden();
    if readout.u.shape()[1] != last {
        return Err(Error::Size("readout does not match gru hidden size".into()));
    }
    Ok(())
}

/// Runs the stack on compacted valid steps.
pub fn gru_stack_forward_cached(x_valid: Vec<f64>, valid: Vec<usize>, layers: &[GruLayerParams], readout: &ReadoutParams) -> Result<GruStackCache> {
    let steps = valid.len();
    let mut caches: Vec<GruCache> = Vec::with_capacity(layers.len());
    for (k, p) in layers.iter().enumerate() {
        let input = if k == 0 { &x_valid } else { &caches[k - 1].h };
        let cache = gru_layer_forward(input, steps, p)?;
        caches.push(cache);
    }
    let top = &caches.last().unwrap().h;
    let hd = layers.last().unwrap().hidden();
    let out = readout.outputs();
    let mut y: Vec<f64> = (0..steps).flat_map(|_| readout.c.data().iter().copied()).collect();
    if steps > 0 {
        gemm(1.0, MatRef::row_major(top, steps, hd), MatRef::row_major(readout.u.data(), out, hd).t(), 1.0, MatMut::row_major(&mut y, steps, out));
    }
    Ok(GruStackCache {
        valid,
        layers: caches,
        readout: y,
    })
}

/// `d_y` is the gradient at the compact readout output. Returns the gradient
/// at the compact stack input.
pub fn gru_stack_backward(cache: &GruStackCache, layers: &[GruLayerParams], readout: &ReadoutParams, d_y: &[f64], grad_layers: &mut [GruLayerParams], grad_readout: &mut ReadoutParams) -> Vec<f64> {
    let steps = cache.valid.len();
    let hd = layers.last().unwrap().hidden();
    let out = readout.outputs();
    let top = &cache.layers.last().unwrap().h;
    let mut d_h = vec![0.0; steps * hd];
    if steps > 0 {
        let dy = MatRef::row_major(d_y, steps, out);
        gemm(1.0, dy.t(), MatRef::row_major(top, steps, hd), 1.0, MatMut::row_major(grad_readout.u.data_mut(), out, hd));
        gemm(1.0, dy, MatRef::row_major(readout.u.data(), out, hd), 0.0, MatMut::row_major(&mut d_h, steps, hd));
        for t in 0..steps {
            for (c, v) in grad_readout.c.data_mut().iter_mut().zip(&d_y[t * out..(t + 1) * out]) {
                *c += v;
            }
        }
    }
    for k in (0..layers.len()).rev() {
        d_h = gru_layer_backward(&cache.layers[k], &layers[k], &d_h, &mut grad_layers[k]);
    }
    d_h
}

/// Full-length stack forward: invalid steps yield zero outputs and leave the
/// recurrent state untouched. `x_seq` is `steps x input`.
pub fn gru_stack_forward(x_seq: &[f64], validity: &[bool], layers: &[GruLayerParams], readout: &ReadoutParams) -> Result<Vec<f64>> {
    let steps = validity.len();
    let input_dim = layers.first().map(|l| l.input()).unwrap_or(0);
    check_stack(steps, input_dim, x_seq.len(), validity, layers, readout)?;
    let valid: Vec<usize> = (0..steps).filter(|&t| validity[t]).collect();
    let x_valid: Vec<f64> = valid
        .iter()
        .flat_map(|&t| x_seq[t * input_dim..(t + 1) * input_dim].iter().copied())
        .collect();
    let cache = gru_stack_forward_cached(x_valid, valid, layers, readout)?;
    let out = readout.outputs();
    let mut y = vec![0.0; steps * out];
    for (i, &t) in cache.valid.iter().enumerate() {
        y[t * out..(t + 1) * out].copy_from_slice(&cache.readout[i * out..(i + 1) * out]);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_layer(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruLayerParams {
        let w = |r: &mut ChaCha8Rng| Tensor::uniform(&[hidden, hidden + input], 0.5, r);
        let b = |r: &mut ChaCha8Rng| Tensor::uniform(&[hidden], 0.5, r);
        GruLayerParams {
            w_r: w(rng),
            w_z: w(rng),
            w_h: w(rng),
            b_r: b(rng),
            b_z: b(rng),
            b_h: b(rng),
        }
    }

    #[test]
    fn zero_params_stay_zero() {
        let p = GruLayerParams::zeros(4, 64);
        let h = gru_cell(&[1.0, -2.0, 3.0, 0.5], &[0.0; 64], &p).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_unit() {
        let mut p = GruLayerParams::zeros(1, 1);
        p.b_z.data_mut()[0] = 10.0;
        p.w_h.data_mut().copy_from_slice(&[0.0, 1.0]);
        let h = gru_cell(&[1.0], &[0.0], &p).unwrap();
        assert!((h[0] - 1f64.tanh()).abs() <= 1e-3, "{}", h[0]);
        assert!((h[0] - 0.7616).abs() <= 1e-3);
    }

    #[test]
    fn cell_shape_errors() {
        let p = GruLayerParams::zeros(3, 4);
        assert!(matches!(gru_cell(&[0.0; 2], &[0.0; 4], &p), Err(Error::Size(_))));
        assert!(matches!(gru_cell(&[0.0; 3], &[0.0; 5], &p), Err(Error::Size(_))));
    }

    #[test]
    fn layer_matches_repeated_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_layer(5, 7, &mut rng);
        let x = Tensor::uniform(&[9, 5], 1.0, &mut rng);
        let cache = gru_layer_forward(x.data(), 9, &p).unwrap();
        let mut h = vec![0.0; 7];
        for t in 0..9 {
            h = gru_cell(&x.data()[t * 5..(t + 1) * 5], &h, &p).unwrap();
            for i in 0..7 {
                assert!((cache.h[t * 7 + i] - h[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_steps_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layers = vec![random_layer(3, 4, &mut rng), random_layer(4, 4, &mut rng)];
        let ro = ReadoutParams {
            u: Tensor::uniform(&[2, 4], 1.0, &mut rng),
            c: Tensor::uniform(&[2], 1.0, &mut rng),
        };
        let x = Tensor::uniform(&[6, 3], 1.0, &mut rng);
        let none = gru_stack_forward(x.data(), &[false; 6], &layers, &ro).unwrap();
        assert!(none.iter().all(|&v| v == 0.0));

        let full = gru_stack_forward(x.data(), &[true; 6], &layers, &ro).unwrap();
        let prefix = gru_stack_forward(&x.data()[..5 * 3], &[true; 5], &layers, &ro).unwrap();
        assert_eq!(&full[..10], &prefix[..]);

        // a hole does not advance the state
        let holed = gru_stack_forward(x.data(), &[true, true, false, true, true, true], &layers, &ro).unwrap();
        assert_eq!(&holed[4..6], &[0.0, 0.0]);
        let mut squeezed = x.data()[..6].to_vec();
        squeezed.extend_from_slice(&x.data()[9..]);
        let compact = gru_stack_forward(&squeezed, &[true; 5], &layers, &ro).unwrap();
        assert_eq!(&holed[6..], &compact[4..]);
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_layer(3, 4, &mut rng);
        let x = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let probe = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let loss = |p: &GruLayerParams, x: &[f64]| -> f64 {
            let c = gru_layer_forward(x, 5, p).unwrap();
            c.h.iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let cache = gru_layer_forward(x.data(), 5, &p).unwrap();
        let mut g = GruLayerParams::zeros(3, 4);
        let dx = gru_layer_backward(&cache, &p, probe.data(), &mut g);
        let h = 1e-6;
        for idx in 0..p.w_h.len() {
            let mut pp = p.clone();
            pp.w_h.data_mut()[idx] += h;
            let mut pm = p.clone();
            pm.w_h.data_mut()[idx] -= h;
            let fd = (loss(&pp, x.data()) - loss(&pm, x.data())) / (2.0 * h);
            assert!((fd - g.w_h.data()[idx]).abs() < 1e-7);
        }
        for idx in 0..p.b_r.len() {
            let mut pp = p.clone();
            pp.b_r.data_mut()[idx] += h;
            let mut pm = p.clone();
            pm.b_r.data_mut()[idx] -= h;
            let fd = (loss(&pp, x.data()) - loss(&pm, x.data())) / (2.0 * h);
            assert!((fd - g.b_r.data()[idx]).abs() < 1e-7);
        }
        for idx in 0..x.len() {
            let mut xp = x.data().to_vec();
            xp[idx] += h;
            let mut xm = x.data().to_vec();
            xm[idx] -= h;
            let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-7);
        }
    }
}
