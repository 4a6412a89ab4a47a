//! Per-layer finite-difference checks, independent of the full network.

use dueso::nn::gru::{gru_layer_backward, gru_layer_forward};
use dueso::nn::layers::{conv1d_backward, dense_backward, maxpool1d_backward};
use dueso::nn::{conv1d, dense, maxpool1d, Activation, ConvParams, DenseParams, GruLayerParams, Tensor};
use dueso::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn randv(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn fill(t: &mut Tensor, rng: &mut impl Rng) {
    for v in t.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` along coordinate `i` of `x`.
fn fd(x: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let old = x[i];
    x[i] = old + H;
    let up = f(x);
    x[i] = old - H;
    let down = f(x);
    x[i] = old;
    (up - down) / (2.0 * H)
}

fn close(analytic: f64, numeric: f64) {
    let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-7);
    assert!(err < 1e-5, "analytic {analytic} vs numeric {numeric}");
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (len, c_in, mult, k) = (12, 3, 4, 5);
    let mut p = ConvParams::zeros(c_in, mult, k);
    fill(&mut p.w, &mut rng);
    fill(&mut p.b, &mut rng);
    let mut x = randv(len * c_in, &mut rng);
    let dy = randv((len - k + 1) * c_in * mult, &mut rng);

    let mut g = ConvParams::zeros(c_in, mult, k);
    let dx = conv1d_backward(&x, len, &p, &dy, &mut g);

    let p0 = p.clone();
    for i in 0..x.len() {
        let num = fd(&mut x, i, &mut |x| dot(&conv1d(x, len, &p0).unwrap(), &dy));
        close(dx[i], num);
    }
    let x0 = x.clone();
    for i in 0..p.w.len() {
        let num = fd(p.w.data_mut(), i, &mut |w| {
            let q = ConvParams { w: Tensor::from_vec(p0.w.shape(), w.to_vec()).unwrap(), b: p0.b.clone() };
            dot(&conv1d(&x0, len, &q).unwrap(), &dy)
        });
        close(g.w.data()[i], num);
    }
    for i in 0..p.b.len() {
        let num = fd(p.b.data_mut(), i, &mut |b| {
            let q = ConvParams { w: p0.w.clone(), b: Tensor::from_vec(p0.b.shape(), b.to_vec()).unwrap() };
            dot(&conv1d(&x0, len, &q).unwrap(), &dy)
        });
        close(g.b.data()[i], num);
    }
}

#[test]
fn maxpool_routes_gradient_to_winner() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (len, ch) = (10, 4);
    let mut x = randv(len * ch, &mut rng);
    let (_, arg) = maxpool1d(&x, len, ch);
    let dy = randv(len / 2 * ch, &mut rng);
    let dx = maxpool1d_backward(&dy, &arg, len, ch);
    for i in 0..x.len() {
        let num = fd(&mut x, i, &mut |x| dot(&maxpool1d(x, len, ch).0, &dy));
        assert!((dx[i] - num).abs() < 1e-6, "coordinate {i}: {} vs {num}", dx[i]);
    }
}

#[test]
fn maxpool_drops_odd_tail() {
    let x = [1.0, 5.0, 2.0, 0.0, 9.0];
    let (y, arg) = maxpool1d(&x, 5, 1);
    assert_eq!(y, vec![5.0, 2.0]);
    assert_eq!(arg, vec![1, 0]);
}

#[test]
fn dense_gradients_each_activation() {
    for (seed, act) in [(3, Activation::None), (4, Activation::Sigmoid), (5, Activation::Relu)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = DenseParams::zeros(7, 5);
        fill(&mut p.w, &mut rng);
        fill(&mut p.b, &mut rng);
        let mut x = randv(7, &mut rng);
        let dy = randv(5, &mut rng);
        let y = dense(&x, &p, act).unwrap();
        // keep relu away from its kink
        if act == Activation::Relu && y.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let mut g = DenseParams::zeros(7, 5);
        let dx = dense_backward(&x, &y, &p, act, &dy, &mut g);
        let p0 = p.clone();
        for i in 0..x.len() {
            let num = fd(&mut x, i, &mut |x| dot(&dense(x, &p0, act).unwrap(), &dy));
            close(dx[i], num);
        }
        let x0 = x.clone();
        for i in 0..p.w.len() {
            let num = fd(p.w.data_mut(), i, &mut |w| {
                let q = DenseParams { w: Tensor::from_vec(p0.w.shape(), w.to_vec()).unwrap(), b: p0.b.clone() };
                dot(&dense(&x0, &q, act).unwrap(), &dy)
            });
            close(g.w.data()[i], num);
        }
    }
}

#[test]
fn gru_layer_gradients_through_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (steps, d, hd) = (6, 4, 3);
    let mut p = GruLayerParams::zeros(d, hd);
    for t in [&mut p.w_r, &mut p.w_z, &mut p.w_h, &mut p.b_r, &mut p.b_z, &mut p.b_h] {
        fill(t, &mut rng);
    }
    let mut x = randv(steps * d, &mut rng);
    let dh = randv(steps * hd, &mut rng);
    let cache = gru_layer_forward(&x, steps, &p).unwrap();
    let mut g = GruLayerParams::zeros(d, hd);
    let dx = gru_layer_backward(&cache, &p, &dh, &mut g);

    let p0 = p.clone();
    for i in 0..x.len() {
        let num = fd(&mut x, i, &mut |x| dot(&gru_layer_forward(x, steps, &p0).unwrap().h, &dh));
        close(dx[i], num);
    }
    let x0 = x.clone();
    for i in 0..p.w_z.len() {
        let num = fd(p.w_z.data_mut(), i, &mut |w| {
            let mut q = p0.clone();
            q.w_z.data_mut().copy_from_slice(w);
            dot(&gru_layer_forward(&x0, steps, &q).unwrap().h, &dh)
        });
        close(g.w_z.data()[i], num);
    }
    for i in 0..p.b_h.len() {
        let num = fd(p.b_h.data_mut(), i, &mut |b| {
            let mut q = p0.clone();
            q.b_h.data_mut().copy_from_slice(b);
            dot(&gru_layer_forward(&x0, steps, &q).unwrap().h, &dh)
        });
        close(g.b_h.data()[i], num);
    }
}

#[test]
fn default_parameter_count_is_frozen() {
    assert_eq!(ModelConfig::default().parameter_count(), 1_097_626);
}

#[test]
fn parameter_count_matches_hand_sum() {
    let c = ModelConfig::default();
    let conv1 = 3 * c.conv_filters * c.kernel + 3 * c.conv_filters;
    let conv2 = 48 * c.kernel + 48;
    let gru_in = [27 * 48, c.gru_hidden, c.gru_hidden];
    let gru: usize = gru_in.iter().map(|&d| 3 * (c.gru_hidden * (c.gru_hidden + d) + c.gru_hidden)).sum();
    let readout = c.readout_dim * c.gru_hidden + c.readout_dim;
    let flat = c.readout_dim * c.max_frames;
    let fc = (flat * c.fc_width + c.fc_width) + 2 * (c.fc_width * c.fc_width + c.fc_width) + (c.fc_width * 90 + 90);
    assert_eq!(c.parameter_count(), conv1 + conv2 + gru + readout + fc);
}
