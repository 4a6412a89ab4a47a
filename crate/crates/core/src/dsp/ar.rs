//! Autoregressive device-noise model and the whitening filter built from it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fir::fir_filter;
use crate::error::{Error, Result};

pub const DEFAULT_AR_ORDER: usize = 10;

/// `x[n] = sum_k a_k x[n-k] + e[n]`, `var(e) = noise_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub coefficients: Vec<f64>,
    pub noise_variance: f64,
}

impl ArModel {
    pub fn new(coefficients: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Config("AR order must be at least 1".into()));
        }
        if coefficients.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical("non-finite AR coefficient".into()));
        }
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::Numerical(format!(
                "AR noise variance {noise_variance} must be positive"
            )));
        }
        Ok(ArModel {
            order: coefficients.len(),
            coefficients,
            noise_variance,
        })
    }

    /// All-zero coefficients: the whitening filter is the identity.
    pub fn identity(order: usize) -> Self {
        ArModel {
            order: order.max(1),
            coefficients: vec![0.0; order.max(1)],
            noise_variance: 1.0,
        }
    }

    /// Prediction-error filter taps `[1, -a_1, ..., -a_p]`.
    pub fn whitening_taps(&self) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.coefficients.iter().map(|a| -a))
            .collect()
    }
}

/// Fits an AR model by minimizing the summed forward and backward
/// prediction errors (modified covariance method).
pub fn fit_ar_modified_covariance(baseline: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::Config("AR order must be at least 1".into()));
    }
    let n = baseline.len();
    if n <= 3 * order {
        return Err(Error::Size(format!(
            "baseline of {n} samples too short for order {order} (need > {})",
            3 * order
        )));
    }
    let first = baseline[0];
    if baseline.iter().all(|&v| v == first) {
        return Err(Error::DegenerateInput("baseline is constant".into()));
    }
    if baseline.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("baseline has non-finite samples".into()));
    }

    let p = order;
    let x = baseline;
    // forward: x[t] ~ sum a_k x[t-k]; backward: x[t-p] ~ sum a_k x[t-p+k]
    let mut r = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for t in p..n {
        for j in 1..=p {
            let fj = x[t - j];
            let bj = x[t - p + j];
            rhs[j - 1] += x[t] * fj + x[t - p] * bj;
            for k in j..=p {
                r[(j - 1, k - 1)] += fj * x[t - k] + bj * x[t - p + k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            r[(j, k)] = r[(k, j)];
        }
    }

    let scale = r.diagonal().max();
    if !(scale > 0.0) {
        return Err(Error::DegenerateInput("baseline carries no energy".into()));
    }
    let a = r
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| r.clone().lu().solve(&rhs))
        .ok_or_else(|| Error::Numerical("singular modified-covariance normal equations".into()))?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("AR solution is not finite".into()));
    }

    let mut err = 0.0;
    for t in p..n {
        let mut fe = x[t];
        let mut be = x[t - p];
        for k in 1..=p {
            fe -= a[k - 1] * x[t - k];
            be -= a[k - 1] * x[t - p + k];
        }
        err += fe * fe + be * be;
    }
    let noise_variance = err / (2 * (n - p)) as f64;
    if !(noise_variance > 0.0) {
        return Err(Error::DegenerateInput(
            "baseline is perfectly predictable; noise variance is zero".into(),
        ));
    }
    ArModel::new(a.iter().copied().collect(), noise_variance)
}

/// Removes the modelled device coloration with the prediction-error FIR.
pub fn whiten_device_noise(x: &[f64], model: &ArModel) -> Vec<f64> {
    fir_filter(&model.whitening_taps(), x)
}
