use crate::error::{Error, Result};
use crate::types::FrameMask;

/// `(1/T) * sum_i ((truth_i - pred_i) * mask_i)^2` over all padded slots,
/// where `mask` is the truth's validity and `T` the number of valid frames.
pub fn masked_mse(truth: &FrameMask, pred: &[f64], valid_frames: usize) -> Result<f64> {
    check(truth, pred, valid_frames)?;
    let sum: f64 = truth
        .values
        .iter()
        .zip(pred)
        .zip(&truth.validity)
        .map(|((&y, &p), &m)| {
            let e = (y - p) * if m { 1.0 } else { 0.0 };
            e * e
        })
        .sum();
    Ok(sum / valid_frames as f64)
}

/// Gradient of [`masked_mse`] with respect to `pred`.
pub fn masked_mse_grad(truth: &FrameMask, pred: &[f64], valid_frames: usize) -> Result<Vec<f64>> {
    check(truth, pred, valid_frames)?;
    let t = valid_frames as f64;
    Ok(truth
        .values
        .iter()
        .zip(pred)
        .zip(&truth.validity)
        .map(|((&y, &p), &m)| if m { 2.0 * (p - y) / t } else { 0.0 })
        .collect())
}

fn check(truth: &FrameMask, pred: &[f64], valid_frames: usize) -> Result<()> {
    if valid_frames == 0 {
        return Err(Error::Size("masked MSE over zero frames".into()));
    }
    if pred.len() != truth.values.len() {
        return Err(Error::Size(format!(
            "prediction has {} slots, truth has {}",
            pred.len(),
            truth.values.len()
        )));
    }
    Ok(())
}
