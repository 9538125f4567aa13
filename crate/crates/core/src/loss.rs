//! Smooth-L1 (Huber) loss.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub(crate) fn smooth_l1_sum<F: Real>(pred: &[F], target: &[F], beta: F) -> F {
    let half = F::lit(0.5);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = (t - p).abs();
            if d < beta {
                half * d * d / beta
            } else {
                d - half * beta
            }
        })
        .sum()
}

/// Mean over elements of `0.5 d^2 / beta` when `|d| < beta`, else `|d| - beta / 2`,
/// with `d = target - pred`.
pub fn smooth_l1<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, beta: F) -> Result<F> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("smooth_l1", pred.shape(), target.shape()));
    }
    if !(beta > F::zero()) {
        return Err(Error::InvalidArgument(format!("smooth_l1 beta must be positive, got {beta}")));
    }
    Ok(smooth_l1_sum(pred.data(), target.data(), beta) / F::lit(pred.len() as f64))
}
