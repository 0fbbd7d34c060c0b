//! Softmax, negative log likelihood, and the class decoder.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max-subtraction).
///
/// The normalizer is summed in value order, so the result is exactly
/// equivariant under permutation of the logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let mut sorted = exps.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let sum: f64 = sorted.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// `−log(probs[label])` with the probability floored at [`PROB_FLOOR`].
pub fn nll_loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {} out of range for {} classes",
            label,
            probs.len()
        )));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Decode a hidden vector to class probabilities: `softmax(W h + b)`.
pub fn decode(weight: &Matrix, bias: &[f64], hidden: &[f64]) -> Vec<f64> {
    let mut logits = weight.mul_vec(hidden);
    for (l, b) in logits.iter_mut().zip(bias) {
        *l += b;
    }
    softmax(&logits)
}

/// Gradient of `weight_factor * nll(softmax(logits), label)` w.r.t. logits.
pub fn nll_softmax_grad(probs: &[f64], label: usize, weight_factor: f64) -> Vec<f64> {
    let mut g: Vec<f64> = probs.iter().map(|p| p * weight_factor).collect();
    g[label] -= weight_factor;
    g
}
