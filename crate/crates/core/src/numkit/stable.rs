use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Stable softmax over a slice: subtracts the maximum before exponentiating.
pub(crate) fn softmax_slice(logits: &[f32], out: &mut Vec<f32>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    out.clear();
    let mut sum = 0.0f64;
    for &z in logits {
        let e = (z as f64 - max).exp();
        sum += e;
        out.push(e as f32);
    }
    let inv = 1.0 / sum;
    for v in out.iter_mut() {
        *v = (*v as f64 * inv) as f32;
    }
}

/// Stable softmax kept in f64, for consumers that compare probabilities
/// against exact rationals like 1/C.
pub(crate) fn softmax_f64_slice(logits: &[f32], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    out.clear();
    let mut sum = 0.0f64;
    for &z in logits {
        let e = (z as f64 - max).exp();
        sum += e;
        out.push(e);
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

/// Stable log-sum-exp of a slice, accumulated in f64.
pub(crate) fn logsumexp_slice(logits: &[f32]) -> f64 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0f64;
    for &z in logits {
        sum += (z as f64 - max).exp();
    }
    max + sum.ln()
}

/// Softmax of a rank-1 tensor. Outputs are non-negative and sum to 1.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank(1, "softmax")?;
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("softmax"));
    }
    let mut out = Vec::with_capacity(logits.len());
    softmax_slice(logits.data(), &mut out);
    Tensor::new(vec![out.len()], out)
}

/// log(sum(exp(z_i))) of a rank-1 tensor.
pub fn logsumexp(logits: &Tensor) -> Result<f64> {
    logits.expect_rank(1, "logsumexp")?;
    if logits.is_empty() {
        return Err(Error::EmptyInput("logsumexp"));
    }
    Ok(logsumexp_slice(logits.data()))
}
