use alloc::format;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Row-wise softmax of `[B, C]` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.ndim() != 2 {
        return Err(shape_err(format!("softmax expects [B, C], got {:?}", logits.shape())));
    }
    let c = logits.shape()[1];
    let mut out = logits.clone();
    if c == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let probs = softmax(logits)?;
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(shape_err(format!("{} labels for {} rows", labels.len(), b)));
    }
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label: bad, classes: c });
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut loss = 0.0f64;
    let mut grad = probs;
    for ((row, lrow), &l) in grad.data_mut().chunks_exact_mut(c).zip(logits.data().chunks_exact(c)).zip(labels) {
        let max = lrow.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let lse = max + libm::log(lrow.iter().map(|v| libm::exp(v.as_f64() - max)).sum::<f64>());
        loss += lse - lrow[l].as_f64();
        row[l] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_b);
    }
    Ok((T::of(loss / b as f64), grad))
}
