//! Softmax cross-entropy over 10-way (or any width) logits.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(logits[0], |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = T::zero();
    for &e in &exps {
        sum += e;
    }
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss and logit gradient `softmax − onehot(label)` for one example.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if logits.is_empty() {
        return Err(Error::EmptyInput);
    }
    if label >= logits.len() {
        return Err(Error::Config(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(logits[0], |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    for &v in logits {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Mean loss over a `N×K` batch; the gradient is scaled by `1/N`.
pub fn softmax_xent_batch<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = match *logits.shape() {
        [n, k] => (n, k),
        _ => {
            return Err(Error::InvalidShape(format!(
                "logits must be N×K, got {:?}",
                logits.shape()
            )))
        }
    };
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let (loss, g) = softmax_xent(row, label as usize)?;
        total += loss.to_f64();
        grad.extend(g.into_iter().map(|v| v * inv_n));
    }
    Ok((total / n as f64, Tensor::from_vec(&[n, k], grad)?))
}
