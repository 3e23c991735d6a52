use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn log_softmax_rows<S: Scalar>(logits: &[S], classes: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        out.extend(row.iter().map(|&v| (v - max) - log_sum));
    }
    out
}

pub fn softmax_rows<S: Scalar>(logits: &[S], classes: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let sum = out[start..].iter().copied().sum::<S>();
        out[start..].iter_mut().for_each(|p| *p = *p / sum);
    }
    out
}

/// Mean cross-entropy of `[B, G]` logits against integer labels, with the
/// gradient w.r.t. the logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(S, Tensor<S>)> {
    let [batch, classes] = logits.shape() else {
        return Err(Error::Shape(format!("logits must be [B, G], got {:?}", logits.shape())));
    };
    let (batch, classes) = (*batch, *classes);
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {classes} classes")));
    }
    let logp = log_softmax_rows(logits.data(), classes);
    let bf = S::of_f64(batch as f64);
    let mut loss = S::zero();
    let mut grad = Vec::with_capacity(logp.len());
    for (row, &label) in logp.chunks_exact(classes).zip(labels) {
        loss -= row[label];
        for (g, &lp) in row.iter().enumerate() {
            let p = lp.exp();
            grad.push((if g == label { p - S::one() } else { p }) / bf);
        }
    }
    Ok((loss / bf, Tensor::from_vec(logits.shape(), grad)?))
}
