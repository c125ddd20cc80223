use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `(n, k)` logits.
pub fn softmax_rows<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    if logits.rank() != 2 {
        return Err(shape_err(format!("expected (n, k) logits, got {:?}", logits.shape())));
    }
    let k = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot) / n`.
pub fn softmax_cross_entropy<F: Scalar>(
    logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(F, Tensor<F>)> {
    let probs = softmax_rows(logits)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if k < 2 {
        return Err(shape_err(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != n {
        return Err(shape_err(format!("{} labels for batch of {n}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel { label, classes: k });
    }
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut loss = F::zero();
    let mut grad = probs.into_data();
    for (row, (&label, logit_row)) in
        grad.chunks_mut(k).zip(labels.iter().zip(logits.data().chunks(k)))
    {
        // log-sum-exp form keeps the loss finite for saturated logits.
        let max = logit_row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + logit_row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        loss += lse - logit_row[label];
        row[label] -= F::one();
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok((loss * inv_n, Tensor::from_vec(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = softmax_cross_entropy(&Tensor::<f64>::zeros(&[3, 7]), &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!((loss - 1.94591).abs() < 1e-5);
    }

    #[test]
    fn peaked_logits_give_small_loss() {
        let mut l = Tensor::<f32>::zeros(&[1, 7]);
        l.data_mut()[2] = 50.0;
        let (loss, _) = softmax_cross_entropy(&l, &[2]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        let l = Tensor::<f32>::zeros(&[1, 7]);
        assert!(matches!(
            softmax_cross_entropy(&l, &[7]),
            Err(Error::InvalidLabel { label: 7, classes: 7 })
        ));
    }
}
