use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Mean softmax cross-entropy. Returns the loss and the row-wise softmax,
/// which the backward pass reuses.
pub fn softmax_cross_entropy<T: Float>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    let k = s.features();
    if labels.len() != s.n {
        return Err(Error::contract(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} outside [0, {k})")));
    }
    let mut probs = logits.clone();
    let mut total = T::zero();
    for (row, &label) in probs.data_mut().chunks_exact_mut(k).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let shifted_label = row[label] - max;
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        total += z.ln() - shifted_label;
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    Ok((total / T::of(s.n as f64), probs))
}

/// `(softmax - onehot) / n`, scaled by the upstream scalar gradient.
pub fn softmax_cross_entropy_backward<T: Float>(
    probs: &Tensor<T>,
    labels: &[usize],
    upstream: T,
) -> Tensor<T> {
    let k = probs.shape().features();
    let scale = upstream / T::of(labels.len() as f64);
    let mut dx = probs.clone();
    for (row, &label) in dx.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::full(Shape::new(3, 1, 1, 4), 0.7);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn dominant_margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 10.0, 100.0, 1000.0] {
            let logits =
                Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, margin, 0.0]).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
            assert!(loss <= prev && loss >= 0.0 && loss.is_finite());
            prev = loss;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 3));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Contract(_))
        ));
    }
}
