use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Softmax cross-entropy for one logit vector.
///
/// Returns `-ln softmax(logits)[label]` and `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &[f32], label: usize) -> Result<(f32, Vec<f32>)> {
    let mut grad = vec![0.0; logits.len()];
    let loss = cross_entropy_into(logits, label, 1.0, &mut grad)?;
    Ok((loss as f32, grad))
}

/// Mean cross-entropy over a `[N, C]` batch. The gradient is already divided
/// by `N`.
pub fn cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::input(format!(
            "cross-entropy expects [N, C] logits, got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != batch {
        return Err(Error::input(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let scale = 1.0 / batch as f64;
    let mut grad = vec![0.0f32; batch * classes];
    let mut total = 0.0f64;
    for ((row, g), &label) in logits
        .data()
        .chunks(classes)
        .zip(grad.chunks_mut(classes))
        .zip(labels)
    {
        total += cross_entropy_into(row, label, scale, g)?;
    }
    Ok((total * scale, Tensor::new(vec![batch, classes], grad)?))
}

fn cross_entropy_into(logits: &[f32], label: usize, scale: f64, grad: &mut [f32]) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits.iter().map(|&z| (z as f64 - max).exp()).sum();
    let log_sum = sum.ln();
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = ((z as f64 - max).exp() / sum * scale) as f32;
    }
    grad[label] -= scale as f32;
    Ok(log_sum - (logits[label] as f64 - max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(grad, vec![-0.5, 0.5]);
    }

    #[test]
    fn saturated_correct_class() {
        let (loss, _) = cross_entropy(&[10.0, -10.0], 0).unwrap();
        assert!((0.0..1e-8).contains(&loss));
    }

    #[test]
    fn three_class_value() {
        // ln(e^1 + e^2 + e^3) - 3, evaluated independently in f64
        let expected = ((1f64).exp() + (2f64).exp() + (3f64).exp()).ln() - 3.0;
        assert!((expected - 0.407_605_96).abs() < 1e-7);
        let (loss, grad) = cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((loss as f64 - expected).abs() < 1e-6);
        let s: f32 = grad.iter().sum();
        assert!(s.abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        assert!(cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn batch_gradient_is_mean() {
        let logits = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_batch(&logits, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(grad.data(), &[-0.25, 0.25, 0.25, -0.25]);
    }
}
