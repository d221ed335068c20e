use crate::error::{Error, Result};

/// Softmax with max-subtraction, evaluated in f64.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    softmax_f64(logits).into_iter().map(|p| p as f32).collect()
}

fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits (`softmax - one_hot`).
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> Result<(f64, Vec<f32>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let log_sum: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    let loss = -(logits[label] as f64 - max - log_sum);
    let mut grad: Vec<f32> = softmax_f64(logits).into_iter().map(|p| p as f32).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
