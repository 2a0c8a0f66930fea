/// Guard added inside the logarithms of the cross-entropy.
pub const BCE_EPSILON: f64 = 2e-7;

/// Per-sample binary cross-entropy term.
#[inline]
pub(crate) fn bce_term(y: f64, p: f64) -> f64 {
    y * (1.0 / (p + BCE_EPSILON)).ln() + (1.0 - y) * (1.0 / (1.0 - p + BCE_EPSILON)).ln()
}

/// d(term)/dp.
#[inline]
pub(crate) fn bce_term_grad(y: f64, p: f64) -> f64 {
    -y / (p + BCE_EPSILON) + (1.0 - y) / (1.0 - p + BCE_EPSILON)
}

/// Predicted class under the "probability >= 0.5 means class 1" rule.
#[inline]
pub fn predicted_class(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// Mean binary cross-entropy and accuracy of probabilities `y_hat` against labels `y`.
pub fn bce_loss(y: &[f64], y_hat: &[f64]) -> (f64, f64) {
    assert_eq!(y.len(), y_hat.len(), "one prediction per label");
    if y.is_empty() {
        return (0.0, 0.0);
    }
    let n = y.len() as f64;
    let loss = y.iter().zip(y_hat).map(|(&t, &p)| bce_term(t, p)).sum::<f64>() / n;
    let correct = y
        .iter()
        .zip(y_hat)
        .filter(|(&t, &p)| f64::from(predicted_class(p)) == t)
        .count();
    (loss, correct as f64 / n)
}
