use super::BorrowError;

/// `[h, t, h - t, h * t]` (elementwise difference and product).
pub fn pair_features(h: &[f64], t: &[f64]) -> Result<Vec<f64>, BorrowError> {
    if h.len() != t.len() {
        return Err(BorrowError::DimensionMismatch {
            expected: h.len(),
            found: t.len(),
        });
    }
    let mut out = Vec::with_capacity(4 * h.len());
    out.extend_from_slice(h);
    out.extend_from_slice(t);
    out.extend(h.iter().zip(t).map(|(a, b)| a - b));
    out.extend(h.iter().zip(t).map(|(a, b)| a * b));
    Ok(out)
}
