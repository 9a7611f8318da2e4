use std::collections::HashMap;

use super::EngineError;

/// Row-sparse gradient for a row-major parameter matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    width: usize,
    rows: HashMap<usize, Vec<f64>>,
}

impl SparseRows {
    pub fn new(width: usize) -> Self {
        SparseRows {
            width,
            rows: HashMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let w = self.width;
        self.rows.entry(row).or_insert_with(|| vec![0.0; w])
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        self.rows.get(&row).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Touched rows in ascending order.
    pub fn row_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.rows.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn merge(&mut self, other: SparseRows) {
        for (row, g) in other.rows {
            for (a, b) in self.row_mut(row).iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|v| v.is_finite())
    }
}

/// Dense AdaGrad update of one parameter slice:
/// `acc += g^2; p -= lr * g / (sqrt(acc) + eps)`.
pub fn adagrad_update(param: &mut [f64], grad: &[f64], acc: &mut [f64], lr: f64, eps: f64) {
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a += g * g;
        if g != 0.0 {
            *p -= lr * g / (a.sqrt() + eps);
        }
    }
}

/// Squared-gradient accumulator with the same shape as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    accum: Vec<f64>,
    width: usize,
    eps: f64,
}

impl AdaGradState {
    pub const DEFAULT_EPS: f64 = 1e-10;

    pub fn new(len: usize, width: usize, eps: f64) -> Self {
        AdaGradState {
            accum: vec![0.0; len],
            width,
            eps,
        }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accum
    }

    /// Updates only the rows present in `grads`. Nothing is modified when
    /// any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &SparseRows, lr: f64) -> Result<(), EngineError> {
        if params.len() != self.accum.len() {
            return Err(EngineError::DimensionMismatch {
                expected: self.accum.len(),
                found: params.len(),
            });
        }
        if grads.width() != self.width {
            return Err(EngineError::DimensionMismatch {
                expected: self.width,
                found: grads.width(),
            });
        }
        if !(lr > 0.0) {
            return Err(EngineError::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        if !grads.is_finite() {
            return Err(EngineError::NonFiniteGradient);
        }
        let w = self.width;
        for (&row, g) in &grads.rows {
            let range = row * w..(row + 1) * w;
            adagrad_update(&mut params[range.clone()], g, &mut self.accum[range], lr, self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_null_step() {
        let mut p = vec![0.3, -0.2];
        let mut st = AdaGradState::new(2, 2, AdaGradState::DEFAULT_EPS);
        let mut g = SparseRows::new(2);
        g.row_mut(0);
        st.step(&mut p, &g, 0.5).unwrap();
        assert_eq!(p, vec![0.3, -0.2]);
        assert_eq!(st.accumulator(), &[0.0, 0.0]);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut p = [1.0];
        let mut acc = [0.0];
        adagrad_update(&mut p, &[2.0], &mut acc, 1.0, 0.0);
        assert_eq!(acc, [4.0]);
        assert_eq!(p, [0.0]);
    }

    #[test]
    fn second_identical_step_is_smaller() {
        let mut p = [1.0];
        let mut acc = [0.0];
        adagrad_update(&mut p, &[2.0], &mut acc, 1.0, 0.0);
        let first = 1.0 - p[0];
        let before = p[0];
        adagrad_update(&mut p, &[2.0], &mut acc, 1.0, 0.0);
        let second = before - p[0];
        assert_eq!(acc, [8.0]);
        assert!(second < first);
        assert!((second - 2.0 / 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = vec![1.0, 1.0, 1.0, 1.0];
        let mut st = AdaGradState::new(4, 2, 0.0);
        let mut g = SparseRows::new(2);
        g.row_mut(0)[0] = 1.0;
        g.row_mut(1)[1] = f64::NAN;
        assert!(matches!(st.step(&mut p, &g, 1.0), Err(EngineError::NonFiniteGradient)));
        assert_eq!(p, vec![1.0; 4]);
        assert_eq!(st.accumulator(), &[0.0; 4]);
    }

    #[test]
    fn only_touched_rows_change() {
        let mut p = vec![1.0; 6];
        let mut st = AdaGradState::new(6, 2, 0.0);
        let mut g = SparseRows::new(2);
        g.row_mut(1).copy_from_slice(&[1.0, -1.0]);
        st.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(&p[0..2], &[1.0, 1.0]);
        assert_eq!(&p[4..6], &[1.0, 1.0]);
        assert!((p[2] - 0.9).abs() < 1e-12 && (p[3] - 1.1).abs() < 1e-12);
    }
}
