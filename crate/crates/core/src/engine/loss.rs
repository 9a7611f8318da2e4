use serde::{Deserialize, Serialize};

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `sum max(0, margin - s+ + s-)` over (positive, negative) pairs.
    Margin,
    /// `sum softplus(-s+) + sum softplus(s-)`.
    SoftPlus,
    /// `-sum log sigmoid(margin + s+) - sum log sigmoid(-s- - margin)` with
    /// uniform negative weights.
    Sigmoid,
}

impl LossKind {
    pub fn needs_margin(self) -> bool {
        matches!(self, LossKind::Margin | LossKind::Sigmoid)
    }
}

/// Loss value and its derivative with respect to every input score.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `neg` holds `n` negatives per positive, grouped by positive:
/// `neg[i * n .. (i + 1) * n]` belong to `pos[i]`.
pub fn compute_loss(
    kind: LossKind,
    pos: &[f64],
    neg: &[f64],
    margin: f64,
) -> Result<LossValue, EngineError> {
    if kind.needs_margin() && !(margin > 0.0) {
        return Err(EngineError::InvalidConfig(format!(
            "{kind:?} loss needs a positive margin, got {margin}"
        )));
    }
    if pos.is_empty() {
        if neg.is_empty() {
            return Ok(LossValue {
                value: 0.0,
                d_pos: vec![],
                d_neg: vec![],
            });
        }
        return Err(EngineError::Misaligned { pos: 0, neg: neg.len() });
    }
    if !neg.len().is_multiple_of(pos.len()) {
        return Err(EngineError::Misaligned {
            pos: pos.len(),
            neg: neg.len(),
        });
    }
    let n = neg.len() / pos.len();
    let mut d_pos = vec![0.0; pos.len()];
    let mut d_neg = vec![0.0; neg.len()];
    let mut value = 0.0;
    match kind {
        LossKind::Margin => {
            for (i, &sp) in pos.iter().enumerate() {
                for j in i * n..(i + 1) * n {
                    let v = margin - sp + neg[j];
                    if v > 0.0 {
                        value += v;
                        d_pos[i] -= 1.0;
                        d_neg[j] += 1.0;
                    }
                }
            }
        }
        LossKind::SoftPlus => {
            for (i, &sp) in pos.iter().enumerate() {
                value += softplus(-sp);
                d_pos[i] = -sigmoid(-sp);
            }
            for (j, &sn) in neg.iter().enumerate() {
                value += softplus(sn);
                d_neg[j] = sigmoid(sn);
            }
        }
        LossKind::Sigmoid => {
            for (i, &sp) in pos.iter().enumerate() {
                value += softplus(-(margin + sp));
                d_pos[i] = -sigmoid(-(margin + sp));
            }
            for (j, &sn) in neg.iter().enumerate() {
                value += softplus(sn + margin);
                d_neg[j] = sigmoid(sn + margin);
            }
        }
    }
    Ok(LossValue { value, d_pos, d_neg })
}
