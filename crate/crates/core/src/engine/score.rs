//! Score functions over raw parameter slices. Higher is better for every
//! model: TransE and RotatE return negated distances.
//!
//! Complex vectors are interleaved `[re0, im0, re1, im1, ...]`. RotatE
//! relations are phase angles, one per complex coordinate.

use super::{EngineError, ModelKind, TransENorm};

pub(crate) fn score_raw(kind: ModelKind, norm: TransENorm, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match kind {
        ModelKind::TransE => {
            let it = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
            match norm {
                TransENorm::L1 => -it.map(f64::abs).sum::<f64>(),
                TransENorm::L2 => -it.map(|x| x * x).sum::<f64>().sqrt(),
            }
        }
        ModelKind::DistMult => h.iter().zip(r).zip(t).map(|((h, r), t)| h * r * t).sum(),
        ModelKind::ComplEx => h
            .chunks_exact(2)
            .zip(r.chunks_exact(2))
            .zip(t.chunks_exact(2))
            .map(|((h, r), t)| {
                let (a, b, c, d, e, f) = (h[0], h[1], r[0], r[1], t[0], t[1]);
                (a * c - b * d) * e + (a * d + b * c) * f
            })
            .sum(),
        ModelKind::RotatE => -h
            .chunks_exact(2)
            .zip(r)
            .zip(t.chunks_exact(2))
            .map(|((h, theta), t)| {
                let (s, c) = theta.sin_cos();
                let du = h[0] * c - h[1] * s - t[0];
                let dv = h[0] * s + h[1] * c - t[1];
                du * du + dv * dv
            })
            .sum::<f64>(),
    }
}

/// Gradient buffers that `accumulate` adds `scale * d score / d param` into.
pub struct ScoreGrad<'a> {
    pub head: &'a mut [f64],
    pub relation: &'a mut [f64],
    pub tail: &'a mut [f64],
}

pub(crate) fn accumulate_grad(
    kind: ModelKind,
    norm: TransENorm,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    scale: f64,
    g: ScoreGrad<'_>,
) {
    match kind {
        ModelKind::TransE => {
            let l2 = match norm {
                TransENorm::L1 => None,
                TransENorm::L2 => {
                    let n = h
                        .iter()
                        .zip(r)
                        .zip(t)
                        .map(|((h, r), t)| (h + r - t).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    Some(n)
                }
            };
            for i in 0..h.len() {
                let x = h[i] + r[i] - t[i];
                let d = match l2 {
                    None => {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Some(n) if n > 0.0 => x / n,
                    Some(_) => 0.0,
                };
                // score = -dist
                g.head[i] -= scale * d;
                g.relation[i] -= scale * d;
                g.tail[i] += scale * d;
            }
        }
        ModelKind::DistMult => {
            for i in 0..h.len() {
                g.head[i] += scale * r[i] * t[i];
                g.relation[i] += scale * h[i] * t[i];
                g.tail[i] += scale * h[i] * r[i];
            }
        }
        ModelKind::ComplEx => {
            for k in 0..h.len() / 2 {
                let (i, j) = (2 * k, 2 * k + 1);
                let (a, b, c, d, e, f) = (h[i], h[j], r[i], r[j], t[i], t[j]);
                g.head[i] += scale * (c * e + d * f);
                g.head[j] += scale * (c * f - d * e);
                g.relation[i] += scale * (a * e + b * f);
                g.relation[j] += scale * (a * f - b * e);
                g.tail[i] += scale * (a * c - b * d);
                g.tail[j] += scale * (a * d + b * c);
            }
        }
        ModelKind::RotatE => {
            for (k, theta) in r.iter().enumerate() {
                let (i, j) = (2 * k, 2 * k + 1);
                let (s, c) = theta.sin_cos();
                let u = h[i] * c - h[j] * s;
                let v = h[i] * s + h[j] * c;
                let du = u - t[i];
                let dv = v - t[j];
                // score = -(du^2 + dv^2)
                g.head[i] += scale * -2.0 * (du * c + dv * s);
                g.head[j] += scale * -2.0 * (-du * s + dv * c);
                g.tail[i] += scale * 2.0 * du;
                g.tail[j] += scale * 2.0 * dv;
                g.relation[k] += scale * -2.0 * (-du * v + dv * u);
            }
        }
    }
}

/// Scores `(h, r, t)` given raw parameter rows, checking that the slice
/// lengths agree with `kind` at embedding dimension `h.len()`-derived `d`.
pub fn score_vectors(
    kind: ModelKind,
    norm: TransENorm,
    h: &[f64],
    r: &[f64],
    t: &[f64],
) -> Result<f64, EngineError> {
    let ent = h.len();
    if t.len() != ent {
        return Err(EngineError::DimensionMismatch {
            expected: ent,
            found: t.len(),
        });
    }
    if kind.entity_width(1) == 2 && !ent.is_multiple_of(2) {
        return Err(EngineError::DimensionMismatch {
            expected: ent + 1,
            found: ent,
        });
    }
    let dim = ent / kind.entity_width(1);
    let rel = kind.relation_width(dim);
    if r.len() != rel {
        return Err(EngineError::DimensionMismatch {
            expected: rel,
            found: r.len(),
        });
    }
    Ok(score_raw(kind, norm, h, r, t))
}
