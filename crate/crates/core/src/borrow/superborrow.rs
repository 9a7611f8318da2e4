use std::cmp::Ordering;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{Activation, EncoderGrad, PairEncoder};
use super::trainset::{BorrowTrainSet, PairExample};
use super::{BorrowError, EntityVectors};
use crate::kg::{EntityId, LdpId, TextualTriple};
use crate::ldp::LdpVectorStore;

/// Work inside a batch is split into this many fixed chunks so that the
/// summation order does not depend on the thread count.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub margin: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_negatives: usize,
    pub holdout_fraction: f64,
    /// Select hidden layers, l2, learning rate and activation on the
    /// held-out pairs instead of using the values above.
    pub grid_search: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: 768,
            hidden_layers: 2,
            activation: Activation::Tanh,
            margin: 1.0,
            l2: 0.0,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 50,
            batch_size: 128,
            max_negatives: 100,
            holdout_fraction: 0.1,
            grid_search: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hidden_layers: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub activation: Activation,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), BorrowError> {
        let bad = |m: &str| Err(BorrowError::InvalidConfig(m.to_owned()));
        if self.hidden_dim == 0 || self.hidden_layers == 0 {
            return bad("hidden_dim and hidden_layers must be positive");
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be >= 0");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be >= 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 || self.max_negatives == 0 {
            return bad("batch_size and max_negatives must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        if self.grid_search && self.holdout_fraction == 0.0 {
            return bad("grid search needs held-out pairs");
        }
        Ok(())
    }

    /// 2 x 3 x 2 x 3 combinations in a fixed order.
    pub fn grid() -> Vec<GridPoint> {
        let mut out = vec![];
        for hidden_layers in [2, 3] {
            for l2 in [0.0, 0.01, 0.001] {
                for learning_rate in [0.01, 0.1] {
                    for activation in Activation::ALL {
                        out.push(GridPoint {
                            hidden_layers,
                            l2,
                            learning_rate,
                            activation,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn with_point(&self, p: GridPoint) -> Self {
        EncoderConfig {
            hidden_layers: p.hidden_layers,
            l2: p.l2,
            learning_rate: p.learning_rate,
            activation: p.activation,
            grid_search: false,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub encoder: PairEncoder,
    /// The configuration that produced `encoder`.
    pub config: EncoderConfig,
    pub validation_mrr: Option<f64>,
    /// Mean hinge term per epoch.
    pub loss_trace: Vec<f64>,
    /// Validation MRR of every grid point, when searched.
    pub grid: Vec<(GridPoint, f64)>,
}

fn dot(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * *y as f64).sum()
}

/// `sum_j max(0, margin - e . (l - l'_j))` and its gradient with respect to
/// the encoder output `e`.
pub fn hinge_loss_and_grad(e: &[f64], positive: &[f32], negatives: &[&[f32]], margin: f64) -> (f64, Vec<f64>) {
    let sp = dot(e, positive);
    let mut loss = 0.0;
    let mut grad = vec![0.0; e.len()];
    for neg in negatives {
        let v = margin - sp + dot(e, neg);
        if v > 0.0 {
            loss += v;
            for ((g, p), n) in grad.iter_mut().zip(positive).zip(*neg) {
                *g -= *p as f64 - *n as f64;
            }
        }
    }
    (loss, grad)
}

struct Sample {
    example: usize,
    positive: LdpId,
    negatives: Vec<LdpId>,
}

fn draw_negatives(ex: &PairExample, max: usize, rng: &mut ChaCha8Rng) -> Vec<LdpId> {
    let n = max.min(ex.negatives.len());
    let mut picked: Vec<usize> = index::sample(rng, ex.negatives.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ex.negatives[i]).collect()
}

fn chunk_grad(
    enc: &PairEncoder,
    samples: &[Sample],
    features: &[Vec<f64>],
    ldps: &LdpVectorStore,
    scale: f64,
) -> (f64, EncoderGrad) {
    let mut grad = EncoderGrad::zeros(enc);
    let mut loss = 0.0;
    for s in samples {
        let ex = s.example;
        let acts = enc.trace(&features[ex]);
        let e = &acts[acts.len() - 1];
        let negs: Vec<&[f32]> = s.negatives.iter().map(|l| ldps.vector(*l)).collect();
        let (l, mut d) = hinge_loss_and_grad(e, ldps.vector(s.positive), &negs, enc.margin());
        loss += l;
        if l > 0.0 {
            d.iter_mut().for_each(|v| *v *= scale);
            enc.backward(&acts, &d, &mut grad);
        }
    }
    (loss, grad)
}

/// Loss (mean over hinge terms) and gradient of one batch. Exposed for
/// gradient checks.
pub fn batch_hinge(
    enc: &PairEncoder,
    batch: &[(Vec<f64>, LdpId, Vec<LdpId>)],
    ldps: &LdpVectorStore,
) -> (f64, EncoderGrad) {
    let terms: usize = batch.iter().map(|b| b.2.len()).sum();
    let scale = 1.0 / terms.max(1) as f64;
    let mut grad = EncoderGrad::zeros(enc);
    let mut loss = 0.0;
    for (x, pos, negs) in batch {
        let acts = enc.trace(x);
        let e = &acts[acts.len() - 1];
        let nv: Vec<&[f32]> = negs.iter().map(|l| ldps.vector(*l)).collect();
        let (l, mut d) = hinge_loss_and_grad(e, ldps.vector(*pos), &nv, enc.margin());
        loss += l;
        d.iter_mut().for_each(|v| *v *= scale);
        enc.backward(&acts, &d, &mut grad);
    }
    (loss * scale, grad)
}

fn check_inputs(set: &BorrowTrainSet, entities: &EntityVectors, ldps: &LdpVectorStore) -> Result<(), BorrowError> {
    if set.is_empty() {
        return Err(BorrowError::EmptyTrainSet);
    }
    if ldps.is_empty() {
        return Err(BorrowError::EmptyStore);
    }
    for ex in &set.examples {
        entities.get(ex.head)?;
        entities.get(ex.tail)?;
        if let Some(l) = ex.positives.iter().chain(&ex.negatives).find(|l| l.index() >= ldps.len()) {
            return Err(BorrowError::DimensionMismatch {
                expected: ldps.len(),
                found: l.index() + 1,
            });
        }
    }
    Ok(())
}

/// Mean reciprocal rank of each positive LDP among itself and its sampled
/// negatives; ties count in the positive's favour.
pub fn validation_mrr(
    enc: &PairEncoder,
    entities: &EntityVectors,
    ldps: &LdpVectorStore,
    queries: &[(EntityId, EntityId, LdpId, Vec<LdpId>)],
) -> Result<f64, BorrowError> {
    if queries.is_empty() {
        return Err(BorrowError::EmptyTrainSet);
    }
    let rr: Vec<f64> = queries
        .par_iter()
        .map(|(h, t, pos, negs)| {
            let e = enc.forward(&entities.features(*h, *t)?)?;
            let sp = dot(&e, ldps.vector(*pos));
            let higher = negs.iter().filter(|l| dot(&e, ldps.vector(**l)) > sp).count();
            Ok(1.0 / (1 + higher) as f64)
        })
        .collect::<Result<_, BorrowError>>()?;
    Ok(rr.iter().sum::<f64>() / rr.len() as f64)
}

fn mix(seed: u64, a: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fit(
    cfg: &EncoderConfig,
    train: &[PairExample],
    features: &[Vec<f64>],
    ldps: &LdpVectorStore,
) -> Result<(PairEncoder, Vec<f64>), BorrowError> {
    let mut enc = PairEncoder::new(
        features[0].len(),
        cfg.hidden_dim,
        cfg.hidden_layers,
        ldps.dim(),
        cfg.activation,
        cfg.margin,
        cfg.seed,
    )?;
    let mut velocity = EncoderGrad::zeros(&enc);
    let mut items: Vec<(usize, LdpId)> = train
        .iter()
        .enumerate()
        .flat_map(|(i, ex)| ex.positives.iter().map(move |l| (i, *l)))
        .collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64 + 1));
        items.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_terms) = (0.0, 0usize);
        for (batch, chunk) in items.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&(example, positive)| Sample {
                    example,
                    positive,
                    negatives: draw_negatives(&train[example], cfg.max_negatives, &mut rng),
                })
                .collect();
            let terms: usize = samples.iter().map(|s| s.negatives.len()).sum();
            let scale = 1.0 / terms.max(1) as f64;
            let per = samples.len().div_ceil(GRAD_CHUNKS).max(1);
            let parts: Vec<(f64, EncoderGrad)> = samples
                .par_chunks(per)
                .map(|s| chunk_grad(&enc, s, features, ldps, scale))
                .collect();
            let mut grad = EncoderGrad::zeros(&enc);
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                grad.add(g);
            }
            if !loss.is_finite() || !grad.is_finite() {
                return Err(BorrowError::NonFinite { epoch, batch });
            }
            enc.momentum_step(&grad, &mut velocity, cfg.learning_rate, cfg.momentum, cfg.l2);
            epoch_loss += loss;
            epoch_terms += terms;
        }
        let mean = epoch_loss / epoch_terms.max(1) as f64;
        log::debug!("encoder epoch {}: mean hinge {mean}", epoch + 1);
        trace.push(mean);
    }
    Ok((enc, trace))
}

/// Fits the pair encoder with a margin ranking loss between each positive
/// LDP and up to `max_negatives` LDPs from its pool, resampled every epoch.
/// A fraction of pairs is held out to report (and, with `grid_search`, to
/// select by) validation MRR.
pub fn train_superborrow(
    set: &BorrowTrainSet,
    entities: &EntityVectors,
    ldps: &LdpVectorStore,
    cfg: &EncoderConfig,
) -> Result<TrainedEncoder, BorrowError> {
    cfg.validate()?;
    check_inputs(set, entities, ldps)?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0));
    order.shuffle(&mut split_rng);
    let mut n_hold = (set.len() as f64 * cfg.holdout_fraction).floor() as usize;
    if cfg.holdout_fraction > 0.0 && n_hold == 0 && set.len() >= 2 {
        n_hold = 1;
    }
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let train: Vec<PairExample> = train_idx.iter().map(|&i| set.examples[i].clone()).collect();
    let features: Vec<Vec<f64>> = train
        .iter()
        .map(|ex| entities.features(ex.head, ex.tail))
        .collect::<Result<_, _>>()?;

    let mut val_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, u64::MAX));
    let mut hold_sorted = hold_idx.to_vec();
    hold_sorted.sort_unstable();
    let queries: Vec<(EntityId, EntityId, LdpId, Vec<LdpId>)> = hold_sorted
        .iter()
        .flat_map(|&i| {
            let ex = &set.examples[i];
            ex.positives.iter().map(move |l| (ex, *l))
        })
        .map(|(ex, l)| (ex.head, ex.tail, l, draw_negatives(ex, cfg.max_negatives, &mut val_rng)))
        .collect();
    log::info!(
        "pair encoder: {} training pairs, {} held out",
        train.len(),
        hold_sorted.len()
    );

    let points: Vec<EncoderConfig> = if cfg.grid_search {
        EncoderConfig::grid().into_iter().map(|p| cfg.with_point(p)).collect()
    } else {
        vec![cfg.clone()]
    };
    let mut best: Option<TrainedEncoder> = None;
    let mut grid = vec![];
    for point in points {
        let (encoder, loss_trace) = fit(&point, &train, &features, ldps)?;
        let validation_mrr = if queries.is_empty() {
            None
        } else {
            Some(validation_mrr(&encoder, entities, ldps, &queries)?)
        };
        if cfg.grid_search {
            let mrr = validation_mrr.unwrap_or(0.0);
            log::info!(
                "grid point layers={} l2={} lr={} act={:?}: validation MRR {mrr:.4}",
                point.hidden_layers,
                point.l2,
                point.learning_rate,
                point.activation
            );
            grid.push((
                GridPoint {
                    hidden_layers: point.hidden_layers,
                    l2: point.l2,
                    learning_rate: point.learning_rate,
                    activation: point.activation,
                },
                mrr,
            ));
        }
        let better = match &best {
            None => true,
            Some(b) => validation_mrr.unwrap_or(0.0) > b.validation_mrr.unwrap_or(0.0),
        };
        if better {
            best = Some(TrainedEncoder {
                encoder,
                config: point,
                validation_mrr,
                loss_trace,
                grid: vec![],
            });
        }
    }
    let mut best = best.ok_or(BorrowError::EmptyTrainSet)?;
    best.grid = grid;
    Ok(best)
}

fn ranked(e: &[f64], ldps: &LdpVectorStore) -> Vec<(LdpId, f64)> {
    let mut scores: Vec<(LdpId, f64)> = (0..ldps.len())
        .map(|i| (LdpId(i as u32), dot(e, ldps.vector(LdpId(i as u32)))))
        .collect();
    scores.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    scores
}

/// Every LDP ranked by inner product with the encoded pair, best first;
/// equal scores keep ascending id order.
pub fn score_ldps(
    enc: &PairEncoder,
    entities: &EntityVectors,
    pair: (EntityId, EntityId),
    ldps: &LdpVectorStore,
) -> Result<Vec<(LdpId, f64)>, BorrowError> {
    if ldps.is_empty() {
        return Err(BorrowError::EmptyStore);
    }
    if enc.output_dim() != ldps.dim() {
        return Err(BorrowError::DimensionMismatch {
            expected: ldps.dim(),
            found: enc.output_dim(),
        });
    }
    let e = enc.forward(&entities.features(pair.0, pair.1)?)?;
    Ok(ranked(&e, ldps))
}

/// The `k` best LDPs for each pair as textual triples, grouped by pair in
/// input order.
pub fn borrow_topk(
    enc: &PairEncoder,
    entities: &EntityVectors,
    pairs: &[(EntityId, EntityId)],
    k: usize,
    ldps: &LdpVectorStore,
) -> Result<Vec<TextualTriple>, BorrowError> {
    if k == 0 {
        return Err(BorrowError::InvalidConfig("k must be at least 1".into()));
    }
    let per_pair: Vec<Vec<TextualTriple>> = pairs
        .par_iter()
        .map(|&(h, t)| {
            let ranking = score_ldps(enc, entities, (h, t), ldps)?;
            Ok(ranking
                .into_iter()
                .take(k)
                .map(|(ldp, _)| TextualTriple { head: h, ldp, tail: t })
                .collect())
        })
        .collect::<Result<_, BorrowError>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::Provenance;

    fn store(vectors: &[[f32; 2]]) -> LdpVectorStore {
        LdpVectorStore::from_vectors(2, vectors.iter().flatten().copied().collect(), Provenance::ExternalExport).unwrap()
    }

    #[test]
    fn hinge_is_zero_when_margin_met() {
        let (l, g) = hinge_loss_and_grad(&[1.0, 0.0], &[3.0, 0.0], &[&[1.0, 0.0]], 1.0);
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let (l, g) = hinge_loss_and_grad(&[1.0, 0.0], &[1.5, 0.0], &[&[1.0, 0.0]], 1.0);
        assert!((l - 0.5).abs() < 1e-12);
        assert_eq!(g, vec![-0.5, 0.0]);
    }

    #[test]
    fn ranking_orders_by_inner_product_then_id() {
        let s = store(&[[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]);
        let r = ranked(&[2.0, 1.0], &s);
        let ids: Vec<u32> = r.iter().map(|x| x.0 .0).collect();
        assert_eq!(ids, vec![1, 2, 0]);
        let scaled = ranked(&[20.0, 10.0], &s);
        assert_eq!(scaled.iter().map(|x| x.0).collect::<Vec<_>>(), r.iter().map(|x| x.0).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_store_ranks_first() {
        let s = store(&[[-5.0, -5.0]]);
        let enc = PairEncoder::new(8, 4, 2, 2, Activation::Tanh, 1.0, 0).unwrap();
        let ents = EntityVectors::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = score_ldps(&enc, &ents, (EntityId(0), EntityId(1)), &s).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, LdpId(0));
        let top = borrow_topk(&enc, &ents, &[(EntityId(0), EntityId(1))], 3, &s).unwrap();
        assert_eq!(top.len(), 1);
    }

    #[test]
    fn grid_has_36_points() {
        let g = EncoderConfig::grid();
        assert_eq!(g.len(), 36);
        assert_eq!(g[0].hidden_layers, 2);
        assert_eq!(g[35].activation, Activation::Sigmoid);
    }

    #[test]
    fn saturated_hinge_leaves_encoder_unchanged() {
        // encoder output is pushed far along the positive direction
        let s = store(&[[1.0, 0.0], [-1.0, 0.0]]);
        let ents = EntityVectors::new(1, vec![1.0, 1.0]).unwrap();
        let mut enc = PairEncoder::new(4, 3, 2, 2, Activation::Relu, 1.0, 0).unwrap();
        let n = enc.param_count();
        let mut p = vec![0.0; n];
        // last layer bias = (10, 0)
        p[n - 2] = 10.0;
        enc.set_params(&p).unwrap();
        let batch = vec![(ents.features(EntityId(0), EntityId(1)).unwrap(), LdpId(0), vec![LdpId(1)])];
        let (loss, grad) = batch_hinge(&enc, &batch, &s);
        assert_eq!(loss, 0.0);
        assert!(grad.flatten().iter().all(|g| *g == 0.0));
        let before = enc.clone();
        let mut vel = EncoderGrad::zeros(&enc);
        enc.momentum_step(&grad, &mut vel, 0.1, 0.9, 0.0);
        assert_eq!(enc, before);
    }

    #[test]
    fn empty_train_set_is_error() {
        let s = store(&[[1.0, 0.0]]);
        let ents = EntityVectors::new(1, vec![1.0]).unwrap();
        let err = train_superborrow(&BorrowTrainSet::default(), &ents, &s, &EncoderConfig::default());
        assert!(matches!(err, Err(BorrowError::EmptyTrainSet)));
    }
}
