use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::score::{accumulate_grad, ScoreGrad};
use super::{
    compute_loss, AdaGradState, CorruptionMode, EmbeddingTable, EngineError, LossKind, ModelKind,
    NegativeSampler, SparseRows, TransENorm,
};
use crate::kg::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub loss: LossKind,
    /// Ignored by the SoftPlus loss.
    #[serde(default)]
    pub margin: f64,
    pub epochs: usize,
    #[serde(default = "default_batches")]
    pub batches_per_epoch: usize,
    #[serde(default = "default_modes")]
    pub corruption_modes: Vec<CorruptionMode>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transe_norm: TransENorm,
    #[serde(default = "default_eps")]
    pub adagrad_eps: f64,
    /// Fan batch gradients out over threads. Results are deterministic in
    /// the sampled negatives but not bit-exact.
    #[serde(default)]
    pub parallel: bool,
}

fn default_batches() -> usize {
    100
}

fn default_modes() -> Vec<CorruptionMode> {
    vec![CorruptionMode::Head, CorruptionMode::Tail]
}

fn default_eps() -> f64 {
    AdaGradState::DEFAULT_EPS
}

impl TrainConfig {
    /// Per-model settings used for the FB15k-237 link prediction runs.
    pub fn preset(kind: ModelKind) -> Self {
        let (learning_rate, dim, loss, margin) = match kind {
            ModelKind::TransE => (1.0, 300, LossKind::Margin, 5.0),
            ModelKind::DistMult => (0.5, 300, LossKind::SoftPlus, 0.0),
            ModelKind::ComplEx => (0.5, 100, LossKind::SoftPlus, 0.0),
            ModelKind::RotatE => (2e-5, 300, LossKind::Sigmoid, 9.0),
        };
        TrainConfig {
            learning_rate,
            dim,
            negatives_per_positive: 25,
            loss,
            margin,
            epochs: 1000,
            batches_per_epoch: default_batches(),
            corruption_modes: default_modes(),
            seed: 0,
            transe_norm: TransENorm::L1,
            adagrad_eps: default_eps(),
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1".into());
        }
        if self.loss.needs_margin() && !(self.margin > 0.0) {
            return bad(format!("{:?} loss needs margin > 0", self.loss));
        }
        if self.batches_per_epoch == 0 {
            return bad("batches_per_epoch must be at least 1".into());
        }
        if self.corruption_modes.is_empty() {
            return bad("corruption_modes must not be empty".into());
        }
        if !(self.adagrad_eps >= 0.0) {
            return bad("adagrad_eps must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    /// Mean loss per positive triple, one entry per epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, l));
        }
        s
    }
}

/// Gradient of a batch loss with respect to entity and relation rows.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub entities: SparseRows,
    pub relations: SparseRows,
}

impl BatchGrad {
    fn new(table: &EmbeddingTable) -> Self {
        BatchGrad {
            entities: SparseRows::new(table.entity_width()),
            relations: SparseRows::new(table.relation_width()),
        }
    }

    fn merge(mut self, other: BatchGrad) -> Self {
        self.entities.merge(other.entities);
        self.relations.merge(other.relations);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.relations.is_finite()
    }
}

fn add_triple_grad(table: &EmbeddingTable, t: &Triple, scale: f64, grad: &mut BatchGrad) {
    if scale == 0.0 {
        return;
    }
    let (ew, rw) = (table.entity_width(), table.relation_width());
    let mut gh = vec![0.0; ew];
    let mut gr = vec![0.0; rw];
    let mut gt = vec![0.0; ew];
    accumulate_grad(
        table.kind(),
        table.norm(),
        table.entity(t.head),
        table.relation(t.relation),
        table.entity(t.tail),
        scale,
        ScoreGrad {
            head: &mut gh,
            relation: &mut gr,
            tail: &mut gt,
        },
    );
    for (a, b) in grad.entities.row_mut(t.head.index()).iter_mut().zip(&gh) {
        *a += b;
    }
    for (a, b) in grad.entities.row_mut(t.tail.index()).iter_mut().zip(&gt) {
        *a += b;
    }
    for (a, b) in grad.relations.row_mut(t.relation.index()).iter_mut().zip(&gr) {
        *a += b;
    }
}

fn chunk_loss_and_grad(
    table: &EmbeddingTable,
    pos: &[Triple],
    neg: &[Triple],
    loss: LossKind,
    margin: f64,
) -> Result<(f64, BatchGrad), EngineError> {
    let sp: Vec<f64> = pos.iter().map(|t| table.score_unchecked(t.head, t.relation, t.tail)).collect();
    let sn: Vec<f64> = neg.iter().map(|t| table.score_unchecked(t.head, t.relation, t.tail)).collect();
    let lv = compute_loss(loss, &sp, &sn, margin)?;
    let mut grad = BatchGrad::new(table);
    for (t, &d) in pos.iter().zip(&lv.d_pos) {
        add_triple_grad(table, t, d, &mut grad);
    }
    for (t, &d) in neg.iter().zip(&lv.d_neg) {
        add_triple_grad(table, t, d, &mut grad);
    }
    Ok((lv.value, grad))
}

/// Loss of `pos` against `neg` (grouped `n` per positive) and its exact
/// gradient. This is the function the optimiser descends.
pub fn batch_loss_and_grad(
    table: &EmbeddingTable,
    pos: &[Triple],
    neg: &[Triple],
    loss: LossKind,
    margin: f64,
) -> Result<(f64, BatchGrad), EngineError> {
    for t in pos.iter().chain(neg) {
        table.score(t.head, t.relation, t.tail)?;
    }
    chunk_loss_and_grad(table, pos, neg, loss, margin)
}

fn parallel_loss_and_grad(
    table: &EmbeddingTable,
    pos: &[Triple],
    neg: &[Triple],
    n: usize,
    loss: LossKind,
    margin: f64,
) -> Result<(f64, BatchGrad), EngineError> {
    const CHUNK: usize = 256;
    pos.par_chunks(CHUNK)
        .zip(neg.par_chunks(CHUNK * n))
        .map(|(p, q)| chunk_loss_and_grad(table, p, q, loss, margin))
        .try_reduce(
            || (0.0, BatchGrad::new(table)),
            |(la, ga), (lb, gb)| Ok((la + lb, ga.merge(gb))),
        )
}

// splitmix64 finaliser, used to derive independent stream seeds.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a fresh `model` table on `kg`'s training triples (KG train plus
/// augmentation).
pub fn train(kg: &KnowledgeGraph, model: ModelKind, cfg: &TrainConfig) -> Result<TrainOutcome, EngineError> {
    cfg.validate()?;
    let table = EmbeddingTable::random(
        model,
        cfg.dim,
        kg.num_entities(),
        kg.num_relations(),
        cfg.transe_norm,
        cfg.seed,
    );
    train_table(table, &kg.training_triples(), cfg)
}

/// Continues training `table` on `triples`.
pub fn train_table(
    mut table: EmbeddingTable,
    triples: &[Triple],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, EngineError> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            table,
            loss_trace: vec![],
        });
    }
    if triples.is_empty() {
        return Err(EngineError::EmptyGraph);
    }
    for t in triples {
        table.score(t.head, t.relation, t.tail)?;
    }
    let known: HashSet<Triple> = triples.iter().copied().collect();
    let sampler = NegativeSampler::new(table.num_entities(), table.num_relations(), &known);
    let mut ent_state = AdaGradState::new(table.entities.len(), table.entity_width(), cfg.adagrad_eps);
    let mut rel_state = AdaGradState::new(table.relations.len(), table.relation_width(), cfg.adagrad_eps);
    let n = cfg.negatives_per_positive;
    let batch_size = triples.len().div_ceil(cfg.batches_per_epoch);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64 + 1, 0));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(batch_size).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64 + 1, batch as u64 + 1));
            let pos: Vec<Triple> = idx.iter().map(|&i| triples[i]).collect();
            let mut neg = Vec::with_capacity(pos.len() * n);
            for &p in &pos {
                let mode = cfg.corruption_modes[rng.random_range(0..cfg.corruption_modes.len())];
                neg.extend(sampler.sample(p, mode, n, &mut rng)?);
            }
            let (loss, grad) = if cfg.parallel {
                parallel_loss_and_grad(&table, &pos, &neg, n, cfg.loss, cfg.margin)?
            } else {
                chunk_loss_and_grad(&table, &pos, &neg, cfg.loss, cfg.margin)?
            };
            if !grad.is_finite() || !loss.is_finite() {
                return Err(EngineError::NonFiniteAt { epoch, batch });
            }
            ent_state
                .step(&mut table.entities, &grad.entities, cfg.learning_rate)
                .map_err(|_| EngineError::NonFiniteAt { epoch, batch })?;
            rel_state
                .step(&mut table.relations, &grad.relations, cfg.learning_rate)
                .map_err(|_| EngineError::NonFiniteAt { epoch, batch })?;
            epoch_loss += loss;
        }
        let mean = epoch_loss / triples.len() as f64;
        log::debug!("epoch {}: mean loss {mean}", epoch + 1);
        loss_trace.push(mean);
    }
    if !table.is_finite() {
        return Err(EngineError::NonFiniteAt {
            epoch: cfg.epochs - 1,
            batch: cfg.batches_per_epoch - 1,
        });
    }
    Ok(TrainOutcome { table, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{RelationKind, RelationTable, Vocab};

    /// 10 entities in a chain with two alternating relations.
    fn chain_kg() -> KnowledgeGraph {
        let mut ents = Vocab::new();
        for i in 0..10 {
            ents.get_or_insert(&format!("e{i}"));
        }
        let mut rels = RelationTable::new();
        rels.get_or_insert(RelationKind::Kg, "next");
        rels.get_or_insert(RelationKind::Kg, "skip");
        let mut train = vec![];
        for i in 0..9 {
            train.push(Triple::new(i, 0, i + 1));
        }
        for i in 0..8 {
            train.push(Triple::new(i, 1, i + 2));
        }
        KnowledgeGraph::from_parts(ents, rels, train, vec![], vec![]).unwrap()
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            dim: 16,
            negatives_per_positive: 5,
            loss: LossKind::Margin,
            margin: 1.0,
            epochs,
            batches_per_epoch: 4,
            corruption_modes: default_modes(),
            seed: 11,
            transe_norm: TransENorm::L1,
            adagrad_eps: AdaGradState::DEFAULT_EPS,
            parallel: false,
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let kg = chain_kg();
        let out = train(&kg, ModelKind::TransE, &small_cfg(0)).unwrap();
        let init = EmbeddingTable::random(ModelKind::TransE, 16, 10, 2, TransENorm::L1, 11);
        assert_eq!(out.table, init);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn chain_loss_decreases() {
        let kg = chain_kg();
        let out = train(&kg, ModelKind::TransE, &small_cfg(200)).unwrap();
        assert_eq!(out.loss_trace.len(), 200);
        assert!(out.loss_trace.last().unwrap() < out.loss_trace.first().unwrap());
        assert!(out.table.is_finite());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let kg = chain_kg();
        let a = train(&kg, ModelKind::ComplEx, &small_cfg(5)).unwrap();
        let b = train(&kg, ModelKind::ComplEx, &small_cfg(5)).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(
            a.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn parallel_mode_matches_sequential_closely() {
        let kg = chain_kg();
        let mut cfg = small_cfg(3);
        let a = train(&kg, ModelKind::DistMult, &cfg).unwrap();
        cfg.parallel = true;
        let b = train(&kg, ModelKind::DistMult, &cfg).unwrap();
        for (x, y) in a.table.entity_data().iter().zip(b.table.entity_data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rotate_phases_stay_unit_modulus() {
        let kg = chain_kg();
        let mut cfg = small_cfg(10);
        cfg.loss = LossKind::Sigmoid;
        cfg.margin = 9.0;
        let out = train(&kg, ModelKind::RotatE, &cfg).unwrap();
        for r in 0..2 {
            for (re, im) in out.table.relation_complex(crate::kg::RelationId(r)).unwrap() {
                assert!(((re * re + im * im).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let kg = chain_kg();
        let mut cfg = small_cfg(1);
        cfg.negatives_per_positive = 0;
        assert!(train(&kg, ModelKind::TransE, &cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.margin = 0.0;
        assert!(train(&kg, ModelKind::TransE, &cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.loss = LossKind::SoftPlus;
        cfg.margin = 0.0;
        assert!(train(&kg, ModelKind::DistMult, &cfg).is_ok());
    }

    #[test]
    fn presets_follow_published_settings() {
        let p = TrainConfig::preset(ModelKind::TransE);
        assert_eq!(
            (p.learning_rate, p.dim, p.negatives_per_positive, p.loss, p.margin, p.epochs),
            (1.0, 300, 25, LossKind::Margin, 5.0, 1000)
        );
        let p = TrainConfig::preset(ModelKind::RotatE);
        assert_eq!((p.learning_rate, p.loss, p.margin), (2e-5, LossKind::Sigmoid, 9.0));
        assert_eq!(TrainConfig::preset(ModelKind::ComplEx).dim, 100);
        assert!(ModelKind::ALL
            .iter()
            .all(|&k| TrainConfig::preset(k).batches_per_epoch == 100));
    }

    #[test]
    fn loss_csv_format() {
        let out = TrainOutcome {
            table: EmbeddingTable::random(ModelKind::TransE, 2, 2, 1, TransENorm::L1, 0),
            loss_trace: vec![1.5, 0.25],
        };
        assert_eq!(out.loss_csv(), "epoch,mean_loss\n1,1.5\n2,0.25\n");
    }
}
