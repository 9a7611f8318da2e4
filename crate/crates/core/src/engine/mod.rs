//! Trainable KGE models: score functions, losses, negative sampling, AdaGrad
//! and the training loop.

mod adagrad;
mod loss;
mod sampling;
mod score;
mod table;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dump::DumpError;

pub use adagrad::{adagrad_update, AdaGradState, SparseRows};
pub use loss::{compute_loss, LossKind, LossValue};
pub use sampling::{CorruptionMode, NegativeSampler, MAX_COLLISION_RETRIES};
pub use score::{score_vectors, ScoreGrad};
pub use table::EmbeddingTable;
pub use train::{batch_loss_and_grad, train, train_table, BatchGrad, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what} id {id} out of range ({len} known)")]
    UnknownId {
        what: &'static str,
        id: u32,
        len: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot corrupt the {0:?} slot: vocabulary has fewer than 2 entries")]
    VocabularyTooSmall(CorruptionMode),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite gradient at epoch {epoch}, batch {batch}")]
    NonFiniteAt { epoch: usize, batch: usize },
    #[error("training set is empty")]
    EmptyGraph,
    #[error("positives and negatives are misaligned: {pos} positives, {neg} negatives")]
    Misaligned { pos: usize, neg: usize },
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("malformed embedding dump: {0}")]
    BadDump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    DistMult,
    ComplEx,
    RotatE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::RotatE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
            ModelKind::RotatE => "rotate",
        }
    }

    /// Floats stored per entity row for embedding dimension `dim`.
    pub fn entity_width(self, dim: usize) -> usize {
        match self {
            ModelKind::TransE | ModelKind::DistMult => dim,
            ModelKind::ComplEx | ModelKind::RotatE => 2 * dim,
        }
    }

    /// Floats stored per relation row. RotatE stores one phase per
    /// coordinate.
    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ModelKind::TransE | ModelKind::DistMult | ModelKind::RotatE => dim,
            ModelKind::ComplEx => 2 * dim,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransENorm {
    #[default]
    L1,
    L2,
}
