//! Borrowing LDPs for entity pairs that never co-occur in text: the learned
//! pair encoder plus the nearest-neighbour, co-occurrence and link-all
//! baselines.

mod baselines;
mod encoder;
mod features;
mod superborrow;
mod trainset;

pub use baselines::{cooccurrence_augment, linkall_augment, neighb_borrow, pair_similarity, NeighbIndex};
pub use encoder::{Activation, EncoderGrad, Layer, PairEncoder};
pub use features::pair_features;
pub use superborrow::{
    batch_hinge, borrow_topk, hinge_loss_and_grad, score_ldps, train_superborrow, validation_mrr, EncoderConfig,
    GridPoint, TrainedEncoder,
};
pub use trainset::{build_negative_pool, BorrowTrainSet, PairExample, TextualIndex};

use serde::{Deserialize, Serialize};

use crate::dump::DumpError;
use crate::engine::EmbeddingTable;
use crate::kg::EntityId;

#[derive(Debug, thiserror::Error)]
pub enum BorrowError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector for entity {0}")]
    ZeroNorm(EntityId),
    #[error("entity {0} has no vector")]
    UnknownEntity(EntityId),
    #[error("LDP store is empty")]
    EmptyStore,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("no with-mention pairs to borrow from")]
    NoCandidates,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("bad encoder checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which entity pairs receive borrowed LDPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorrowTargets {
    /// Without-mention pairs of KG training triples.
    Train,
    /// Without-mention pairs of KG test triples.
    #[default]
    Test,
    /// Both of the above.
    All,
}

/// Row-major entity vectors used as encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityVectors {
    dim: usize,
    data: Vec<f64>,
}

impl EntityVectors {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, BorrowError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(BorrowError::DimensionMismatch {
                expected: dim,
                found: data.len(),
            });
        }
        Ok(EntityVectors { dim, data })
    }

    pub fn from_table(table: &EmbeddingTable) -> Self {
        EntityVectors {
            dim: table.entity_width(),
            data: table.entity_data().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, e: EntityId) -> Result<&[f64], BorrowError> {
        if e.index() >= self.len() {
            return Err(BorrowError::UnknownEntity(e));
        }
        Ok(&self.data[e.index() * self.dim..(e.index() + 1) * self.dim])
    }

    /// Encoder input for the ordered pair `(h, t)`.
    pub fn features(&self, h: EntityId, t: EntityId) -> Result<Vec<f64>, BorrowError> {
        pair_features(self.get(h)?, self.get(t)?)
    }
}
