use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::kg::{EntityId, RelationId, Triple};

/// Negatives colliding with a known training triple are redrawn at most this
/// many times, then accepted.
pub const MAX_COLLISION_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    Head,
    Tail,
    Relation,
}

/// Uniform corruption over the full entity or relation vocabulary.
pub struct NegativeSampler<'a> {
    num_entities: usize,
    num_relations: usize,
    known: &'a HashSet<Triple>,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(num_entities: usize, num_relations: usize, known: &'a HashSet<Triple>) -> Self {
        NegativeSampler {
            num_entities,
            num_relations,
            known,
        }
    }

    fn vocab_size(&self, mode: CorruptionMode) -> usize {
        match mode {
            CorruptionMode::Head | CorruptionMode::Tail => self.num_entities,
            CorruptionMode::Relation => self.num_relations,
        }
    }

    /// Returns `n` triples that differ from `triple` exactly in the `mode`
    /// slot.
    pub fn sample<R: Rng>(
        &self,
        triple: Triple,
        mode: CorruptionMode,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Triple>, EngineError> {
        let size = self.vocab_size(mode);
        if size < 2 {
            return Err(EngineError::VocabularyTooSmall(mode));
        }
        let original = match mode {
            CorruptionMode::Head => triple.head.0,
            CorruptionMode::Tail => triple.tail.0,
            CorruptionMode::Relation => triple.relation.0,
        } as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut candidate = triple;
            for attempt in 0..=MAX_COLLISION_RETRIES {
                // Uniform over the vocabulary minus the original value.
                let mut v = rng.random_range(0..size - 1);
                if v >= original {
                    v += 1;
                }
                candidate = triple;
                match mode {
                    CorruptionMode::Head => candidate.head = EntityId(v as u32),
                    CorruptionMode::Tail => candidate.tail = EntityId(v as u32),
                    CorruptionMode::Relation => candidate.relation = RelationId(v as u32),
                }
                if attempt == MAX_COLLISION_RETRIES || !self.known.contains(&candidate) {
                    break;
                }
            }
            out.push(candidate);
        }
        Ok(out)
    }
}
