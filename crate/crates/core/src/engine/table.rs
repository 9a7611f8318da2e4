use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::score::score_raw;
use super::{EngineError, ModelKind, TransENorm};
use crate::dump::{DumpFormat, Matrix};
use crate::kg::{EntityId, RelationId};

// The norm only matters for TransE; other kinds normalise it away so that
// equality and dumps do not depend on an unused field.
fn effective_norm(kind: ModelKind, norm: TransENorm) -> TransENorm {
    if kind == ModelKind::TransE {
        norm
    } else {
        TransENorm::L1
    }
}

/// Entity and relation parameters of one KGE model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    kind: ModelKind,
    dim: usize,
    norm: TransENorm,
    pub(crate) entities: Vec<f64>,
    pub(crate) relations: Vec<f64>,
}

impl EmbeddingTable {
    /// Uniform initialisation in `[-6/sqrt(d), 6/sqrt(d)]`; RotatE phases are
    /// uniform in `[-pi, pi)`.
    pub fn random(
        kind: ModelKind,
        dim: usize,
        num_entities: usize,
        num_relations: usize,
        norm: TransENorm,
        seed: u64,
    ) -> Self {
        let norm = effective_norm(kind, norm);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 6.0 / (dim as f64).sqrt();
        let entities = (0..num_entities * kind.entity_width(dim))
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let relations = (0..num_relations * kind.relation_width(dim))
            .map(|_| match kind {
                ModelKind::RotatE => rng.random_range(-PI..PI),
                _ => rng.random_range(-bound..bound),
            })
            .collect();
        EmbeddingTable {
            kind,
            dim,
            norm,
            entities,
            relations,
        }
    }

    pub fn from_parts(
        kind: ModelKind,
        dim: usize,
        norm: TransENorm,
        entities: Vec<f64>,
        relations: Vec<f64>,
    ) -> Result<Self, EngineError> {
        let norm = effective_norm(kind, norm);
        let (ew, rw) = (kind.entity_width(dim), kind.relation_width(dim));
        if dim == 0 || !entities.len().is_multiple_of(ew) {
            return Err(EngineError::DimensionMismatch {
                expected: ew,
                found: entities.len(),
            });
        }
        if !relations.len().is_multiple_of(rw) {
            return Err(EngineError::DimensionMismatch {
                expected: rw,
                found: relations.len(),
            });
        }
        Ok(EmbeddingTable {
            kind,
            dim,
            norm,
            entities,
            relations,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> TransENorm {
        self.norm
    }

    pub fn entity_width(&self) -> usize {
        self.kind.entity_width(self.dim)
    }

    pub fn relation_width(&self) -> usize {
        self.kind.relation_width(self.dim)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len() / self.entity_width()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len() / self.relation_width()
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let w = self.entity_width();
        &self.entities[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        let w = self.relation_width();
        &self.relations[r.index() * w..(r.index() + 1) * w]
    }

    pub fn entity_data(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_data(&self) -> &[f64] {
        &self.relations
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    /// Relation `r` as complex numbers; for RotatE these are `e^{i theta}`.
    pub fn relation_complex(&self, r: RelationId) -> Option<Vec<(f64, f64)>> {
        match self.kind {
            ModelKind::RotatE => Some(
                self.relation(r)
                    .iter()
                    .map(|theta| (theta.cos(), theta.sin()))
                    .collect(),
            ),
            ModelKind::ComplEx => Some(
                self.relation(r)
                    .chunks_exact(2)
                    .map(|c| (c[0], c[1]))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Score of `(h, r, t)`, higher is better.
    pub fn score(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64, EngineError> {
        let ne = self.num_entities();
        for e in [h, t] {
            if e.index() >= ne {
                return Err(EngineError::UnknownId {
                    what: "entity",
                    id: e.0,
                    len: ne,
                });
            }
        }
        if r.index() >= self.num_relations() {
            return Err(EngineError::UnknownId {
                what: "relation",
                id: r.0,
                len: self.num_relations(),
            });
        }
        Ok(self.score_unchecked(h, r, t))
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, h: EntityId, r: RelationId, t: EntityId) -> f64 {
        score_raw(self.kind, self.norm, self.entity(h), self.relation(r), self.entity(t))
    }

    fn tag(&self) -> String {
        match (self.kind, self.norm) {
            (ModelKind::TransE, TransENorm::L2) => "transe_l2".to_owned(),
            (kind, _) => kind.name().to_owned(),
        }
    }

    fn parse_tag(tag: &str) -> Result<(ModelKind, TransENorm), EngineError> {
        if tag == "transe_l2" {
            return Ok((ModelKind::TransE, TransENorm::L2));
        }
        tag.parse::<ModelKind>()
            .map(|k| (k, TransENorm::L1))
            .map_err(EngineError::BadDump)
    }

    pub fn entity_matrix(&self) -> Matrix<f64> {
        Matrix::indexed(self.entity_width(), Some(self.tag()), self.entities.clone())
    }

    pub fn relation_matrix(&self) -> Matrix<f64> {
        Matrix::indexed(self.relation_width(), Some(self.tag()), self.relations.clone())
    }

    fn file_names(format: DumpFormat) -> (&'static str, &'static str) {
        match format {
            DumpFormat::Text => ("entities.tsv", "relations.tsv"),
            DumpFormat::Binary => ("entities.bin", "relations.bin"),
        }
    }

    /// Writes `entities.{tsv,bin}` and `relations.{tsv,bin}` into `dir`.
    pub fn save(&self, dir: &Path, format: DumpFormat) -> Result<(), EngineError> {
        let (e, r) = Self::file_names(format);
        self.entity_matrix().write(&dir.join(e), format)?;
        self.relation_matrix().write(&dir.join(r), format)?;
        Ok(())
    }

    pub fn load(dir: &Path, format: DumpFormat) -> Result<Self, EngineError> {
        let (e, r) = Self::file_names(format);
        let ent = Matrix::<f64>::read(&dir.join(e))?;
        let rel = Matrix::<f64>::read(&dir.join(r))?;
        let tag = ent
            .tag
            .as_deref()
            .ok_or_else(|| EngineError::BadDump("missing model kind in header".into()))?;
        let (kind, norm) = Self::parse_tag(tag)?;
        if rel.tag.as_deref() != Some(tag) {
            return Err(EngineError::BadDump("entity/relation model kinds differ".into()));
        }
        let dim = ent.dim / kind.entity_width(1);
        if kind.relation_width(dim) != rel.dim {
            return Err(EngineError::BadDump(format!(
                "relation width {} does not match {kind} at dimension {dim}",
                rel.dim
            )));
        }
        Self::from_parts(kind, dim, norm, ent.data, rel.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initialisation_is_bounded_and_seeded() {
        let a = EmbeddingTable::random(ModelKind::TransE, 16, 10, 3, TransENorm::L1, 7);
        let b = EmbeddingTable::random(ModelKind::TransE, 16, 10, 3, TransENorm::L1, 7);
        assert_eq!(a, b);
        let bound = 6.0 / 4.0;
        assert!(a.entity_data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.num_entities(), 10);
        assert_eq!(a.num_relations(), 3);
    }

    #[test]
    fn rotate_relations_are_unit_modulus() {
        let t = EmbeddingTable::random(ModelKind::RotatE, 8, 4, 5, TransENorm::L1, 1);
        for r in 0..5 {
            for (re, im) in t.relation_complex(RelationId(r)).unwrap() {
                assert!(((re * re + im * im).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_rejects_bad_ids() {
        let t = EmbeddingTable::random(ModelKind::DistMult, 4, 3, 1, TransENorm::L1, 1);
        assert!(t.score(EntityId(3), RelationId(0), EntityId(0)).is_err());
        assert!(t.score(EntityId(0), RelationId(1), EntityId(0)).is_err());
        assert_eq!(
            t.score(EntityId(0), RelationId(0), EntityId(1)).unwrap(),
            t.score(EntityId(0), RelationId(0), EntityId(1)).unwrap()
        );
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let t = EmbeddingTable::random(kind, 5, 6, 2, TransENorm::L2, 3);
            t.save(dir.path(), DumpFormat::Text).unwrap();
            assert_eq!(EmbeddingTable::load(dir.path(), DumpFormat::Text).unwrap(), t);

            t.save(dir.path(), DumpFormat::Binary).unwrap();
            let back = EmbeddingTable::load(dir.path(), DumpFormat::Binary).unwrap();
            assert_eq!(back.kind(), kind);
            for (a, b) in back.entity_data().iter().zip(t.entity_data()) {
                assert_eq!(*a, (*b as f32) as f64);
            }
        }
    }
}
