//! Knowledge graph data model: vocabularies, KG and textual triples, mention
//! splits and relation categories.
//!
//! KG relations and textual relations (LDPs, plus the synthetic relations the
//! baselines introduce) share one [`RelationTable`] so that every relation has
//! a single dense id usable by the embedding tables. Each id carries a
//! [`RelationKind`] flag.

mod category;
mod load;
mod vocab;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use category::{relation_categories, relation_category, RelationCategory};
pub use load::{load_textual_triples, load_triples, write_textual_triples, write_triples};
pub use load::{LoadedTriples, TextualLoadReport};
pub use vocab::Vocab;

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("relation {0} does not occur in the training triples")]
    RelationAbsent(RelationId),
    #[error("entity id {0} is outside the entity vocabulary")]
    UnknownEntity(EntityId),
    #[error("{count} {split} triples also occur in train (first: {first})")]
    SplitOverlap {
        split: &'static str,
        count: usize,
        first: Triple,
    },
    #[error("min_pairs must be at least 1")]
    InvalidThreshold,
}

impl KgError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        KgError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

macro_rules! id_newtype {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(EntityId);
id_newtype!(RelationId);
id_newtype!(LdpId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }

    pub fn pair(&self) -> (EntityId, EntityId) {
        (self.head, self.tail)
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// `(head, ldp, tail)` where `ldp` indexes the LDP vocabulary of a
/// [`TextualCorpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TextualTriple {
    pub head: EntityId,
    pub ldp: LdpId,
    pub tail: EntityId,
}

impl TextualTriple {
    pub fn new(head: u32, ldp: u32, tail: u32) -> Self {
        TextualTriple {
            head: EntityId(head),
            ldp: LdpId(ldp),
            tail: EntityId(tail),
        }
    }

    pub fn pair(&self) -> (EntityId, EntityId) {
        (self.head, self.tail)
    }
}

/// Textual triples over the KG entity vocabulary, with their own LDP
/// vocabulary. Multiplicity is preserved; deduplication happens on
/// augmentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextualCorpus {
    pub ldps: Vocab,
    pub triples: Vec<TextualTriple>,
}

impl TextualCorpus {
    /// Distinct ordered `(head, tail)` pairs, in first-occurrence order.
    pub fn pairs(&self) -> Vec<(EntityId, EntityId)> {
        let mut seen = HashSet::new();
        self.triples
            .iter()
            .map(TextualTriple::pair)
            .filter(|p| seen.insert(*p))
            .collect()
    }

    pub fn pair_set(&self) -> HashSet<(EntityId, EntityId)> {
        self.triples.iter().map(TextualTriple::pair).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Kg,
    Ldp,
    CoOccurrence,
    Link,
}

impl RelationKind {
    fn tag(self) -> &'static str {
        match self {
            RelationKind::Kg => "",
            RelationKind::Ldp => "ldp::",
            RelationKind::CoOccurrence => "cooc::",
            RelationKind::Link => "link::",
        }
    }
}

/// Relation vocabulary shared by KG and textual relations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationTable {
    names: Vec<String>,
    kinds: Vec<RelationKind>,
    index: HashMap<(RelationKind, String), u32>,
}

impl RelationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, kind: RelationKind, surface: &str) -> Option<RelationId> {
        self.index
            .get(&(kind, surface.to_owned()))
            .map(|&i| RelationId(i))
    }

    pub fn get_or_insert(&mut self, kind: RelationKind, surface: &str) -> RelationId {
        let key = (kind, surface.to_owned());
        if let Some(&id) = self.index.get(&key) {
            return RelationId(id);
        }
        let id = self.names.len() as u32;
        self.names.push(surface.to_owned());
        self.kinds.push(kind);
        self.index.insert(key, id);
        RelationId(id)
    }

    pub fn surface(&self, id: RelationId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn kind(&self, id: RelationId) -> Option<RelationKind> {
        self.kinds.get(id.index()).copied()
    }

    pub fn ids_of_kind(&self, kind: RelationKind) -> Vec<RelationId> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(i, _)| RelationId(i as u32))
            .collect()
    }

    pub fn count_of_kind(&self, kind: RelationKind) -> usize {
        self.kinds.iter().filter(|k| **k == kind).count()
    }

    /// `index<TAB>surface`, with non-KG relations prefixed by their kind tag
    /// (`ldp::`, `cooc::`, `link::`).
    pub fn dump(&self, path: &Path) -> Result<(), KgError> {
        let mut vocab = Vocab::new();
        for (name, kind) in self.names.iter().zip(&self.kinds) {
            vocab.get_or_insert(&format!("{}{}", kind.tag(), name));
        }
        vocab.dump(path)
    }

    pub fn load(path: &Path) -> Result<Self, KgError> {
        let vocab = Vocab::load(path)?;
        let mut table = RelationTable::new();
        for (_, s) in vocab.iter() {
            let (kind, name) = [RelationKind::Ldp, RelationKind::CoOccurrence, RelationKind::Link]
                .into_iter()
                .find_map(|k| s.strip_prefix(k.tag()).map(|rest| (k, rest)))
                .unwrap_or((RelationKind::Kg, s));
            table.get_or_insert(kind, name);
        }
        Ok(table)
    }
}

/// Test-set partition by textual co-occurrence of the ordered `(head, tail)`
/// pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MentionSplit {
    pub with_mention: Vec<Triple>,
    pub without_mention: Vec<Triple>,
}

impl MentionSplit {
    pub fn len(&self) -> usize {
        self.with_mention.len() + self.without_mention.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits `test` by whether the ordered pair `(h, t)` occurs in at least one
/// textual triple. Order within each side follows `test`.
pub fn split_mentions(test: &[Triple], textual: &TextualCorpus) -> MentionSplit {
    let pairs = textual.pair_set();
    let (with_mention, without_mention) = test
        .iter()
        .copied()
        .partition(|t| pairs.contains(&t.pair()));
    let split = MentionSplit {
        with_mention,
        without_mention,
    };
    log::info!(
        "mention split: {} with-mention, {} without-mention",
        split.with_mention.len(),
        split.without_mention.len()
    );
    split
}

/// Entity and relation vocabularies with train/valid/test splits and the
/// training-set extension produced by augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: RelationTable,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    augmentation: Vec<Triple>,
}

impl KnowledgeGraph {
    /// Builds a graph from already-indexed splits. Fails if a valid or test
    /// triple also appears in train or an id is out of range.
    pub fn from_parts(
        entities: Vocab,
        relations: RelationTable,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, KgError> {
        let kg = KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            augmentation: Vec::new(),
        };
        for t in kg.train.iter().chain(&kg.valid).chain(&kg.test) {
            kg.check_triple(t)?;
        }
        let train_set: HashSet<_> = kg.train.iter().collect();
        for (name, split) in [("valid", &kg.valid), ("test", &kg.test)] {
            let overlap: Vec<_> = split.iter().filter(|t| train_set.contains(t)).collect();
            if let Some(first) = overlap.first() {
                return Err(KgError::SplitOverlap {
                    split: name,
                    count: overlap.len(),
                    first: **first,
                });
            }
        }
        Ok(kg)
    }

    /// Loads the three TSV splits, growing one shared vocabulary. All
    /// relations found here are KG relations.
    pub fn load(train: &Path, valid: &Path, test: &Path) -> Result<Self, KgError> {
        let mut entities = Vocab::new();
        let mut relations = RelationTable::new();
        let train = load_triples(train, &mut entities, &mut relations)?.triples;
        let valid = load_triples(valid, &mut entities, &mut relations)?.triples;
        let test = load_triples(test, &mut entities, &mut relations)?.triples;
        Self::from_parts(entities, relations, train, valid, test)
    }

    fn check_triple(&self, t: &Triple) -> Result<(), KgError> {
        for e in [t.head, t.tail] {
            if e.index() >= self.entities.len() {
                return Err(KgError::UnknownEntity(e));
            }
        }
        if t.relation.index() >= self.relations.len() {
            return Err(KgError::RelationAbsent(t.relation));
        }
        Ok(())
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &RelationTable {
        &self.relations
    }

    pub fn relations_mut(&mut self) -> &mut RelationTable {
        &mut self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// KG training triples, excluding augmentation.
    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn augmentation(&self) -> &[Triple] {
        &self.augmentation
    }

    /// Everything a KGE model trains on: KG train followed by augmentation.
    pub fn training_triples(&self) -> Vec<Triple> {
        self.train
            .iter()
            .chain(&self.augmentation)
            .copied()
            .collect()
    }

    /// train ∪ valid ∪ test over KG relations; the filter universe for
    /// filtered ranking.
    pub fn known_triples(&self) -> HashSet<Triple> {
        self.train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .copied()
            .collect()
    }

    /// Appends triples to the training extension, skipping any already in
    /// train or the extension. Returns how many were added.
    pub fn extend_train(&mut self, triples: &[Triple]) -> Result<usize, KgError> {
        let mut present: HashSet<Triple> = self
            .train
            .iter()
            .chain(&self.augmentation)
            .copied()
            .collect();
        let mut added = 0;
        for t in triples {
            self.check_triple(t)?;
            if present.insert(*t) {
                self.augmentation.push(*t);
                added += 1;
            }
        }
        let skipped = triples.len() - added;
        if skipped > 0 {
            log::info!("augmentation: {added} added, {skipped} duplicates skipped");
        }
        Ok(added)
    }
}

impl KnowledgeGraph {
    /// The subgraph induced by the `n` entities of highest train degree
    /// (ties to the lower id). Entity and relation ids are compacted in
    /// their original order; relations without any remaining triple are
    /// dropped, as is any augmentation.
    pub fn induced_top_degree(&self, n: usize) -> Result<KnowledgeGraph, KgError> {
        let mut degree = vec![0usize; self.entities.len()];
        for t in &self.train {
            degree[t.head.index()] += 1;
            degree[t.tail.index()] += 1;
        }
        let mut order: Vec<usize> = (0..degree.len()).collect();
        order.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));
        let mut keep = vec![false; degree.len()];
        for &e in order.iter().take(n) {
            keep[e] = true;
        }
        let inside = |t: &&Triple| keep[t.head.index()] && keep[t.tail.index()];
        let splits: Vec<Vec<Triple>> = [&self.train, &self.valid, &self.test]
            .iter()
            .map(|s| s.iter().filter(inside).copied().collect())
            .collect();

        let mut entities = Vocab::new();
        let mut ent_map = vec![None; degree.len()];
        for (id, surface) in self.entities.iter() {
            if keep[id as usize] {
                ent_map[id as usize] = Some(EntityId(entities.get_or_insert(surface)));
            }
        }
        let mut used = vec![false; self.relations.len()];
        for t in splits.iter().flatten() {
            used[t.relation.index()] = true;
        }
        let mut relations = RelationTable::new();
        let mut rel_map = vec![None; used.len()];
        for (i, u) in used.iter().enumerate() {
            if *u {
                let id = RelationId(i as u32);
                let kind = self.relations.kind(id).ok_or(KgError::RelationAbsent(id))?;
                let surface = self.relations.surface(id).ok_or(KgError::RelationAbsent(id))?;
                rel_map[i] = Some(relations.get_or_insert(kind, surface));
            }
        }
        let remap = |s: &Vec<Triple>| -> Vec<Triple> {
            s.iter()
                .map(|t| Triple {
                    head: ent_map[t.head.index()].expect("kept"),
                    relation: rel_map[t.relation.index()].expect("used"),
                    tail: ent_map[t.tail.index()].expect("kept"),
                })
                .collect()
        };
        KnowledgeGraph::from_parts(entities, relations, remap(&splits[0]), remap(&splits[1]), remap(&splits[2]))
    }
}

/// Registers every LDP of `textual` as an LDP relation and adds the textual
/// triples to the training extension, deduplicated by `(h, relation, t)`.
pub fn augment(kg: &KnowledgeGraph, textual: &TextualCorpus) -> Result<KnowledgeGraph, KgError> {
    let mut out = kg.clone();
    let n = out.num_entities();
    let mut ldp_rel: HashMap<LdpId, RelationId> = HashMap::new();
    let mut triples = Vec::with_capacity(textual.triples.len());
    for tt in &textual.triples {
        for e in [tt.head, tt.tail] {
            if e.index() >= n {
                return Err(KgError::UnknownEntity(e));
            }
        }
        let rel = match ldp_rel.get(&tt.ldp) {
            Some(&r) => r,
            None => {
                let surface = textual
                    .ldps
                    .surface(tt.ldp.0)
                    .ok_or(KgError::RelationAbsent(RelationId(tt.ldp.0)))?;
                let r = out.relations.get_or_insert(RelationKind::Ldp, surface);
                ldp_rel.insert(tt.ldp, r);
                r
            }
        };
        triples.push(Triple {
            head: tt.head,
            relation: rel,
            tail: tt.tail,
        });
    }
    out.extend_train(&triples)?;
    Ok(out)
}
