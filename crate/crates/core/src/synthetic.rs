//! Planted-structure datasets: typed entities, relations tied to distinct
//! type pairs, and LDP clusters whose tokens identify the relation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::borrow::EntityVectors;
use crate::kg::{
    EntityId, KgError, KnowledgeGraph, LdpId, RelationId, RelationKind, RelationTable, TextualCorpus, TextualTriple,
    Triple, Vocab,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub types: usize,
    pub entities_per_type: usize,
    pub relations: usize,
    pub triples_per_relation: usize,
    pub ldps_per_relation: usize,
    /// Probability that a KG triple also appears as a textual triple.
    pub mention_rate: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Width of the planted entity vectors.
    pub entity_dim: usize,
    /// Standard deviation of the per-entity noise around its type centroid.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            types: 5,
            entities_per_type: 100,
            relations: 10,
            triples_per_relation: 200,
            ldps_per_relation: 3,
            mention_rate: 0.5,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            entity_dim: 16,
            noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub kg: KnowledgeGraph,
    pub corpus: TextualCorpus,
    /// Type centroid plus Gaussian noise for every entity.
    pub entity_vectors: EntityVectors,
    pub entity_type: Vec<usize>,
    /// `(head type, tail type)` of each relation; all distinct.
    pub relation_types: Vec<(usize, usize)>,
    /// The relation whose cluster each LDP belongs to.
    pub ldp_cluster: Vec<RelationId>,
}

impl Planted {
    pub fn generate(cfg: &PlantedConfig) -> Result<Planted, KgError> {
        assert!(cfg.relations <= cfg.types * cfg.types, "not enough distinct type pairs");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.types * cfg.entities_per_type;
        let mut entities = Vocab::new();
        let mut entity_type = Vec::with_capacity(n);
        for ty in 0..cfg.types {
            for i in 0..cfg.entities_per_type {
                entities.get_or_insert(&format!("t{ty}_e{i}"));
                entity_type.push(ty);
            }
        }
        let mut type_pairs: Vec<(usize, usize)> =
            (0..cfg.types).flat_map(|a| (0..cfg.types).map(move |b| (a, b))).collect();
        type_pairs.shuffle(&mut rng);
        let relation_types: Vec<(usize, usize)> = type_pairs.into_iter().take(cfg.relations).collect();

        let mut relations = RelationTable::new();
        let mut all = vec![];
        let mut seen = HashSet::new();
        for (r, &(a, b)) in relation_types.iter().enumerate() {
            let rel = relations.get_or_insert(RelationKind::Kg, &format!("rel{r}"));
            let mut made = 0;
            let mut attempts = 0;
            while made < cfg.triples_per_relation && attempts < cfg.triples_per_relation * 20 {
                attempts += 1;
                let h = a * cfg.entities_per_type + rng.random_range(0..cfg.entities_per_type);
                let t = b * cfg.entities_per_type + rng.random_range(0..cfg.entities_per_type);
                if h == t {
                    continue;
                }
                let tr = Triple {
                    head: EntityId(h as u32),
                    relation: rel,
                    tail: EntityId(t as u32),
                };
                if seen.insert(tr) {
                    all.push(tr);
                    made += 1;
                }
            }
        }
        all.shuffle(&mut rng);
        let n_valid = (all.len() as f64 * cfg.valid_fraction) as usize;
        let n_test = (all.len() as f64 * cfg.test_fraction) as usize;
        let test = all[..n_test].to_vec();
        let valid = all[n_test..n_test + n_valid].to_vec();
        let train = all[n_test + n_valid..].to_vec();

        let mut corpus = TextualCorpus::default();
        let mut ldp_cluster = vec![];
        for r in 0..cfg.relations {
            for j in 0..cfg.ldps_per_relation {
                let id = corpus.ldps.get_or_insert(&format!("nsubj:rel{r}a:rel{r}b:v{j}:dobj"));
                debug_assert_eq!(id as usize, ldp_cluster.len());
                ldp_cluster.push(RelationId(r as u32));
            }
        }
        let mut sorted = all.clone();
        sorted.sort();
        for t in sorted {
            if rng.random_bool(cfg.mention_rate) {
                let j = rng.random_range(0..cfg.ldps_per_relation);
                let ldp = t.relation.index() * cfg.ldps_per_relation + j;
                corpus.triples.push(TextualTriple {
                    head: t.head,
                    ldp: LdpId(ldp as u32),
                    tail: t.tail,
                });
            }
        }

        let centroids: Vec<Vec<f64>> = (0..cfg.types)
            .map(|_| (0..cfg.entity_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut data = Vec::with_capacity(n * cfg.entity_dim);
        for &ty in &entity_type {
            for c in &centroids[ty] {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(c + cfg.noise * z);
            }
        }
        let entity_vectors = EntityVectors::new(cfg.entity_dim, data).expect("consistent shape");
        let kg = KnowledgeGraph::from_parts(entities, relations, train, valid, test)?;
        Ok(Planted {
            kg,
            corpus,
            entity_vectors,
            entity_type,
            relation_types,
            ldp_cluster,
        })
    }

    /// Writes `train.txt`, `valid.txt`, `test.txt` and `textual.txt`.
    pub fn write(&self, dir: &Path) -> Result<(), KgError> {
        std::fs::create_dir_all(dir).map_err(|e| KgError::io(dir, e))?;
        let ents = self.kg.entities();
        let rels = self.kg.relations();
        crate::kg::write_triples(&dir.join("train.txt"), self.kg.train(), ents, rels)?;
        crate::kg::write_triples(&dir.join("valid.txt"), self.kg.valid(), ents, rels)?;
        crate::kg::write_triples(&dir.join("test.txt"), self.kg.test(), ents, rels)?;
        crate::kg::write_textual_triples(&dir.join("textual.txt"), &self.corpus.triples, ents, &self.corpus.ldps)
    }

    /// Writes the planted entity vectors keyed by entity name.
    pub fn write_entity_vectors(&self, path: &Path) -> Result<(), KgError> {
        let f = File::create(path).map_err(|e| KgError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let dim = self.entity_vectors.dim();
        let io = |e| KgError::io(path, e);
        writeln!(w, "{} {}", self.entity_vectors.len(), dim).map_err(io)?;
        for (id, name) in self.kg.entities().iter() {
            let v = self.entity_vectors.get(EntityId(id)).expect("in range");
            let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{name}\t{}", row.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_shapes() {
        let p = Planted::generate(&PlantedConfig::default()).unwrap();
        assert_eq!(p.kg.num_entities(), 500);
        assert_eq!(p.kg.num_relations(), 10);
        let total = p.kg.train().len() + p.kg.valid().len() + p.kg.test().len();
        assert_eq!(total, 2000);
        let distinct: HashSet<_> = p.relation_types.iter().collect();
        assert_eq!(distinct.len(), 10);
        for t in p.kg.train() {
            let (a, b) = p.relation_types[t.relation.index()];
            assert_eq!(p.entity_type[t.head.index()], a);
            assert_eq!(p.entity_type[t.tail.index()], b);
        }
        for tt in &p.corpus.triples {
            assert!(p.kg.known_triples().contains(&Triple {
                head: tt.head,
                relation: p.ldp_cluster[tt.ldp.index()],
                tail: tt.tail
            }));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = Planted::generate(&PlantedConfig::default()).unwrap();
        let b = Planted::generate(&PlantedConfig::default()).unwrap();
        assert_eq!(a.kg, b.kg);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.entity_vectors, b.entity_vectors);
    }
}
