use std::collections::HashSet;

use rayon::prelude::*;

use super::trainset::TextualIndex;
use super::{BorrowError, EntityVectors};
use crate::kg::{EntityId, LdpId, RelationKind, RelationTable, TextualTriple, Triple};

type Pair = (EntityId, EntityId);

fn cosine(entities: &EntityVectors, a: EntityId, b: EntityId) -> Result<f64, BorrowError> {
    let (u, v) = (entities.get(a)?, entities.get(b)?);
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(BorrowError::ZeroNorm(a));
    }
    if nv == 0.0 {
        return Err(BorrowError::ZeroNorm(b));
    }
    let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
    Ok(dot / (nu * nv))
}

fn shifted(c: f64) -> f64 {
    (c + 1.0) / 2.0
}

/// Product of head-head and tail-tail cosines, each mapped to `[0, 1]` by
/// `(c + 1) / 2`.
pub fn pair_similarity(p1: Pair, p2: Pair, entities: &EntityVectors) -> Result<f64, BorrowError> {
    Ok(shifted(cosine(entities, p1.0, p2.0)?) * shifted(cosine(entities, p1.1, p2.1)?))
}

/// With-mention pairs and their LDPs, sorted by `(head, tail)`.
#[derive(Debug, Clone)]
pub struct NeighbIndex {
    candidates: Vec<(Pair, Vec<LdpId>)>,
    heads: Vec<EntityId>,
    tails: Vec<EntityId>,
}

impl NeighbIndex {
    pub fn new(index: &TextualIndex) -> Self {
        let mut candidates: Vec<(Pair, Vec<LdpId>)> = index
            .pairs()
            .iter()
            .map(|&p| (p, index.ldps_of(p).map(|s| s.iter().copied().collect()).unwrap_or_default()))
            .collect();
        candidates.sort_by_key(|c| c.0);
        let mut heads: Vec<EntityId> = candidates.iter().map(|c| c.0 .0).collect::<HashSet<_>>().into_iter().collect();
        let mut tails: Vec<EntityId> = candidates.iter().map(|c| c.0 .1).collect::<HashSet<_>>().into_iter().collect();
        heads.sort_unstable();
        tails.sort_unstable();
        NeighbIndex {
            candidates,
            heads,
            tails,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Most similar with-mention pair; ties go to the smallest `(head, tail)`.
    pub fn nearest(&self, pair: Pair, entities: &EntityVectors) -> Result<(Pair, &[LdpId]), BorrowError> {
        if self.candidates.is_empty() {
            return Err(BorrowError::NoCandidates);
        }
        let n = entities.len();
        let mut head_sim = vec![0.0; n];
        let mut tail_sim = vec![0.0; n];
        for &h in &self.heads {
            head_sim[h.index()] = shifted(cosine(entities, pair.0, h)?);
        }
        for &t in &self.tails {
            tail_sim[t.index()] = shifted(cosine(entities, pair.1, t)?);
        }
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, ((h, t), _)) in self.candidates.iter().enumerate() {
            let s = head_sim[h.index()] * tail_sim[t.index()];
            if s > best_sim {
                best = i;
                best_sim = s;
            }
        }
        let (p, ldps) = &self.candidates[best];
        Ok((*p, ldps))
    }

    /// LDPs of the nearest with-mention pair for every pair in `pairs`,
    /// grouped by pair in input order.
    pub fn borrow(&self, pairs: &[Pair], entities: &EntityVectors) -> Result<Vec<TextualTriple>, BorrowError> {
        let per: Vec<Vec<TextualTriple>> = pairs
            .par_iter()
            .map(|&(h, t)| {
                let (_, ldps) = self.nearest((h, t), entities)?;
                Ok(ldps.iter().map(|&ldp| TextualTriple { head: h, ldp, tail: t }).collect())
            })
            .collect::<Result<_, BorrowError>>()?;
        Ok(per.into_iter().flatten().collect())
    }
}

/// LDPs of the most similar with-mention pair.
pub fn neighb_borrow(pair: Pair, index: &NeighbIndex, entities: &EntityVectors) -> Result<Vec<LdpId>, BorrowError> {
    Ok(index.nearest(pair, entities)?.1.to_vec())
}

fn distinct(pairs: &[Pair]) -> Vec<Pair> {
    let mut seen = HashSet::new();
    pairs.iter().copied().filter(|p| seen.insert(*p)).collect()
}

/// One triple per distinct ordered pair, all under a single reserved
/// co-occurrence relation.
pub fn cooccurrence_augment(relations: &mut RelationTable, pairs: &[Pair]) -> Vec<Triple> {
    let pairs = distinct(pairs);
    if pairs.is_empty() {
        return vec![];
    }
    let rel = relations.get_or_insert(RelationKind::CoOccurrence, "co-occurrence");
    pairs
        .into_iter()
        .map(|(head, tail)| Triple {
            head,
            relation: rel,
            tail,
        })
        .collect()
}

/// One triple per distinct pair, each under its own new link relation.
pub fn linkall_augment(relations: &mut RelationTable, pairs: &[Pair]) -> Vec<Triple> {
    distinct(pairs)
        .into_iter()
        .map(|(head, tail)| Triple {
            head,
            relation: relations.get_or_insert(RelationKind::Link, &format!("{head}->{tail}")),
            tail,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: u32) -> EntityId {
        EntityId(i)
    }

    #[test]
    fn similarity_examples() {
        // 0=(1,0) 1=(0,1) 2=(-1,0) 3=(0,-1)
        let ents = EntityVectors::new(2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(pair_similarity((e(0), e(1)), (e(0), e(1)), &ents).unwrap(), 1.0);
        assert_eq!(pair_similarity((e(0), e(1)), (e(1), e(1)), &ents).unwrap(), 0.5);
        assert_eq!(pair_similarity((e(0), e(1)), (e(2), e(3)), &ents).unwrap(), 0.0);
    }

    #[test]
    fn zero_vector_is_error() {
        let ents = EntityVectors::new(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            pair_similarity((e(0), e(0)), (e(1), e(0)), &ents),
            Err(BorrowError::ZeroNorm(EntityId(1)))
        ));
    }

    #[test]
    fn nearest_picks_most_similar_then_smallest_pair() {
        // entities 0..4 on the unit circle
        let ents = EntityVectors::new(2, vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let idx = TextualIndex::new(&[TextualTriple::new(1, 7, 1), TextualTriple::new(2, 8, 2)]);
        let n = NeighbIndex::new(&idx);
        assert_eq!(neighb_borrow((e(0), e(0)), &n, &ents).unwrap(), vec![LdpId(7)]);
        // entity 3 equals entity 0, so (0,0) and (3,3) tie for query (0,0)
        let idx = TextualIndex::new(&[TextualTriple::new(3, 5, 3), TextualTriple::new(0, 6, 0)]);
        let n = NeighbIndex::new(&idx);
        assert_eq!(n.nearest((e(0), e(0)), &ents).unwrap().0, (e(0), e(0)));
    }

    #[test]
    fn empty_index_is_error() {
        let ents = EntityVectors::new(1, vec![1.0]).unwrap();
        let n = NeighbIndex::new(&TextualIndex::default());
        assert!(n.nearest((e(0), e(0)), &ents).is_err());
    }

    #[test]
    fn cooccurrence_dedups() {
        let mut rels = RelationTable::new();
        let t = cooccurrence_augment(&mut rels, &[(e(0), e(1)), (e(0), e(1)), (e(2), e(3))]);
        assert_eq!(t.len(), 2);
        assert_eq!(rels.count_of_kind(RelationKind::CoOccurrence), 1);
        assert!(cooccurrence_augment(&mut RelationTable::new(), &[]).is_empty());
    }

    #[test]
    fn linkall_adds_one_relation_per_pair() {
        let mut rels = RelationTable::new();
        rels.get_or_insert(RelationKind::Kg, "r");
        let t = linkall_augment(&mut rels, &[(e(0), e(1)), (e(1), e(0)), (e(2), e(3))]);
        assert_eq!(t.len(), 3);
        assert_eq!(rels.len(), 4);
        let distinct: HashSet<_> = t.iter().map(|x| x.relation).collect();
        assert_eq!(distinct.len(), 3);
        assert!(linkall_augment(&mut rels, &[]).is_empty());
        assert_eq!(rels.len(), 4);
    }
}
