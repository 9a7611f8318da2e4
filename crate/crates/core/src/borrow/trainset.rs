use std::collections::{BTreeSet, HashMap, HashSet};

use crate::kg::{EntityId, LdpId, TextualCorpus, TextualTriple};

type Pair = (EntityId, EntityId);

/// Distinct textual triples indexed by head, by tail and by pair.
#[derive(Debug, Clone, Default)]
pub struct TextualIndex {
    by_head: HashMap<EntityId, Vec<(LdpId, EntityId)>>,
    by_tail: HashMap<EntityId, Vec<(LdpId, EntityId)>>,
    pair_ldps: HashMap<Pair, BTreeSet<LdpId>>,
    pair_order: Vec<Pair>,
}

impl TextualIndex {
    pub fn new(triples: &[TextualTriple]) -> Self {
        let mut idx = TextualIndex::default();
        let mut seen = HashSet::new();
        for tt in triples {
            if !seen.insert(*tt) {
                continue;
            }
            idx.by_head.entry(tt.head).or_default().push((tt.ldp, tt.tail));
            idx.by_tail.entry(tt.tail).or_default().push((tt.ldp, tt.head));
            let ldps = idx.pair_ldps.entry(tt.pair()).or_default();
            if ldps.is_empty() {
                idx.pair_order.push(tt.pair());
            }
            ldps.insert(tt.ldp);
        }
        idx
    }

    pub fn from_corpus(corpus: &TextualCorpus) -> Self {
        Self::new(&corpus.triples)
    }

    /// LDPs observed between `h` and `t`, in id order.
    pub fn ldps_of(&self, pair: Pair) -> Option<&BTreeSet<LdpId>> {
        self.pair_ldps.get(&pair)
    }

    /// Distinct pairs in first-occurrence order.
    pub fn pairs(&self) -> &[Pair] {
        &self.pair_order
    }

    pub fn contains_pair(&self, pair: Pair) -> bool {
        self.pair_ldps.contains_key(&pair)
    }

    /// `(ldp, tail)` for every distinct textual triple with head `h`.
    pub fn out_edges(&self, h: EntityId) -> &[(LdpId, EntityId)] {
        self.by_head.get(&h).map_or(&[], Vec::as_slice)
    }

    /// `(ldp, head)` for every distinct textual triple with tail `t`.
    pub fn in_edges(&self, t: EntityId) -> &[(LdpId, EntityId)] {
        self.by_tail.get(&t).map_or(&[], Vec::as_slice)
    }
}

/// LDPs that link `h` to some other tail or some other head to `t`, minus
/// the LDPs observed for `(h, t)` itself.
pub fn build_negative_pool(pair: Pair, index: &TextualIndex) -> BTreeSet<LdpId> {
    let (h, t) = pair;
    let mut pool: BTreeSet<LdpId> = index
        .out_edges(h)
        .iter()
        .filter(|(_, t2)| *t2 != t)
        .chain(index.in_edges(t).iter().filter(|(_, h2)| *h2 != h))
        .map(|(l, _)| *l)
        .collect();
    if let Some(own) = index.ldps_of(pair) {
        pool.retain(|l| !own.contains(l));
    }
    pool
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub head: EntityId,
    pub tail: EntityId,
    pub positives: Vec<LdpId>,
    pub negatives: Vec<LdpId>,
}

/// Positive LDPs and negative pools for every with-mention pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BorrowTrainSet {
    pub examples: Vec<PairExample>,
    /// Pairs dropped because their negative pool was empty.
    pub skipped_empty_pool: usize,
}

impl BorrowTrainSet {
    /// One example per distinct pair in `index`, optionally restricted to
    /// `only`. Pair order follows first occurrence in the corpus.
    pub fn build(index: &TextualIndex, only: Option<&HashSet<Pair>>) -> Self {
        let mut set = BorrowTrainSet::default();
        for &pair in index.pairs() {
            if only.is_some_and(|o| !o.contains(&pair)) {
                continue;
            }
            let pool = build_negative_pool(pair, index);
            if pool.is_empty() {
                set.skipped_empty_pool += 1;
                continue;
            }
            set.examples.push(PairExample {
                head: pair.0,
                tail: pair.1,
                positives: index.ldps_of(pair).map(|s| s.iter().copied().collect()).unwrap_or_default(),
                negatives: pool.into_iter().collect(),
            });
        }
        if set.skipped_empty_pool > 0 {
            log::info!("borrow training set: {} pairs skipped for empty negative pools", set.skipped_empty_pool);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.examples.iter().map(|e| e.positives.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx(triples: &[(u32, u32, u32)]) -> TextualIndex {
        let tt: Vec<TextualTriple> = triples.iter().map(|&(h, l, t)| TextualTriple::new(h, l, t)).collect();
        TextualIndex::new(&tt)
    }

    fn pool(triples: &[(u32, u32, u32)], h: u32, t: u32) -> Vec<u32> {
        build_negative_pool((EntityId(h), EntityId(t)), &idx(triples))
            .into_iter()
            .map(|l| l.0)
            .collect()
    }

    #[test]
    fn lone_triple_has_empty_pool() {
        assert!(pool(&[(0, 1, 1)], 0, 1).is_empty());
    }

    #[test]
    fn head_side_alternative() {
        assert_eq!(pool(&[(0, 1, 1), (0, 2, 2)], 0, 1), vec![2]);
    }

    #[test]
    fn tail_side_alternative() {
        assert_eq!(pool(&[(0, 1, 1), (5, 3, 1)], 0, 1), vec![3]);
    }

    #[test]
    fn own_ldps_removed() {
        // l1 also links a to c, but it is a positive of (a, b)
        assert_eq!(pool(&[(0, 1, 1), (0, 1, 2), (0, 2, 2)], 0, 1), vec![2]);
    }

    #[test]
    fn train_set_skips_empty_pools() {
        let i = idx(&[(0, 1, 1), (0, 2, 2), (7, 4, 8)]);
        let set = BorrowTrainSet::build(&i, None);
        assert_eq!(set.len(), 2);
        assert_eq!(set.skipped_empty_pool, 1);
        assert_eq!(set.examples[0].positives, vec![LdpId(1)]);
        let only: HashSet<Pair> = [(EntityId(0), EntityId(2))].into();
        assert_eq!(BorrowTrainSet::build(&i, Some(&only)).len(), 1);
    }

    fn brute_force(triples: &[(u32, u32, u32)], h: u32, t: u32) -> BTreeSet<u32> {
        let own: HashSet<u32> = triples
            .iter()
            .filter(|x| x.0 == h && x.2 == t)
            .map(|x| x.1)
            .collect();
        let mut out = BTreeSet::new();
        for &(h2, l, t2) in triples {
            if (h2 == h && t2 != t) || (t2 == t && h2 != h) {
                out.insert(l);
            }
        }
        out.retain(|l| !own.contains(l));
        out
    }

    proptest! {
        #[test]
        fn pool_matches_double_loop(
            triples in proptest::collection::vec((0u32..12, 0u32..8, 0u32..12), 1..120),
            pick in 0usize..120,
        ) {
            let (h, _, t) = triples[pick % triples.len()];
            let got: BTreeSet<u32> = pool(&triples, h, t).into_iter().collect();
            prop_assert_eq!(got, brute_force(&triples, h, t));
        }
    }
}
