use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EntityId, KgError, RelationId, Triple};

const THRESHOLD: f64 = 1.5;

/// Relation mapping category from average heads-per-tail and tails-per-head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationCategory {
    #[serde(rename = "1to1")]
    OneToOne,
    #[serde(rename = "1toN")]
    OneToN,
    #[serde(rename = "Nto1")]
    NToOne,
    #[serde(rename = "NtoN")]
    NToN,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToN,
        RelationCategory::NToOne,
        RelationCategory::NToN,
    ];

    pub fn from_ratios(heads_per_tail: f64, tails_per_head: f64) -> Self {
        match (heads_per_tail >= THRESHOLD, tails_per_head >= THRESHOLD) {
            (false, false) => RelationCategory::OneToOne,
            (false, true) => RelationCategory::OneToN,
            (true, false) => RelationCategory::NToOne,
            (true, true) => RelationCategory::NToN,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1to1",
            RelationCategory::OneToN => "1toN",
            RelationCategory::NToOne => "Nto1",
            RelationCategory::NToN => "NtoN",
        }
    }
}

#[derive(Default)]
struct Fanout {
    tails_of: HashMap<EntityId, HashSet<EntityId>>,
    heads_of: HashMap<EntityId, HashSet<EntityId>>,
}

impl Fanout {
    fn add(&mut self, t: &Triple) {
        self.tails_of.entry(t.head).or_default().insert(t.tail);
        self.heads_of.entry(t.tail).or_default().insert(t.head);
    }

    fn category(&self) -> RelationCategory {
        let mean = |m: &HashMap<EntityId, HashSet<EntityId>>| {
            m.values().map(|s| s.len() as f64).sum::<f64>() / m.len() as f64
        };
        RelationCategory::from_ratios(mean(&self.heads_of), mean(&self.tails_of))
    }
}

pub fn relation_category(train: &[Triple], r: RelationId) -> Result<RelationCategory, KgError> {
    let mut fanout = Fanout::default();
    for t in train.iter().filter(|t| t.relation == r) {
        fanout.add(t);
    }
    if fanout.tails_of.is_empty() {
        return Err(KgError::RelationAbsent(r));
    }
    Ok(fanout.category())
}

/// Categories for every relation occurring in `train`.
pub fn relation_categories(train: &[Triple]) -> BTreeMap<RelationId, RelationCategory> {
    let mut per_rel: BTreeMap<RelationId, Fanout> = BTreeMap::new();
    for t in train {
        per_rel.entry(t.relation).or_default().add(t);
    }
    per_rel.into_iter().map(|(r, f)| (r, f.category())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn singleton_is_one_to_one() {
        let train = [Triple::new(0, 0, 1)];
        assert_eq!(
            relation_category(&train, RelationId(0)).unwrap(),
            RelationCategory::OneToOne
        );
    }

    #[test]
    fn fan_out_is_one_to_n() {
        let train = [Triple::new(0, 0, 1), Triple::new(0, 0, 2), Triple::new(0, 0, 3)];
        assert_eq!(
            relation_category(&train, RelationId(0)).unwrap(),
            RelationCategory::OneToN
        );
        let rev: Vec<_> = train.iter().map(|t| Triple::new(t.tail.0, 0, t.head.0)).collect();
        assert_eq!(
            relation_category(&rev, RelationId(0)).unwrap(),
            RelationCategory::NToOne
        );
    }

    #[test]
    fn absent_relation_is_error() {
        assert!(matches!(
            relation_category(&[Triple::new(0, 0, 1)], RelationId(5)),
            Err(KgError::RelationAbsent(RelationId(5)))
        ));
    }

    fn brute_force(train: &[Triple], r: RelationId) -> RelationCategory {
        let rows: Vec<_> = train.iter().filter(|t| t.relation == r).collect();
        let mut heads: Vec<u32> = rows.iter().map(|t| t.head.0).collect();
        heads.sort();
        heads.dedup();
        let mut tails: Vec<u32> = rows.iter().map(|t| t.tail.0).collect();
        tails.sort();
        tails.dedup();
        let tph: f64 = heads
            .iter()
            .map(|&h| {
                let mut ts: Vec<u32> =
                    rows.iter().filter(|t| t.head.0 == h).map(|t| t.tail.0).collect();
                ts.sort();
                ts.dedup();
                ts.len() as f64
            })
            .sum::<f64>()
            / heads.len() as f64;
        let hpt: f64 = tails
            .iter()
            .map(|&tl| {
                let mut hs: Vec<u32> =
                    rows.iter().filter(|t| t.tail.0 == tl).map(|t| t.head.0).collect();
                hs.sort();
                hs.dedup();
                hs.len() as f64
            })
            .sum::<f64>()
            / tails.len() as f64;
        match (hpt < 1.5, tph < 1.5) {
            (true, true) => RelationCategory::OneToOne,
            (true, false) => RelationCategory::OneToN,
            (false, true) => RelationCategory::NToOne,
            (false, false) => RelationCategory::NToN,
        }
    }

    proptest! {
        #[test]
        fn agrees_with_recount(raw in proptest::collection::vec((0u32..15, 0u32..4, 0u32..15), 100)) {
            let train: Vec<Triple> = raw.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect();
            let all = relation_categories(&train);
            for (&r, &cat) in &all {
                prop_assert_eq!(cat, brute_force(&train, r));
                prop_assert_eq!(cat, relation_category(&train, r).unwrap());
            }
        }
    }
}
