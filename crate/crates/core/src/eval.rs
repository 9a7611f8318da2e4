//! Link and relation prediction metrics with filtered and type-constrained
//! candidate sets, sliced by textual mention and relation category.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{EmbeddingTable, EngineError};
use crate::kg::{relation_categories, EntityId, KnowledgeGraph, MentionSplit, RelationId, RelationKind, Triple};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no ranks to aggregate")]
    Empty,
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    LinkHead,
    LinkTail,
    LinkBoth,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Slice {
    Overall,
    WithMention,
    WithoutMention,
    Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub task: Task,
    pub filtered: bool,
    pub type_constraint: bool,
    pub slices: Vec<Slice>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            task: Task::LinkBoth,
            filtered: true,
            type_constraint: false,
            slices: vec![Slice::Overall, Slice::WithMention, Slice::WithoutMention, Slice::Category],
        }
    }
}

impl EvalSettings {
    /// Tail prediction, filtered, no type constraint.
    pub fn prior_work_compat() -> Self {
        EvalSettings {
            task: Task::LinkTail,
            filtered: true,
            type_constraint: false,
            slices: vec![Slice::Overall, Slice::WithMention, Slice::WithoutMention],
        }
    }
}

/// The slot of a test triple to be predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Head,
    Tail,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Query {
    pub triple: Triple,
    pub slot: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub queries: usize,
}

pub fn aggregate(ranks: &[usize]) -> Result<Metrics, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    if ranks.contains(&0) {
        return Err(EvalError::ZeroRank);
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        hits1: frac(1),
        hits3: frac(3),
        hits10: frac(10),
        queries: ranks.len(),
    })
}

/// Candidate sets and filter lists derived from a KG, reusable across
/// queries.
#[derive(Debug, Clone)]
pub struct Ranker {
    settings: EvalSettings,
    num_entities: usize,
    kg_relations: Vec<RelationId>,
    heads_of: HashMap<RelationId, Vec<EntityId>>,
    tails_of: HashMap<RelationId, Vec<EntityId>>,
    known_tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    known_heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    known_relations: HashMap<(EntityId, EntityId), Vec<RelationId>>,
}

fn sorted_map<K: std::hash::Hash + Eq, V: Ord>(m: HashMap<K, Vec<V>>) -> HashMap<K, Vec<V>> {
    m.into_iter()
        .map(|(k, mut v)| {
            v.sort_unstable();
            v.dedup();
            (k, v)
        })
        .collect()
}

impl Ranker {
    pub fn new(kg: &KnowledgeGraph, settings: &EvalSettings) -> Self {
        let mut heads_of: HashMap<RelationId, Vec<EntityId>> = HashMap::new();
        let mut tails_of: HashMap<RelationId, Vec<EntityId>> = HashMap::new();
        for t in kg.train() {
            heads_of.entry(t.relation).or_default().push(t.head);
            tails_of.entry(t.relation).or_default().push(t.tail);
        }
        let mut known_tails: HashMap<_, Vec<EntityId>> = HashMap::new();
        let mut known_heads: HashMap<_, Vec<EntityId>> = HashMap::new();
        let mut known_relations: HashMap<_, Vec<RelationId>> = HashMap::new();
        if settings.filtered {
            for t in kg.known_triples() {
                known_tails.entry((t.head, t.relation)).or_default().push(t.tail);
                known_heads.entry((t.relation, t.tail)).or_default().push(t.head);
                known_relations.entry((t.head, t.tail)).or_default().push(t.relation);
            }
        }
        Ranker {
            settings: settings.clone(),
            num_entities: kg.num_entities(),
            kg_relations: kg.relations().ids_of_kind(RelationKind::Kg),
            heads_of: sorted_map(heads_of),
            tails_of: sorted_map(tails_of),
            known_tails: sorted_map(known_tails),
            known_heads: sorted_map(known_heads),
            known_relations: sorted_map(known_relations),
        }
    }

    fn with_slot(q: &Query, c: u32) -> Triple {
        let mut t = q.triple;
        match q.slot {
            Slot::Head => t.head = EntityId(c),
            Slot::Tail => t.tail = EntityId(c),
            Slot::Relation => t.relation = RelationId(c),
        }
        t
    }

    fn truth(q: &Query) -> u32 {
        match q.slot {
            Slot::Head => q.triple.head.0,
            Slot::Tail => q.triple.tail.0,
            Slot::Relation => q.triple.relation.0,
        }
    }

    /// `None` means every entity.
    fn allowed(&self, q: &Query) -> Option<Vec<u32>> {
        let r = q.triple.relation;
        let ids = |v: Option<&Vec<EntityId>>| v.map(|v| v.iter().map(|e| e.0).collect()).unwrap_or_default();
        match q.slot {
            Slot::Relation => Some(self.kg_relations.iter().map(|r| r.0).collect()),
            Slot::Head if self.settings.type_constraint => Some(ids(self.heads_of.get(&r))),
            Slot::Tail if self.settings.type_constraint => Some(ids(self.tails_of.get(&r))),
            _ => None,
        }
    }

    fn filter_list(&self, q: &Query) -> Vec<u32> {
        let t = q.triple;
        match q.slot {
            Slot::Head => self.known_heads.get(&(t.relation, t.tail)).map(|v| v.iter().map(|e| e.0).collect()),
            Slot::Tail => self.known_tails.get(&(t.head, t.relation)).map(|v| v.iter().map(|e| e.0).collect()),
            Slot::Relation => self.known_relations.get(&(t.head, t.tail)).map(|v| v.iter().map(|r| r.0).collect()),
        }
        .unwrap_or_default()
    }

    /// `1 +` the number of admissible candidates scoring strictly above the
    /// ground truth.
    pub fn rank(&self, table: &EmbeddingTable, q: &Query) -> Result<usize, EvalError> {
        let truth = Self::truth(q);
        let s = table.score(q.triple.head, q.triple.relation, q.triple.tail)?;
        let score = |c: u32| {
            let t = Self::with_slot(q, c);
            table.score_unchecked(t.head, t.relation, t.tail)
        };
        let allowed = self.allowed(q);
        let mut higher = match &allowed {
            Some(list) => list.iter().filter(|&&c| c != truth && score(c) > s).count(),
            None => (0..self.num_entities as u32).filter(|&c| c != truth && score(c) > s).count(),
        };
        for c in self.filter_list(q) {
            if c == truth {
                continue;
            }
            let admissible = allowed.as_ref().is_none_or(|l| l.binary_search(&c).is_ok());
            if admissible && score(c) > s {
                higher -= 1;
            }
        }
        Ok(1 + higher)
    }
}

/// One-off rank of `query`; build a [`Ranker`] to rank many queries.
pub fn rank_candidates(
    table: &EmbeddingTable,
    query: &Query,
    settings: &EvalSettings,
    kg: &KnowledgeGraph,
) -> Result<usize, EvalError> {
    Ranker::new(kg, settings).rank(table, query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub name: String,
    pub triples: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub settings: EvalSettings,
    pub slices: Vec<SliceReport>,
    /// Slices that were requested but had no queries.
    pub omitted: Vec<String>,
}

impl EvalReport {
    pub fn slice(&self, name: &str) -> Option<&SliceReport> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Aligned markdown table with columns MRR, MR, H@10, H@3, H@1.
    pub fn to_markdown(&self) -> String {
        let header = ["Slice", "Triples", "Queries", "MRR", "MR", "H@10", "H@3", "H@1"];
        let rows: Vec<[String; 8]> = self
            .slices
            .iter()
            .map(|s| {
                let m = &s.metrics;
                [
                    s.name.clone(),
                    s.triples.to_string(),
                    m.queries.to_string(),
                    format!("{:.3}", m.mrr),
                    format!("{:.1}", m.mr),
                    format!("{:.3}", m.hits10),
                    format!("{:.3}", m.hits3),
                    format!("{:.3}", m.hits1),
                ]
            })
            .collect();
        let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: Vec<&str>| {
            let mut s = String::from("|");
            for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
                if i == 0 {
                    let _ = write!(s, " {c:<w$} |");
                } else {
                    let _ = write!(s, " {c:>w$} |");
                }
            }
            s + "\n"
        };
        let mut out = line(header.to_vec());
        let mut sep = String::from("|");
        for (i, w) in width.iter().enumerate() {
            if i == 0 {
                let _ = write!(sep, " {} |", "-".repeat(*w));
            } else {
                let _ = write!(sep, " {}: |", "-".repeat(w - 1));
            }
        }
        out.push_str(&sep);
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
        }
        for o in &self.omitted {
            let _ = writeln!(out, "\n_{o}: no queries_");
        }
        out
    }
}

fn queries_for(task: Task, t: Triple) -> Vec<Query> {
    slots_of(task).into_iter().map(|slot| Query { triple: t, slot }).collect()
}

/// Ranks every query derived from the KG test split. Ranks are computed in
/// parallel and sliced in test-file order.
pub fn evaluate(
    table: &EmbeddingTable,
    kg: &KnowledgeGraph,
    split: &MentionSplit,
    settings: &EvalSettings,
) -> Result<EvalReport, EvalError> {
    let ranker = Ranker::new(kg, settings);
    let test = kg.test();
    let queries: Vec<(usize, Query)> = test
        .iter()
        .enumerate()
        .flat_map(|(i, t)| queries_for(settings.task, *t).into_iter().map(move |q| (i, q)))
        .collect();
    let ranks: Vec<usize> = queries
        .par_iter()
        .map(|(_, q)| ranker.rank(table, q))
        .collect::<Result<_, _>>()?;

    let with: HashSet<Triple> = split.with_mention.iter().copied().collect();
    let without: HashSet<Triple> = split.without_mention.iter().copied().collect();
    let mut report = EvalReport {
        settings: settings.clone(),
        slices: vec![],
        omitted: vec![],
    };
    let mut push = |name: String, keep: &dyn Fn(&(usize, Query)) -> bool| {
        let mut triples = HashSet::new();
        let sel: Vec<usize> = queries
            .iter()
            .zip(&ranks)
            .filter(|(q, _)| keep(q))
            .map(|(q, r)| {
                triples.insert(q.0);
                *r
            })
            .collect();
        match aggregate(&sel) {
            Ok(metrics) => report.slices.push(SliceReport {
                name,
                triples: triples.len(),
                metrics,
            }),
            Err(_) => {
                log::info!("slice {name} has no queries; omitted");
                report.omitted.push(name);
            }
        }
    };
    for slice in &settings.slices {
        match slice {
            Slice::Overall => push("overall".into(), &|_| true),
            Slice::WithMention => push("with-mention".into(), &|(i, _)| with.contains(&test[*i])),
            Slice::WithoutMention => push("without-mention".into(), &|(i, _)| without.contains(&test[*i])),
            Slice::Category => {
                let cats = relation_categories(kg.train());
                let labels: BTreeSet<&'static str> = cats.values().map(|c| c.label()).collect();
                for label in &labels {
                    for slot in slots_of(settings.task) {
                        let name = format!("category:{label}:{}", slot_name(slot));
                        push(name, &|(i, q)| {
                            q.slot == slot && cats.get(&test[*i].relation).map(|c| c.label()) == Some(*label)
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

fn slots_of(task: Task) -> Vec<Slot> {
    match task {
        Task::LinkHead => vec![Slot::Head],
        Task::LinkTail => vec![Slot::Tail],
        Task::LinkBoth => vec![Slot::Head, Slot::Tail],
        Task::Relation => vec![Slot::Relation],
    }
}

fn slot_name(s: Slot) -> &'static str {
    match s {
        Slot::Head => "head",
        Slot::Tail => "tail",
        Slot::Relation => "relation",
    }
}
