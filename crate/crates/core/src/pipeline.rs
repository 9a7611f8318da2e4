//! Config-driven experiment: load, filter, borrow, augment, train, evaluate
//! and report, with every artifact hashed into a manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::borrow::{
    borrow_topk, cooccurrence_augment, linkall_augment, train_superborrow, BorrowTargets, BorrowTrainSet,
    EncoderConfig, EntityVectors, NeighbIndex, TextualIndex,
};
use crate::dump::{DumpFormat, Matrix};
use crate::engine::{train, EmbeddingTable, ModelKind, TrainConfig};
use crate::eval::{evaluate, EvalReport, EvalSettings};
use crate::kg::{
    augment, load_textual_triples, split_mentions, write_textual_triples, EntityId, KnowledgeGraph, MentionSplit,
    TextualCorpus, TextualTriple,
};
use crate::ldp::{LdpVectorStore, DEFAULT_DIM};

type Pair = (EntityId, EntityId);
type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Vectors,
    Borrow,
    Augment,
    Train,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Vectors => "vectors",
            Stage::Borrow => "borrow",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: BoxError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

fn fail<T>(stage: Stage, msg: impl Into<String>) -> Result<T, PipelineError> {
    Err(PipelineError {
        stage,
        source: msg.into().into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BorrowMode {
    None,
    ExtractedOnly,
    Linkall,
    Cooccurrence,
    Neighb,
    Superborrow,
}

impl BorrowMode {
    pub fn name(self) -> &'static str {
        match self {
            BorrowMode::None => "none",
            BorrowMode::ExtractedOnly => "extracted-only",
            BorrowMode::Linkall => "linkall",
            BorrowMode::Cooccurrence => "cooccurrence",
            BorrowMode::Neighb => "neighb",
            BorrowMode::Superborrow => "superborrow",
        }
    }
}

impl std::str::FromStr for BorrowMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| format!("unknown borrowing mode {s:?}"))
    }
}

/// Pairs the pair encoder is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderPairs {
    /// Every distinct pair of the filtered textual corpus.
    #[default]
    Corpus,
    /// Only corpus pairs that are also head-tail pairs of KG train triples.
    KgTrain,
}

fn default_min_pairs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    /// `head<TAB>ldp<TAB>tail` corpus.
    #[serde(default)]
    pub textual: Option<PathBuf>,
    /// LDPs linking fewer distinct pairs are dropped.
    #[serde(default = "default_min_pairs")]
    pub min_ldp_pairs: usize,
    /// Keep only the subgraph induced by this many highest-degree entities.
    #[serde(default)]
    pub max_entities: Option<usize>,
}

fn default_ldp_dim() -> usize {
    DEFAULT_DIM
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_format() -> DumpFormat {
    DumpFormat::Text
}

fn default_pretrain_model() -> ModelKind {
    ModelKind::TransE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub mode: BorrowMode,
    /// LDPs borrowed per pair; superborrow only.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub targets: BorrowTargets,
    /// External LDP vectors; the fallback encoder is used when absent.
    #[serde(default)]
    pub ldp_vectors: Option<PathBuf>,
    /// Dimension of fallback LDP vectors.
    #[serde(default = "default_ldp_dim")]
    pub ldp_dim: usize,
    /// Entity vectors for borrowing; pretrained on the KG when absent.
    #[serde(default)]
    pub entity_vectors: Option<PathBuf>,
    #[serde(default = "default_pretrain_model")]
    pub pretrain_model: ModelKind,
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub encoder_pairs: EncoderPairs,
    pub model: ModelKind,
    /// Defaults to the per-model preset.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_format")]
    pub embedding_format: DumpFormat,
}

impl RunConfig {
    /// Parses a JSON config; relative paths are taken from the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display())).at(Stage::Config)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("{}: {e}", path.display()))
            .at(Stage::Config)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.train);
        fix(&mut self.dataset.valid);
        fix(&mut self.dataset.test);
        for p in [&mut self.dataset.textual, &mut self.ldp_vectors, &mut self.entity_vectors]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_else(|| TrainConfig::preset(self.model));
        t.seed = self.seed;
        t
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        let mut t = self.pretrain.clone().unwrap_or_else(|| TrainConfig {
            dim: 100,
            ..TrainConfig::preset(self.pretrain_model)
        });
        t.seed = self.seed.wrapping_add(1);
        t
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed.wrapping_add(2),
            ..self.encoder.clone()
        }
    }

    fn fallback_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let s = Stage::Config;
        match (self.mode, self.k) {
            (BorrowMode::Superborrow, None) => return fail(s, "superborrow needs k"),
            (BorrowMode::Superborrow, Some(0)) => return fail(s, "k must be at least 1"),
            (BorrowMode::Superborrow, Some(_)) => {}
            (m, Some(_)) => return fail(s, format!("k is only used by superborrow, not {}", m.name())),
            (_, None) => {}
        }
        if self.mode != BorrowMode::None && self.dataset.textual.is_none() {
            return fail(s, format!("mode {} needs dataset.textual", self.mode.name()));
        }
        let mut paths = vec![&self.dataset.train, &self.dataset.valid, &self.dataset.test];
        paths.extend(self.dataset.textual.iter());
        paths.extend(self.ldp_vectors.iter());
        paths.extend(self.entity_vectors.iter());
        for p in paths {
            if !p.exists() {
                return fail(s, format!("{} does not exist", p.display()));
            }
        }
        if self.dataset.min_ldp_pairs == 0 {
            return fail(s, "min_ldp_pairs must be at least 1");
        }
        if self.ldp_dim == 0 {
            return fail(s, "ldp_dim must be at least 1");
        }
        self.train_config().validate().at(s)?;
        if matches!(self.mode, BorrowMode::Neighb | BorrowMode::Superborrow) && self.entity_vectors.is_none() {
            self.pretrain_config().validate().at(s)?;
        }
        if self.mode == BorrowMode::Superborrow {
            self.encoder_config().validate().at(s)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub mode: BorrowMode,
    pub model: ModelKind,
    pub stages: Vec<StageRecord>,
    /// Artifact path (relative to the output directory) to hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
    pub complete: bool,
}

impl Manifest {
    fn new(cfg: &RunConfig) -> Self {
        Manifest {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            mode: cfg.mode,
            model: cfg.model,
            stages: vec![],
            artifacts: BTreeMap::new(),
            counts: BTreeMap::new(),
            complete: false,
        }
    }

    fn done(&mut self, stage: Stage) {
        self.stages.push(StageRecord {
            stage,
            ok: true,
            error: None,
        });
    }

    fn record(&mut self, out: &Path, rel: &str) -> Result<(), PipelineError> {
        let bytes = fs::read(out.join(rel)).map_err(|e| format!("{rel}: {e}")).at(Stage::Report)?;
        self.artifacts.insert(rel.to_owned(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn write(&self, out: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self).at(Stage::Report)? + "\n";
        fs::write(out.join("manifest.json"), json).at(Stage::Report)
    }
}

/// Loaded graph, filtered corpus and mention split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kg: KnowledgeGraph,
    pub corpus: TextualCorpus,
    pub split: MentionSplit,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    let d = &cfg.dataset;
    let mut kg = KnowledgeGraph::load(&d.train, &d.valid, &d.test).at(Stage::Load)?;
    if let Some(n) = d.max_entities {
        kg = kg.induced_top_degree(n).at(Stage::Load)?;
        log::info!(
            "induced subgraph: {} entities, {} train triples",
            kg.num_entities(),
            kg.train().len()
        );
    }
    let corpus = match &d.textual {
        Some(p) => {
            let (corpus, report) = load_textual_triples(p, d.min_ldp_pairs, kg.entities()).at(Stage::Load)?;
            log::info!(
                "textual corpus: {} triples over {} LDPs kept ({} LDPs below threshold)",
                report.triples_kept,
                report.ldps_kept,
                report.ldps_below_threshold
            );
            corpus
        }
        None => TextualCorpus::default(),
    };
    let split = split_mentions(kg.test(), &corpus);
    Ok(Prepared { kg, corpus, split })
}

/// Distinct pairs of the chosen KG splits that have no textual mention,
/// in first-occurrence order.
pub fn target_pairs(kg: &KnowledgeGraph, mentioned: &HashSet<Pair>, targets: BorrowTargets) -> Vec<Pair> {
    let mut sources: Vec<&[crate::kg::Triple]> = vec![];
    if matches!(targets, BorrowTargets::Train | BorrowTargets::All) {
        sources.push(kg.train());
    }
    if matches!(targets, BorrowTargets::Test | BorrowTargets::All) {
        sources.push(kg.test());
    }
    let mut seen = HashSet::new();
    sources
        .into_iter()
        .flatten()
        .map(|t| t.pair())
        .filter(|p| !mentioned.contains(p) && seen.insert(*p))
        .collect()
}

fn load_entity_vectors(path: &Path, kg: &KnowledgeGraph) -> Result<EntityVectors, BoxError> {
    let m = Matrix::<f64>::read(path)?;
    let rows: HashMap<&str, usize> = m.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let mut data = Vec::with_capacity(kg.num_entities() * m.dim);
    for (id, surface) in kg.entities().iter() {
        let row = rows
            .get(surface)
            .or_else(|| rows.get(id.to_string().as_str()))
            .ok_or_else(|| format!("{}: no vector for entity {surface:?}", path.display()))?;
        data.extend_from_slice(m.row(*row));
    }
    Ok(EntityVectors::new(m.dim, data)?)
}

/// Result of the borrowing stage.
#[derive(Debug, Clone)]
pub struct Borrowed {
    /// Training graph after augmentation.
    pub kg: KnowledgeGraph,
    /// Borrowed textual triples (neighb and superborrow only).
    pub triples: Vec<TextualTriple>,
    pub targets: Vec<Pair>,
    pub encoder: Option<crate::borrow::TrainedEncoder>,
}

fn entity_vectors(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<EntityVectors, PipelineError> {
    match &cfg.entity_vectors {
        Some(p) => load_entity_vectors(p, kg).at(Stage::Vectors),
        None => {
            log::info!("pretraining {} entity vectors", cfg.pretrain_model);
            let out = train(kg, cfg.pretrain_model, &cfg.pretrain_config()).at(Stage::Vectors)?;
            Ok(EntityVectors::from_table(&out.table))
        }
    }
}

pub fn borrow_stage(cfg: &RunConfig, prep: &Prepared) -> Result<Borrowed, PipelineError> {
    let Prepared { kg, corpus, .. } = prep;
    let mentioned = corpus.pair_set();
    let targets = match cfg.mode {
        BorrowMode::Linkall | BorrowMode::Neighb | BorrowMode::Superborrow => {
            target_pairs(kg, &mentioned, cfg.targets)
        }
        _ => vec![],
    };
    let mut borrowed = vec![];
    let mut encoder = None;
    match cfg.mode {
        BorrowMode::Neighb => {
            let ents = entity_vectors(cfg, kg)?;
            let index = NeighbIndex::new(&TextualIndex::from_corpus(corpus));
            borrowed = index.borrow(&targets, &ents).at(Stage::Borrow)?;
        }
        BorrowMode::Superborrow => {
            let ents = entity_vectors(cfg, kg)?;
            let store = match &cfg.ldp_vectors {
                Some(p) => LdpVectorStore::load_vectors(p, &corpus.ldps).at(Stage::Vectors)?.0,
                None => LdpVectorStore::from_fallback(&corpus.ldps, cfg.ldp_dim, cfg.fallback_seed()).at(Stage::Vectors)?,
            };
            let index = TextualIndex::from_corpus(corpus);
            let only: Option<HashSet<Pair>> = match cfg.encoder_pairs {
                EncoderPairs::Corpus => None,
                EncoderPairs::KgTrain => Some(kg.train().iter().map(|t| t.pair()).collect()),
            };
            let set = BorrowTrainSet::build(&index, only.as_ref());
            log::info!(
                "pair encoder training set: {} pairs, {} positives",
                set.len(),
                set.positive_count()
            );
            let trained = train_superborrow(&set, &ents, &store, &cfg.encoder_config()).at(Stage::Borrow)?;
            let k = cfg.k.unwrap_or(1);
            borrowed = borrow_topk(&trained.encoder, &ents, &targets, k, &store).at(Stage::Borrow)?;
            encoder = Some(trained);
        }
        _ => {}
    }
    let kg_aug = match cfg.mode {
        BorrowMode::None => kg.clone(),
        BorrowMode::Cooccurrence => {
            let mut g = kg.clone();
            let triples = cooccurrence_augment(g.relations_mut(), &corpus.pairs());
            g.extend_train(&triples).at(Stage::Augment)?;
            g
        }
        BorrowMode::ExtractedOnly => augment(kg, corpus).at(Stage::Augment)?,
        BorrowMode::Linkall => {
            let mut g = augment(kg, corpus).at(Stage::Augment)?;
            let triples = linkall_augment(g.relations_mut(), &targets);
            g.extend_train(&triples).at(Stage::Augment)?;
            g
        }
        BorrowMode::Neighb | BorrowMode::Superborrow => {
            let mut all = corpus.clone();
            all.triples.extend_from_slice(&borrowed);
            augment(kg, &all).at(Stage::Augment)?
        }
    };
    Ok(Borrowed {
        kg: kg_aug,
        triples: borrowed,
        targets,
        encoder,
    })
}

pub fn export_embeddings(table: &EmbeddingTable, dir: &Path, format: DumpFormat) -> Result<(), PipelineError> {
    if !table.is_finite() {
        return fail(Stage::Report, "embeddings contain non-finite values");
    }
    fs::create_dir_all(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))
        .at(Stage::Report)?;
    table.save(dir, format).at(Stage::Report)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub manifest: Manifest,
}

/// Runs every stage and writes the artifacts into `cfg.output_dir`. On
/// failure the manifest is still written, marked incomplete.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)
        .map_err(|e| format!("{}: {e}", out.display()))
        .at(Stage::Config)?;
    let mut manifest = Manifest::new(cfg);
    manifest.done(Stage::Config);
    match run_stages(cfg, &out, &mut manifest) {
        Ok(report) => {
            manifest.complete = true;
            manifest.write(&out)?;
            Ok(RunOutcome { report, manifest })
        }
        Err(e) => {
            manifest.stages.push(StageRecord {
                stage: e.stage,
                ok: false,
                error: Some(e.source.to_string()),
            });
            let _ = manifest.write(&out);
            Err(e)
        }
    }
}

fn run_stages(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<EvalReport, PipelineError> {
    let prep = prepare(cfg)?;
    manifest.done(Stage::Load);
    manifest.counts.insert("entities".into(), prep.kg.num_entities());
    manifest.counts.insert("train_triples".into(), prep.kg.train().len());
    manifest.counts.insert("test_triples".into(), prep.kg.test().len());
    manifest.counts.insert("textual_triples".into(), prep.corpus.triples.len());
    manifest.counts.insert("ldps".into(), prep.corpus.ldps.len());
    manifest.counts.insert("test_with_mention".into(), prep.split.with_mention.len());
    manifest.counts.insert("test_without_mention".into(), prep.split.without_mention.len());

    let b = borrow_stage(cfg, &prep)?;
    manifest.done(Stage::Borrow);
    manifest.counts.insert("target_pairs".into(), b.targets.len());
    manifest.counts.insert("borrowed_triples".into(), b.triples.len());
    manifest.counts.insert("augmentation_triples".into(), b.kg.augmentation().len());
    manifest.counts.insert("relations".into(), b.kg.num_relations());
    if matches!(cfg.mode, BorrowMode::Neighb | BorrowMode::Superborrow) {
        write_textual_triples(&out.join("borrowed.tsv"), &b.triples, b.kg.entities(), &prep.corpus.ldps)
            .at(Stage::Report)?;
        manifest.record(out, "borrowed.tsv")?;
    }
    if let Some(enc) = &b.encoder {
        enc.encoder.save(&out.join("encoder"), DumpFormat::Binary).at(Stage::Report)?;
        let mut csv = String::from("epoch,mean_hinge\n");
        for (i, l) in enc.loss_trace.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i + 1, l));
        }
        fs::write(out.join("encoder_loss.csv"), csv).at(Stage::Report)?;
        manifest.record(out, "encoder_loss.csv")?;
    }

    let trained = train(&b.kg, cfg.model, &cfg.train_config()).at(Stage::Train)?;
    manifest.done(Stage::Train);
    fs::write(out.join("loss.csv"), trained.loss_csv()).at(Stage::Report)?;
    manifest.record(out, "loss.csv")?;

    let report = evaluate(&trained.table, &b.kg, &prep.split, &cfg.eval).at(Stage::Evaluate)?;
    manifest.done(Stage::Evaluate);

    let emb = out.join("embeddings");
    export_embeddings(&trained.table, &emb, cfg.embedding_format)?;
    b.kg.entities().dump(&emb.join("entity_names.tsv")).at(Stage::Report)?;
    b.kg.relations().dump(&emb.join("relation_names.tsv")).at(Stage::Report)?;
    let (e, r) = match cfg.embedding_format {
        DumpFormat::Text => ("embeddings/entities.tsv", "embeddings/relations.tsv"),
        DumpFormat::Binary => ("embeddings/entities.bin", "embeddings/relations.bin"),
    };
    for rel in [e, r, "embeddings/entity_names.tsv", "embeddings/relation_names.tsv"] {
        manifest.record(out, rel)?;
    }
    fs::write(out.join("report.json"), report.to_json()).at(Stage::Report)?;
    fs::write(out.join("report.md"), report.to_markdown()).at(Stage::Report)?;
    manifest.record(out, "report.json")?;
    manifest.record(out, "report.md")?;
    manifest.done(Stage::Report);
    Ok(report)
}
