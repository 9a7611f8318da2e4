use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail};
use clap::{Parser, Subcommand};

use kgborrow_core::dump::DumpFormat;
use kgborrow_core::engine::EmbeddingTable;
use kgborrow_core::kg::write_textual_triples;
use kgborrow_core::pipeline::{self, BorrowMode, RunConfig};
use kgborrow_core::synthetic::{Planted, PlantedConfig};

#[derive(Parser)]
#[command(name = "kgborrow", version, about = "Text-augmented KG embeddings with LDP borrowing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, borrow, augment, train, evaluate and write every artifact.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run only the borrowing stage and write the borrowed textual triples.
    Borrow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<BorrowMode>,
        #[arg(long)]
        k: Option<usize>,
        /// Destination TSV (`head<TAB>ldp<TAB>tail`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert saved embeddings between the text and binary formats.
    Export {
        /// Directory holding `entities.*` and `relations.*`.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "text")]
        format: DumpFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a planted-structure dataset plus its entity vectors.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    Ok(RunConfig::load(path)?)
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let outcome = pipeline::run(&cfg)?;
    print!("{}", outcome.report.to_markdown());
    log::info!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn borrow(config: &Path, mode: Option<BorrowMode>, k: Option<usize>, out: &Path) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.mode = m;
        if m != BorrowMode::Superborrow {
            cfg.k = None;
        }
    }
    if k.is_some() {
        cfg.k = k;
    }
    cfg.validate()?;
    let prep = pipeline::prepare(&cfg)?;
    let borrowed = pipeline::borrow_stage(&cfg, &prep)?;
    write_textual_triples(out, &borrowed.triples, borrowed.kg.entities(), &prep.corpus.ldps)?;
    println!(
        "{} borrowed triples for {} target pairs written to {}",
        borrowed.triples.len(),
        borrowed.targets.len(),
        out.display()
    );
    Ok(())
}

fn export(src: &Path, format: DumpFormat, out: &Path) -> anyhow::Result<()> {
    let source = if src.join("entities.bin").is_file() {
        DumpFormat::Binary
    } else if src.join("entities.tsv").is_file() {
        DumpFormat::Text
    } else {
        bail!("{}: no entities.bin or entities.tsv", src.display());
    };
    let table = EmbeddingTable::load(src, source)?;
    pipeline::export_embeddings(&table, out, format)?;
    for names in ["entity_names.tsv", "relation_names.tsv"] {
        let from = src.join(names);
        if from.is_file() && from != out.join(names) {
            std::fs::copy(&from, out.join(names)).map_err(|e| anyhow!("copying {}: {e}", from.display()))?;
        }
    }
    println!(
        "{} entities, {} relations ({}, d={}) written to {}",
        table.num_entities(),
        table.num_relations(),
        table.kind(),
        table.dim(),
        out.display()
    );
    Ok(())
}

fn synth(out: &Path, seed: u64) -> anyhow::Result<()> {
    let planted = Planted::generate(&PlantedConfig {
        seed,
        ..PlantedConfig::default()
    })?;
    planted.write(out)?;
    planted.write_entity_vectors(&out.join("entity_vectors.tsv"))?;
    println!(
        "{} entities, {} KG triples, {} textual triples written to {}",
        planted.kg.num_entities(),
        planted.kg.train().len() + planted.kg.valid().len() + planted.kg.test().len(),
        planted.corpus.triples.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out),
        Command::Borrow { config, mode, k, out } => borrow(&config, mode, k, &out),
        Command::Export { embeddings, format, out } => export(&embeddings, format, &out),
        Command::Synth { out, seed } => synth(&out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
