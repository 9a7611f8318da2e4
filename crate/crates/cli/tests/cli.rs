use std::path::Path;
use std::process::{Command, Output};

fn kgborrow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgborrow"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = r#"{
  "dataset": {"train": "data/train.txt", "valid": "data/valid.txt", "test": "data/test.txt",
              "textual": "data/textual.txt", "min_ldp_pairs": 1},
  "mode": "superborrow",
  "k": 2,
  "entity_vectors": "data/entity_vectors.tsv",
  "ldp_dim": 16,
  "encoder": {"hidden_dim": 16, "epochs": 2},
  "model": "distmult",
  "train": {"learning_rate": 0.5, "dim": 8, "negatives_per_positive": 2, "loss": "softplus", "epochs": 3},
  "output_dir": "out"
}"#;

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let o = kgborrow(tmp.path(), &["synth", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::write(tmp.path().join("run.json"), CONFIG).unwrap();
    tmp
}

#[test]
fn run_writes_report_and_prints_table() {
    let tmp = workspace();
    let o = kgborrow(tmp.path(), &["run", "--config", "run.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("| without-mention"));
    for f in ["report.json", "report.md", "borrowed.tsv", "manifest.json", "embeddings/entities.tsv"] {
        assert!(tmp.path().join("out").join(f).is_file(), "{f}");
    }
}

#[test]
fn seed_and_out_overrides() {
    let tmp = workspace();
    let o = kgborrow(tmp.path(), &["run", "--config", "run.json", "--seed", "5", "--out", "other"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(tmp.path().join("other/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 5"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn borrow_writes_triples() {
    let tmp = workspace();
    let o = kgborrow(tmp.path(), &["borrow", "--config", "run.json", "--mode", "neighb", "--out", "nb.tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("nb.tsv")).unwrap();
    assert!(!text.is_empty());
    assert!(text.lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn export_converts_formats() {
    let tmp = workspace();
    assert!(kgborrow(tmp.path(), &["run", "--config", "run.json"]).status.success());
    let o = kgborrow(tmp.path(), &["export", "--embeddings", "out/embeddings", "--format", "binary", "--out", "bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("bin/entities.bin").is_file());
    assert!(tmp.path().join("bin/entity_names.tsv").is_file());
    let o = kgborrow(tmp.path(), &["export", "--embeddings", "bin", "--format", "text", "--out", "txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("distmult, d=8"));
}

#[test]
fn failures_name_the_stage() {
    let tmp = workspace();
    let bad = CONFIG.replace("\"k\": 2", "\"k\": 0");
    std::fs::write(tmp.path().join("bad.json"), bad).unwrap();
    let o = kgborrow(tmp.path(), &["run", "--config", "bad.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error: [config]"), "{}", stderr(&o));

    std::fs::write(tmp.path().join("data/test.txt"), "a\tb\n").unwrap();
    let o = kgborrow(tmp.path(), &["run", "--config", "run.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error: [load]"), "{}", stderr(&o));

    let o = kgborrow(tmp.path(), &["export", "--embeddings", "missing", "--out", "x"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no entities.bin or entities.tsv"));
}
