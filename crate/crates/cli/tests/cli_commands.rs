use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use spanib_cli::manifest::read_manifest;

fn spanib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanib")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Data {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Data {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let out = spanib(&[
            "synth",
            "--set",
            "train_sentences=30",
            "--set",
            "dev_sentences=8",
            "--set",
            "test_sentences=8",
            "--out",
            s(&root.join("data")),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Data { _dir: dir, root }
    }

    fn split(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.conll"))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.out(name);
        let (train, dev) = (self.split("train"), self.split("dev"));
        let mut args = vec!["train", "--train", s(&train), "--dev", s(&dev), "--set", "train.epochs=2"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", s(&out)]);
        let o = spanib(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }
}

fn assert_manifest_matches(dir: &Path) {
    let manifest = read_manifest(dir).unwrap();
    assert!(!manifest.artifacts.is_empty());
    for a in &manifest.artifacts {
        let bytes = std::fs::read(dir.join(&a.path)).unwrap();
        assert_eq!(bytes.len() as u64, a.bytes, "{}", a.path);
        assert_eq!(hex::encode(Sha256::digest(&bytes)), a.sha256, "{}", a.path);
    }
}

#[test]
fn train_writes_hashed_artifacts_and_default_weights() {
    let data = Data::new();
    let run = data.train("run", &[]);
    assert_manifest_matches(&run);
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["weights"]["gamma"], 0.01);
    assert_eq!(resolved["train"]["weights"]["beta"], 1e-5);
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("checkpoints.json")).unwrap()).unwrap();
    for entry in index.as_array().unwrap() {
        assert!(run.join(entry["file"].as_str().unwrap()).is_file());
    }
}

#[test]
fn base_only_logs_zero_auxiliary_columns() {
    let data = Data::new();
    let run = data.train("base", &["--set", "train.mode=base-only"]);
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,epoch,base,gi,si,total,dev_f1"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!((cols[3], cols[4]), ("0", "0"), "{line}");
        assert_eq!(cols[2], cols[5]);
    }
}

#[test]
fn eval_reports_partition_and_rejects_mismatched_config() {
    let data = Data::new();
    let run = data.train("run", &[]);
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("checkpoints.json")).unwrap()).unwrap();
    let ckpt = run.join(index[0]["file"].as_str().unwrap());
    let (test, train) = (data.split("test"), data.split("train"));
    let out = data.out("eval");
    let o = spanib(&["eval", "--checkpoint", s(&ckpt), "--test", s(&test), "--train", s(&train), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["eval_overall.csv", "eval_partition.csv", "eval_report.json", "predictions.conll"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_manifest_matches(&out);

    let bad = data.out("bad");
    let o = spanib(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&test),
        "--set",
        "model.latent_dim=3",
        "--out",
        s(&bad),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let empty = data.out("empty.conll");
    std::fs::write(&empty, "").unwrap();
    let o = spanib(&["eval", "--checkpoint", s(&ckpt), "--test", s(&empty), "--out", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    let data = Data::new();
    let train = data.split("train");
    let missing = data.out("nope.conll");
    let out = data.out("x");
    let o = spanib(&["train", "--train", s(&missing), "--dev", s(&train), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = spanib(&["train", "--train", s(&train), "--dev", s(&train), "--set", "train.bogus=1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analyze_writes_oov_table() {
    let data = Data::new();
    let (train, test) = (data.split("train"), data.split("test"));
    let out = data.out("stats");
    let o = spanib(&[
        "analyze", "--train", s(&train), "--test", s(&test), "--name", "unseen", "--test", s(&train), "--name",
        "seen", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("dataset_stats.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dataset,sents,entities,oov_rate");
    assert!(lines[1].starts_with("unseen,") && lines[1].ends_with(",1.00"), "{}", lines[1]);
    assert!(lines[2].starts_with("seen,") && lines[2].ends_with(",0.00"), "{}", lines[2]);
    assert_manifest_matches(&out);
}

#[test]
fn augment_modes_write_their_outputs() {
    let data = Data::new();
    let (train, dev, test) = (data.split("train"), data.split("dev"), data.split("test"));

    let out = data.out("replace");
    let o = spanib(&["augment", "--input", s(&train), "--mode", "replace", "--lexicon", s(&dev), "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let aligned = std::fs::read_to_string(out.join("alignment.jsonl")).unwrap();
    let original = std::fs::read_to_string(&train).unwrap();
    let sentences = original.split("\n\n").filter(|b| !b.trim().is_empty()).count();
    assert_eq!(aligned.lines().count(), sentences);
    assert!(out.join("augmented.conll").is_file());
    assert_manifest_matches(&out);

    let out = data.out("typos");
    let o = spanib(&["augment", "--input", s(&test), "--mode", "typos", "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(out.join("typos.conll").is_file());

    let out = data.out("oov");
    let o = spanib(&[
        "augment", "--input", s(&test), "--mode", "oov-test", "--train", s(&train), "--holdout", s(&test), "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let coverage: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("coverage.json")).unwrap()).unwrap();
    assert_eq!(coverage["oov_vs_train"]["oov_rate"], 1.0);

    let o = spanib(&[
        "augment", "--input", s(&test), "--mode", "oov-test", "--train", s(&train), "--holdout", s(&train), "--out",
        s(&data.out("overlap")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
