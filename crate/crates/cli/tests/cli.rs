use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn varrate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varrate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = varrate(dir, args);
    assert!(
        out.status.success(),
        "varrate {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = varrate(dir, args);
    assert!(!out.status.success(), "varrate {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

const SPEC: &str = r#"{
    "documents": 60,
    "doc_length": { "min": 150, "max": 250 },
    "reference_length": 200,
    "seed": 3,
    "words": { "kind": "zipf", "size": 80, "exponent": 1.0,
               "shape_min": 0.2, "shape_max": 1.5, "poisson_top": 5 },
    "collocations": { "kind": "random", "count": 10, "share": 0.05, "shape": 0.5 }
}"#;

/// A synthetic corpus split into `train.txt` (50 docs) and `test.txt`
/// (10 docs), ingested into `ingest/` and fitted into `model.lm`.
struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let p = dir.path();
        fs::write(p.join("spec.json"), SPEC).unwrap();
        ok(p, &["synth", "--spec", "spec.json", "--out", "all.txt"]);
        let text = fs::read_to_string(p.join("all.txt")).unwrap();
        let docs: Vec<&str> = text.trim_end().split("\n\n").collect();
        assert_eq!(docs.len(), 60);
        fs::write(p.join("train.txt"), docs[..50].join("\n\n")).unwrap();
        fs::write(p.join("test.txt"), docs[50..].join("\n\n")).unwrap();
        ok(p, &["ingest", "--corpus", "train.txt", "--min-doc-len", "1", "--out", "ingest"]);
        ok(p, &["fit", "--counts", "ingest", "--out", "model.lm"]);
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn perplexity(stdout: &str) -> f64 {
    let field = stdout.split_whitespace().find_map(|f| f.strip_prefix("perplexity=")).unwrap();
    field.parse().unwrap()
}

#[test]
fn ingest_prints_summary_and_filters_short_documents() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("c.txt"), "a b c a\nb\n\nc c\n\n\nd a b b a\n").unwrap();
    let out = ok(p, &["ingest", "--corpus", "c.txt", "--min-doc-len", "3", "--out", "o"]);
    assert_eq!(out.trim(), "docs=2 tokens=10 types=4");
    let vocab = fs::read_to_string(p.join("o/vocab.txt")).unwrap();
    assert_eq!(vocab.lines().collect::<Vec<_>>(), ["<UNK>", "A", "B", "C", "D"]);
    let counts = fs::read_to_string(p.join("o/counts.csv")).unwrap();
    assert_eq!(counts.lines().next(), Some("event,doc_index,count,doc_length,scaled_count"));
    assert!(counts.contains("A B,0,2,5,400"));
    assert!(counts.contains("B C,0,1,5,200"));
    assert!(counts.contains("B,1,2,5,400"));
}

#[test]
fn ingest_marker_mode_and_vocabulary_limit() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("c.txt"), "<DOC>\nx y x\n<DOC>\ny z\nx x\n").unwrap();
    let out = ok(
        p,
        &["ingest", "--corpus", "c.txt", "--delimiter", "marker:<DOC>", "--min-doc-len", "1", "--vocab-size", "1", "--out", "o"],
    );
    assert_eq!(out.trim(), "docs=2 tokens=7 types=2");
    let vocab = fs::read_to_string(p.join("o/vocab.txt")).unwrap();
    assert_eq!(vocab.lines().collect::<Vec<_>>(), ["<UNK>", "X"]);
}

#[test]
fn ingest_errors() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    assert!(fails(p, &["ingest", "--corpus", "missing.txt", "--out", "o"]).contains("missing.txt"));
    fs::write(p.join("short.txt"), "a b\n\nc\n").unwrap();
    fails(p, &["ingest", "--corpus", "short.txt", "--out", "o"]);
    fs::write(p.join("empty.txt"), "").unwrap();
    fails(p, &["ingest", "--corpus", "empty.txt", "--min-doc-len", "1", "--out", "o"]);
    assert!(!p.join("o/counts.csv").exists());
}

#[test]
fn fit_writes_model_and_summary() {
    let run = Pipeline::new();
    assert!(run.file("model.lm").exists());
    let summary = fs::read_to_string(run.file("model.lm.fit.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next(),
        Some("event,raw_count,family,alpha,beta,lambda,sample_mean,sample_variance")
    );
    assert!(lines.count() > 80);

    ok(run.path(), &["fit", "--counts", "ingest/counts.csv", "--family", "poisson", "--N", "200", "--out", "p.lm"]);
    let summary = fs::read_to_string(run.file("p.lm.fit.csv")).unwrap();
    for line in summary.lines().skip(1) {
        let family = line.split(',').nth(2).unwrap();
        assert!(family == "poisson" || family == "degenerate", "{line}");
    }
    assert!(fs::read_to_string(run.file("p.lm")).unwrap().contains("doc_length 200"));
    fails(run.path(), &["fit", "--counts", "nowhere", "--out", "x.lm"]);
}

#[test]
fn eval_reports_and_constant_mode_ignores_window() {
    let run = Pipeline::new();
    let p = run.path();
    let out = ok(p, &["eval", "--model", "model.lm", "--test", "test.txt", "--report", "r.json", "--trace", "t.csv"]);
    let ppl = perplexity(&out);
    // Well below the uniform 81-word model.
    assert!(ppl > 1.0 && ppl < 81.0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.file("r.json")).unwrap()).unwrap();
    assert!((report["perplexity"].as_f64().unwrap() - ppl).abs() < 1e-3);
    assert_eq!(report["options"]["window"], 500);
    let trace = fs::read_to_string(run.file("t.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("position,document,token,log_prob"));

    let a = ok(p, &["eval", "--model", "model.lm", "--test", "test.txt", "--mode", "constant", "--window", "10"]);
    let b = ok(p, &["eval", "--model", "model.lm", "--test", "test.txt", "--mode", "constant", "--window", "900"]);
    assert_eq!(a, b);

    let c = ok(p, &["eval", "--model", "model.lm", "--test", "test.txt", "--order", "2", "--smoothing", "backoff", "--discount", "gt", "--reset-on-doc"]);
    assert!(perplexity(&c).is_finite());
}

#[test]
fn eval_rejects_foreign_test_text() {
    let run = Pipeline::new();
    fs::write(run.file("foreign.txt"), "lorem ipsum dolor\n").unwrap();
    let err = fails(run.path(), &["eval", "--model", "model.lm", "--test", "foreign.txt"]);
    assert!(err.contains("vocabulary"), "{err}");
    fails(run.path(), &["eval", "--model", "model.lm", "--test", "test.txt", "--order", "3"]);
}

#[test]
fn sweep_matches_eval() {
    let run = Pipeline::new();
    let p = run.path();
    ok(p, &["sweep", "--model", "model.lm", "--test", "test.txt", "--windows", "50,300", "--out", "s.csv"]);
    let csv = fs::read_to_string(run.file("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,perplexity");
    assert_eq!(lines.len(), 3);
    let swept: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    let single = perplexity(&ok(p, &["eval", "--model", "model.lm", "--test", "test.txt", "--window", "300"]));
    assert!((swept - single).abs() < 1e-3);
    fails(p, &["sweep", "--model", "model.lm", "--test", "test.txt", "--windows", "", "--out", "e.csv"]);
    assert!(!run.file("e.csv").exists());
}

#[test]
fn config_supplies_defaults() {
    let run = Pipeline::new();
    let p = run.path();
    fs::write(
        run.file("cfg.json"),
        r#"{ "model": "model.lm", "test": "test.txt", "eval": { "window": 40 }, "sweep": { "windows": [40] } }"#,
    )
    .unwrap();
    let from_config = ok(p, &["--config", "cfg.json", "eval"]);
    let explicit = ok(p, &["eval", "--model", "model.lm", "--test", "test.txt", "--window", "40"]);
    assert_eq!(from_config, explicit);
    let overridden = ok(p, &["--config", "cfg.json", "eval", "--window", "500"]);
    let default = ok(p, &["eval", "--model", "model.lm", "--test", "test.txt"]);
    assert_eq!(overridden, default);
    ok(p, &["--config", "cfg.json", "sweep", "--out", "s.csv"]);
    assert_eq!(fs::read_to_string(run.file("s.csv")).unwrap().lines().count(), 2);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("spec.json"), SPEC).unwrap();
    ok(p, &["synth", "--spec", "spec.json", "--out", "a.txt"]);
    ok(p, &["synth", "--spec", "spec.json", "--out", "b.txt"]);
    ok(p, &["synth", "--spec", "spec.json", "--seed", "4", "--out", "c.txt"]);
    let read = |f: &str| fs::read(p.join(f)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_ne!(read("a.txt"), read("c.txt"));
    let truth: serde_json::Value = serde_json::from_slice(&read("a.txt.truth.json")).unwrap();
    assert_eq!(truth["words"].as_array().unwrap().len(), 80);

    fs::write(p.join("bad.json"), r#"{ "documents": 0 }"#).unwrap();
    fails(p, &["synth", "--spec", "bad.json", "--out", "d.txt"]);
    assert!(!p.join("d.txt").exists());
}

#[test]
fn exports() {
    let run = Pipeline::new();
    let p = run.path();
    ok(p, &["export", "profile", "--model", "model.lm", "--event", "W0001", "--N", "30", "--out", "prof.csv"]);
    let prof = fs::read_to_string(run.file("prof.csv")).unwrap();
    let rows: Vec<Vec<f64>> = prof
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 31);
    let mass: f64 = rows.iter().map(|r| r[1]).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    assert_eq!(rows[30][2], 1.0);
    assert!(rows.windows(2).all(|w| w[1][2] >= w[0][2]));

    ok(p, &["export", "histogram", "--counts", "ingest", "--event", "W0002", "--out", "hist.csv"]);
    let hist = fs::read_to_string(run.file("hist.csv")).unwrap();
    let docs: u64 = hist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(docs, 50);
    fails(p, &["export", "profile", "--model", "model.lm", "--event", "NOPE", "--out", "x.csv"]);
}
