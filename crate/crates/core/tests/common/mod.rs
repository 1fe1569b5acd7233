#![allow(dead_code)]

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use varrate::corpus::{count_events, Document, RawDocument, VocabLimit, Vocabulary};
use varrate::lm::{DiscountScheme, FitOptions, LanguageModel};
use varrate::ratemodel::FitPolicy;
use varrate::synth::{generate, GenerativeSpec};

static SERIAL: Mutex<()> = Mutex::new(());

/// Timed checks hold this so their wall-clock budgets are not shared with
/// other tests running in parallel.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Print one summary line straight to stderr so it shows without
/// `--nocapture`.
pub fn report(name: &str, passed: bool, detail: &str, elapsed: Duration) {
    let status = if passed { "PASS" } else { "FAIL" };
    let line = format!(
        "[{status}] {name}: {detail} [{:.2} s]\n",
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

pub fn fit_documents(train: &[RawDocument], options: FitOptions) -> LanguageModel {
    let vocab = Vocabulary::build(train, VocabLimit::Unlimited);
    let docs: Vec<Document> = train.iter().map(|d| vocab.encode(d).0).collect();
    let counts = count_events(&docs, &vocab);
    LanguageModel::fit(vocab, &counts, options).expect("fit")
}

/// A small bursty Zipf corpus: `docs` documents of 150-250 tokens over
/// `vocab` words.
pub fn toy_spec(seed: u64, vocab: usize, docs: usize) -> GenerativeSpec {
    GenerativeSpec::from_json(&format!(
        r#"{{
            "documents": {docs},
            "doc_length": {{ "min": 150, "max": 250 }},
            "reference_length": 200,
            "seed": {seed},
            "words": {{ "kind": "zipf", "size": {vocab}, "exponent": 0.9,
                       "shape_min": 0.1, "shape_max": 2.0, "poisson_top": 5 }},
            "collocations": {{ "kind": "random", "count": {pairs}, "share": 0.1, "shape": 0.5 }}
        }}"#,
        pairs = vocab / 2
    ))
    .expect("valid spec")
}

/// Model trained on all but the last `test_docs` documents of a toy corpus,
/// plus those held-out documents.
pub fn toy_setup(
    seed: u64,
    vocab: usize,
    docs: usize,
    test_docs: usize,
    policy: FitPolicy,
    scheme: DiscountScheme,
) -> (LanguageModel, Vec<RawDocument>) {
    let corpus = generate(&toy_spec(seed, vocab, docs + test_docs)).expect("generate");
    let (train, test) = corpus.documents.split_at(docs);
    let lm = fit_documents(
        train,
        FitOptions {
            doc_length: 200,
            policy,
            discount: scheme,
        },
    );
    (lm, test.to_vec())
}
