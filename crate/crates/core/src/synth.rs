//! Seeded generator of bursty corpora with known rate parameters.
//!
//! Every word (and optional collocation pair) has a Poisson or negative
//! binomial rate per `reference_length` tokens. For each document the
//! generator draws a length, scales the rates to it, draws each event's count
//! (a gamma-distributed rate followed by a Poisson count for negative
//! binomial events) and shuffles the resulting tokens into random order.
//!
//! A spec file looks like
//!
//! ```json
//! {
//!   "documents": 1000,
//!   "doc_length": { "min": 800, "max": 1200 },
//!   "reference_length": 1000,
//!   "seed": 7,
//!   "words": { "kind": "zipf", "size": 2000, "exponent": 1.0,
//!              "shape_min": 0.05, "shape_max": 1.0, "poisson_top": 50 },
//!   "collocations": { "kind": "random", "count": 100, "share": 0.04, "shape": 0.3 }
//! }
//! ```
//!
//! or, with explicit rates,
//!
//! ```json
//! "words": { "kind": "explicit", "background": 50,
//!            "list": [ { "name": "BURST", "rate": { "family": "negbin", "alpha": 4, "beta": 25 } } ] }
//! ```
//!
//! where the `background` Poisson words share whatever rate the listed words
//! leave of `reference_length`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{write_corpus, Delimiter, RawDocument, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("spec parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Rate per `reference_length` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RateSpec {
    Poisson { lambda: f64 },
    Negbin { alpha: f64, beta: f64 },
}

impl RateSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            RateSpec::Poisson { lambda } => lambda,
            RateSpec::Negbin { alpha, beta } => alpha * beta,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let ok = match *self {
            RateSpec::Poisson { lambda } => lambda.is_finite() && lambda > 0.0,
            RateSpec::Negbin { alpha, beta } => {
                alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(format!("rates must be positive: {self:?}")))
        }
    }

    /// One count for a document `scale` reference lengths long.
    fn draw<R: Rng>(&self, scale: f64, rng: &mut R) -> u64 {
        let lambda = match *self {
            RateSpec::Poisson { lambda } => lambda * scale,
            RateSpec::Negbin { alpha, beta } => Gamma::new(alpha, beta * scale)
                .expect("validated gamma parameters")
                .sample(rng),
        };
        if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(rng) as u64
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordSpec {
    pub name: String,
    pub rate: RateSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WordsSpec {
    /// Zipfian means; the `poisson_top` most frequent words are Poisson, the
    /// rest negative binomial with shape log-uniform in
    /// `[shape_min, shape_max]`.
    Zipf {
        size: usize,
        exponent: f64,
        shape_min: f64,
        shape_max: f64,
        #[serde(default)]
        poisson_top: usize,
    },
    Explicit {
        list: Vec<WordSpec>,
        #[serde(default)]
        background: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationSpec {
    pub first: String,
    pub second: String,
    pub rate: RateSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CollocationsSpec {
    /// `count` random pairs of non-top words, sharing `share` of all
    /// tokens, each negative binomial with shape `shape`.
    Random { count: usize, share: f64, shape: f64 },
    Explicit { list: Vec<CollocationSpec> },
}

fn default_reference_length() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeSpec {
    pub documents: usize,
    pub doc_length: LengthRange,
    #[serde(default = "default_reference_length")]
    pub reference_length: usize,
    #[serde(default)]
    pub seed: u64,
    pub words: WordsSpec,
    #[serde(default)]
    pub collocations: Option<CollocationsSpec>,
}

/// Resolved per-event rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub reference_length: usize,
    pub words: Vec<WordSpec>,
    /// `(first word index, second word index, rate)`
    pub collocations: Vec<(usize, usize, RateSpec)>,
}

impl GroundTruth {
    /// Expected tokens per reference length.
    pub fn expected_rate(&self) -> f64 {
        let words: f64 = self.words.iter().map(|w| w.rate.mean()).sum();
        let pairs: f64 = self.collocations.iter().map(|c| 2.0 * c.2.mean()).sum();
        words + pairs
    }

    pub fn word_index(&self, name: &str) -> Option<usize> {
        self.words.iter().position(|w| w.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<RawDocument>,
    pub truth: GroundTruth,
}

impl SyntheticCorpus {
    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }

    /// Blank-line separated documents, 20 tokens per line.
    pub fn write<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_corpus(
            out,
            self.documents.iter().map(|d| d.tokens.as_slice()),
            &Delimiter::BlankLine,
            20,
        )
    }
}

impl GenerativeSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.documents == 0 {
            return bad("documents must be positive");
        }
        if self.doc_length.min == 0 || self.doc_length.min > self.doc_length.max {
            return bad("doc_length needs 0 < min <= max");
        }
        if self.reference_length == 0 {
            return bad("reference_length must be positive");
        }
        match &self.words {
            WordsSpec::Zipf {
                size,
                exponent,
                shape_min,
                shape_max,
                ..
            } => {
                if *size == 0 {
                    return bad("empty vocabulary");
                }
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return bad("zipf exponent must be >= 0");
                }
                if !(*shape_min > 0.0 && shape_min <= shape_max && shape_max.is_finite()) {
                    return bad("shape range needs 0 < shape_min <= shape_max");
                }
            }
            WordsSpec::Explicit { list, background } => {
                if list.is_empty() && *background == 0 {
                    return bad("empty vocabulary");
                }
                for w in list {
                    w.rate.validate()?;
                    let valid = !w.name.is_empty()
                        && w.name != UNK_TOKEN
                        && w.name == w.name.to_uppercase()
                        && !w.name.chars().any(char::is_whitespace);
                    if !valid {
                        return Err(SynthError::InvalidSpec(format!(
                            "word name `{}` must be upper case without whitespace",
                            w.name
                        )));
                    }
                }
            }
        }
        match &self.collocations {
            Some(CollocationsSpec::Random { share, shape, .. }) => {
                if !(*share >= 0.0 && *share < 1.0) {
                    return bad("collocation share must be in [0, 1)");
                }
                if !(*shape > 0.0 && shape.is_finite()) {
                    return bad("collocation shape must be positive");
                }
            }
            Some(CollocationsSpec::Explicit { list }) => {
                for c in list {
                    c.rate.validate()?;
                }
            }
            None => {}
        }
        Ok(())
    }

    /// Rates of every event, drawn deterministically from the seed.
    pub fn resolve(&self) -> Result<GroundTruth, SynthError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        let n_ref = self.reference_length as f64;
        let pair_share = match &self.collocations {
            Some(CollocationsSpec::Random { share, .. }) => *share,
            _ => 0.0,
        };
        let mut words = match &self.words {
            WordsSpec::Zipf {
                size,
                exponent,
                shape_min,
                shape_max,
                poisson_top,
            } => {
                let width = size.to_string().len().max(4);
                let weights: Vec<f64> = (0..*size).map(|i| (i as f64 + 1.0).powf(-exponent)).collect();
                let total: f64 = weights.iter().sum();
                let (lo, hi) = (shape_min.ln(), shape_max.ln());
                weights
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| {
                        let mean = (1.0 - pair_share) * n_ref * wt / total;
                        let rate = if i < *poisson_top {
                            RateSpec::Poisson { lambda: mean }
                        } else {
                            let alpha = if hi > lo { rng.random_range(lo..=hi).exp() } else { *shape_min };
                            RateSpec::Negbin {
                                alpha,
                                beta: mean / alpha,
                            }
                        };
                        WordSpec {
                            name: format!("W{:0width$}", i + 1),
                            rate,
                        }
                    })
                    .collect::<Vec<_>>()
            }
            WordsSpec::Explicit { list, background } => {
                let mut words = list.clone();
                if *background > 0 {
                    let used: f64 = list.iter().map(|w| w.rate.mean()).sum();
                    let rest = n_ref - used;
                    if rest <= 0.0 {
                        return Err(SynthError::InvalidSpec(
                            "listed words leave no rate for the background".into(),
                        ));
                    }
                    let width = background.to_string().len().max(4);
                    for i in 0..*background {
                        words.push(WordSpec {
                            name: format!("BG{:0width$}", i + 1),
                            rate: RateSpec::Poisson {
                                lambda: rest / *background as f64,
                            },
                        });
                    }
                }
                words
            }
        };
        let mut names = std::collections::HashSet::new();
        for w in &words {
            if !names.insert(w.name.as_str()) {
                return Err(SynthError::InvalidSpec(format!("duplicate word `{}`", w.name)));
            }
        }
        let collocations = match &self.collocations {
            None => Vec::new(),
            Some(CollocationsSpec::Explicit { list }) => list
                .iter()
                .map(|c| {
                    let find = |name: &str| {
                        words.iter().position(|w| w.name == name).ok_or_else(|| {
                            SynthError::InvalidSpec(format!("collocation word `{name}` is not defined"))
                        })
                    };
                    Ok((find(&c.first)?, find(&c.second)?, c.rate))
                })
                .collect::<Result<_, SynthError>>()?,
            Some(CollocationsSpec::Random { count, share, shape }) => {
                let skip = match &self.words {
                    WordsSpec::Zipf { poisson_top, .. } => (*poisson_top).min(words.len() - 1),
                    WordsSpec::Explicit { .. } => 0,
                };
                let pool = words.len() - skip;
                let mean = if *count > 0 { share * n_ref / (2.0 * *count as f64) } else { 0.0 };
                (0..*count)
                    .map(|_| {
                        let a = skip + rng.random_range(0..pool);
                        let b = skip + rng.random_range(0..pool);
                        (a, b, RateSpec::Negbin {
                            alpha: *shape,
                            beta: mean / shape,
                        })
                    })
                    .filter(|c| c.2.mean() > 0.0)
                    .collect()
            }
        };
        words.shrink_to_fit();
        Ok(GroundTruth {
            reference_length: self.reference_length,
            words,
            collocations,
        })
    }
}

/// Event counts of one generated document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentSample {
    /// Length drawn for the document; the realized token count is
    /// [`tokens`](Self::tokens).
    pub target_length: usize,
    /// Count of each word, by index into [`GroundTruth::words`].
    pub word_counts: Vec<u64>,
    /// Count of each collocation pair.
    pub pair_counts: Vec<u64>,
}

impl DocumentSample {
    pub fn tokens(&self) -> u64 {
        self.word_counts.iter().sum::<u64>() + 2 * self.pair_counts.iter().sum::<u64>()
    }
}

fn document_rng(seed: u64, doc: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(doc as u64);
    rng
}

fn sample_document<R: Rng>(spec: &GenerativeSpec, truth: &GroundTruth, rng: &mut R) -> DocumentSample {
    let target_length = rng.random_range(spec.doc_length.min..=spec.doc_length.max);
    let scale = target_length as f64 / spec.reference_length as f64;
    let word_counts = truth.words.iter().map(|w| w.rate.draw(scale, rng)).collect();
    let pair_counts = truth.collocations.iter().map(|c| c.2.draw(scale, rng)).collect();
    DocumentSample {
        target_length,
        word_counts,
        pair_counts,
    }
}

/// Per-document event counts without laying out tokens. Agrees with the
/// counts of [`generate`] for the same spec.
pub fn sample_counts(spec: &GenerativeSpec) -> Result<(GroundTruth, Vec<DocumentSample>), SynthError> {
    let truth = spec.resolve()?;
    let samples = (0..spec.documents)
        .map(|d| sample_document(spec, &truth, &mut document_rng(spec.seed, d)))
        .collect();
    Ok((truth, samples))
}

/// Generate the corpus described by `spec`. The same spec always yields the
/// same documents.
pub fn generate(spec: &GenerativeSpec) -> Result<SyntheticCorpus, SynthError> {
    let truth = spec.resolve()?;
    let documents = (0..spec.documents)
        .map(|d| {
            let mut rng = document_rng(spec.seed, d);
            let sample = sample_document(spec, &truth, &mut rng);
            let mut units: Vec<(usize, Option<usize>)> = Vec::with_capacity(sample.tokens() as usize);
            for (i, &c) in sample.word_counts.iter().enumerate() {
                units.extend(std::iter::repeat_n((i, None), c as usize));
            }
            for (&(a, b, _), &c) in truth.collocations.iter().zip(&sample.pair_counts) {
                units.extend(std::iter::repeat_n((a, Some(b)), c as usize));
            }
            units.shuffle(&mut rng);
            let mut tokens = Vec::with_capacity(sample.tokens() as usize);
            for (a, b) in units {
                tokens.push(truth.words[a].name.clone());
                if let Some(b) = b {
                    tokens.push(truth.words[b].name.clone());
                }
            }
            RawDocument { tokens }
        })
        .collect();
    Ok(SyntheticCorpus { documents, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zipf_spec(seed: u64) -> GenerativeSpec {
        GenerativeSpec::from_json(&format!(
            r#"{{
                "documents": 60,
                "doc_length": {{ "min": 300, "max": 500 }},
                "reference_length": 400,
                "seed": {seed},
                "words": {{ "kind": "zipf", "size": 300, "exponent": 1.0,
                           "shape_min": 0.1, "shape_max": 2.0, "poisson_top": 10 }},
                "collocations": {{ "kind": "random", "count": 20, "share": 0.05, "shape": 0.5 }}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate(&zipf_spec(3)).unwrap().write(&mut a).unwrap();
        generate(&zipf_spec(3)).unwrap().write(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate(&zipf_spec(4)).unwrap().write(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rates_sum_to_reference_length() {
        let truth = zipf_spec(1).resolve().unwrap();
        assert!((truth.expected_rate() - 400.0).abs() < 1e-9);
        assert_eq!(truth.words[0].name, "W0001");
        assert_eq!(truth.collocations.len(), 20);
    }

    #[test]
    fn token_total_tracks_expected_length() {
        let corpus = generate(&zipf_spec(9)).unwrap();
        let expected = 60.0 * 400.0;
        let got = corpus.total_tokens() as f64;
        assert!((got - expected).abs() < 0.05 * expected, "{got}");
    }

    #[test]
    fn rejects_degenerate_specs() {
        let empty = r#"{"documents": 5, "doc_length": {"min": 10, "max": 20},
                        "words": {"kind": "explicit", "list": []}}"#;
        assert!(GenerativeSpec::from_json(empty).is_err());
        let negative = r#"{"documents": 5, "doc_length": {"min": 10, "max": 20},
            "words": {"kind": "explicit", "list": [{"name": "A", "rate": {"family": "poisson", "lambda": -1}}]}}"#;
        assert!(GenerativeSpec::from_json(negative).is_err());
        let lower = r#"{"documents": 5, "doc_length": {"min": 10, "max": 20},
            "words": {"kind": "explicit", "list": [{"name": "a", "rate": {"family": "poisson", "lambda": 1}}]}}"#;
        assert!(GenerativeSpec::from_json(lower).is_err());
        assert!(GenerativeSpec::from_json("{}").is_err());
    }

    #[test]
    fn explicit_background_fills_the_rest() {
        let spec = GenerativeSpec::from_json(
            r#"{"documents": 3, "doc_length": {"min": 100, "max": 100}, "reference_length": 100,
                "words": {"kind": "explicit", "background": 4,
                          "list": [{"name": "HOT", "rate": {"family": "negbin", "alpha": 2, "beta": 5}}]},
                "collocations": {"kind": "explicit",
                                 "list": [{"first": "HOT", "second": "BG0001",
                                           "rate": {"family": "poisson", "lambda": 1}}]}}"#,
        )
        .unwrap();
        let truth = spec.resolve().unwrap();
        assert_eq!(truth.words.len(), 5);
        assert_eq!(truth.words[1].rate, RateSpec::Poisson { lambda: 22.5 });
        assert_eq!(truth.collocations, vec![(0, 1, RateSpec::Poisson { lambda: 1.0 })]);
    }

    #[test]
    fn counts_agree_with_generated_tokens() {
        let spec = zipf_spec(5);
        let corpus = generate(&spec).unwrap();
        let (truth, samples) = sample_counts(&spec).unwrap();
        for (doc, sample) in corpus.documents.iter().zip(&samples) {
            assert_eq!(doc.tokens.len() as u64, sample.tokens());
            let hot = &truth.words[12].name;
            let direct = doc.tokens.iter().filter(|t| *t == hot).count() as u64;
            let from_pairs: u64 = truth
                .collocations
                .iter()
                .zip(&sample.pair_counts)
                .map(|(c, &n)| n * ((c.0 == 12) as u64 + (c.1 == 12) as u64))
                .sum();
            assert_eq!(direct, sample.word_counts[12] + from_pairs);
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = zipf_spec(2);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(GenerativeSpec::from_json(&text).unwrap(), spec);
    }
}
