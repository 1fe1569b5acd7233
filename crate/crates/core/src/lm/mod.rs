//! Unigram and bigram language models over variable-rate relative
//! frequencies.
//!
//! [`LanguageModel`] holds what training produced: a vocabulary, per-event
//! moments and fitted rate distributions, and discount constants. Scoring
//! happens on an [`AdaptedModel`], which materializes the profiles for a
//! particular window length and evaluates probabilities against any
//! [`PriorView`] of the current prior counts.

mod adapted;
mod discount;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{event_moments, Bigram, CorpusCounts, Vocabulary, WordId};
use crate::ratemodel::{fit_rate, FitPolicy, RateDistribution, RateError, SampleMoments};
use crate::relfreq::RelFreqError;

pub use adapted::{
    AdaptedModel, ClampCounts, MassSplit, NaivePriors, PriorCounts, PriorView, Scored, ZeroPriors,
    EPS_MASS,
};
pub use discount::{
    count_of_counts, discounted_frequency, estimate_discounts, DiscountConfig, DiscountScheme,
    Discounts, FALLBACK_ABSOLUTE, KATZ_CUTOFF,
};

#[derive(Debug, Error)]
pub enum LmError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    RelFreq(#[from] RelFreqError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// How unseen bigrams receive probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Smoothing {
    #[default]
    Interpolated,
    BackOff,
}

impl FromStr for Smoothing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interp" => Ok(Smoothing::Interpolated),
            "backoff" => Ok(Smoothing::BackOff),
            other => Err(format!("unknown smoothing `{other}` (interp|backoff)")),
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothing::Interpolated => "interp",
            Smoothing::BackOff => "backoff",
        })
    }
}

/// Training statistics of one unigram or bigram.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStats {
    pub raw_count: u64,
    /// Moments of the counts normalized to the model's document length.
    pub moments: SampleMoments,
    pub dist: RateDistribution,
}

impl EventStats {
    fn unobserved() -> Self {
        Self {
            raw_count: 0,
            moments: SampleMoments {
                mean: 0.0,
                variance: Some(0.0),
            },
            dist: RateDistribution::Degenerate { mean: 0.0 },
        }
    }

    /// The distribution for documents of `doc_length` tokens, refitted from
    /// rescaled moments unless the length is the one the model was fit at.
    pub fn distribution_at(
        &self,
        model_length: usize,
        doc_length: usize,
        policy: FitPolicy,
    ) -> Result<(RateDistribution, f64), RateError> {
        if doc_length == model_length {
            return Ok((self.dist, self.moments.mean));
        }
        let moments = self.moments.rescaled(doc_length as f64 / model_length as f64);
        if self.raw_count == 0 {
            return Ok((RateDistribution::Degenerate { mean: 0.0 }, 0.0));
        }
        Ok((fit_rate(&moments, policy)?, moments.mean))
    }
}

/// An observed bigram `(v, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramEntry {
    pub context: WordId,
    pub word: WordId,
    pub stats: EventStats,
}

/// Per-document postings of every event, the input to model fitting.
#[derive(Debug, Clone, Default)]
pub struct TrainingCounts {
    pub doc_lengths: Vec<u64>,
    /// `(document, count)` pairs indexed by word id.
    pub unigrams: Vec<Vec<(usize, u64)>>,
    pub bigrams: BTreeMap<Bigram, Vec<(usize, u64)>>,
}

impl From<&CorpusCounts> for TrainingCounts {
    fn from(counts: &CorpusCounts) -> Self {
        Self {
            doc_lengths: counts.doc_lengths(),
            unigrams: counts.unigram_postings(),
            bigrams: counts.bigram_postings(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub doc_length: usize,
    pub policy: FitPolicy,
    pub discount: DiscountScheme,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            doc_length: 1000,
            policy: FitPolicy::Auto,
            discount: DiscountScheme::Absolute,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    vocab: Vocabulary,
    doc_length: usize,
    total_tokens: u64,
    num_documents: usize,
    policy: FitPolicy,
    unigrams: Vec<EventStats>,
    bigrams: Vec<BigramEntry>,
    context_ranges: Vec<Range<usize>>,
    discounts: Discounts,
}

impl LanguageModel {
    pub fn fit(vocab: Vocabulary, counts: &CorpusCounts, options: FitOptions) -> Result<Self, LmError> {
        Self::from_training(vocab, &TrainingCounts::from(counts), options)
    }

    pub fn from_training(
        vocab: Vocabulary,
        counts: &TrainingCounts,
        options: FitOptions,
    ) -> Result<Self, LmError> {
        let n = options.doc_length;
        if n == 0 {
            return Err(LmError::Invalid("document length must be positive".into()));
        }
        if counts.unigrams.len() != vocab.len() {
            return Err(LmError::Invalid(format!(
                "{} unigram postings for a vocabulary of {}",
                counts.unigrams.len(),
                vocab.len()
            )));
        }
        let total: u64 = counts.doc_lengths.iter().sum();
        if total == 0 {
            return Err(LmError::Invalid("no training tokens".into()));
        }
        let docs = counts.doc_lengths.len();
        let fit_event = |postings: &[(usize, u64)]| -> Result<EventStats, LmError> {
            let pairs: Vec<(u64, u64)> = postings
                .iter()
                .filter(|&&(_, c)| c > 0)
                .map(|&(d, c)| {
                    counts
                        .doc_lengths
                        .get(d)
                        .map(|&l| (c, l))
                        .ok_or_else(|| LmError::Invalid(format!("posting for unknown document {d}")))
                })
                .collect::<Result<_, _>>()?;
            let raw_count: u64 = pairs.iter().map(|p| p.0).sum();
            if raw_count == 0 {
                return Ok(EventStats::unobserved());
            }
            let moments = event_moments(&pairs, total, docs, n);
            Ok(EventStats {
                raw_count,
                dist: fit_rate(&moments, options.policy)?,
                moments,
            })
        };
        let unigrams = counts
            .unigrams
            .iter()
            .map(|p| fit_event(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut bigrams = Vec::with_capacity(counts.bigrams.len());
        for (&(v, w), postings) in &counts.bigrams {
            let stats = fit_event(postings)?;
            if stats.raw_count > 0 {
                bigrams.push(BigramEntry {
                    context: v,
                    word: w,
                    stats,
                });
            }
        }
        let discounts = Discounts {
            unigram: estimate_discounts(unigrams.iter().map(|u| u.raw_count), options.discount),
            bigram: estimate_discounts(bigrams.iter().map(|b| b.stats.raw_count), options.discount),
        };
        Self::from_parts(
            vocab, n, total, docs, options.policy, unigrams, bigrams, discounts,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        vocab: Vocabulary,
        doc_length: usize,
        total_tokens: u64,
        num_documents: usize,
        policy: FitPolicy,
        unigrams: Vec<EventStats>,
        bigrams: Vec<BigramEntry>,
        discounts: Discounts,
    ) -> Result<Self, LmError> {
        if unigrams.len() != vocab.len() {
            return Err(LmError::Invalid(format!(
                "{} unigram records for {} words",
                unigrams.len(),
                vocab.len()
            )));
        }
        for d in [&discounts.unigram, &discounts.bigram] {
            d.validate().map_err(LmError::Invalid)?;
        }
        let mut context_ranges = vec![0..0; vocab.len()];
        let mut start = 0;
        for i in 0..bigrams.len() {
            let e = &bigrams[i];
            if e.context.index() >= vocab.len() || e.word.index() >= vocab.len() {
                return Err(LmError::Invalid("bigram outside the vocabulary".into()));
            }
            if e.stats.raw_count == 0 {
                return Err(LmError::Invalid("bigram entry with zero count".into()));
            }
            if i > 0 && (bigrams[i - 1].context, bigrams[i - 1].word) >= (e.context, e.word) {
                return Err(LmError::Invalid("bigram entries must be sorted and unique".into()));
            }
            if i + 1 == bigrams.len() || bigrams[i + 1].context != e.context {
                context_ranges[e.context.index()] = start..i + 1;
                start = i + 1;
            }
        }
        Ok(Self {
            vocab,
            doc_length,
            total_tokens,
            num_documents,
            policy,
            unigrams,
            bigrams,
            context_ranges,
            discounts,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// `N`, the document length the profiles were fit at.
    pub fn doc_length(&self) -> usize {
        self.doc_length
    }

    /// `T`
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn num_documents(&self) -> usize {
        self.num_documents
    }

    pub fn policy(&self) -> FitPolicy {
        self.policy
    }

    pub fn discounts(&self) -> &Discounts {
        &self.discounts
    }

    pub fn unigram(&self, w: WordId) -> &EventStats {
        &self.unigrams[w.index()]
    }

    pub fn unigrams(&self) -> &[EventStats] {
        &self.unigrams
    }

    pub fn bigrams(&self) -> &[BigramEntry] {
        &self.bigrams
    }

    /// Indices into [`bigrams`](Self::bigrams) of the entries with context `v`.
    pub fn context_entries(&self, v: WordId) -> Range<usize> {
        self.context_ranges[v.index()].clone()
    }

    /// Index of the entry `(v, w)`, if observed in training.
    pub fn entry(&self, v: WordId, w: WordId) -> Option<usize> {
        let range = self.context_entries(v);
        let start = range.start;
        self.bigrams[range]
            .binary_search_by_key(&w, |e| e.word)
            .ok()
            .map(|i| start + i)
    }

    /// Discount constants for `scheme`: the stored ones when the scheme
    /// matches, otherwise re-estimated from the raw training counts.
    pub fn discounts_for(&self, scheme: DiscountScheme) -> Discounts {
        if self.discounts.unigram.scheme() == scheme && self.discounts.bigram.scheme() == scheme {
            return self.discounts.clone();
        }
        Discounts {
            unigram: estimate_discounts(self.unigrams.iter().map(|u| u.raw_count), scheme),
            bigram: estimate_discounts(self.bigrams.iter().map(|b| b.stats.raw_count), scheme),
        }
    }

    /// `C(v·)`: training occurrences of `v` followed by an observed successor.
    pub fn context_count(&self, v: WordId) -> u64 {
        self.bigrams[self.context_entries(v)]
            .iter()
            .map(|e| e.stats.raw_count)
            .sum()
    }

    /// Profiles for windows of `doc_length` tokens.
    pub fn adapt(&self, doc_length: usize, discounts: Discounts) -> Result<AdaptedModel<'_>, LmError> {
        AdaptedModel::new(self, doc_length, discounts)
    }
}
