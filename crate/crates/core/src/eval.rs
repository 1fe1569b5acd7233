//! Online perplexity over a token stream with a sliding window of prior
//! counts.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Bigram, Document, RawDocument, Vocabulary, WordId};
use crate::lm::{
    AdaptedModel, ClampCounts, DiscountScheme, LanguageModel, LmError, NaivePriors, PriorCounts,
    PriorView, Smoothing, ZeroPriors,
};
use crate::relfreq::{ConditionalNormalizer, CompensatedSum, FrequencyMemo, RelFreqError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the evaluation stream has no tokens")]
    EmptyStream,
    #[error("none of the {tokens} test tokens is in the model vocabulary")]
    VocabularyMismatch { tokens: usize },
    #[error("no window lengths given")]
    NoWindows,
    #[error("token {position} received probability {probability}")]
    InvalidProbability { position: usize, probability: f64 },
    #[error(transparent)]
    Model(#[from] LmError),
    #[error(transparent)]
    RelFreq(#[from] RelFreqError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    #[default]
    Unigram,
    Bigram,
}

impl FromStr for Order {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Order::Unigram),
            "2" => Ok(Order::Bigram),
            other => Err(format!("unsupported order `{other}` (1|2)")),
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::Unigram => "1",
            Order::Bigram => "2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// All prior counts fixed at zero.
    Constant,
    #[default]
    Variable,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Mode::Constant),
            "variable" => Ok(Mode::Variable),
            other => Err(format!("unknown mode `{other}` (constant|variable)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Constant => "constant",
            Mode::Variable => "variable",
        })
    }
}

/// Count changes caused by one [`SlidingWindow::advance`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowDelta {
    pub added: Option<WordId>,
    pub added_bigram: Option<Bigram>,
    pub evicted: Option<WordId>,
    pub evicted_bigram: Option<Bigram>,
}

/// The last `capacity` tokens with their unigram and bigram counts.
///
/// Bigrams pair adjacent buffer entries from the same document.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    buffer: VecDeque<(WordId, usize)>,
    unigram: Vec<usize>,
    bigram: HashMap<Bigram, usize>,
    consumed: u64,
}

impl SlidingWindow {
    pub fn new(capacity: usize, vocab_size: usize) -> Self {
        Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity + 1),
            unigram: vec![0; vocab_size],
            bigram: HashMap::new(),
            consumed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = WordId> + '_ {
        self.buffer.iter().map(|&(w, _)| w)
    }

    /// Tokens pushed since construction or the last [`clear`](Self::clear).
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn unigram_count(&self, w: WordId) -> usize {
        self.unigram[w.index()]
    }

    pub fn bigram_count(&self, bigram: Bigram) -> usize {
        self.bigram.get(&bigram).copied().unwrap_or(0)
    }

    pub fn unigram_counts(&self) -> &[usize] {
        &self.unigram
    }

    pub fn bigram_counts(&self) -> &HashMap<Bigram, usize> {
        &self.bigram
    }

    /// Append `token` of document `doc`, evicting the oldest token once the
    /// buffer exceeds its capacity.
    pub fn advance(&mut self, token: WordId, doc: usize) -> WindowDelta {
        self.consumed += 1;
        if self.capacity == 0 {
            return WindowDelta::default();
        }
        let mut delta = WindowDelta {
            added: Some(token),
            ..Default::default()
        };
        if let Some(&(last, last_doc)) = self.buffer.back() {
            if last_doc == doc {
                let bg = (last, token);
                *self.bigram.entry(bg).or_default() += 1;
                delta.added_bigram = Some(bg);
            }
        }
        self.buffer.push_back((token, doc));
        self.unigram[token.index()] += 1;
        if self.buffer.len() > self.capacity {
            let (old, old_doc) = self.buffer.pop_front().expect("non-empty buffer");
            self.unigram[old.index()] -= 1;
            delta.evicted = Some(old);
            if let Some(&(next, next_doc)) = self.buffer.front() {
                if next_doc == old_doc {
                    let bg = (old, next);
                    let slot = self.bigram.get_mut(&bg).expect("evicted bigram is counted");
                    *slot -= 1;
                    if *slot == 0 {
                        self.bigram.remove(&bg);
                    }
                    delta.evicted_bigram = Some(bg);
                }
            }
        }
        delta
    }

    pub fn clear(&mut self) {
        self.buffer.clear();
        self.unigram.iter_mut().for_each(|c| *c = 0);
        self.bigram.clear();
        self.consumed = 0;
    }

    /// Counts rebuilt from the buffer contents.
    pub fn recount(&self) -> PriorCounts {
        let mut counts = PriorCounts::zeros(self.unigram.len());
        for &(w, _) in &self.buffer {
            counts.unigram[w.index()] += 1;
        }
        let items: Vec<_> = self.buffer.iter().collect();
        for pair in items.windows(2) {
            if pair[0].1 == pair[1].1 {
                *counts.bigram.entry((pair[0].0, pair[1].0)).or_default() += 1;
            }
        }
        counts
    }

    /// The maintained counts in [`PriorCounts`] form.
    pub fn counts(&self) -> PriorCounts {
        PriorCounts {
            unigram: self.unigram.clone(),
            bigram: self.bigram.clone(),
        }
    }
}

/// Discounted frequencies kept current under single-step count changes.
#[derive(Debug, Clone)]
pub struct IncrementalPriors<'a, 'm> {
    model: &'a AdaptedModel<'m>,
    initial: &'a IncrementalSeed,
    raw: ConditionalNormalizer,
    discounted: ConditionalNormalizer,
    bigram: Vec<f64>,
    bigram_counts: Vec<usize>,
    context: Vec<CompensatedSum>,
    unigram_memo: FrequencyMemo,
    bigram_memo: FrequencyMemo,
}

/// Zero-count state an [`IncrementalPriors`] starts and resets from.
#[derive(Debug, Clone)]
pub struct IncrementalSeed {
    zero: ZeroPriors,
    raw_terms: Vec<f64>,
}

impl IncrementalSeed {
    pub fn new(model: &AdaptedModel<'_>) -> Result<Self, EvalError> {
        let zero = ZeroPriors::zero(model)?;
        let raw_terms = model
            .model()
            .vocabulary()
            .ids()
            .map(|w| model.unigram_frequency(w, 0))
            .collect::<Result<_, _>>()?;
        Ok(Self { zero, raw_terms })
    }

    pub fn zero_priors(&self) -> &ZeroPriors {
        &self.zero
    }
}

impl<'a, 'm> IncrementalPriors<'a, 'm> {
    pub fn new(model: &'a AdaptedModel<'m>, seed: &'a IncrementalSeed) -> Self {
        let n = model.doc_length();
        let lm = model.model();
        let context = lm
            .vocabulary()
            .ids()
            .map(|v| seed.zero.bigram_values()[lm.context_entries(v)].iter().copied().collect())
            .collect();
        Self {
            model,
            initial: seed,
            raw: ConditionalNormalizer::new(seed.raw_terms.clone(), n),
            discounted: ConditionalNormalizer::new(seed.zero.unigram_values().to_vec(), n),
            bigram: seed.zero.bigram_values().to_vec(),
            bigram_counts: vec![0; lm.bigrams().len()],
            context,
            unigram_memo: FrequencyMemo::new(lm.vocabulary().len()),
            bigram_memo: FrequencyMemo::new(lm.bigrams().len()),
        }
    }

    /// Return to zero prior counts; memoized frequencies are kept.
    pub fn reset(&mut self) {
        let lm = self.model.model();
        let n = self.model.doc_length();
        self.raw = ConditionalNormalizer::new(self.initial.raw_terms.clone(), n);
        self.discounted = ConditionalNormalizer::new(self.initial.zero.unigram_values().to_vec(), n);
        self.bigram.copy_from_slice(self.initial.zero.bigram_values());
        self.bigram_counts.iter_mut().for_each(|c| *c = 0);
        for v in lm.vocabulary().ids() {
            self.context[v.index()] = self.bigram[lm.context_entries(v)].iter().copied().collect();
        }
    }

    /// Frequency evaluations that hit an exhausted profile tail.
    pub fn exhausted(&self) -> u64 {
        self.unigram_memo.exhausted() + self.bigram_memo.exhausted()
    }

    fn step_unigram(&mut self, w: WordId, up: bool) -> Result<(), EvalError> {
        let i = w.index();
        let old = self.raw.count(i);
        let new = if up { old + 1 } else { old - 1 };
        let f = self.unigram_memo.get(i, self.model.unigram_profile(w), new)?;
        let fd = self.model.discount_unigram(w, f);
        self.raw.update(i, old, new, f)?;
        self.discounted.update(i, old, new, fd)?;
        Ok(())
    }

    fn step_bigram(&mut self, bg: Bigram, up: bool) -> Result<(), EvalError> {
        let lm = self.model.model();
        let Some(e) = lm.entry(bg.0, bg.1) else {
            return Ok(());
        };
        let old = self.bigram_counts[e];
        let new = if up { old + 1 } else { old - 1 };
        let f = self.bigram_memo.get(e, self.model.bigram_profile(e), new)?;
        let ctx = &mut self.context[bg.0.index()];
        ctx.add(-self.bigram[e]);
        ctx.add(f);
        self.bigram[e] = f;
        self.bigram_counts[e] = new;
        Ok(())
    }

    /// Apply the count changes of one window step, one unit at a time.
    pub fn apply(&mut self, delta: &WindowDelta) -> Result<(), EvalError> {
        // Evict the unigram first so no count ever exceeds the window
        // length. A window bigram can be added and evicted in the same step
        // (capacity 1), so it is added first instead.
        if let Some(w) = delta.evicted {
            self.step_unigram(w, false)?;
        }
        if let Some(w) = delta.added {
            self.step_unigram(w, true)?;
        }
        if let Some(bg) = delta.added_bigram {
            self.step_bigram(bg, true)?;
        }
        if let Some(bg) = delta.evicted_bigram {
            self.step_bigram(bg, false)?;
        }
        Ok(())
    }
}

impl PriorView for IncrementalPriors<'_, '_> {
    fn unigram_discounted(&self, w: WordId) -> f64 {
        self.discounted.term(w.index())
    }

    fn unigram_mass(&self) -> (f64, f64) {
        (self.raw.total(), self.discounted.total())
    }

    fn bigram_frequency(&self, entry: usize) -> f64 {
        self.bigram[entry]
    }

    fn context_frequency(&self, v: WordId) -> f64 {
        self.context[v.index()].value()
    }
}

/// An evaluation stream mapped onto a model vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TestStream {
    pub documents: Vec<Document>,
    pub oov: usize,
}

impl TestStream {
    pub fn encode(vocab: &Vocabulary, documents: &[RawDocument]) -> Result<Self, EvalError> {
        let mut oov = 0;
        let documents: Vec<Document> = documents
            .iter()
            .map(|d| {
                let (doc, missing) = vocab.encode(d);
                oov += missing;
                doc
            })
            .filter(|d| !d.is_empty())
            .collect();
        let stream = Self { documents, oov };
        let tokens = stream.tokens();
        if tokens == 0 {
            return Err(EvalError::EmptyStream);
        }
        if oov == tokens {
            return Err(EvalError::VocabularyMismatch { tokens });
        }
        Ok(stream)
    }

    pub fn from_documents(documents: Vec<Document>) -> Self {
        Self { documents, oov: 0 }
    }

    pub fn tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub order: Order,
    pub mode: Mode,
    /// Window length `N` in tokens; ignored in constant mode.
    pub window: usize,
    pub smoothing: Smoothing,
    pub discount: DiscountScheme,
    pub reset_on_doc: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            order: Order::Unigram,
            mode: Mode::Variable,
            window: 500,
            smoothing: Smoothing::Interpolated,
            discount: DiscountScheme::Absolute,
            reset_on_doc: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub document: usize,
    pub tokens: usize,
    pub log_prob: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub options: EvalOptions,
    pub tokens: usize,
    /// `Σ ln p` in nats.
    pub log_prob: f64,
    pub perplexity: f64,
    pub oov: usize,
    pub oov_rate: f64,
    pub clamps: ClampCounts,
    pub exhausted_tails: u64,
    pub segments: Vec<SegmentReport>,
    /// `ln p` of every token in stream order.
    #[serde(skip)]
    pub token_log_probs: Vec<f64>,
}

impl PerplexityReport {
    /// Perplexity recomputed from the per-token trace.
    pub fn recomputed_perplexity(&self) -> f64 {
        let sum: CompensatedSum = self.token_log_probs.iter().copied().collect();
        (-sum.value() / self.token_log_probs.len() as f64).exp()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(out, self).map_err(|e| EvalError::Io(e.into()))
    }

    /// `position,document,token,log_prob`
    pub fn write_trace_csv<W: Write>(
        &self,
        mut out: W,
        stream: &TestStream,
        vocab: &Vocabulary,
    ) -> Result<(), EvalError> {
        writeln!(out, "position,document,token,log_prob")?;
        let tokens = stream
            .documents
            .iter()
            .enumerate()
            .flat_map(|(d, doc)| doc.tokens.iter().map(move |&t| (d, t)));
        for (i, ((d, t), lp)) in tokens.zip(&self.token_log_probs).enumerate() {
            writeln!(out, "{i},{d},{},{lp}", vocab.word(t))?;
        }
        Ok(())
    }
}

/// Where the per-token priors come from.
trait PriorSource {
    fn view(&mut self, window: &SlidingWindow) -> Result<&dyn PriorView, EvalError>;
    fn apply(&mut self, delta: &WindowDelta) -> Result<(), EvalError>;
    fn reset(&mut self);
    fn exhausted(&self) -> u64;
}

struct Constant<'a>(&'a ZeroPriors);

impl PriorSource for Constant<'_> {
    fn view(&mut self, _: &SlidingWindow) -> Result<&dyn PriorView, EvalError> {
        Ok(self.0)
    }
    fn apply(&mut self, _: &WindowDelta) -> Result<(), EvalError> {
        Ok(())
    }
    fn reset(&mut self) {}
    fn exhausted(&self) -> u64 {
        0
    }
}

impl PriorSource for IncrementalPriors<'_, '_> {
    fn view(&mut self, _: &SlidingWindow) -> Result<&dyn PriorView, EvalError> {
        Ok(self)
    }
    fn apply(&mut self, delta: &WindowDelta) -> Result<(), EvalError> {
        IncrementalPriors::apply(self, delta)
    }
    fn reset(&mut self) {
        IncrementalPriors::reset(self)
    }
    fn exhausted(&self) -> u64 {
        IncrementalPriors::exhausted(self)
    }
}

struct Naive<'a, 'm> {
    model: &'a AdaptedModel<'m>,
    current: Option<NaivePriors>,
    unigram_memo: FrequencyMemo,
    bigram_memo: FrequencyMemo,
}

impl PriorSource for Naive<'_, '_> {
    fn view(&mut self, window: &SlidingWindow) -> Result<&dyn PriorView, EvalError> {
        let priors = NaivePriors::from_counts_memo(
            self.model,
            &window.recount(),
            &mut self.unigram_memo,
            &mut self.bigram_memo,
        )?;
        Ok(self.current.insert(priors))
    }
    fn apply(&mut self, _: &WindowDelta) -> Result<(), EvalError> {
        Ok(())
    }
    fn reset(&mut self) {}
    fn exhausted(&self) -> u64 {
        0
    }
}

/// Profiles used for an evaluation: window-length profiles in variable mode,
/// model-length profiles in constant mode or with an empty window.
pub fn adapted_for<'m>(model: &'m LanguageModel, options: &EvalOptions) -> Result<AdaptedModel<'m>, EvalError> {
    let length = match options.mode {
        Mode::Variable if options.window > 0 => options.window,
        _ => model.doc_length(),
    };
    Ok(model.adapt(length, model.discounts_for(options.discount))?)
}

/// Perplexity with predict-then-update ordering.
pub fn evaluate(
    model: &LanguageModel,
    stream: &TestStream,
    options: &EvalOptions,
) -> Result<PerplexityReport, EvalError> {
    let adapted = adapted_for(model, options)?;
    let seed = IncrementalSeed::new(&adapted)?;
    match options.mode {
        Mode::Constant => run(&adapted, stream, options, 0, Constant(seed.zero_priors())),
        Mode::Variable => run(
            &adapted,
            stream,
            options,
            options.window,
            IncrementalPriors::new(&adapted, &seed),
        ),
    }
}

/// [`evaluate`] with every token's priors recomputed from a recount of the
/// window. `O(|V| + |E|)` per token; meant as a reference.
pub fn evaluate_naive(
    model: &LanguageModel,
    stream: &TestStream,
    options: &EvalOptions,
) -> Result<PerplexityReport, EvalError> {
    let adapted = adapted_for(model, options)?;
    let window = match options.mode {
        Mode::Constant => 0,
        Mode::Variable => options.window,
    };
    let source = Naive {
        model: &adapted,
        current: None,
        unigram_memo: FrequencyMemo::new(adapted.vocab_size()),
        bigram_memo: FrequencyMemo::new(model.bigrams().len()),
    };
    run(&adapted, stream, options, window, source)
}

fn run<S: PriorSource>(
    adapted: &AdaptedModel<'_>,
    stream: &TestStream,
    options: &EvalOptions,
    capacity: usize,
    mut source: S,
) -> Result<PerplexityReport, EvalError> {
    let tokens = stream.tokens();
    if tokens == 0 {
        return Err(EvalError::EmptyStream);
    }
    let mut window = SlidingWindow::new(capacity, adapted.vocab_size());
    let mut token_log_probs = Vec::with_capacity(tokens);
    let mut segments = Vec::with_capacity(stream.documents.len());
    let mut clamps = ClampCounts::default();
    let mut total = CompensatedSum::default();
    for (d, doc) in stream.documents.iter().enumerate() {
        if options.reset_on_doc && d > 0 {
            window.clear();
            source.reset();
        }
        let mut segment = CompensatedSum::default();
        let mut prev: Option<WordId> = None;
        for &w in &doc.tokens {
            let priors = source.view(&window)?;
            let scored = match (options.order, prev) {
                (Order::Bigram, Some(v)) => adapted.bigram_probability(priors, v, w, options.smoothing),
                _ => adapted.unigram_probability(priors, w),
            };
            let p = scored.probability;
            if !(p > 0.0 && p <= 1.0 + 1e-12) {
                return Err(EvalError::InvalidProbability {
                    position: token_log_probs.len(),
                    probability: p,
                });
            }
            clamps += scored.clamps;
            let lp = p.ln();
            token_log_probs.push(lp);
            segment.add(lp);
            total.add(lp);
            let delta = window.advance(w, d);
            source.apply(&delta)?;
            prev = Some(w);
        }
        let seg_lp = segment.value();
        segments.push(SegmentReport {
            document: d,
            tokens: doc.len(),
            log_prob: seg_lp,
            perplexity: (-seg_lp / doc.len() as f64).exp(),
        });
    }
    let log_prob = total.value();
    Ok(PerplexityReport {
        options: *options,
        tokens,
        log_prob,
        perplexity: (-log_prob / tokens as f64).exp(),
        oov: stream.oov,
        oov_rate: stream.oov as f64 / tokens as f64,
        clamps,
        exhausted_tails: source.exhausted(),
        segments,
        token_log_probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window: usize,
    pub perplexity: f64,
    pub tokens: usize,
}

/// One evaluation per window length, run on parallel threads.
pub fn sweep(
    model: &LanguageModel,
    stream: &TestStream,
    windows: &[usize],
    options: &EvalOptions,
) -> Result<Vec<SweepRow>, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::NoWindows);
    }
    let results: Vec<Result<PerplexityReport, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = windows
            .iter()
            .map(|&window| {
                let opts = EvalOptions { window, ..*options };
                scope.spawn(move || evaluate(model, stream, &opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    windows
        .iter()
        .zip(results)
        .map(|(&window, r)| {
            r.map(|rep| SweepRow {
                window,
                perplexity: rep.perplexity,
                tokens: rep.tokens,
            })
        })
        .collect()
}

/// `N,perplexity`
pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "N,perplexity")?;
    for r in rows {
        writeln!(out, "{},{}", r.window, r.perplexity)?;
    }
    Ok(())
}
