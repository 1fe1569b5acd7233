//! Corpus ingestion: document segmentation, tokenization, the closed
//! vocabulary, and per-document event counts normalized to a common length.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratemodel::SampleMoments;

/// Token string of the reserved unknown word.
pub const UNK_TOKEN: &str = "<UNK>";

/// Default minimum document length in tokens.
pub const DEFAULT_MIN_DOC_LENGTH: usize = 100;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no documents left after filtering ({dropped} dropped as shorter than {min_length} tokens)")]
    NoDocuments { dropped: usize, min_length: usize },
    #[error("document length N must be positive")]
    InvalidLength,
    #[error("{samples} samples but {lengths} document lengths")]
    LengthMismatch { samples: usize, lengths: usize },
    #[error("duplicate vocabulary entry `{0}`")]
    DuplicateWord(String),
    #[error("unknown token `{0}` is not part of the vocabulary")]
    MissingUnknown(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Split a line on whitespace and fold it to upper case.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_uppercase).collect()
}

/// How documents are separated in a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Delimiter {
    /// One or more blank lines end a document.
    #[default]
    BlankLine,
    /// A line consisting (after trimming) of exactly this marker starts a new
    /// document.
    Marker(String),
}

impl std::str::FromStr for Delimiter {
    type Err = String;

    /// `blank` or `marker:<STR>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "blank" {
            Ok(Delimiter::BlankLine)
        } else if let Some(marker) = s.strip_prefix("marker:") {
            if marker.trim().is_empty() {
                Err("marker delimiter needs a non-empty marker".into())
            } else {
                Ok(Delimiter::Marker(marker.trim().to_string()))
            }
        } else {
            Err(format!("unknown delimiter `{s}` (blank|marker:STR)"))
        }
    }
}

/// A document as token strings, before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub tokens: Vec<String>,
}

/// Result of [`segment_corpus`].
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub documents: Vec<RawDocument>,
    pub dropped: usize,
}

impl Segmentation {
    pub fn kept(&self) -> usize {
        self.documents.len()
    }
}

/// Split a text stream into documents, dropping those shorter than
/// `min_doc_length` tokens.
pub fn segment_corpus<R: BufRead>(
    reader: R,
    delimiter: &Delimiter,
    min_doc_length: usize,
) -> Result<Segmentation, CorpusError> {
    let mut documents = Vec::new();
    let mut dropped = 0;
    let mut current: Vec<String> = Vec::new();
    let mut flush = |tokens: &mut Vec<String>| {
        if tokens.is_empty() {
            return;
        }
        let tokens = std::mem::take(tokens);
        if tokens.len() >= min_doc_length {
            documents.push(RawDocument { tokens });
        } else {
            dropped += 1;
        }
    };

    for line in reader.lines() {
        let line = line?;
        let boundary = match delimiter {
            Delimiter::BlankLine => line.trim().is_empty(),
            Delimiter::Marker(marker) => line.trim() == marker,
        };
        if boundary {
            flush(&mut current);
        } else {
            current.extend(tokenize(&line));
        }
    }
    flush(&mut current);

    if documents.is_empty() {
        return Err(CorpusError::NoDocuments {
            dropped,
            min_length: min_doc_length,
        });
    }
    Ok(Segmentation { documents, dropped })
}

/// Write documents in the corpus format understood by [`segment_corpus`],
/// wrapping lines after `tokens_per_line` tokens.
pub fn write_corpus<'a, W, I>(
    mut out: W,
    documents: I,
    delimiter: &Delimiter,
    tokens_per_line: usize,
) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a [String]>,
{
    let per_line = tokens_per_line.max(1);
    for (i, doc) in documents.into_iter().enumerate() {
        match delimiter {
            Delimiter::BlankLine if i > 0 => writeln!(out)?,
            Delimiter::BlankLine => {}
            Delimiter::Marker(marker) => writeln!(out, "{marker}")?,
        }
        for chunk in doc.chunks(per_line) {
            writeln!(out, "{}", chunk.join(" "))?;
        }
    }
    Ok(())
}

/// Stable integer id of a vocabulary word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordId(pub u32);

impl WordId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A document as vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Document {
    pub tokens: Vec<WordId>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// How many words [`Vocabulary::build`] keeps (the unknown word is always
/// added on top).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabLimit {
    MaxSize(usize),
    MinCount(u64),
    Unlimited,
}

/// Closed word list. The unknown word is an ordinary member with id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
    unk: WordId,
}

impl Vocabulary {
    /// Most frequent words first, ties broken lexicographically.
    pub fn build(documents: &[RawDocument], limit: VocabLimit) -> Self {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in documents {
            for token in &doc.tokens {
                *freq.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> =
            freq.into_iter().filter(|(w, _)| *w != UNK_TOKEN).collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let selected: Vec<&str> = match limit {
            VocabLimit::MaxSize(n) => ranked.into_iter().take(n).map(|(w, _)| w).collect(),
            VocabLimit::MinCount(c) => ranked
                .into_iter()
                .take_while(|&(_, count)| count >= c)
                .map(|(w, _)| w)
                .collect(),
            VocabLimit::Unlimited => ranked.into_iter().map(|(w, _)| w).collect(),
        };
        let words = std::iter::once(UNK_TOKEN)
            .chain(selected)
            .map(str::to_string)
            .collect();
        Self::from_words(words, UNK_TOKEN).expect("built vocabulary is consistent")
    }

    /// Vocabulary in the given id order.
    pub fn from_words(words: Vec<String>, unk_word: &str) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), WordId(i as u32)).is_some() {
                return Err(CorpusError::DuplicateWord(w.clone()));
            }
        }
        let unk = *index
            .get(unk_word)
            .ok_or_else(|| CorpusError::MissingUnknown(unk_word.to_string()))?;
        Ok(Self { words, index, unk })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_id(&self) -> WordId {
        self.unk
    }

    /// Id of `word`, or the unknown word's id.
    pub fn lookup(&self, word: &str) -> WordId {
        self.get(word).unwrap_or(self.unk)
    }

    pub fn get(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id.index()]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn ids(&self) -> impl Iterator<Item = WordId> {
        (0..self.words.len() as u32).map(WordId)
    }

    /// Map a document onto ids; also returns how many tokens were unknown.
    pub fn encode(&self, doc: &RawDocument) -> (Document, usize) {
        let mut oov = 0;
        let tokens = doc
            .tokens
            .iter()
            .map(|t| {
                self.get(t).unwrap_or_else(|| {
                    oov += 1;
                    self.unk
                })
            })
            .collect();
        (Document { tokens }, oov)
    }
}

pub type Bigram = (WordId, WordId);

/// Event counts of a single document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentCounts {
    pub doc_length: u64,
    pub unigrams: BTreeMap<WordId, u64>,
    /// Successive token pairs inside the document.
    pub bigrams: BTreeMap<Bigram, u64>,
}

/// Per-document and corpus-wide counts.
#[derive(Debug, Clone, Default)]
pub struct CorpusCounts {
    pub documents: Vec<DocumentCounts>,
    /// `C(w)`, indexed by word id.
    pub unigram_totals: Vec<u64>,
    /// `C(v, w)`
    pub bigram_totals: BTreeMap<Bigram, u64>,
    /// `T`
    pub total_tokens: u64,
}

impl CorpusCounts {
    /// `D`
    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn doc_lengths(&self) -> Vec<u64> {
        self.documents.iter().map(|d| d.doc_length).collect()
    }

    /// For each word, the `(document index, count)` pairs where it occurs.
    pub fn unigram_postings(&self) -> Vec<Vec<(usize, u64)>> {
        let mut postings = vec![Vec::new(); self.unigram_totals.len()];
        for (d, doc) in self.documents.iter().enumerate() {
            for (w, &c) in &doc.unigrams {
                postings[w.index()].push((d, c));
            }
        }
        postings
    }

    /// For each observed bigram, the `(document index, count)` pairs where
    /// it occurs.
    pub fn bigram_postings(&self) -> BTreeMap<Bigram, Vec<(usize, u64)>> {
        let mut postings: BTreeMap<Bigram, Vec<(usize, u64)>> = BTreeMap::new();
        for (d, doc) in self.documents.iter().enumerate() {
            for (bg, &c) in &doc.bigrams {
                postings.entry(*bg).or_default().push((d, c));
            }
        }
        postings
    }
}

/// Count unigrams and within-document bigrams.
pub fn count_events(documents: &[Document], vocab: &Vocabulary) -> CorpusCounts {
    let mut counts = CorpusCounts {
        unigram_totals: vec![0; vocab.len()],
        ..Default::default()
    };
    for doc in documents {
        let mut dc = DocumentCounts {
            doc_length: doc.len() as u64,
            ..Default::default()
        };
        for &w in &doc.tokens {
            *dc.unigrams.entry(w).or_default() += 1;
            counts.unigram_totals[w.index()] += 1;
        }
        for pair in doc.tokens.windows(2) {
            let bg = (pair[0], pair[1]);
            *dc.bigrams.entry(bg).or_default() += 1;
            *counts.bigram_totals.entry(bg).or_default() += 1;
        }
        counts.total_tokens += dc.doc_length;
        counts.documents.push(dc);
    }
    counts
}

/// Per-document counts of one event scaled to `N`-token documents.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSamples {
    /// `c_d · N / L_d`, unrounded.
    pub scaled: Vec<f64>,
    pub moments: SampleMoments,
    /// `histogram[k]` = number of documents whose scaled count rounds (half
    /// up) to `k`.
    pub histogram: Vec<u64>,
}

/// Scale one event's count in every document to an `N`-token document.
///
/// The mean is weighted by document length, so it equals `N · C / T`; the
/// variance is weighted the same way about that mean.
pub fn normalized_samples(
    counts: &[u64],
    doc_lengths: &[u64],
    n: usize,
) -> Result<NormalizedSamples, CorpusError> {
    if n == 0 {
        return Err(CorpusError::InvalidLength);
    }
    if counts.len() != doc_lengths.len() {
        return Err(CorpusError::LengthMismatch {
            samples: counts.len(),
            lengths: doc_lengths.len(),
        });
    }
    let nf = n as f64;
    let scaled: Vec<f64> = counts
        .iter()
        .zip(doc_lengths)
        .map(|(&c, &l)| c as f64 * nf / l as f64)
        .collect();
    let postings: Vec<(u64, u64)> = counts
        .iter()
        .zip(doc_lengths)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &l)| (c, l))
        .collect();
    let total: u64 = doc_lengths.iter().sum();
    let moments = event_moments(&postings, total, counts.len(), n);
    Ok(NormalizedSamples {
        histogram: rounded_histogram(&scaled),
        scaled,
        moments,
    })
}

/// Length-weighted moments from the documents where the event occurs.
///
/// `postings` holds `(count, doc_length)` for documents with a nonzero count;
/// the remaining `total_tokens - Σ doc_length` tokens belong to documents
/// where the event is absent.
pub fn event_moments(
    postings: &[(u64, u64)],
    total_tokens: u64,
    num_documents: usize,
    n: usize,
) -> SampleMoments {
    let nf = n as f64;
    let t = total_tokens as f64;
    let event_total: u64 = postings.iter().map(|&(c, _)| c).sum();
    let mean = nf * event_total as f64 / t;
    if num_documents < 2 {
        return SampleMoments {
            mean,
            variance: None,
        };
    }
    let mut covered = 0u64;
    let mut acc = 0.0;
    for &(c, l) in postings {
        let x = c as f64 * nf / l as f64;
        acc += l as f64 / t * (x - mean) * (x - mean);
        covered += l;
    }
    let absent_weight = (total_tokens - covered) as f64 / t;
    acc += absent_weight * mean * mean;
    SampleMoments {
        mean,
        variance: Some(acc),
    }
}

/// Histogram of values rounded half up to integers.
pub fn rounded_histogram(values: &[f64]) -> Vec<u64> {
    let mut hist = Vec::new();
    for &v in values {
        let k = (v + 0.5).floor().max(0.0) as usize;
        if hist.len() <= k {
            hist.resize(k + 1, 0);
        }
        hist[k] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawDocument {
        RawDocument {
            tokens: tokenize(text),
        }
    }

    #[test]
    fn tokenize_folds_case() {
        assert_eq!(tokenize("for you"), vec!["FOR", "YOU"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("OF church OF"), vec!["OF", "CHURCH", "OF"]);
    }

    #[test]
    fn short_documents_are_dropped() {
        let long = vec!["w"; 150].join(" ");
        let short = vec!["w"; 50].join(" ");
        let text = format!("{long}\n\n{short}\n");
        let seg = segment_corpus(text.as_bytes(), &Delimiter::BlankLine, 100).unwrap();
        assert_eq!(seg.kept(), 1);
        assert_eq!(seg.dropped, 1);
        assert_eq!(seg.documents[0].tokens.len(), 150);
    }

    #[test]
    fn marker_lines_split_documents() {
        let text = "<DOC>\na b\nc\n\n<DOC>\nd e f\n";
        let seg = segment_corpus(text.as_bytes(), &Delimiter::Marker("<DOC>".into()), 1).unwrap();
        assert_eq!(seg.kept(), 2);
        assert_eq!(seg.documents[0].tokens, vec!["A", "B", "C"]);
        assert_eq!(seg.documents[1].tokens, vec!["D", "E", "F"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = segment_corpus("a b\n\nc\n".as_bytes(), &Delimiter::BlankLine, 100);
        assert!(matches!(err, Err(CorpusError::NoDocuments { dropped: 2, .. })));
        assert!(segment_corpus("".as_bytes(), &Delimiter::BlankLine, 1).is_err());
    }

    #[test]
    fn delimiter_parsing() {
        assert_eq!("blank".parse::<Delimiter>().unwrap(), Delimiter::BlankLine);
        assert_eq!(
            "marker:<DOC>".parse::<Delimiter>().unwrap(),
            Delimiter::Marker("<DOC>".into())
        );
        assert!("marker:".parse::<Delimiter>().is_err());
        assert!("comma".parse::<Delimiter>().is_err());
    }

    #[test]
    fn vocabulary_frequency_order() {
        let docs = [raw("a a a b b c")];
        let v = Vocabulary::build(&docs, VocabLimit::MaxSize(2));
        assert_eq!(v.words(), &[UNK_TOKEN, "A", "B"]);
        assert_eq!(v.lookup("C"), v.unk_id());
        let all = Vocabulary::build(&docs, VocabLimit::MaxSize(10));
        assert_eq!(all.len(), 4);
        let cut = Vocabulary::build(&docs, VocabLimit::MinCount(2));
        assert_eq!(cut.words(), &[UNK_TOKEN, "A", "B"]);
    }

    #[test]
    fn vocabulary_tie_is_lexicographic() {
        // Both insertion orders must select A.
        for text in ["a a b b", "b b a a"] {
            let v = Vocabulary::build(&[raw(text)], VocabLimit::MaxSize(1));
            assert_eq!(v.words(), &[UNK_TOKEN, "A"]);
        }
    }

    #[test]
    fn unknown_token_in_text_is_not_duplicated() {
        let v = Vocabulary::build(&[raw("<unk> <unk> a")], VocabLimit::Unlimited);
        assert_eq!(v.words(), &[UNK_TOKEN, "A"]);
        assert!(Vocabulary::from_words(vec!["A".into(), "A".into()], "A").is_err());
        assert!(Vocabulary::from_words(vec!["A".into()], UNK_TOKEN).is_err());
    }

    #[test]
    fn counts_of_a_b_a() {
        let docs = [raw("a b a")];
        let v = Vocabulary::build(&docs, VocabLimit::Unlimited);
        let (doc, oov) = v.encode(&docs[0]);
        assert_eq!(oov, 0);
        let c = count_events(&[doc], &v);
        let (a, b) = (v.lookup("A"), v.lookup("B"));
        let d = &c.documents[0];
        assert_eq!(d.unigrams.get(&a), Some(&2));
        assert_eq!(d.unigrams.get(&b), Some(&1));
        assert_eq!(d.bigrams.get(&(a, b)), Some(&1));
        assert_eq!(d.bigrams.get(&(b, a)), Some(&1));
        assert_eq!(d.bigrams.len(), 2);
        assert_eq!(c.total_tokens, 3);
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = Vocabulary::build(&[raw("a b")], VocabLimit::Unlimited);
        let (doc, oov) = v.encode(&raw("a zzz"));
        assert_eq!(oov, 1);
        assert_eq!(doc.tokens[1], v.unk_id());
    }

    #[test]
    fn scaling_and_symmetric_moments() {
        let s = normalized_samples(&[5], &[500], 1000).unwrap();
        assert_eq!(s.scaled, vec![10.0]);
        assert_eq!(s.moments.variance, None);

        let s = normalized_samples(&[0, 4], &[4, 4], 4).unwrap();
        assert_eq!(s.moments.mean, 2.0);
        assert_eq!(s.moments.variance, Some(4.0));
        assert_eq!(s.histogram.iter().sum::<u64>(), 2);
    }

    #[test]
    fn normalized_samples_errors() {
        assert!(matches!(normalized_samples(&[1], &[10], 0), Err(CorpusError::InvalidLength)));
        assert!(normalized_samples(&[1, 2], &[10], 5).is_err());
    }

    #[test]
    fn histogram_rounds_half_up() {
        assert_eq!(rounded_histogram(&[0.49, 0.5, 1.5, 2.4999]), vec![1, 1, 2]);
    }
}
