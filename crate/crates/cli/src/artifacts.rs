//! On-disk layout of the `ingest` output and helpers for writing files.
//!
//! An ingest directory holds
//!
//! * `vocab.txt`: one word per line in id order, the unknown word first;
//! * `documents.csv`: `doc_index,doc_length`;
//! * `counts.csv`: `event,doc_index,count,doc_length,scaled_count`, one row
//!   per event and document where it occurs. Bigram events are written as
//!   the two words separated by one space; `scaled_count` is the count scaled
//!   to a 1000-token document.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use varrate::corpus::{CorpusCounts, DocumentCounts, Vocabulary, WordId, UNK_TOKEN};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const DOCUMENTS_FILE: &str = "documents.csv";
pub const COUNTS_FILE: &str = "counts.csv";

/// Length the `scaled_count` column is normalized to.
const SCALED_LENGTH: f64 = 1000.0;

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    event: String,
    doc_index: usize,
    count: u64,
    doc_length: u64,
    scaled_count: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRow {
    doc_index: usize,
    doc_length: u64,
}

/// Write `path` through a temporary sibling that is renamed into place once
/// `body` succeeds, so a failed command leaves no partial artifact.
pub fn write_atomically<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    let mut out = BufWriter::new(file);
    let result = body(&mut out).and_then(|()| out.flush().map_err(Into::into));
    drop(out);
    match result {
        Ok(()) => fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display())),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e.context(format!("writing {}", path.display())))
        }
    }
}

pub fn write_counts(dir: &Path, vocab: &Vocabulary, counts: &CorpusCounts) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomically(&dir.join(VOCAB_FILE), |out| {
        for word in vocab.words() {
            writeln!(out, "{word}")?;
        }
        Ok(())
    })?;
    write_atomically(&dir.join(DOCUMENTS_FILE), |out| {
        let mut csv = csv::Writer::from_writer(out);
        for (doc_index, doc) in counts.documents.iter().enumerate() {
            csv.serialize(DocumentRow {
                doc_index,
                doc_length: doc.doc_length,
            })?;
        }
        csv.flush()?;
        Ok(())
    })?;
    write_atomically(&dir.join(COUNTS_FILE), |out| {
        let mut csv = csv::Writer::from_writer(out);
        let mut row = |event: String, doc_index: usize, count: u64, doc_length: u64| {
            csv.serialize(CountRow {
                event,
                doc_index,
                count,
                doc_length,
                scaled_count: count as f64 * SCALED_LENGTH / doc_length as f64,
            })
        };
        for (d, doc) in counts.documents.iter().enumerate() {
            for (&w, &c) in &doc.unigrams {
                row(vocab.word(w).to_string(), d, c, doc.doc_length)?;
            }
            for (&(v, w), &c) in &doc.bigrams {
                row(format!("{} {}", vocab.word(v), vocab.word(w)), d, c, doc.doc_length)?;
            }
        }
        csv.flush()?;
        Ok(())
    })
}

/// Directory holding the ingest files: `path` itself, or the parent of a
/// `counts.csv` path.
pub fn counts_dir(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

pub fn read_counts(path: &Path) -> Result<(Vocabulary, CorpusCounts)> {
    let dir = counts_dir(path);
    let vocab_path = dir.join(VOCAB_FILE);
    let words: Vec<String> = BufReader::new(
        File::open(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?,
    )
    .lines()
    .collect::<Result<_, _>>()?;
    let vocab = Vocabulary::from_words(words, UNK_TOKEN)
        .with_context(|| format!("invalid vocabulary in {}", vocab_path.display()))?;

    let docs_path = dir.join(DOCUMENTS_FILE);
    let mut documents = Vec::new();
    let mut reader =
        csv::Reader::from_path(&docs_path).with_context(|| format!("reading {}", docs_path.display()))?;
    for (i, row) in reader.deserialize::<DocumentRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", docs_path.display(), i + 1))?;
        if row.doc_index != i || row.doc_length == 0 {
            bail!("{}: row {} is out of order or empty", docs_path.display(), i + 1);
        }
        documents.push(DocumentCounts {
            doc_length: row.doc_length,
            ..Default::default()
        });
    }
    if documents.is_empty() {
        bail!("{} lists no documents", docs_path.display());
    }

    let counts_path = dir.join(COUNTS_FILE);
    let lookup: HashMap<&str, WordId> = vocab.ids().map(|id| (vocab.word(id), id)).collect();
    let word = |s: &str| {
        lookup
            .get(s)
            .copied()
            .with_context(|| format!("`{s}` is not in {}", vocab_path.display()))
    };
    let mut reader =
        csv::Reader::from_path(&counts_path).with_context(|| format!("reading {}", counts_path.display()))?;
    for (i, row) in reader.deserialize::<CountRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", counts_path.display(), i + 1))?;
        let Some(doc) = documents.get_mut(row.doc_index) else {
            bail!("{}: row {} names unknown document {}", counts_path.display(), i + 1, row.doc_index);
        };
        if row.doc_length != doc.doc_length {
            bail!("{}: row {} disagrees on the document length", counts_path.display(), i + 1);
        }
        match row.event.split_once(' ') {
            None => {
                doc.unigrams.insert(word(&row.event)?, row.count);
            }
            Some((v, w)) => {
                doc.bigrams.insert((word(v)?, word(w)?), row.count);
            }
        }
    }

    let mut counts = CorpusCounts {
        unigram_totals: vec![0; vocab.len()],
        ..Default::default()
    };
    for doc in &documents {
        let tokens: u64 = doc.unigrams.values().sum();
        if tokens != doc.doc_length {
            bail!("{}: unigram counts do not add up to the document lengths", counts_path.display());
        }
        for (w, &c) in &doc.unigrams {
            counts.unigram_totals[w.index()] += c;
        }
        for (bg, &c) in &doc.bigrams {
            *counts.bigram_totals.entry(*bg).or_default() += c;
        }
        counts.total_tokens += doc.doc_length;
    }
    counts.documents = documents;
    Ok((vocab, counts))
}
