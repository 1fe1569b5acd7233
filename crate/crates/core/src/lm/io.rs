//! Line-oriented text serialization of [`LanguageModel`].
//!
//! ```text
//! varrate-model 1
//! doc_length 1000
//! vocab_size 3
//! total_tokens 5400
//! documents 12
//! unk <UNK>
//! family_policy auto
//! discount unigram abs 0.61
//! discount bigram gt 5 0.52 0.71 0.8 0.85 0.9
//! floor uniform
//! \unigrams
//! word rawcount family alpha beta lambda mean variance
//! ...
//! \bigrams 17
//! v w rawcount family alpha beta lambda mean variance
//! ...
//! \end
//! ```
//!
//! Unused parameter columns hold `-`. A degenerate distribution stores its
//! point mean in the `lambda` column.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{BigramEntry, DiscountConfig, Discounts, EventStats, LanguageModel, LmError};
use crate::corpus::Vocabulary;
use crate::ratemodel::{Family, FitPolicy, NegBinParams, PoissonParams, RateDistribution, SampleMoments};

const MAGIC: &str = "varrate-model 1";

/// Shortest representation that parses back to the same value.
fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn write_discount(out: &mut impl Write, order: &str, d: &DiscountConfig) -> std::io::Result<()> {
    match d {
        DiscountConfig::Absolute { c } => writeln!(out, "discount {order} abs {}", num(*c)),
        DiscountConfig::GoodTuring { ratios, cutoff } => {
            write!(out, "discount {order} gt {cutoff}")?;
            for r in ratios {
                write!(out, " {}", num(*r))?;
            }
            writeln!(out)
        }
    }
}

fn stats_columns(s: &EventStats) -> String {
    let (alpha, beta, lambda) = match s.dist {
        RateDistribution::Poisson(p) => ("-".into(), "-".into(), num(p.lambda())),
        RateDistribution::NegBin(p) => (num(p.alpha()), num(p.beta()), "-".into()),
        RateDistribution::Degenerate { mean } => ("-".into(), "-".into(), num(mean)),
    };
    let variance = s.moments.variance.map_or_else(|| "-".into(), num);
    format!(
        "{} {} {alpha} {beta} {lambda} {} {variance}",
        s.raw_count,
        s.dist.family(),
        num(s.moments.mean)
    )
}

impl LanguageModel {
    pub fn save<W: Write>(&self, out: W) -> Result<(), LmError> {
        let mut out = BufWriter::new(out);
        let vocab = self.vocabulary();
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "doc_length {}", self.doc_length())?;
        writeln!(out, "vocab_size {}", vocab.len())?;
        writeln!(out, "total_tokens {}", self.total_tokens())?;
        writeln!(out, "documents {}", self.num_documents())?;
        writeln!(out, "unk {}", vocab.word(vocab.unk_id()))?;
        writeln!(out, "family_policy {}", self.policy())?;
        write_discount(&mut out, "unigram", &self.discounts().unigram)?;
        write_discount(&mut out, "bigram", &self.discounts().bigram)?;
        writeln!(out, "floor uniform")?;
        writeln!(out, "\\unigrams")?;
        for (w, s) in vocab.words().iter().zip(self.unigrams()) {
            writeln!(out, "{w} {}", stats_columns(s))?;
        }
        writeln!(out, "\\bigrams {}", self.bigrams().len())?;
        for e in self.bigrams() {
            writeln!(
                out,
                "{} {} {}",
                vocab.word(e.context),
                vocab.word(e.word),
                stats_columns(&e.stats)
            )?;
        }
        writeln!(out, "\\end")?;
        out.flush()?;
        Ok(())
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        self.save(File::create(path)?)
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, LmError> {
        let mut lines = Lines {
            inner: input.lines(),
            line: 0,
        };
        if lines.next_line()? != MAGIC {
            return Err(lines.error("not a varrate model file"));
        }
        let doc_length: usize = lines.field("doc_length")?;
        let vocab_size: usize = lines.field("vocab_size")?;
        let total_tokens: u64 = lines.field("total_tokens")?;
        let documents: usize = lines.field("documents")?;
        let unk: String = lines.field("unk")?;
        let policy: FitPolicy = lines.field("family_policy")?;
        let unigram_discount = lines.discount("unigram")?;
        let bigram_discount = lines.discount("bigram")?;
        let floor: String = lines.field("floor")?;
        if floor != "uniform" {
            return Err(lines.error(format!("unsupported floor `{floor}`")));
        }
        if lines.next_line()? != "\\unigrams" {
            return Err(lines.error("expected \\unigrams"));
        }
        let mut words = Vec::with_capacity(vocab_size);
        let mut unigrams = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            let line = lines.next_line()?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 8 {
                return Err(lines.error("unigram lines have 8 columns"));
            }
            words.push(cols[0].to_string());
            unigrams.push(lines.stats(&cols[1..])?);
        }
        let vocab = Vocabulary::from_words(words, &unk).map_err(|e| lines.error(e.to_string()))?;
        let header = lines.next_line()?;
        let count: usize = match header.strip_prefix("\\bigrams ") {
            Some(n) => n.trim().parse().map_err(|_| lines.error("bad bigram count"))?,
            None => return Err(lines.error("expected \\bigrams")),
        };
        let mut bigrams = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next_line()?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 9 {
                return Err(lines.error("bigram lines have 9 columns"));
            }
            let lookup = |w: &str| {
                vocab
                    .get(w)
                    .ok_or_else(|| format!("bigram word `{w}` is not in the vocabulary"))
            };
            let context = lookup(cols[0]).map_err(|m| lines.error(m))?;
            let word = lookup(cols[1]).map_err(|m| lines.error(m))?;
            bigrams.push(BigramEntry {
                context,
                word,
                stats: lines.stats(&cols[2..])?,
            });
        }
        if lines.next_line()? != "\\end" {
            return Err(lines.error("expected \\end"));
        }
        LanguageModel::from_parts(
            vocab,
            doc_length,
            total_tokens,
            documents,
            policy,
            unigrams,
            bigrams,
            Discounts {
                unigram: unigram_discount,
                bigram: bigram_discount,
            },
        )
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<Self, LmError> {
        Self::load(BufReader::new(File::open(path)?))
    }
}

struct Lines<I> {
    inner: I,
    line: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> Lines<I> {
    fn error(&self, message: impl Into<String>) -> LmError {
        LmError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<String, LmError> {
        loop {
            self.line += 1;
            match self.inner.next() {
                None => return Err(self.error("unexpected end of file")),
                Some(line) => {
                    let line = line?;
                    let trimmed = line.trim();
                    if !trimmed.is_empty() {
                        return Ok(trimmed.to_string());
                    }
                }
            }
        }
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, LmError> {
        let line = self.next_line()?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.error(format!("expected `{key}`")))?;
        value
            .trim()
            .parse()
            .map_err(|_| self.error(format!("bad value for `{key}`")))
    }

    fn discount(&mut self, order: &str) -> Result<DiscountConfig, LmError> {
        let line = self.next_line()?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 3 || cols[0] != "discount" || cols[1] != order {
            return Err(self.error(format!("expected `discount {order}`")));
        }
        let config = match cols[2] {
            "abs" if cols.len() == 4 => DiscountConfig::Absolute {
                c: self.float(cols[3])?,
            },
            "gt" if cols.len() >= 4 => {
                let cutoff: u64 = cols[3].parse().map_err(|_| self.error("bad cutoff"))?;
                let ratios = cols[4..]
                    .iter()
                    .map(|c| self.float(c))
                    .collect::<Result<Vec<_>, _>>()?;
                DiscountConfig::GoodTuring { ratios, cutoff }
            }
            _ => return Err(self.error("malformed discount line")),
        };
        config.validate().map_err(|m| self.error(m))?;
        Ok(config)
    }

    fn float(&self, s: &str) -> Result<f64, LmError> {
        s.parse()
            .ok()
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| self.error(format!("bad number `{s}`")))
    }

    fn optional(&self, s: &str) -> Result<Option<f64>, LmError> {
        if s == "-" {
            Ok(None)
        } else {
            self.float(s).map(Some)
        }
    }

    /// `rawcount family alpha beta lambda mean variance`
    fn stats(&self, cols: &[&str]) -> Result<EventStats, LmError> {
        let raw_count: u64 = cols[0].parse().map_err(|_| self.error("bad raw count"))?;
        let family: Family = cols[1].parse().map_err(|m: String| self.error(m))?;
        let alpha = self.optional(cols[2])?;
        let beta = self.optional(cols[3])?;
        let lambda = self.optional(cols[4])?;
        let mean = self.float(cols[5])?;
        let variance = self.optional(cols[6])?;
        let missing = |name: &str| self.error(format!("missing {name} for {family}"));
        let dist = match family {
            Family::Poisson => {
                RateDistribution::Poisson(PoissonParams::new(lambda.ok_or_else(|| missing("lambda"))?)?)
            }
            Family::NegBin => RateDistribution::NegBin(NegBinParams::new(
                alpha.ok_or_else(|| missing("alpha"))?,
                beta.ok_or_else(|| missing("beta"))?,
            )?),
            Family::Degenerate => RateDistribution::Degenerate {
                mean: lambda.ok_or_else(|| missing("mean"))?,
            },
        };
        Ok(EventStats {
            raw_count,
            moments: SampleMoments { mean, variance },
            dist,
        })
    }
}
