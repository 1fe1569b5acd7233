mod artifacts;
mod config;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use artifacts::{read_counts, write_atomically, write_counts};
use config::Config;
use varrate::corpus::{
    count_events, normalized_samples, segment_corpus, CorpusCounts, Delimiter, Document, Vocabulary, VocabLimit,
    WordId,
};
use varrate::eval::{evaluate, sweep, write_sweep_csv, EvalOptions, Mode, Order, TestStream};
use varrate::lm::{DiscountScheme, EventStats, FitOptions, LanguageModel, Smoothing};
use varrate::ratemodel::{fit_rate, FitPolicy, RateDistribution, RateProfile};
use varrate::relfreq::relative_frequency;
use varrate::synth::{generate, GenerativeSpec};

#[derive(Parser)]
#[command(name = "varrate", version, about = "Variable word-rate language models")]
struct Cli {
    /// JSON file with default flag values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus into documents and count unigrams and bigrams.
    Ingest(IngestArgs),
    /// Fit occurrence distributions for every event and write a model.
    Fit(FitArgs),
    /// Perplexity of a test corpus.
    Eval(EvalArgs),
    /// Perplexity over a list of window lengths.
    Sweep(SweepArgs),
    /// Generate a synthetic corpus from a JSON spec.
    Synth(SynthArgs),
    /// Write per-event tables for plotting.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// `blank` or `marker:STR`.
    #[arg(long)]
    delimiter: Option<Delimiter>,
    /// Drop documents with fewer tokens. Default 100.
    #[arg(long)]
    min_doc_len: Option<usize>,
    /// Keep only the most frequent words; the rest map to `<UNK>`.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Ingest directory or its `counts.csv`.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Reference document length. Default 1000.
    #[arg(long = "N")]
    n: Option<usize>,
    /// `auto`, `poisson` or `negbin`.
    #[arg(long)]
    family: Option<FitPolicy>,
    /// Discounting stored with the model: `abs` or `gt`.
    #[arg(long)]
    discount: Option<DiscountScheme>,
    /// Model file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit summary CSV. Defaults to the model path with `.fit.csv` appended.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Test corpus, segmented like the training corpus.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Document delimiter of the test corpus. Default `blank`.
    #[arg(long)]
    delimiter: Option<Delimiter>,
    /// `1` or `2`.
    #[arg(long)]
    order: Option<Order>,
    /// `interp` or `backoff`.
    #[arg(long)]
    smoothing: Option<Smoothing>,
    /// `abs` or `gt`.
    #[arg(long)]
    discount: Option<DiscountScheme>,
    /// Empty the window at every document boundary.
    #[arg(long)]
    reset_on_doc: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: EvalFlags,
    /// `constant` or `variable`.
    #[arg(long)]
    mode: Option<Mode>,
    /// Window length N in variable mode. Default 500.
    #[arg(long)]
    window: Option<usize>,
    /// JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-token log-probability CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: EvalFlags,
    /// Comma-separated window lengths.
    #[arg(long)]
    windows: Option<String>,
    /// CSV with columns `N,perplexity`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed in the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus file. The resolved rates go next to it as `.truth.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExportCommand {
    /// `k,theta,relfreq` for one event of a model at document length N.
    Profile(ProfileArgs),
    /// Histogram of length-normalized counts with the fitted expectation.
    Histogram(HistogramArgs),
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// A word, or two words separated by a space for a bigram.
    #[arg(long)]
    event: String,
    /// Document length. Defaults to the model's.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HistogramArgs {
    /// Ingest directory or its `counts.csv`.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// A word, or two words separated by a space for a bigram.
    #[arg(long)]
    event: String,
    /// Length the counts are normalized to. Default 1000.
    #[arg(long = "N")]
    n: Option<usize>,
    /// `auto`, `poisson` or `negbin`.
    #[arg(long)]
    family: Option<FitPolicy>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let name = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Fit(_) => "fit",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
        Command::Synth(_) => "synth",
        Command::Export(_) => "export",
    };
    let cfg = Config::load(cli.config.as_deref(), name)?;
    match cli.command {
        Command::Ingest(args) => ingest(args, &cfg),
        Command::Fit(args) => fit(args, &cfg),
        Command::Eval(args) => eval(args, &cfg),
        Command::Sweep(args) => run_sweep(args, &cfg),
        Command::Synth(args) => synth(args, &cfg),
        Command::Export(ExportCommand::Profile(args)) => export_profile(args, &cfg),
        Command::Export(ExportCommand::Histogram(args)) => export_histogram(args, &cfg),
    }
}

fn required(cfg: &Config, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    cfg.get(flag, key)?
        .with_context(|| format!("--{key} is required"))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot read {}", path.display()))?,
    ))
}

fn ingest(args: IngestArgs, cfg: &Config) -> Result<()> {
    let corpus = required(cfg, args.corpus, "corpus")?;
    let out = required(cfg, args.out, "out")?;
    let delimiter = cfg.or(args.delimiter, "delimiter", Delimiter::BlankLine)?;
    let min_doc_len = cfg.or(args.min_doc_len, "min-doc-len", 100)?;
    let limit = match cfg.get(args.vocab_size, "vocab-size")? {
        Some(n) => VocabLimit::MaxSize(n),
        None => VocabLimit::Unlimited,
    };
    let segmentation = segment_corpus(open(&corpus)?, &delimiter, min_doc_len)
        .with_context(|| format!("segmenting {}", corpus.display()))?;
    let vocab = Vocabulary::build(&segmentation.documents, limit);
    let docs: Vec<Document> = segmentation.documents.iter().map(|d| vocab.encode(d).0).collect();
    let counts = count_events(&docs, &vocab);
    write_counts(&out, &vocab, &counts)?;
    let types = counts.unigram_totals.iter().filter(|&&c| c > 0).count();
    log::info!("dropped {} documents shorter than {min_doc_len} tokens", segmentation.dropped);
    println!(
        "docs={} tokens={} types={}",
        counts.num_documents(),
        counts.total_tokens,
        types
    );
    Ok(())
}

fn fit(args: FitArgs, cfg: &Config) -> Result<()> {
    let counts_path = required(cfg, args.counts, "counts")?;
    let out = required(cfg, args.out, "out")?;
    let options = FitOptions {
        doc_length: cfg.or(args.n, "N", 1000)?,
        policy: cfg.or(args.family, "family", FitPolicy::Auto)?,
        discount: cfg.or(args.discount, "discount", DiscountScheme::Absolute)?,
    };
    let summary = match cfg.get(args.summary, "summary")? {
        Some(p) => p,
        None => {
            let mut s = out.as_os_str().to_owned();
            s.push(".fit.csv");
            PathBuf::from(s)
        }
    };
    let (vocab, counts) = read_counts(&counts_path)?;
    let model = LanguageModel::fit(vocab, &counts, options)?;
    write_atomically(&out, |w| Ok(model.save(w)?))?;
    write_atomically(&summary, |w| write_fit_summary(w, &model))?;
    println!(
        "unigrams={} bigrams={} N={} model={}",
        model.unigrams().len(),
        model.bigrams().len(),
        model.doc_length(),
        out.display()
    );
    Ok(())
}

fn write_fit_summary<W: Write>(out: W, model: &LanguageModel) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record([
        "event",
        "raw_count",
        "family",
        "alpha",
        "beta",
        "lambda",
        "sample_mean",
        "sample_variance",
    ])?;
    let vocab = model.vocabulary();
    let mut row = |event: String, stats: &EventStats| -> Result<()> {
        let (alpha, beta, lambda) = match stats.dist {
            RateDistribution::Poisson(p) => (None, None, Some(p.lambda())),
            RateDistribution::NegBin(p) => (Some(p.alpha()), Some(p.beta()), None),
            RateDistribution::Degenerate { mean } => (None, None, Some(mean)),
        };
        let show = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        csv.write_record([
            event,
            stats.raw_count.to_string(),
            stats.dist.family().to_string(),
            show(alpha),
            show(beta),
            show(lambda),
            stats.moments.mean.to_string(),
            show(stats.moments.variance),
        ])?;
        Ok(())
    };
    for (id, stats) in vocab.ids().zip(model.unigrams()) {
        row(vocab.word(id).to_string(), stats)?;
    }
    for e in model.bigrams() {
        row(format!("{} {}", vocab.word(e.context), vocab.word(e.word)), &e.stats)?;
    }
    csv.flush()?;
    Ok(())
}

struct Prepared {
    model: LanguageModel,
    stream: TestStream,
    options: EvalOptions,
}

fn prepare(flags: EvalFlags, cfg: &Config, mode: Mode, window: usize) -> Result<Prepared> {
    let model_path = required(cfg, flags.model, "model")?;
    let test_path = required(cfg, flags.test, "test")?;
    let options = EvalOptions {
        order: cfg.or(flags.order, "order", Order::Unigram)?,
        mode,
        window,
        smoothing: cfg.or(flags.smoothing, "smoothing", Smoothing::Interpolated)?,
        discount: cfg.or(flags.discount, "discount", DiscountScheme::Absolute)?,
        reset_on_doc: cfg.switch(flags.reset_on_doc, "reset-on-doc")?,
    };
    let delimiter = cfg.or(flags.delimiter, "delimiter", Delimiter::BlankLine)?;
    let model = LanguageModel::load_from_path(&model_path)
        .with_context(|| format!("loading {}", model_path.display()))?;
    let test = segment_corpus(open(&test_path)?, &delimiter, 1)
        .with_context(|| format!("segmenting {}", test_path.display()))?;
    let stream = TestStream::encode(model.vocabulary(), &test.documents)
        .with_context(|| format!("{} does not match the model vocabulary", test_path.display()))?;
    Ok(Prepared {
        model,
        stream,
        options,
    })
}

fn eval(args: EvalArgs, cfg: &Config) -> Result<()> {
    let mode = cfg.or(args.mode, "mode", Mode::Variable)?;
    let window = cfg.or(args.window, "window", 500)?;
    let report_path = cfg.get(args.report, "report")?;
    let trace_path = cfg.get(args.trace, "trace")?;
    let p = prepare(args.common, cfg, mode, window)?;
    let report = evaluate(&p.model, &p.stream, &p.options)?;
    if let Some(path) = &report_path {
        write_atomically(path, |w| Ok(report.write_json(w)?))?;
    }
    if let Some(path) = &trace_path {
        write_atomically(path, |w| Ok(report.write_trace_csv(w, &p.stream, p.model.vocabulary())?))?;
    }
    let total_clamps = report.clamps.unigram_mass + report.clamps.context_mass + report.clamps.backoff_denominator;
    if total_clamps > 0 {
        log::warn!("{total_clamps} probability-mass clamps applied; see the report for details");
    }
    println!(
        "perplexity={:.4} tokens={} oov={}",
        report.perplexity, report.tokens, report.oov
    );
    Ok(())
}

fn run_sweep(args: SweepArgs, cfg: &Config) -> Result<()> {
    let windows = cfg
        .list(args.windows.as_deref(), "windows")?
        .context("--windows is required")?;
    if windows.is_empty() {
        bail!("--windows is empty");
    }
    let out = required(cfg, args.out, "out")?;
    let p = prepare(args.common, cfg, Mode::Variable, 0)?;
    let rows = sweep(&p.model, &p.stream, &windows, &p.options)?;
    write_atomically(&out, |w| Ok(write_sweep_csv(w, &rows)?))?;
    for r in &rows {
        println!("N={} perplexity={:.4}", r.window, r.perplexity);
    }
    Ok(())
}

fn synth(args: SynthArgs, cfg: &Config) -> Result<()> {
    let spec_path = required(cfg, args.spec, "spec")?;
    let out = required(cfg, args.out, "out")?;
    let text = std::fs::read_to_string(&spec_path).with_context(|| format!("cannot read {}", spec_path.display()))?;
    let mut spec = GenerativeSpec::from_json(&text).with_context(|| format!("invalid spec {}", spec_path.display()))?;
    if let Some(seed) = cfg.get(args.seed, "seed")? {
        spec.seed = seed;
    }
    let corpus = generate(&spec)?;
    let mut truth_path = out.as_os_str().to_owned();
    truth_path.push(".truth.json");
    write_atomically(&out, |w| Ok(corpus.write(w)?))?;
    write_atomically(Path::new(&truth_path), |w| {
        serde_json::to_writer_pretty(&mut *w, &corpus.truth)?;
        writeln!(w)?;
        Ok(())
    })?;
    println!("docs={} tokens={} seed={}", corpus.documents.len(), corpus.total_tokens(), spec.seed);
    Ok(())
}

enum Event {
    Unigram(WordId),
    Bigram(WordId, WordId),
}

fn parse_event(vocab: &Vocabulary, text: &str) -> Result<Event> {
    let words: Vec<String> = varrate::corpus::tokenize(text);
    let id = |w: &str| vocab.get(w).with_context(|| format!("`{w}` is not in the vocabulary"));
    match words.as_slice() {
        [w] => Ok(Event::Unigram(id(w)?)),
        [v, w] => Ok(Event::Bigram(id(v)?, id(w)?)),
        _ => bail!("--event takes one word or two words"),
    }
}

fn export_profile(args: ProfileArgs, cfg: &Config) -> Result<()> {
    let model_path = required(cfg, args.model, "model")?;
    let out = required(cfg, args.out, "out")?;
    let model = LanguageModel::load_from_path(&model_path)
        .with_context(|| format!("loading {}", model_path.display()))?;
    let n = cfg.or(args.n, "N", model.doc_length())?;
    let stats = match parse_event(model.vocabulary(), &args.event)? {
        Event::Unigram(w) => model.unigram(w),
        Event::Bigram(v, w) => {
            let e = model.entry(v, w).with_context(|| format!("`{}` was never observed", args.event))?;
            &model.bigrams()[e].stats
        }
    };
    let (dist, target) = stats.distribution_at(model.doc_length(), n, model.policy())?;
    let profile = RateProfile::build(dist, target, n)?;
    write_atomically(&out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["k", "theta", "relfreq"])?;
        for k in 0..=n {
            let f = relative_frequency(&profile, k)?;
            csv.write_record([k.to_string(), profile.theta(k).to_string(), f.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    println!("{dist} N={n} mean={}", profile.mean());
    Ok(())
}

fn export_histogram(args: HistogramArgs, cfg: &Config) -> Result<()> {
    let counts_path = required(cfg, args.counts, "counts")?;
    let out = required(cfg, args.out, "out")?;
    let n = cfg.or(args.n, "N", 1000)?;
    let policy = cfg.or(args.family, "family", FitPolicy::Auto)?;
    let (vocab, counts) = read_counts(&counts_path)?;
    let per_doc = event_counts(&counts, parse_event(&vocab, &args.event)?);
    let samples = normalized_samples(&per_doc, &counts.doc_lengths(), n)?;
    let dist = fit_rate(&samples.moments, policy)?;
    let docs = counts.num_documents() as f64;
    write_atomically(&out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["count", "documents", "expected"])?;
        for (k, &observed) in samples.histogram.iter().enumerate() {
            let expected = docs * dist.pmf(k as u64);
            csv.write_record([k.to_string(), observed.to_string(), expected.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    println!(
        "{dist} mean={} variance={}",
        samples.moments.mean,
        samples.moments.variance.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn event_counts(counts: &CorpusCounts, event: Event) -> Vec<u64> {
    counts
        .documents
        .iter()
        .map(|d| match event {
            Event::Unigram(w) => d.unigrams.get(&w).copied().unwrap_or(0),
            Event::Bigram(v, w) => d.bigrams.get(&(v, w)).copied().unwrap_or(0),
        })
        .collect()
}
