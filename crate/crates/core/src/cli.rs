//! `skiptag` command line.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration error, 3 data
//! error, 4 model incompatibility.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint;
use crate::codec::{Span, Tag, TagSet};
use crate::corpus::{
    annotate_lines, expand_corpus, generate_synthetic, keep_all, load_dataset, records_to_string, DataFormat,
    Embeddings, Instance, SentenceRecord, SynthParams,
};
use crate::error::{Error, Result};
use crate::layers::{EncoderMode, GateTrace};
use crate::model::{Tagger, Vocab};
use crate::trainer::{evaluate, lambda_grid, sweep, train, SweepReport, SweepRow, TrainingConfig};

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "SKIPTAG_WORKERS";

#[derive(Parser, Debug)]
#[command(
    name = "skiptag",
    version,
    about = "Skip-LSTM + CRF tagger for part/whole facts of percentages"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Span F1 and skip statistics of a model on labelled data.
    Evaluate(EvaluateArgs),
    /// Predicted tags, spans and gate traces as JSON lines.
    Predict(PredictArgs),
    /// λ grid search with several seeded runs per setting.
    Sweep(SweepArgs),
    /// Recognize percentages in whitespace-tokenized lines.
    Annotate(AnnotateArgs),
    /// Generate a synthetic long-gap corpus.
    Synth(SynthArgs),
    /// Skip statistics and skipped-token ranking of a skip-mode model.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Records,
    Conll,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Records => DataFormat::Records,
            FormatArg::Conll => DataFormat::Conll,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Plain,
    Skip,
}

impl From<ModeArg> for EncoderMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => EncoderMode::Plain,
            ModeArg::Skip => EncoderMode::Skip,
        }
    }
}

#[derive(Args, Debug)]
struct ModelSetup {
    /// `key = value` training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Word vectors, `word v1 ... vD` per line. Without it, seeded random
    /// vectors are used.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Input format; sniffed when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[command(flatten)]
    setup: ModelSetup,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// History path; defaults to `<out>.history.jsonl`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Machine-readable report.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Require the checkpoint to be of this mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    setup: ModelSetup,
    #[arg(long, default_value_t = 0.02)]
    grid_start: f64,
    #[arg(long, default_value_t = 1.00)]
    grid_end: f64,
    #[arg(long, default_value_t = 0.02)]
    grid_step: f64,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Also run plain mode with the same seeds.
    #[arg(long)]
    baseline: bool,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    /// One sentence per line; optional POS tags after a tab.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    min_len: usize,
    #[arg(long, default_value_t = 60)]
    max_len: usize,
    #[arg(long, default_value_t = 15)]
    min_gap: usize,
    #[arg(long, default_value_t = 25)]
    max_gap: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Corpus statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn load_instances(path: &Path, format: Option<FormatArg>) -> Result<(Vec<SentenceRecord>, Vec<Instance>)> {
    let records = load_dataset(path, format.map(Into::into))?;
    let instances = expand_corpus(&records, keep_all)?;
    Ok((records, instances))
}

fn training_config(setup: &ModelSetup) -> Result<TrainingConfig> {
    let mut cfg = match &setup.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(m) = setup.mode {
        cfg.mode = m.into();
    }
    if let Some(l) = setup.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = setup.seed {
        cfg.seed = s;
    }
    if let Some(e) = setup.max_epochs {
        cfg.max_epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The part/whole tag set unless the data carries other roles.
pub fn tagset_for(instances: &[Instance]) -> TagSet {
    let mut roles: Vec<String> = instances
        .iter()
        .flat_map(|i| i.gold.iter().filter_map(|t| t.role().map(str::to_string)))
        .collect();
    roles.sort();
    roles.dedup();
    if roles.iter().all(|r| r == "part" || r == "whole") {
        TagSet::part_whole()
    } else {
        TagSet::new(roles)
    }
}

/// Everything needed to build fresh taggers for one dataset.
struct Setup {
    embeddings: Embeddings,
    pos_vocab: Vocab,
    tagset: TagSet,
}

impl Setup {
    fn new(setup: &ModelSetup, cfg: &TrainingConfig, sets: &[&[Instance]]) -> Result<Self> {
        let tokens = || sets.iter().flat_map(|s| s.iter()).flat_map(|i| i.tokens.iter());
        let embeddings = match &setup.embeddings {
            Some(p) => {
                let vocab = tokens().map(|t| t.to_lowercase()).collect();
                Embeddings::load(p, Some(&vocab))?
            }
            None => Embeddings::random(tokens().map(String::as_str), cfg.random_embedding_dim, cfg.seed),
        };
        Ok(Setup {
            embeddings,
            pos_vocab: Vocab::build(sets[0].iter().flat_map(|i| i.pos.iter().map(String::as_str))),
            tagset: tagset_for(sets[0]),
        })
    }

    fn tagger(&self, cfg: &TrainingConfig) -> Result<Tagger> {
        Tagger::new(
            cfg.model_config(self.embeddings.dim()),
            self.embeddings.clone(),
            self.pos_vocab.clone(),
            self.tagset.clone(),
        )
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = training_config(&a.setup)?;
    let (_, train_set) = load_instances(&a.train, a.setup.format)?;
    let dev = match &a.dev {
        Some(p) => load_instances(p, a.setup.format)?.1,
        None => Vec::new(),
    };
    let setup = Setup::new(&a.setup, &cfg, &[&train_set, &dev])?;
    let tagger = setup.tagger(&cfg)?;
    let outcome = train(&cfg, tagger, &train_set, &dev)?;
    checkpoint::save(&a.out, &outcome.tagger, Some(&cfg))?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.jsonl");
        PathBuf::from(p)
    });
    let mut text = String::new();
    for r in &outcome.history {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(&history_path, text).map_err(|e| Error::io(&history_path, e))?;
    println!(
        "trained {} epochs; best dev F1 {:.4} at epoch {}; wrote {}",
        outcome.history.len(),
        outcome.best_dev_f1,
        outcome.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (tagger, _) = checkpoint::load(&a.model)?;
    let (_, instances) = load_instances(&a.data, a.format)?;
    let report = evaluate(&tagger, &instances)?;
    if let Some(p) = &a.json {
        write_output(Some(p), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    write_output(None, &report.to_text())
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    sentence_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    percentage: Option<usize>,
    tokens: &'a [String],
    tags: Vec<Tag>,
    spans: Vec<Span>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<GateTrace>,
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (tagger, _) = checkpoint::load(&a.model)?;
    if let Some(m) = a.mode {
        let want: EncoderMode = m.into();
        if want != tagger.config.mode {
            return Err(Error::ModelIncompatible(format!(
                "checkpoint is a {} model, {} was requested",
                tagger.config.mode, want
            )));
        }
    }
    let (_, instances) = load_instances(&a.input, a.format)?;
    let mut text = String::new();
    for inst in &instances {
        let p = tagger.predict(inst)?;
        let rec = PredictionRecord {
            sentence_id: &inst.sentence_id,
            percentage: inst.percentage,
            tokens: &inst.tokens,
            tags: p.tags,
            spans: p.spans,
            trace: p.trace,
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    write_output(a.out.as_deref(), &text)
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = training_config(&a.setup)?;
    let grid = lambda_grid(a.grid_start, a.grid_end, a.grid_step)?;
    if a.runs == 0 {
        return Err(Error::InvalidConfig {
            key: "runs".into(),
            message: "must be > 0".into(),
        });
    }
    let (_, train_set) = load_instances(&a.train, a.setup.format)?;
    let dev = match &a.dev {
        Some(p) => load_instances(p, a.setup.format)?.1,
        None => Vec::new(),
    };
    let (_, test) = load_instances(&a.test, a.setup.format)?;
    let setup = Setup::new(&a.setup, &cfg, &[&train_set, &dev, &test])?;
    let run = |mode: EncoderMode, lambda: f64, seed: u64| -> Result<f64> {
        let c = TrainingConfig {
            mode,
            lambda,
            seed,
            ..cfg.clone()
        };
        let outcome = train(&c, setup.tagger(&c)?, &train_set, &dev)?;
        let f1 = evaluate(&outcome.tagger, &test)?.overall.f1;
        log::info!("{mode} λ={lambda:.2} seed={seed}: test F1 {f1:.4}");
        Ok(f1)
    };
    let mut report = sweep(&grid, a.runs, cfg.seed, |l, s| run(EncoderMode::Skip, l, s))?;
    if a.baseline {
        let scores = (0..a.runs as u64)
            .map(|r| run(EncoderMode::Plain, 0.0, cfg.seed + r))
            .collect::<Result<Vec<_>>>()?;
        report = SweepReport::from_rows(report.rows, Some(SweepRow::new("plain", None, scores)))?;
    }
    if let Some(p) = &a.out {
        write_output(Some(p), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    write_output(None, &report.to_text())
}

fn cmd_annotate(a: &AnnotateArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let records = annotate_lines(&text, &a.input.display().to_string())?;
    write_output(a.out.as_deref(), &records_to_string(&records)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let (records, stats) = generate_synthetic(&SynthParams {
        n: a.n,
        t_range: (a.min_len, a.max_len),
        gap_range: (a.min_gap, a.max_gap),
        seed: a.seed,
    })?;
    crate::corpus::write_records(&a.out, &records)?;
    if let Some(p) = &a.stats {
        write_output(Some(p), &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    }
    println!(
        "{} sentences, {} percentages, mean length {:.1}, gaps {}..={}",
        stats.sentences, stats.percentages, stats.mean_length, stats.min_gap, stats.max_gap
    );
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let (tagger, _) = checkpoint::load(&a.model)?;
    if tagger.config.mode != EncoderMode::Skip {
        return Err(Error::ModelIncompatible("stats needs a skip-mode model".into()));
    }
    let (_, instances) = load_instances(&a.data, a.format)?;
    let report = evaluate(&tagger, &instances)?;
    let mut stats = report.skip.expect("skip mode report");
    stats.ranked.truncate(a.top);
    if let Some(p) = &a.json {
        write_output(Some(p), &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    }
    let mut text = format!(
        "instances {}\ntokens {}\nskipped {} ({:.3}%)\nentity tokens skipped {}\nper instance {:.3} skipped, {:.3} entity\n",
        stats.instances,
        stats.total_tokens,
        stats.tokens_skipped,
        100.0 * stats.skipped_fraction,
        stats.entity_tokens_skipped,
        stats.mean_skipped_per_instance,
        stats.mean_entity_skipped_per_instance
    );
    text.push_str("rank token skips freq score\n");
    for (i, r) in stats.ranked.iter().enumerate() {
        text.push_str(&format!(
            "{} {} {} {} {:.4}\n",
            i + 1,
            r.token,
            r.skips,
            r.freq,
            r.score
        ));
    }
    write_output(None, &text)
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| Error::InvalidConfig {
        key: WORKERS_ENV.into(),
        message: format!("`{v}` is not a positive integer"),
    })?;
    if n == 0 {
        return Err(Error::InvalidConfig {
            key: WORKERS_ENV.into(),
            message: "must be > 0".into(),
        });
    }
    // A pool may already exist when called more than once in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    configure_workers()?;
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

/// Parse arguments, run one command, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
