//! Command-line front end: synthesize, train, evaluate, analyze and sweep.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::corpus::{discretize_time, ingest_posts, parse_link_pairs, Corpus, LinkSet, VocabPolicy, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{self, MetricRow, NegativeSampling, SplitConfig};
use crate::model::{
    complete_log_likelihood, compute_lambda0, estimate_parameters, Checkpoint, Hyperparameters, ModelEstimates,
};
use crate::sampler::{self, TrainOptions};
use crate::synthetic::{self, SyntheticConfig};

pub const OUT_DIR_ENV: &str = "COSTOT_OUT_DIR";

pub const POSTS_FILE: &str = "posts.tsv";
pub const LINKS_FILE: &str = "links.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRUTH_FILE: &str = "truth.json";
pub const SYNTH_CONFIG_FILE: &str = "synth_config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVE_FILE: &str = "accuracy_curve.csv";

pub const VALID_METRICS: [&str; 4] = ["time_acc", "auc", "perplexity", "loglik"];
pub const DEFAULT_GRID: [usize; 4] = [20, 50, 100, 150];

#[derive(Debug, Parser)]
#[command(name = "costot", version, about = "Joint community, topic and time modelling of posts and follow links")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Fit the model and write a checkpoint plus likelihood trace.
    Train(TrainArgs),
    /// Score a checkpoint on its held-out split.
    Eval(EvalArgs),
    /// Export timelines, attention matrices, contributions and top words.
    Analyze(AnalyzeArgs),
    /// Train and evaluate over a grid of community and topic counts.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub communities: usize,
    #[arg(long, default_value_t = 30)]
    pub topics: usize,
    #[arg(long, default_value_t = 100)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 30)]
    pub slices: usize,
    #[arg(long, default_value_t = 250)]
    pub users: usize,
    #[arg(long, default_value_t = 50)]
    pub posts_per_user: usize,
    #[arg(long, default_value_t = 20)]
    pub words_per_post: usize,
    #[arg(long, default_value_t = 0.7)]
    pub p0: f64,
    #[arg(long, default_value_t = 0.3)]
    pub p_slope: f64,
    #[arg(long, default_value_t = 0.1)]
    pub p_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gauss_var: f64,
}

/// Input files and how to read them.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub links: Option<PathBuf>,
    /// Fixed vocabulary; tokens outside it are dropped. Built from the posts otherwise.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub slice_width: Option<u64>,
    /// Number of time slices; inferred from the data when absent.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Number of users; one past the largest id seen when absent.
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub min_word_count: Option<usize>,
}

/// Hyperparameter overrides; unset values come from the config file, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub delta1: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SplitArgs {
    /// Fraction of posts held out for evaluation.
    #[arg(long)]
    pub holdout_posts: Option<f64>,
    /// Fraction of positive links held out.
    #[arg(long)]
    pub holdout_links: Option<f64>,
    /// Fraction of absent pairs sampled as negatives.
    #[arg(long, conflicts_with = "match_negatives")]
    pub holdout_negatives: Option<f64>,
    /// Sample as many negatives as held-out positive links.
    #[arg(long)]
    pub match_negatives: bool,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Train on the full corpus without a holdout.
    #[arg(long)]
    pub no_split: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// TOML file with defaults for any flag of this command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub communities: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated subset of time_acc, auc, perplexity, loglik.
    #[arg(long, value_delimiter = ',', default_value = "time_acc,auc,perplexity,loglik")]
    pub metrics: Vec<String>,
    /// Tolerance in slices for time_acc.
    #[arg(long, default_value_t = 10)]
    pub tolerance: usize,
    /// Largest tolerance written to the accuracy curve.
    #[arg(long, default_value_t = 30)]
    pub max_tolerance: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top_words: usize,
    /// z-score a local maximum must reach to be flagged.
    #[arg(long, default_value_t = 2.0)]
    pub peak_z: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub c_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub k_grid: Vec<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_delimiter = ',', default_value = "time_acc,auc,perplexity,loglik")]
    pub metrics: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub tolerance: usize,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Keys accepted in a `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub communities: Option<usize>,
    pub topics: Option<usize>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
    pub slice_width: Option<u64>,
    pub min_word_count: Option<usize>,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta0: Option<f64>,
    pub delta1: Option<f64>,
    pub lambda1: Option<f64>,
    pub holdout_posts: Option<f64>,
    pub holdout_links: Option<f64>,
    pub holdout_negatives: Option<f64>,
    #[serde(default)]
    pub match_negatives: bool,
    pub split_seed: Option<u64>,
    #[serde(default)]
    pub no_split: bool,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

fn pick<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl HyperArgs {
    fn apply(&self, file: &FileConfig, h: &mut Hyperparameters) {
        h.rho = pick(self.rho, file.rho, h.rho);
        h.alpha = pick(self.alpha, file.alpha, h.alpha);
        h.beta = pick(self.beta, file.beta, h.beta);
        h.epsilon = pick(self.epsilon, file.epsilon, h.epsilon);
        h.delta0 = pick(self.delta0, file.delta0, h.delta0);
        h.delta1 = pick(self.delta1, file.delta1, h.delta1);
        h.lambda1 = pick(self.lambda1, file.lambda1, h.lambda1);
    }
}

impl SplitArgs {
    fn resolve(&self, file: &FileConfig) -> Option<SplitConfig> {
        if self.no_split || file.no_split {
            return None;
        }
        let d = SplitConfig::default();
        let negatives = if self.match_negatives {
            NegativeSampling::MatchPositives
        } else if let Some(f) = self.holdout_negatives {
            NegativeSampling::Fraction(f)
        } else if file.match_negatives {
            NegativeSampling::MatchPositives
        } else {
            file.holdout_negatives.map_or(d.negatives, NegativeSampling::Fraction)
        };
        Some(SplitConfig {
            post_holdout_frac: pick(self.holdout_posts, file.holdout_posts, d.post_holdout_frac),
            link_holdout_frac: pick(self.holdout_links, file.holdout_links, d.link_holdout_frac),
            negatives,
            seed: pick(self.split_seed, file.split_seed, d.seed),
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn open_file(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes a file through `body`, attaching the path to any IO error.
fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = create_file(path)?;
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// A corpus read from disk, with what was dropped along the way.
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub dropped_tokens: usize,
    pub self_links_skipped: usize,
}

pub fn load_corpus(data: &DataArgs, file: &FileConfig) -> Result<LoadedCorpus> {
    let policy = match &data.vocab {
        Some(path) => VocabPolicy::Fixed(Vocabulary::read(open_file(path)?)?),
        None => VocabPolicy::Build,
    };
    let min_count = pick(data.min_word_count, file.min_word_count, 1);
    let mut ingested = ingest_posts(open_file(&data.posts)?, policy, min_count)?;
    let raw: Vec<u64> = ingested.posts.iter().map(|p| p.time_slice as u64).collect();
    let width = pick(data.slice_width, file.slice_width, 1);
    for (p, t) in ingested.posts.iter_mut().zip(discretize_time(&raw, width)?) {
        p.time_slice = t;
    }
    let pairs = match &data.links {
        Some(path) => parse_link_pairs(open_file(path)?)?,
        None => Vec::new(),
    };
    let seen = ingested
        .posts
        .iter()
        .map(|p| p.author + 1)
        .chain(pairs.iter().map(|&(s, d)| s.max(d) + 1))
        .max()
        .unwrap_or(0);
    let users = data.users.unwrap_or(seen);
    let (links, self_links_skipped) = LinkSet::from_pairs(users, pairs)?;
    let corpus = Corpus::new(ingested.posts, links, ingested.vocabulary, users, data.slices)?;
    Ok(LoadedCorpus {
        corpus,
        dropped_tokens: ingested.dropped_tokens,
        self_links_skipped,
    })
}

/// Training corpus and held-out data, as determined by an optional split.
pub fn apply_split(corpus: Corpus, split: Option<&SplitConfig>) -> Result<eval::Split> {
    match split {
        Some(cfg) => eval::split_corpus(&corpus, cfg),
        None => Ok(eval::Split {
            train: corpus,
            test_posts: Vec::new(),
            test_links: Vec::new(),
            test_negatives: Vec::new(),
        }),
    }
}

pub fn check_metrics(metrics: &[String]) -> Result<()> {
    for m in metrics {
        if !VALID_METRICS.contains(&m.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown metric '{m}'; valid metrics: {}",
                VALID_METRICS.join(", ")
            )));
        }
    }
    Ok(())
}

pub fn config_label(hyper: &Hyperparameters) -> String {
    format!("C{}_K{}", hyper.communities, hyper.topics)
}

/// Metric rows for one fitted model on its held-out data.
pub fn evaluate(
    split: &eval::Split,
    est: &ModelEstimates,
    train_loglik: f64,
    label: &str,
    metrics: &[String],
    tolerance: usize,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for m in metrics {
        match m.as_str() {
            "time_acc" => {
                let acc = eval::time_prediction_accuracy(&split.test_posts, est, tolerance)?;
                rows.push(MetricRow::new(format!("time_acc_tol{tolerance}"), label, acc));
            }
            "auc" => {
                let pos: Vec<f64> = split
                    .test_links
                    .iter()
                    .map(|&(s, d)| eval::link_probability(s, d, est))
                    .collect();
                let neg: Vec<f64> = split
                    .test_negatives
                    .iter()
                    .map(|&(s, d)| eval::link_probability(s, d, est))
                    .collect();
                rows.push(MetricRow::new("auc", label, eval::auc(&pos, &neg)?));
            }
            "perplexity" => {
                let report = eval::perplexity(&split.test_posts, est)?;
                rows.push(MetricRow::new("perplexity", label, report.perplexity));
            }
            "loglik" => rows.push(MetricRow::new("train_loglik", label, train_loglik)),
            other => check_metrics(&[other.to_string()])?,
        }
    }
    Ok(rows)
}

/// Split seed, held-out sizes and items the metrics had to skip.
fn split_rows(split: &eval::Split, cfg: Option<&SplitConfig>, est: &ModelEstimates, label: &str) -> Vec<MetricRow> {
    let seed = cfg.map_or(0, |c| c.seed);
    let oov = eval::perplexity(&split.test_posts, est).map_or(0, |r| r.oov_dropped);
    let unknown = eval::predict_timestamps(&split.test_posts, est).excluded_unknown_authors;
    vec![
        MetricRow::new("oov_dropped", label, oov as f64),
        MetricRow::new("unknown_authors", label, unknown as f64),
        MetricRow::new("split_seed", label, seed as f64),
        MetricRow::new("test_posts", label, split.test_posts.len() as f64),
        MetricRow::new("test_links", label, split.test_links.len() as f64),
        MetricRow::new("test_negatives", label, split.test_negatives.len() as f64),
    ]
}

fn hyperparameters(
    corpus: &Corpus,
    communities: usize,
    topics: usize,
    flags: &HyperArgs,
    file: &FileConfig,
) -> Result<Hyperparameters> {
    let mut h = Hyperparameters::for_corpus(corpus, communities, topics)?;
    flags.apply(file, &mut h);
    h.validate()?;
    Ok(h)
}

fn iterations(flag: Option<usize>, file: &FileConfig) -> Result<usize> {
    let iters = pick(flag, file.iters, 500);
    if iters == 0 {
        return Err(Error::InvalidArgument("--iters must be at least 1".into()));
    }
    Ok(iters)
}

fn echo_hyper(h: &Hyperparameters, corpus: &Corpus) {
    let raw = corpus.num_negative_links();
    let lambda0 = match compute_lambda0(raw, h.communities) {
        Ok(l) => format!("{l}"),
        Err(_) => "n/a".into(),
    };
    println!(
        "rho={} alpha={} beta={} epsilon={} delta0={} delta1={} lambda1={}",
        h.rho, h.alpha, h.beta, h.epsilon, h.delta0, h.delta1, h.lambda1
    );
    println!("lambda0={} (raw {lambda0}, negatives {raw})", h.lambda0);
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        communities: a.communities,
        topics: a.topics,
        vocab_size: a.vocab_size,
        slices: a.slices,
        users: a.users,
        posts_per_user: a.posts_per_user,
        words_per_post: a.words_per_post,
        p0: a.p0,
        p_slope: a.p_slope,
        p_min: a.p_min,
        gauss_var: a.gauss_var,
    };
    cfg.validate()?;
    let truth = synthetic::generate_ground_truth(&cfg, a.seed)?;
    let data = synthetic::generate_corpus(&truth, &cfg, a.seed.wrapping_add(1))?;
    let dir = &a.out.out;
    create_dir(dir)?;
    write_with(&dir.join(POSTS_FILE), |w| data.corpus.write_posts(w))?;
    write_with(&dir.join(LINKS_FILE), |w| data.corpus.links().write(w))?;
    write_with(&dir.join(VOCAB_FILE), |w| data.corpus.vocabulary().write(w))?;
    write_json(&dir.join(TRUTH_FILE), &truth)?;
    write_json(&dir.join(SYNTH_CONFIG_FILE), &SynthRecord { seed: a.seed, config: cfg })?;
    println!("{}", data.corpus.summary());
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct SynthRecord {
    pub seed: u64,
    pub config: SyntheticConfig,
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let communities = pick(a.communities, file.communities, 0);
    let topics = pick(a.topics, file.topics, 0);
    if communities == 0 || topics == 0 {
        return Err(Error::InvalidArgument("--communities and --topics are required and must be positive".into()));
    }
    let iters = iterations(a.iters, &file)?;
    let seed = pick(a.seed, file.seed, 0);
    let log_every = pick(a.log_every, file.log_every, 1);

    let loaded = load_corpus(&a.data, &file)?;
    let split_cfg = a.split.resolve(&file);
    let split = apply_split(loaded.corpus, split_cfg.as_ref())?;
    let corpus = &split.train;
    println!("{}", corpus.summary());
    println!("dropped_tokens={} self_links_skipped={}", loaded.dropped_tokens, loaded.self_links_skipped);
    let hyper = hyperparameters(corpus, communities, topics, &a.hyper, &file)?;
    echo_hyper(&hyper, corpus);

    let opts = TrainOptions {
        iterations: iters,
        seed,
        log_every,
        progress: !a.quiet,
    };
    let out = sampler::train(corpus, &hyper, &opts)?;
    let dir = &a.out.out;
    create_dir(dir)?;
    let ckpt = Checkpoint::new(hyper, seed, iters, split_cfg, out.state);
    let path = dir.join(CHECKPOINT_FILE);
    let mut w = create_file(&path)?;
    ckpt.write(&mut w)?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    write_with(&dir.join(TRACE_FILE), |w| sampler::write_trace_csv(&out.trace, w))?;
    Ok(())
}

/// Checkpoint plus the corpus split it was trained on, rebuilt from disk.
struct Restored {
    ckpt: Checkpoint,
    split: eval::Split,
    estimates: ModelEstimates,
    loglik: f64,
}

fn restore(data: &DataArgs, checkpoint: &Path) -> Result<Restored> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut data = data.clone();
    data.slices = Some(ckpt.hyper.slices);
    let loaded = load_corpus(&data, &FileConfig::default())?;
    let split = apply_split(loaded.corpus, ckpt.split.as_ref())?;
    let tables = ckpt.tables(&split.train)?;
    let estimates = estimate_parameters(&tables, &ckpt.hyper);
    let loglik = complete_log_likelihood(&split.train, &ckpt.state, &tables, &ckpt.hyper);
    Ok(Restored {
        ckpt,
        split,
        estimates,
        loglik,
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    check_metrics(&a.metrics)?;
    let r = restore(&a.data, &a.checkpoint)?;
    if r.ckpt.split.is_none() {
        return Err(Error::InvalidArgument("checkpoint was trained without a holdout split".into()));
    }
    let label = config_label(&r.ckpt.hyper);
    let mut rows = split_rows(&r.split, r.ckpt.split.as_ref(), &r.estimates, &label);
    rows.extend(evaluate(&r.split, &r.estimates, r.loglik, &label, &a.metrics, a.tolerance)?);

    let dir = &a.out.out;
    create_dir(dir)?;
    write_with(&dir.join(METRICS_FILE), |w| eval::write_metrics_csv(&rows, w))?;
    if a.metrics.iter().any(|m| m == "time_acc") {
        let curve = eval::predict_timestamps(&r.split.test_posts, &r.estimates).curve(a.max_tolerance)?;
        write_with(&dir.join(CURVE_FILE), |w| eval::write_accuracy_curve_csv(&curve, w))?;
    }
    for row in &rows {
        println!("{},{},{}", row.metric, row.config, row.value);
    }
    Ok(())
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let r = restore(&a.data, &a.checkpoint)?;
    let est = &r.estimates;
    let corpus = &r.split.train;
    let dir = &a.out.out;
    create_dir(dir)?;

    let mut peaks = Vec::new();
    for k in 0..est.topics() {
        let series = analysis::global_topic_dynamics(k, est);
        write_with(&dir.join(format!("timeline_topic{k}.csv")), |w| {
            analysis::write_timeline_csv(&series, w)
        })?;
        for c in 0..est.communities() {
            for t in analysis::detect_peaks(&est.psi[k][c], a.peak_z) {
                peaks.push((k, c, t));
            }
        }
    }
    write_with(&dir.join("community_timelines.csv"), |w| {
        analysis::write_community_timelines_csv(est, w)
    })?;
    write_with(&dir.join("peaks.csv"), |w| {
        writeln!(w, "topic,community,t")?;
        for (k, c, t) in &peaks {
            writeln!(w, "{k},{c},{t}")?;
        }
        Ok(())
    })?;
    for c in 0..est.communities() {
        let matrix = analysis::community_topic_over_time(c, est);
        write_with(&dir.join(format!("attention_c{c}.csv")), |w| {
            analysis::write_attention_csv(&matrix, w)
        })?;
        let ranking = analysis::contribution_ranking(c, est, corpus);
        write_with(&dir.join(format!("contributions_c{c}.csv")), |w| {
            analysis::write_contributions_csv(&ranking, w)
        })?;
    }
    let n = a.top_words.min(est.vocab_size());
    let vocab = corpus.vocabulary();
    write_with(&dir.join("top_words.csv"), |w| {
        writeln!(w, "topic,rank,word,prob")?;
        for k in 0..est.topics() {
            for (rank, (id, p)) in analysis::top_words(k, n, est).into_iter().enumerate() {
                let word = vocab.word(id as u32).unwrap_or("?");
                writeln!(w, "{k},{rank},{word},{p}")?;
            }
        }
        Ok(())
    })?;
    println!("wrote analysis for {} topics and {} communities to {}", est.topics(), est.communities(), dir.display());
    Ok(())
}

/// Outcome of one sweep cell.
pub struct CellResult {
    pub communities: usize,
    pub topics: usize,
    pub rows: Result<Vec<MetricRow>>,
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    check_metrics(&a.metrics)?;
    if a.c_grid.is_empty() || a.k_grid.is_empty() || a.jobs == 0 {
        return Err(Error::InvalidArgument("grids must be non-empty and --jobs at least 1".into()));
    }
    let file = FileConfig::load(a.config.as_deref())?;
    let iters = iterations(a.iters, &file)?;
    let seed = pick(a.seed, file.seed, 0);
    let loaded = load_corpus(&a.data, &file)?;
    let split_cfg = a.split.resolve(&file);
    let split = apply_split(loaded.corpus, split_cfg.as_ref())?;

    let cells: Vec<(usize, usize)> = a
        .c_grid
        .iter()
        .flat_map(|&c| a.k_grid.iter().map(move |&k| (c, k)))
        .collect();
    let run_cell = |&(c, k): &(usize, usize)| -> Result<Vec<MetricRow>> {
        let hyper = hyperparameters(&split.train, c, k, &a.hyper, &file)?;
        let opts = TrainOptions {
            iterations: iters,
            seed,
            log_every: iters,
            progress: false,
        };
        let out = sampler::train(&split.train, &hyper, &opts)?;
        let loglik = out.trace.last().map_or(f64::NAN, |p| p.loglik);
        evaluate(&split, &out.estimates, loglik, &config_label(&hyper), &a.metrics, a.tolerance)
    };

    let results: Vec<Mutex<Option<Result<Vec<MetricRow>>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..a.jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let r = run_cell(cell);
                eprintln!("cell C={} K={} {}", cell.0, cell.1, if r.is_ok() { "done" } else { "failed" });
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((c, k), slot) in cells.iter().zip(results) {
        match slot.into_inner().unwrap().expect("every cell runs") {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(format!("C{c}_K{k},{}", e.to_string().replace(['\n', ','], " "))),
        }
    }
    let dir = &a.out.out;
    create_dir(dir)?;
    write_with(&dir.join("sweep.csv"), |w| eval::write_metrics_csv(&rows, w))?;
    write_with(&dir.join("sweep_failures.csv"), |w| {
        writeln!(w, "config,error")?;
        for f in &failures {
            writeln!(w, "{f}")?;
        }
        Ok(())
    })?;
    if !failures.is_empty() {
        return Err(Error::Degenerate(format!("{} of {} sweep cells failed", failures.len(), cells.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("costot").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn sweep_default_grid() {
        let Command::Sweep(a) = parse(&["sweep", "--posts", "p.tsv"]) else { panic!() };
        assert_eq!(a.c_grid, [20, 50, 100, 150]);
        assert_eq!(a.k_grid, [20, 50, 100, 150]);
        assert_eq!(a.metrics, VALID_METRICS);
    }

    #[test]
    fn synth_defaults() {
        let Command::Synth(a) = parse(&["synth"]) else { panic!() };
        assert_eq!(
            (a.communities, a.topics, a.vocab_size, a.slices, a.users, a.posts_per_user, a.words_per_post),
            (5, 30, 100, 30, 250, 50, 20)
        );
    }

    #[test]
    fn default_split_fractions() {
        let Command::Train(a) = parse(&["train", "--posts", "p.tsv"]) else { panic!() };
        let cfg = a.split.resolve(&FileConfig::default()).unwrap();
        assert_eq!(cfg.post_holdout_frac, 0.20);
        assert_eq!(cfg.link_holdout_frac, 0.20);
        assert_eq!(cfg.negatives, NegativeSampling::Fraction(0.01));
    }

    #[test]
    fn flags_beat_config_file() {
        let file: FileConfig = toml::from_str("rho = 0.5\nalpha = 0.2\nholdout_posts = 0.3\nmatch_negatives = true").unwrap();
        let Command::Train(a) = parse(&["train", "--posts", "p.tsv", "--rho", "0.7", "--holdout-negatives", "0.05"]) else {
            panic!()
        };
        let mut h = Hyperparameters {
            rho: 0.01,
            alpha: 0.01,
            beta: 0.01,
            epsilon: 0.01,
            delta0: 0.01,
            delta1: 1.0,
            lambda0: 1.0,
            lambda1: 0.1,
            communities: 2,
            topics: 2,
            slices: 1,
            vocab_size: 1,
        };
        a.hyper.apply(&file, &mut h);
        assert_eq!((h.rho, h.alpha, h.beta), (0.7, 0.2, 0.01));
        let split = a.split.resolve(&file).unwrap();
        assert_eq!(split.post_holdout_frac, 0.3);
        assert_eq!(split.negatives, NegativeSampling::Fraction(0.05));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("comunities = 3").is_err());
    }

    #[test]
    fn unknown_metric_lists_valid_ones() {
        let err = check_metrics(&["auc".into(), "recall".into()]).unwrap_err().to_string();
        assert!(err.contains("recall") && err.contains("time_acc, auc, perplexity, loglik"), "{err}");
    }
}
