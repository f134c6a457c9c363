//! Command implementations behind the `hashcbr` binary.

pub mod config;

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use hashcbr_core::cbr::{run_stream, stream_line, vote, StreamSummary};
use hashcbr_core::data::{self, load_csv, load_sparse_text, normalize, SchemaSpec};
use hashcbr_core::eval::{bench, evaluate};
use hashcbr_core::index::retrieve;
use hashcbr_core::network::{load_checkpoint, save_checkpoint};
use hashcbr_core::seed::{self, Stream};
use hashcbr_core::synth::{clustered, heterogeneous, ClusteredSpec, HeterogeneousSpec};
use hashcbr_core::training::{train, write_log_csv, write_log_jsonl, TrainConfig};
use hashcbr_core::{
    BenchReport, CbrEngine, Dataset, DatasetSchema, EngineConfig, Error, HashFunction, HashIndex, Hasher,
    LshPlanes, MetricReport, RetrieveOptions, SparseCase, SparseVector,
};

pub use config::{FixtureKind, HashKind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl CliError {
    /// 1 for I/O, 2 for configuration, 3 for data and 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => 2,
                Error::Parse { .. }
                | Error::Schema(_)
                | Error::DimensionMismatch { .. }
                | Error::CodeLength(..)
                | Error::DuplicateId(_)
                | Error::UnknownId(_)
                | Error::EmptyIndex
                | Error::UndefinedMetric(_) => 3,
                Error::Divergence(_) => 4,
                Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// A query id with raw `(index, value)` features.
pub type RawQuery = (u64, Vec<(usize, f64)>);

#[derive(Debug, Parser)]
#[command(name = "hashcbr", version, about = "Case-based reasoning with learned hash codes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a hash network and write a checkpoint.
    Train(TrainArgs),
    /// K-fold evaluation of retrieval and classification.
    Eval(EvalArgs),
    /// Solve a stream of queries, retaining each solved case.
    Stream(StreamArgs),
    /// Time hashed retrieval against a linear scan.
    Bench(BenchArgs),
    /// Build a hash index and write it to disk.
    Index(IndexArgs),
    /// Suggest solutions for one or more queries.
    Query(QueryArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum HashArg {
    Learned,
    Lsh,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FixtureArg {
    Heterogeneous,
    Clustered,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Dataset: `.csv` with a schema sidecar, otherwise sparse text.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column kinds for CSV data (defaults to `<stem>.schema`).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub hash: Option<HashArg>,
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub radius: Option<u32>,
    #[arg(long)]
    pub no_update: bool,
    /// Model checkpoint or LSH seed record to use instead of fitting one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Generate a synthetic data set of this size instead of reading `--data`.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, value_enum)]
    pub fixture: Option<FixtureArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSON-lines queries; without it the data set itself is streamed.
    #[arg(long)]
    pub stream_file: Option<PathBuf>,
    /// Share of the data that forms the initial case base.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Comma-separated case-base sizes.
    #[arg(long)]
    pub sizes: Option<String>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Index dump written by the `index` command.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// One query as `idx:val` tokens.
    #[arg(long)]
    pub query: Option<String>,
    /// JSON-lines queries.
    #[arg(long)]
    pub query_file: Option<PathBuf>,
}

impl CommonArgs {
    /// Defaults, then the config file, then `--set` pairs, then flags.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            c.set(k, v)?;
        }
        if let Some(d) = &self.data {
            c.data = Some(d.clone());
        }
        if let Some(s) = &self.schema {
            c.schema = Some(s.clone());
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(h) = self.hash {
            c.hash = match h {
                HashArg::Learned => HashKind::Learned,
                HashArg::Lsh => HashKind::Lsh,
            };
        }
        if let Some(b) = self.bits {
            c.hyper.r = b;
        }
        if let Some(n) = self.top_n {
            c.hyper.top_n = n;
        }
        if let Some(r) = self.radius {
            c.radius = r;
        }
        if self.no_update {
            c.update = false;
        }
        if let Some(n) = self.synthetic {
            c.synthetic = Some(n);
        }
        if let Some(f) = self.fixture {
            c.fixture = match f {
                FixtureArg::Heterogeneous => FixtureKind::Heterogeneous,
                FixtureArg::Clustered => FixtureKind::Clustered,
            };
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.train.batch_size = b;
        }
        c.train.seed = c.seed;
        c.adaptive.seed = c.seed;
        c.validate()?;
        Ok(c)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&prepare(&a.common)?, a.common.checkpoint.as_deref()),
        Command::Eval(a) => {
            let mut c = a.common.resolve()?;
            if let Some(k) = a.folds {
                c.folds = k;
            }
            start(&c)?;
            cmd_eval(&c, a.common.checkpoint.as_deref()).map(|_| ())
        }
        Command::Stream(a) => {
            let mut c = a.common.resolve()?;
            if let Some(f) = a.train_fraction {
                c.initial_fraction = f;
                c.validate()?;
            }
            start(&c)?;
            cmd_stream(&c, a.common.checkpoint.as_deref(), a.stream_file.as_deref()).map(|_| ())
        }
        Command::Bench(a) => {
            let mut c = a.common.resolve()?;
            if let Some(q) = a.queries {
                c.bench_queries = q;
            }
            if let Some(r) = a.repetitions {
                c.bench_repetitions = r;
            }
            if let Some(s) = &a.sizes {
                c.set("bench_sizes", s)?;
            }
            start(&c)?;
            cmd_bench(&c, a.common.checkpoint.as_deref()).map(|_| ())
        }
        Command::Index(a) => cmd_index(&prepare(&a.common)?, a.common.checkpoint.as_deref()),
        Command::Query(a) => {
            let c = prepare(&a.common)?;
            let queries = match (&a.query, &a.query_file) {
                (Some(q), None) => vec![parse_query_tokens(q, 0)?],
                (None, Some(path)) => read_query_file(path)?,
                _ => return Err(CliError::Config("pass exactly one of --query or --query-file".into())),
            };
            let out = io::stdout();
            cmd_query(&c, a.common.checkpoint.as_deref(), a.index.as_deref(), &queries, &mut out.lock())
        }
    }
}

fn prepare(common: &CommonArgs) -> CliResult<RunConfig> {
    let c = common.resolve()?;
    start(&c)?;
    Ok(c)
}

/// Creates the output directory and echoes the resolved config into it.
fn start(c: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&c.out)?;
    fs::write(c.out.join("config.txt"), c.to_text())?;
    Ok(())
}

/// A loaded data set together with the schema used to encode and scale it.
pub struct Loaded {
    pub dataset: Dataset,
    pub schema: DatasetSchema,
}

impl Loaded {
    /// Refits scaling on `fit` and returns scaled copies of each slice.
    pub fn scaled(&self, fit: &[SparseCase], parts: &[&[SparseCase]]) -> (DatasetSchema, Vec<Vec<SparseCase>>) {
        let mut schema = self.schema.clone();
        schema.fit_ranges(fit);
        let out = parts.iter().map(|p| normalize(p, &schema)).collect();
        (schema, out)
    }
}

pub fn load_data(c: &RunConfig) -> CliResult<Loaded> {
    if let Some(n) = c.synthetic {
        let dataset = match c.fixture {
            FixtureKind::Heterogeneous => heterogeneous(&HeterogeneousSpec { n, ..Default::default() }, c.seed),
            FixtureKind::Clustered => clustered(&ClusteredSpec { n, ..Default::default() }, c.seed),
        };
        let schema = DatasetSchema::all_numeric(dataset.dim, dataset.label_names.clone());
        return Ok(Loaded { dataset, schema });
    }
    let path = c
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("no data: pass --data or --synthetic".into()))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let schema_path = c.schema.clone().unwrap_or_else(|| path.with_extension("schema"));
        let spec = SchemaSpec::load(&schema_path)?;
        let (dataset, schema) = load_csv(path, &spec)?;
        Ok(Loaded { dataset, schema })
    } else {
        let dataset = load_sparse_text(path)?;
        let schema = DatasetSchema::all_numeric(dataset.dim, dataset.label_names.clone());
        Ok(Loaded { dataset, schema })
    }
}

/// Stand-in for a checkpoint when the hash function is random projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LshRecord {
    pub kind: String,
    pub dim: usize,
    pub bits: usize,
    pub seed: u64,
}

impl LshRecord {
    pub fn planes(&self) -> CliResult<LshPlanes> {
        Ok(LshPlanes::new(self.dim, self.bits, self.seed)?)
    }
}

/// Reads either an LSH seed record or a binary network checkpoint.
pub fn load_hasher(path: &Path) -> CliResult<Hasher> {
    let bytes = fs::read(path)?;
    if let Ok(rec) = serde_json::from_slice::<LshRecord>(&bytes) {
        return Ok(Hasher::Lsh(rec.planes()?));
    }
    Ok(Hasher::Learned(load_checkpoint(path)?))
}

fn check_dim(hasher: &Hasher, dim: usize) -> CliResult<()> {
    if hasher.input_dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: hasher.input_dim(),
            actual: dim,
        }
        .into());
    }
    Ok(())
}

fn train_config(c: &RunConfig) -> TrainConfig {
    TrainConfig {
        seed: c.seed,
        ..c.train.clone()
    }
}

/// Fits the configured hash function on `cases`, or loads it from `checkpoint`.
pub fn fit_hasher(c: &RunConfig, cases: &[SparseCase], dim: usize, checkpoint: Option<&Path>) -> CliResult<Hasher> {
    let hasher = match (checkpoint, c.hash) {
        (Some(path), _) => load_hasher(path)?,
        (None, HashKind::Lsh) => Hasher::Lsh(LshPlanes::new(dim, c.hyper.r, seed::derive(c.seed, Stream::Lsh))?),
        (None, HashKind::Learned) => {
            let out = train(cases, dim, &c.hyper, &train_config(c))?;
            if out.diverged {
                return Err(Error::Divergence("training objective").into());
            }
            Hasher::Learned(out.params)
        }
    };
    check_dim(&hasher, dim)?;
    Ok(hasher)
}

fn engine_config(c: &RunConfig) -> EngineConfig {
    EngineConfig {
        hyper: c.hyper.clone(),
        max_radius: c.radius,
        full_scan_fallback: c.full_scan_fallback,
        update: c.update,
        adaptive: c.adaptive.clone(),
        seed: c.seed,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn cmd_train(c: &RunConfig, checkpoint: Option<&Path>) -> CliResult<()> {
    if checkpoint.is_some() {
        return Err(CliError::Config("train does not take --checkpoint".into()));
    }
    let loaded = load_data(c)?;
    let dim = loaded.dataset.dim;
    let (schema, parts) = loaded.scaled(&loaded.dataset.cases, &[&loaded.dataset.cases]);
    write_json(&c.out.join("schema.json"), &schema)?;
    match c.hash {
        HashKind::Lsh => {
            let rec = LshRecord {
                kind: "lsh".into(),
                dim,
                bits: c.hyper.r,
                seed: seed::derive(c.seed, Stream::Lsh),
            };
            rec.planes()?;
            write_json(&c.out.join("lsh.json"), &rec)?;
            println!("lsh planes: dim {dim}, {} bits, seed {}", rec.bits, rec.seed);
        }
        HashKind::Learned => {
            let out = train(&parts[0], dim, &c.hyper, &train_config(c))?;
            let mut csv = BufWriter::new(File::create(c.out.join("train_log.csv"))?);
            write_log_csv(&out.log, &mut csv)?;
            csv.flush()?;
            let mut jsonl = BufWriter::new(File::create(c.out.join("train_log.jsonl"))?);
            write_log_jsonl(&out.log, &mut jsonl)?;
            jsonl.flush()?;
            if out.diverged {
                return Err(Error::Divergence("training objective").into());
            }
            save_checkpoint(&out.params, c.out.join("model.ckpt"))?;
            let last = out.log.last().map_or(f64::NAN, |r| r.objective);
            println!("final objective {last} after {} epochs", out.log.len());
        }
    }
    Ok(())
}

pub fn cmd_eval(c: &RunConfig, checkpoint: Option<&Path>) -> CliResult<MetricReport> {
    let loaded = load_data(c)?;
    let cases = &loaded.dataset.cases;
    let dim = loaded.dataset.dim;
    let num_labels = loaded.dataset.num_labels();
    let folds = data::kfold(cases.len(), c.folds, seed::derive(c.seed, Stream::Split))?;
    let fixed = checkpoint.map(load_hasher).transpose()?;
    if let Some(h) = &fixed {
        check_dim(h, dim)?;
    }
    let folds_dir = c.out.join("folds");
    fs::create_dir_all(&folds_dir)?;

    let mut reports = Vec::with_capacity(folds.len());
    for (k, (train_idx, test_idx)) in folds.iter().enumerate() {
        let train_raw: Vec<SparseCase> = train_idx.iter().map(|&i| cases[i].clone()).collect();
        let test_raw: Vec<SparseCase> = test_idx.iter().map(|&i| cases[i].clone()).collect();
        let (_, scaled) = loaded.scaled(&train_raw, &[&train_raw, &test_raw]);
        let hasher = match &fixed {
            Some(h) => h.clone(),
            None => fit_hasher(c, &scaled[0], dim, None)?,
        };
        let engine = CbrEngine::new(
            hasher,
            &scaled[0],
            EngineConfig {
                update: false,
                ..engine_config(c)
            },
        )?;
        let report = evaluate(&engine, &scaled[1], num_labels, &[c.hyper.top_n])?;
        info!("fold {k}: accuracy {:.4}", report.accuracy);
        write_json(&folds_dir.join(format!("fold_{k}.json")), &report)?;
        reports.push(report);
    }
    let mean = MetricReport::mean(&reports);
    fs::write(c.out.join("metrics.json"), mean.to_json()?)?;
    let mut csv = String::new();
    csv.push_str("fold,");
    csv.push_str(&mean.csv_header());
    csv.push('\n');
    for (k, r) in reports.iter().enumerate() {
        csv.push_str(&format!("{k},{}\n", r.csv_row()));
    }
    csv.push_str(&format!("mean,{}\n", mean.csv_row()));
    fs::write(c.out.join("metrics.csv"), csv)?;
    let map = mean.map_at.get(&c.hyper.top_n).copied().unwrap_or(f64::NAN);
    println!(
        "{}-fold accuracy {:.4}, MAP@{} {:.4}",
        c.folds, mean.accuracy, c.hyper.top_n, map
    );
    Ok(mean)
}

/// Streams `stream_file` against a case base built from the whole data set,
/// or, without a file, holds out all but `initial_fraction` of the data and
/// streams it in shuffled order.
pub fn cmd_stream(c: &RunConfig, checkpoint: Option<&Path>, stream_file: Option<&Path>) -> CliResult<StreamSummary> {
    let loaded = load_data(c)?;
    let dim = loaded.dataset.dim;
    let (initial_raw, rest) = match stream_file {
        Some(_) => (loaded.dataset.cases.clone(), Vec::new()),
        None => data::split(&loaded.dataset.cases, c.initial_fraction, seed::derive(c.seed, Stream::Split))?,
    };
    let (schema, scaled) = loaded.scaled(&initial_raw, &[&initial_raw]);
    let hasher = fit_hasher(c, &scaled[0], dim, checkpoint)?;
    let mut engine = CbrEngine::new(hasher, &scaled[0], engine_config(c))?;

    let log_path = c.out.join("stream.jsonl");
    if let Some(path) = stream_file {
        if fs::canonicalize(path).ok() == fs::canonicalize(&log_path).ok() {
            return Err(CliError::Config("stream file would be overwritten by the outcome log".into()));
        }
    }
    let mut log = BufWriter::new(File::create(&log_path)?);
    let summary = match stream_file {
        Some(path) => run_stream(&mut engine, BufReader::new(File::open(path)?), &mut log, Some(&schema))?,
        None => {
            let text: String = rest.iter().map(|q| stream_line(q, true) + "\n").collect();
            run_stream(&mut engine, text.as_bytes(), &mut log, Some(&schema))?
        }
    };
    write_json(&c.out.join("summary.json"), &summary)?;
    println!(
        "{} queries, {} updates, {} skipped, accuracy {}",
        summary.queries,
        summary.updates,
        summary.skipped,
        summary.accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchEntry {
    pub size: usize,
    #[serde(flatten)]
    pub report: BenchReport,
}

/// Holds out `bench_queries` cases, fits the hash function on a sample of the
/// rest, then times retrieval over case bases of each configured size.
pub fn cmd_bench(c: &RunConfig, checkpoint: Option<&Path>) -> CliResult<Vec<BenchEntry>> {
    let loaded = load_data(c)?;
    let dim = loaded.dataset.dim;
    let mut cases = loaded.dataset.cases.clone();
    cases.shuffle(&mut seed::rng(seed::derive(c.seed, Stream::Split)));
    if cases.len() <= c.bench_queries {
        return Err(CliError::Config(format!(
            "{} cases cannot supply {} benchmark queries",
            cases.len(),
            c.bench_queries
        )));
    }
    let base_raw = cases.split_off(c.bench_queries);
    let (_, scaled) = loaded.scaled(&base_raw, &[&base_raw, &cases]);
    let (base, queries) = (&scaled[0], &scaled[1]);
    let sample = &base[..base.len().min(c.bench_train_sample)];
    let hasher = fit_hasher(c, sample, dim, checkpoint)?;

    let sizes = if c.bench_sizes.is_empty() {
        vec![base.len()]
    } else {
        c.bench_sizes.clone()
    };
    let opts = RetrieveOptions {
        top_n: c.hyper.top_n,
        max_radius: c.radius,
        full_scan_fallback: c.full_scan_fallback,
    };
    let mut entries = Vec::new();
    for size in sizes {
        if size == 0 || size > base.len() {
            return Err(CliError::Config(format!(
                "bench size {size} outside 1..={}",
                base.len()
            )));
        }
        let index = HashIndex::build(&base[..size], &hasher)?;
        let report = bench(&index, &hasher, queries, &opts, c.bench_repetitions)?;
        println!(
            "n={size}: hashed {:.1}us (hash {:.1} / lookup {:.1} / rerank {:.1}), scan {:.1}us, ratio {}",
            report.hashed_total.mean_us,
            report.hash.mean_us,
            report.lookup.mean_us,
            report.rerank.mean_us,
            report.linear_scan.mean_us,
            report.ratio.map_or("n/a".into(), |r| format!("{r:.4}"))
        );
        entries.push(BenchEntry { size, report });
    }
    write_json(&c.out.join("bench.json"), &entries)?;
    Ok(entries)
}

/// Fits or loads the hash function on the whole data set and writes the
/// hasher, the fitted schema and the index dump.
pub fn cmd_index(c: &RunConfig, checkpoint: Option<&Path>) -> CliResult<()> {
    let loaded = load_data(c)?;
    let dim = loaded.dataset.dim;
    let (schema, scaled) = loaded.scaled(&loaded.dataset.cases, &[&loaded.dataset.cases]);
    let hasher = fit_hasher(c, &scaled[0], dim, checkpoint)?;
    if checkpoint.is_none() {
        match &hasher {
            Hasher::Learned(p) => save_checkpoint(p, c.out.join("model.ckpt"))?,
            Hasher::Lsh(p) => write_json(
                &c.out.join("lsh.json"),
                &LshRecord {
                    kind: "lsh".into(),
                    dim,
                    bits: p.code_len(),
                    seed: p.seed(),
                },
            )?,
        }
    }
    write_json(&c.out.join("schema.json"), &schema)?;
    let index = HashIndex::build(&scaled[0], &hasher)?;
    let mut w = BufWriter::new(File::create(c.out.join("index.bin"))?);
    index.write_dump(&mut w)?;
    w.flush()?;
    println!("indexed {} cases into {} buckets", index.len(), index.num_buckets());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryAnswer {
    pub id: u64,
    pub predicted: Option<String>,
    pub neighbors: Vec<(u64, f64)>,
    pub radius: u32,
    pub exhausted: bool,
}

/// Parses `idx:val` tokens into a raw feature list.
pub fn parse_query_tokens(text: &str, id: u64) -> CliResult<RawQuery> {
    let mut entries = Vec::new();
    for tok in text.split_whitespace() {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("expected idx:val, got {tok:?}")))?;
        let i = i
            .parse()
            .map_err(|_| CliError::Config(format!("bad index {i:?}")))?;
        let v = v
            .parse()
            .map_err(|_| CliError::Config(format!("bad value {v:?}")))?;
        entries.push((i, v));
    }
    Ok((id, entries))
}

fn read_query_file(path: &Path) -> CliResult<Vec<RawQuery>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: hashcbr_core::cbr::StreamQuery = serde_json::from_str(&line)?;
        out.push((q.id, q.features));
    }
    Ok(out)
}

/// Answers queries against the data set, restoring codes from `index` when
/// given. Scaling is refit on the data set exactly as `index` fit it.
pub fn cmd_query(
    c: &RunConfig,
    checkpoint: Option<&Path>,
    index_path: Option<&Path>,
    queries: &[RawQuery],
    out: &mut impl Write,
) -> CliResult<()> {
    let loaded = load_data(c)?;
    let dim = loaded.dataset.dim;
    let (schema, scaled) = loaded.scaled(&loaded.dataset.cases, &[&loaded.dataset.cases]);
    let hasher = fit_hasher(c, &scaled[0], dim, checkpoint)?;
    let index = match index_path {
        Some(p) => {
            let index = HashIndex::from_dump(&mut BufReader::new(File::open(p)?), &scaled[0])?;
            if index.code_len() != hasher.code_len() {
                return Err(Error::CodeLength(index.code_len(), hasher.code_len()).into());
            }
            index
        }
        None => HashIndex::build(&scaled[0], &hasher)?,
    };
    let opts = RetrieveOptions {
        top_n: c.hyper.top_n,
        max_radius: c.radius,
        full_scan_fallback: c.full_scan_fallback,
    };
    for (id, entries) in queries {
        let raw = SparseCase::new(*id, SparseVector::new(dim, entries.iter().copied())?, 0);
        let q = normalize(&[raw], &schema).pop().expect("one case in, one out");
        let res = retrieve(&index, &q.features, &hasher, &opts)?;
        let labelled: Vec<_> = res
            .neighbors
            .iter()
            .map(|n| (index.case(n.id).expect("indexed").label, n.distance))
            .collect();
        let (predicted, _, _) = vote(&labelled, c.hyper.top_n);
        let answer = QueryAnswer {
            id: *id,
            predicted: predicted.map(|l| loaded.dataset.label_names[l as usize].clone()),
            neighbors: res.neighbors.iter().map(|n| (n.id, n.distance)).collect(),
            radius: res.radius,
            exhausted: res.exhausted,
        };
        serde_json::to_writer(&mut *out, &answer)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
