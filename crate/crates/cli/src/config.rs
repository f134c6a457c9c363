//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hashcbr_core::training::OptimizerKind;
use hashcbr_core::{AdaptiveConfig, Hyperparams, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashKind {
    Learned,
    Lsh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    Heterogeneous,
    Clustered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Generate this many synthetic cases instead of reading `data`.
    pub synthetic: Option<usize>,
    pub fixture: FixtureKind,
    pub out: PathBuf,
    pub seed: u64,
    pub hash: HashKind,
    pub hyper: Hyperparams,
    pub train: TrainConfig,
    pub adaptive: AdaptiveConfig,
    pub radius: u32,
    pub full_scan_fallback: bool,
    pub update: bool,
    pub folds: usize,
    /// Share of the data used as the initial case base when simulating a
    /// stream.
    pub initial_fraction: f64,
    pub bench_queries: usize,
    pub bench_repetitions: usize,
    /// Cases used to fit the hash function before benchmarking.
    pub bench_train_sample: usize,
    /// Case-base sizes to benchmark; empty means the whole data set.
    pub bench_sizes: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            schema: None,
            synthetic: None,
            fixture: FixtureKind::Heterogeneous,
            out: PathBuf::from("runs/latest"),
            seed: 0,
            hash: HashKind::Learned,
            hyper: Hyperparams::default(),
            train: TrainConfig::default(),
            adaptive: AdaptiveConfig::default(),
            radius: 2,
            full_scan_fallback: false,
            update: true,
            folds: 5,
            initial_fraction: 0.1,
            bench_queries: 200,
            bench_repetitions: 3,
            bench_train_sample: 5000,
            bench_sizes: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data = Some(PathBuf::from(v)),
            "schema" => self.schema = Some(PathBuf::from(v)),
            "synthetic" => self.synthetic = Some(parse(key, v)?),
            "fixture" => {
                self.fixture = match v {
                    "heterogeneous" => FixtureKind::Heterogeneous,
                    "clustered" => FixtureKind::Clustered,
                    _ => return Err(CliError::Config(format!("unknown fixture {v:?}"))),
                }
            }
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "hash" => {
                self.hash = match v {
                    "learned" => HashKind::Learned,
                    "lsh" => HashKind::Lsh,
                    _ => return Err(CliError::Config(format!("unknown hash function {v:?}"))),
                }
            }
            "bits" => self.hyper.r = parse(key, v)?,
            "k_w" => self.hyper.k_w = parse(key, v)?,
            "k_v" => self.hyper.k_v = parse(key, v)?,
            "depth" => self.hyper.depth = parse(key, v)?,
            "hidden_width" => self.hyper.hidden_width = parse(key, v)?,
            "alpha" => self.hyper.alpha = parse(key, v)?,
            "lambda" => self.hyper.lambda = parse(key, v)?,
            "beta" => self.hyper.beta = parse(key, v)?,
            "n_u" => self.hyper.n_u = parse(key, v)?,
            "top_n" => self.hyper.top_n = parse(key, v)?,
            "first_order" => self.hyper.first_order = parse_bool(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "optimizer" => {
                self.train.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(CliError::Config(format!("unknown optimizer {v:?}"))),
                }
            }
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "neg_ratio" => self.train.neg_ratio = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "min_delta" => self.train.min_delta = parse(key, v)?,
            "update_epochs" => self.adaptive.epochs = parse(key, v)?,
            "update_pairs_per_step" => self.adaptive.pairs_per_step = parse(key, v)?,
            "update_learning_rate" => self.adaptive.learning_rate = parse(key, v)?,
            "radius" => self.radius = parse(key, v)?,
            "full_scan_fallback" => self.full_scan_fallback = parse_bool(key, v)?,
            "update" => self.update = parse_bool(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "initial_fraction" => self.initial_fraction = parse(key, v)?,
            "bench_queries" => self.bench_queries = parse(key, v)?,
            "bench_repetitions" => self.bench_repetitions = parse(key, v)?,
            "bench_train_sample" => self.bench_train_sample = parse(key, v)?,
            "bench_sizes" => {
                self.bench_sizes = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.hyper.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.data.is_none() && self.synthetic.is_none() {
            return Err(CliError::Config("no data: pass --data or --synthetic".into()));
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
            return Err(CliError::Config("initial_fraction must lie in (0, 1)".into()));
        }
        if self.train.batch_size < 2 {
            return Err(CliError::Config("batch_size must be at least 2".into()));
        }
        Ok(())
    }

    /// Every setting as `key = value` lines; feeding the text back through
    /// [`RunConfig::apply_text`] reproduces the configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        if let Some(d) = &self.schema {
            put("schema", d.display().to_string());
        }
        if let Some(n) = self.synthetic {
            put("synthetic", n.to_string());
        }
        put(
            "fixture",
            match self.fixture {
                FixtureKind::Heterogeneous => "heterogeneous",
                FixtureKind::Clustered => "clustered",
            }
            .into(),
        );
        put("out", self.out.display().to_string());
        put("seed", self.seed.to_string());
        put(
            "hash",
            match self.hash {
                HashKind::Learned => "learned",
                HashKind::Lsh => "lsh",
            }
            .into(),
        );
        let h = &self.hyper;
        put("bits", h.r.to_string());
        put("k_w", h.k_w.to_string());
        put("k_v", h.k_v.to_string());
        put("depth", h.depth.to_string());
        put("hidden_width", h.hidden_width.to_string());
        put("alpha", h.alpha.to_string());
        put("lambda", h.lambda.to_string());
        put("beta", h.beta.to_string());
        put("n_u", h.n_u.to_string());
        put("top_n", h.top_n.to_string());
        put("first_order", h.first_order.to_string());
        let t = &self.train;
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put(
            "optimizer",
            match t.optimizer {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .into(),
        );
        put("learning_rate", t.learning_rate.to_string());
        put("neg_ratio", t.neg_ratio.to_string());
        put("patience", t.patience.to_string());
        put("min_delta", t.min_delta.to_string());
        put("update_epochs", self.adaptive.epochs.to_string());
        put("update_pairs_per_step", self.adaptive.pairs_per_step.to_string());
        put("update_learning_rate", self.adaptive.learning_rate.to_string());
        put("radius", self.radius.to_string());
        put("full_scan_fallback", self.full_scan_fallback.to_string());
        put("update", self.update.to_string());
        put("folds", self.folds.to_string());
        put("initial_fraction", self.initial_fraction.to_string());
        put("bench_queries", self.bench_queries.to_string());
        put("bench_repetitions", self.bench_repetitions.to_string());
        put("bench_train_sample", self.bench_train_sample.to_string());
        put(
            "bench_sizes",
            self.bench_sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_model_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.hyper.top_n, 10);
        assert_eq!(c.hyper.r, 36);
        assert_eq!(c.hyper.n_u, 100);
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.folds, 5);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("data = x.csv\nbits = 24 # comment\nhash = lsh\nbench_sizes = 10,20\nupdate = false\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hyper.r, 24);
        assert_eq!(c.bench_sizes, vec![10, 20]);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("nonsense"), Err(CliError::Config(_))));
        assert!(matches!(c.set("bits", "many"), Err(CliError::Config(_))));
        assert!(matches!(c.set("colour", "red"), Err(CliError::Config(_))));
        assert!(RunConfig::default().validate().is_err());
    }
}
