//! The retrieve / reuse / revise / retain loop.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::time::Instant;

use log::{debug, warn};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::code::{HashCode, HashFunction};
use crate::data::{CaseId, DatasetSchema, Label, SparseCase, SparseVector};
use crate::error::{Error, Result};
use crate::index::{retrieve_timed, HashIndex, PhaseTimings, RetrievalResult, RetrieveOptions};
use crate::lsh::LshPlanes;
use crate::network::{Hyperparams, NetworkParams};
use crate::seed;
use crate::training::{adaptive_update, AdaptiveConfig};

/// The hash function behind an engine.
#[derive(Clone, Debug, PartialEq)]
pub enum Hasher {
    Learned(NetworkParams),
    Lsh(LshPlanes),
}

impl HashFunction for Hasher {
    fn code_len(&self) -> usize {
        match self {
            Hasher::Learned(p) => p.code_len(),
            Hasher::Lsh(p) => p.code_len(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Hasher::Learned(p) => p.input_dim(),
            Hasher::Lsh(p) => p.input_dim(),
        }
    }

    fn hash_features(&self, x: &SparseVector) -> Result<HashCode> {
        match self {
            Hasher::Learned(p) => p.hash_features(x),
            Hasher::Lsh(p) => p.hash_features(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub hyper: Hyperparams,
    pub max_radius: u32,
    pub full_scan_fallback: bool,
    /// Run the adaptive update every `n_u` retained cases.
    pub update: bool,
    pub adaptive: AdaptiveConfig,
    /// Root seed; the reservoir and update streams are derived from it.
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            hyper: Hyperparams::default(),
            max_radius: 2,
            full_scan_fallback: false,
            update: true,
            adaptive: AdaptiveConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// `None` when retrieval came back empty.
    pub predicted: Option<Label>,
    pub votes: BTreeMap<Label, usize>,
    /// `votes / N` per label.
    pub scores: BTreeMap<Label, f64>,
    /// Summed rerank distance of the neighbors voting for each label.
    pub distance_sums: BTreeMap<Label, f64>,
    pub top_n: usize,
    pub retrieval: RetrievalResult,
    pub timings: PhaseTimings,
}

impl Suggestion {
    /// Dense per-class scores for AUC: the vote fraction, plus a term below
    /// `1 / N` that orders classes with equal votes by inverse mean distance.
    pub fn class_scores(&self, num_labels: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_labels];
        for (&label, &v) in &self.votes {
            if (label as usize) < num_labels && v > 0 {
                let mean = self.distance_sums[&label] / v as f64;
                out[label as usize] = self.scores[&label] + 1e-6 / (self.top_n as f64 * (1.0 + mean));
            }
        }
        out
    }
}

/// Majority vote over the first `top_n` neighbors. Ties go to the label with
/// the smaller summed distance, then to the smaller label.
pub fn vote(neighbors: &[(Label, f64)], top_n: usize) -> (Option<Label>, BTreeMap<Label, usize>, BTreeMap<Label, f64>) {
    let mut votes = BTreeMap::new();
    let mut sums = BTreeMap::new();
    for &(label, d) in neighbors.iter().take(top_n) {
        *votes.entry(label).or_insert(0) += 1;
        *sums.entry(label).or_insert(0.0) += d;
    }
    let predicted = votes
        .iter()
        .min_by(|(la, va), (lb, vb)| {
            vb.cmp(va)
                .then(sums[*la].total_cmp(&sums[*lb]))
                .then(la.cmp(lb))
        })
        .map(|(&l, _)| l);
    (predicted, votes, sums)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub predicted: Option<Label>,
    pub actual: Label,
    pub correct: bool,
    /// The case to retain, carrying the actual label.
    pub case: SparseCase,
}

pub fn revise(suggestion: &Suggestion, id: CaseId, features: SparseVector, actual: Label) -> Revision {
    Revision {
        predicted: suggestion.predicted,
        actual,
        correct: suggestion.predicted == Some(actual),
        case: SparseCase::new(id, features, actual),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Number of labeled cases solved when the update fired.
    pub after_solved: u64,
    pub buffer: usize,
    pub reservoir: usize,
    pub candidate_pairs: usize,
    pub active_pairs: usize,
    pub steps: usize,
    /// The update diverged and parameters were restored.
    pub reverted: bool,
    pub wall_ms: f64,
}

/// Microsecond wall time of each phase of one `solve`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTimings {
    pub hash: f64,
    pub lookup: f64,
    pub rerank: f64,
    pub reuse: f64,
    pub retain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub predicted: Option<Label>,
    pub correct: Option<bool>,
    pub timings_us: SolveTimings,
    pub update: Option<UpdateReport>,
}

pub struct CbrEngine {
    hasher: Hasher,
    index: HashIndex,
    buffer: Vec<CaseId>,
    solved: u64,
    updates: u64,
    config: EngineConfig,
}

impl CbrEngine {
    pub fn new(hasher: Hasher, cases: &[SparseCase], config: EngineConfig) -> Result<Self> {
        config.hyper.validate()?;
        let index = HashIndex::build(cases, &hasher)?;
        Ok(CbrEngine {
            hasher,
            index,
            buffer: Vec::new(),
            solved: 0,
            updates: 0,
            config,
        })
    }

    pub fn hasher(&self) -> &Hasher {
        &self.hasher
    }

    pub fn params(&self) -> Option<&NetworkParams> {
        match &self.hasher {
            Hasher::Learned(p) => Some(p),
            Hasher::Lsh(_) => None,
        }
    }

    pub fn index(&self) -> &HashIndex {
        &self.index
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn solved(&self) -> u64 {
        self.solved
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn retrieve_options(&self, top_n: usize) -> RetrieveOptions {
        RetrieveOptions {
            top_n,
            max_radius: self.config.max_radius,
            full_scan_fallback: self.config.full_scan_fallback,
        }
    }

    /// Retrieves `N` cases and tallies their labels.
    pub fn suggest(&self, query: &SparseVector) -> Result<Suggestion> {
        self.suggest_with(query, self.config.hyper.top_n)
    }

    /// Like `suggest`, but retrieves `depth >= N` neighbors (for ranking
    /// metrics) while still voting over the first `N`.
    pub fn suggest_with(&self, query: &SparseVector, depth: usize) -> Result<Suggestion> {
        let top_n = self.config.hyper.top_n;
        let (retrieval, timings) = retrieve_timed(&self.index, query, &self.hasher, &self.retrieve_options(depth.max(top_n)))?;
        let labelled: Vec<(Label, f64)> = retrieval
            .neighbors
            .iter()
            .map(|n| (self.index.case(n.id).expect("retrieved id is stored").label, n.distance))
            .collect();
        let (predicted, votes, distance_sums) = vote(&labelled, top_n);
        if predicted.is_none() {
            warn!("empty retrieval; no prediction");
        }
        let scores = votes.iter().map(|(&l, &v)| (l, v as f64 / top_n as f64)).collect();
        Ok(Suggestion {
            predicted,
            votes,
            scores,
            distance_sums,
            top_n,
            retrieval,
            timings,
        })
    }

    /// Stores a solved case under the current hash function. The `n_u`-th
    /// buffered case triggers the adaptive update after it is inserted.
    pub fn retain(&mut self, case: SparseCase) -> Result<Option<UpdateReport>> {
        let id = case.id;
        self.index.insert(case, &self.hasher)?;
        self.buffer.push(id);
        self.solved += 1;
        if self.buffer.len() < self.config.hyper.n_u {
            return Ok(None);
        }
        if self.config.update {
            let report = self.update_model()?;
            Ok(Some(report))
        } else {
            self.buffer.clear();
            Ok(None)
        }
    }

    /// Adaptive update over buffer×buffer and buffer×reservoir pairs, then a
    /// full code recomputation. A diverged update is rolled back.
    pub fn update_model(&mut self) -> Result<UpdateReport> {
        let start = Instant::now();
        let round = self.updates;
        self.updates += 1;
        let buffer = std::mem::take(&mut self.buffer);
        let mut report = UpdateReport {
            after_solved: self.solved,
            buffer: buffer.len(),
            ..Default::default()
        };
        let params = match &self.hasher {
            Hasher::Learned(p) => p,
            Hasher::Lsh(_) => return Ok(report),
        };
        if buffer.is_empty() {
            return Ok(report);
        }

        let in_buffer: HashSet<CaseId> = buffer.iter().copied().collect();
        let others: Vec<CaseId> = self.index.cases().map(|c| c.id).filter(|id| !in_buffer.contains(id)).collect();
        let reservoir_seed = seed::child(seed::derive(self.config.seed, seed::Stream::Reservoir), round);
        let take = self.config.hyper.n_u.min(others.len());
        let mut reservoir: Vec<CaseId> = sample(&mut seed::rng(reservoir_seed), others.len(), take)
            .into_iter()
            .map(|i| others[i])
            .collect();
        reservoir.sort_unstable();
        report.reservoir = reservoir.len();

        let pool: Vec<SparseCase> = buffer
            .iter()
            .chain(&reservoir)
            .map(|id| self.index.case(*id).expect("stored").clone())
            .collect();
        let nb = buffer.len();
        let mut candidates = Vec::with_capacity(nb * (nb - 1) / 2 + nb * reservoir.len());
        for i in 0..nb {
            for j in i + 1..pool.len() {
                candidates.push((i, j, pool[i].label == pool[j].label));
            }
        }

        let mut updated = params.clone();
        let adaptive = AdaptiveConfig {
            seed: seed::child(seed::derive(self.config.seed, seed::Stream::Sampling), round),
            ..self.config.adaptive.clone()
        };
        match adaptive_update(&mut updated, &pool, &candidates, &self.config.hyper, &adaptive) {
            Ok(out) => {
                report.candidate_pairs = out.candidate_pairs;
                report.active_pairs = out.active_pairs;
                report.steps = out.steps;
                if out.steps > 0 {
                    let hasher = Hasher::Learned(updated);
                    match self.index.rehash(&hasher) {
                        Ok(()) => self.hasher = hasher,
                        Err(Error::Divergence(what)) => {
                            warn!("update produced non-finite codes ({what}); reverting");
                            report.reverted = true;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            Err(Error::Divergence(what)) => {
                warn!("adaptive update diverged ({what}); reverting");
                report.candidate_pairs = candidates.len();
                report.reverted = true;
            }
            Err(e) => return Err(e),
        }
        report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        debug!(
            "update {}: {} of {} pairs active, {} steps",
            round, report.active_pairs, report.candidate_pairs, report.steps
        );
        Ok(report)
    }

    /// Retrieve and reuse; with a label, also revise and retain.
    pub fn solve(&mut self, id: CaseId, query: SparseVector, label: Option<Label>) -> Result<SolveOutcome> {
        let t0 = Instant::now();
        let suggestion = if self.index.is_empty() {
            None
        } else {
            Some(self.suggest(&query)?)
        };
        let reuse_total = t0.elapsed().as_secs_f64() * 1e6;
        let mut timings = SolveTimings::default();
        if let Some(s) = &suggestion {
            timings.hash = s.timings.hash_ns as f64 / 1e3;
            timings.lookup = s.timings.lookup_ns as f64 / 1e3;
            timings.rerank = s.timings.rerank_ns as f64 / 1e3;
            timings.reuse = (reuse_total - s.timings.total_ns() as f64 / 1e3).max(0.0);
        }
        let predicted = suggestion.as_ref().and_then(|s| s.predicted);
        let Some(actual) = label else {
            return Ok(SolveOutcome {
                predicted,
                correct: None,
                timings_us: timings,
                update: None,
            });
        };
        let t1 = Instant::now();
        let case = SparseCase::new(id, query, actual);
        let correct = predicted == Some(actual);
        let update = self.retain(case)?;
        timings.retain = t1.elapsed().as_secs_f64() * 1e6;
        Ok(SolveOutcome {
            predicted,
            correct: Some(correct),
            timings_us: timings,
            update,
        })
    }
}

/// One line of a stream file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamQuery {
    pub id: CaseId,
    /// `[index, value]` pairs with strictly ascending indices.
    pub features: Vec<(usize, f64)>,
    #[serde(default)]
    pub label: Option<Label>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum StreamRecord<'a> {
    Query {
        id: CaseId,
        predicted: Option<Label>,
        label: Option<Label>,
        correct: Option<bool>,
        running_accuracy: Option<f64>,
        timings_us: &'a SolveTimings,
    },
    Update(&'a UpdateReport),
    Skipped {
        line: usize,
        error: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub queries: usize,
    pub labelled: usize,
    pub correct: usize,
    pub skipped: usize,
    pub updates: usize,
    pub accuracy: Option<f64>,
}

/// Runs `solve` on every line of a JSON-lines stream, writing one record per
/// query and per update and flushing after each. Malformed lines are logged
/// and counted. With a schema, incoming features are min-max scaled first.
pub fn run_stream(
    engine: &mut CbrEngine,
    input: impl BufRead,
    out: &mut impl Write,
    schema: Option<&DatasetSchema>,
) -> Result<StreamSummary> {
    let dim = engine.hasher().input_dim();
    let mut summary = StreamSummary::default();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<StreamQuery>(&line)
            .map_err(Error::from)
            .and_then(|q| Ok((q.id, SparseVector::new(dim, q.features)?, q.label)));
        let (id, mut features, label) = match parsed {
            Ok(v) => v,
            Err(e) => {
                summary.skipped += 1;
                warn!("stream line {}: {e}", n + 1);
                emit(out, &StreamRecord::Skipped { line: n + 1, error: e.to_string() })?;
                continue;
            }
        };
        if let Some(schema) = schema {
            features = crate::data::normalize(&[SparseCase::new(id, features, 0)], schema)
                .pop()
                .expect("one case in, one out")
                .features;
        }
        let outcome = match engine.solve(id, features, label) {
            Ok(o) => o,
            Err(e @ Error::DuplicateId(_)) => {
                summary.skipped += 1;
                emit(out, &StreamRecord::Skipped { line: n + 1, error: e.to_string() })?;
                continue;
            }
            Err(e) => return Err(e),
        };
        summary.queries += 1;
        if let Some(c) = outcome.correct {
            summary.labelled += 1;
            summary.correct += usize::from(c);
        }
        summary.accuracy = (summary.labelled > 0).then(|| summary.correct as f64 / summary.labelled as f64);
        emit(
            out,
            &StreamRecord::Query {
                id,
                predicted: outcome.predicted,
                label,
                correct: outcome.correct,
                running_accuracy: summary.accuracy,
                timings_us: &outcome.timings_us,
            },
        )?;
        if let Some(update) = &outcome.update {
            summary.updates += 1;
            emit(out, &StreamRecord::Update(update))?;
        }
    }
    Ok(summary)
}

fn emit(out: &mut impl Write, record: &StreamRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Serializes a case as one stream line.
pub fn stream_line(case: &SparseCase, with_label: bool) -> String {
    let q = StreamQuery {
        id: case.id,
        features: case.features.iter().collect(),
        label: with_label.then_some(case.label),
    };
    serde_json::to_string(&q).expect("plain data serializes")
}
