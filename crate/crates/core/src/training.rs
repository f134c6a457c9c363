//! Pairwise similarity training for the hashing network.
//!
//! The objective over a batch of labelled pairs is
//!
//! ```text
//! J = sum_pairs [ log(1 + e^{a*s_hat}) - a*s*s_hat ] - lambda * sum_i |z_i|^2
//! ```
//!
//! where `s_hat = <z_i, z_j>` is the inner product of relaxed codes and the
//! second sum runs over the distinct cases of the batch (it pushes relaxed
//! codes towards ±1). Gradients are exact and analytic; the backward pass
//! through the interaction stage reuses the per-row sums kept in the forward
//! trace. [`finite_diff_grad`] is the independent central-difference oracle.
//!
//! The retention-time update swaps the likelihood term for a hinge-gated
//! variant ([`adaptive_loss`]) that is zero once a pair clears the margin
//! `r * beta`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::Instant;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Label, SparseCase};
use crate::error::{Error, Result};
use crate::network::{forward, init_params, ForwardTrace, Hyperparams, Matrix, NetworkParams};
use crate::seed::{self, Stream};

/// Members per backward chunk. Chunk results are reduced in order, so the
/// sum does not depend on the thread count.
const GRAD_CHUNK: usize = 32;

/// `log(1 + e^t)` without overflow.
#[inline]
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// One supervised pair. `i` and `j` index into [`PairBatch::members`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub i: u32,
    pub j: u32,
    pub similar: bool,
}

/// A set of distinct cases (indices into the training slice) and the pairs
/// formed among them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairBatch {
    pub members: Vec<usize>,
    pub pairs: Vec<Pair>,
    /// Set when only one kind of pair could be formed, so no balancing was
    /// possible.
    pub degenerate: bool,
}

impl PairBatch {
    /// Builds a batch from explicit `(train_index, train_index, similar)`
    /// triples. Self-pairs and repeated unordered pairs are rejected.
    pub fn from_pairs(triples: &[(usize, usize, bool)]) -> Result<Self> {
        let mut members: Vec<usize> = triples.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        members.sort_unstable();
        members.dedup();
        let pos: HashMap<usize, u32> = members
            .iter()
            .enumerate()
            .map(|(p, &m)| (m, p as u32))
            .collect();
        let mut seen = std::collections::HashSet::new();
        let mut pairs = Vec::with_capacity(triples.len());
        for &(a, b, similar) in triples {
            if a == b {
                return Err(Error::invalid(format!("self-pair on case {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::invalid(format!("duplicate pair ({a}, {b})")));
            }
            pairs.push(Pair {
                i: pos[&a],
                j: pos[&b],
                similar,
            });
        }
        Ok(PairBatch {
            members,
            pairs,
            degenerate: false,
        })
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.similar).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    /// Pairs as `(train_index, train_index, similar)`.
    pub fn triples(&self) -> Vec<(usize, usize, bool)> {
        self.pairs
            .iter()
            .map(|p| (self.members[p.i as usize], self.members[p.j as usize], p.similar))
            .collect()
    }
}

/// Draws up to `batch_size` cases with equal shares per label (capped by
/// availability), forms every within-batch pair, then subsamples the larger
/// side so that negatives ≈ `neg_ratio` × positives.
pub fn sample_pairs(
    train: &[SparseCase],
    batch_size: usize,
    neg_ratio: f64,
    seed: u64,
) -> Result<PairBatch> {
    if batch_size < 2 {
        return Err(Error::invalid("batch size must be at least 2"));
    }
    if train.len() < 2 {
        return Err(Error::invalid("need at least two cases to form pairs"));
    }
    let mut rng = seed::rng(seed);
    let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, c) in train.iter().enumerate() {
        groups.entry(c.label).or_default().push(i);
    }
    for g in groups.values_mut() {
        g.shuffle(&mut rng);
    }

    let target = batch_size.min(train.len());
    let mut members = Vec::with_capacity(target);
    let mut cursor = 0;
    while members.len() < target {
        for g in groups.values() {
            if cursor < g.len() && members.len() < target {
                members.push(g[cursor]);
            }
        }
        cursor += 1;
    }
    members.sort_unstable();

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for a in 0..members.len() {
        for b in a + 1..members.len() {
            let similar = train[members[a]].label == train[members[b]].label;
            let pair = Pair {
                i: a as u32,
                j: b as u32,
                similar,
            };
            if similar {
                positives.push(pair);
            } else {
                negatives.push(pair);
            }
        }
    }

    let degenerate = positives.is_empty() || negatives.is_empty();
    if degenerate {
        warn!(
            "pair batch has {} positive and {} negative pairs; cannot balance",
            positives.len(),
            negatives.len()
        );
    } else {
        let (p, n) = (positives.len() as f64, negatives.len() as f64);
        if n > neg_ratio * p {
            let keep = ((neg_ratio * p).round() as usize).max(1);
            negatives.shuffle(&mut rng);
            negatives.truncate(keep);
        } else if p > n / neg_ratio {
            let keep = ((n / neg_ratio).round() as usize).max(1);
            positives.shuffle(&mut rng);
            positives.truncate(keep);
        }
    }
    let mut pairs = positives;
    pairs.extend(negatives);
    pairs.sort_unstable_by_key(|p| (p.i, p.j));
    Ok(PairBatch {
        members,
        pairs,
        degenerate,
    })
}

/// `<z_i, z_j>` over the relaxed codes of two traces.
pub fn relaxed_similarity(a: &ForwardTrace, b: &ForwardTrace) -> f64 {
    dot(a.output(), b.output())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative log-likelihood of one pair: `log(1 + e^{a*s_hat}) - a*s*s_hat`.
pub fn pair_loss(similar: bool, s_hat: f64, alpha: f64) -> f64 {
    let t = alpha * s_hat;
    if similar {
        // log(1 + e^t) - t = log(1 + e^{-t})
        softplus(-t)
    } else {
        softplus(t)
    }
}

/// Retention-time loss: the likelihood term scaled by a hinge offset, zero
/// once `s_hat` clears the margin `r * beta` on the correct side.
pub fn adaptive_loss(similar: bool, s_hat: f64, alpha: f64, beta: f64, r: usize) -> f64 {
    let margin = r as f64 * beta;
    if similar {
        (margin - s_hat).max(0.0) * softplus(-alpha * s_hat)
    } else {
        (margin + s_hat).max(0.0) * softplus(alpha * s_hat)
    }
}

/// Which per-pair loss an objective uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairLoss {
    Likelihood { alpha: f64 },
    Adaptive { alpha: f64, beta: f64, r: usize },
}

impl PairLoss {
    pub fn value(self, similar: bool, s_hat: f64) -> f64 {
        match self {
            PairLoss::Likelihood { alpha } => pair_loss(similar, s_hat, alpha),
            PairLoss::Adaptive { alpha, beta, r } => adaptive_loss(similar, s_hat, alpha, beta, r),
        }
    }

    /// d(loss)/d(s_hat).
    pub fn derivative(self, similar: bool, s_hat: f64) -> f64 {
        match self {
            PairLoss::Likelihood { alpha } => alpha * (sigmoid(alpha * s_hat) - f64::from(similar as u8)),
            PairLoss::Adaptive { alpha, beta, r } => {
                let margin = r as f64 * beta;
                if similar {
                    let h = margin - s_hat;
                    if h <= 0.0 {
                        return 0.0;
                    }
                    -softplus(-alpha * s_hat) - h * alpha * sigmoid(-alpha * s_hat)
                } else {
                    let h = margin + s_hat;
                    if h <= 0.0 {
                        return 0.0;
                    }
                    softplus(alpha * s_hat) + h * alpha * sigmoid(alpha * s_hat)
                }
            }
        }
    }
}

/// Pair loss plus the quantization regularizer weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub loss: PairLoss,
    pub lambda: f64,
}

impl Objective {
    pub fn training(hyper: &Hyperparams) -> Self {
        Objective {
            loss: PairLoss::Likelihood { alpha: hyper.alpha },
            lambda: hyper.lambda,
        }
    }

    pub fn adaptive(hyper: &Hyperparams) -> Self {
        Objective {
            loss: PairLoss::Adaptive {
                alpha: hyper.alpha,
                beta: hyper.beta,
                r: hyper.r,
            },
            lambda: 0.0,
        }
    }

    fn evaluate(&self, batch: &PairBatch, outputs: &[&[f64]]) -> f64 {
        let pair_term: f64 = batch
            .pairs
            .iter()
            .map(|p| {
                let s_hat = dot(outputs[p.i as usize], outputs[p.j as usize]);
                self.loss.value(p.similar, s_hat)
            })
            .sum();
        let reg: f64 = outputs.iter().map(|z| dot(z, z)).sum();
        pair_term - self.lambda * reg
    }
}

fn traces(batch: &PairBatch, train: &[SparseCase], params: &NetworkParams) -> Result<Vec<ForwardTrace>> {
    batch
        .members
        .par_iter()
        .map(|&i| {
            let case = train
                .get(i)
                .ok_or_else(|| Error::invalid(format!("batch refers to case {i} beyond the training set")))?;
            forward(&case.features, params)
        })
        .collect()
}

/// Objective value on a batch.
pub fn batch_objective(
    batch: &PairBatch,
    train: &[SparseCase],
    params: &NetworkParams,
    objective: &Objective,
) -> Result<f64> {
    let ts = traces(batch, train, params)?;
    let outputs: Vec<&[f64]> = ts.iter().map(ForwardTrace::output).collect();
    Ok(objective.evaluate(batch, &outputs))
}

/// Gradient tensors, shape-congruent with [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub slots: Matrix,
    pub view: Matrix,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            slots: Matrix::zeros(params.slots.rows, params.slots.cols),
            view: Matrix::zeros(params.view.rows, params.view.cols),
            weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows, l.weights.cols))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Same canonical order as [`NetworkParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.slots.data, &self.view.data];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(&w.data);
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.slots.data, &mut self.view.data];
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(&mut w.data);
            out.push(b);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Backpropagates `d_out = dJ/dz^l` through one case's trace into `grads`.
fn backward(trace: &ForwardTrace, params: &NetworkParams, d_out: &[f64], grads: &mut Gradients) {
    let mut upstream = d_out.to_vec();
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let pre = &trace.pre[li];
        let post = &trace.post[li];
        let delta: Vec<f64> = upstream
            .iter()
            .zip(pre.iter().zip(post))
            .map(|(g, (&x, &y))| g * layer.activation.derivative(x, y))
            .collect();
        let input = trace.layer_input(li);
        let gw = &mut grads.weights[li];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, x) in gw.row_mut(o).iter_mut().zip(input) {
                *g += d * x;
            }
            grads.biases[li][o] += d;
        }
        let mut down = vec![0.0; layer.inputs()];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, w) in down.iter_mut().zip(layer.weights.row(o)) {
                *g += d * w;
            }
        }
        upstream = down;
    }

    // interaction: z_k = sum_m V[m,k] * c_m,  c_m = (S_m^2 - Q_m) / 2
    let it = &trace.interaction;
    let k_w = params.k_w();
    let mut u = vec![0.0; k_w];
    for m in 0..k_w {
        let c = 0.5 * (it.row_sum[m] * it.row_sum[m] - it.row_sq[m]);
        let v_row = params.view.row(m);
        let gv = grads.view.row_mut(m);
        let mut um = 0.0;
        for k in 0..upstream.len() {
            gv[k] += upstream[k] * c;
            um += v_row[k] * upstream[k];
        }
        u[m] = um;
    }
    // dz/de_mp = u_m * (S_m - e_mp);  e_mp = x_p * slot_p[m]
    let emb = &trace.embeddings;
    for (p, &(slot, x)) in emb.features.iter().enumerate() {
        let e = emb.row(p);
        let gs = grads.slots.row_mut(slot);
        for m in 0..k_w {
            gs[m] += x * u[m] * (it.row_sum[m] - e[m]);
        }
    }
}

/// Exact gradient of the objective on `batch`; also returns its value.
pub fn grad_with_value(
    batch: &PairBatch,
    train: &[SparseCase],
    params: &NetworkParams,
    objective: &Objective,
) -> Result<(f64, Gradients)> {
    let ts = traces(batch, train, params)?;
    let outputs: Vec<&[f64]> = ts.iter().map(ForwardTrace::output).collect();
    let value = objective.evaluate(batch, &outputs);
    if !value.is_finite() {
        return Err(Error::Divergence("objective"));
    }

    let r = params.code_len();
    let mut d_out: Vec<Vec<f64>> = outputs
        .iter()
        .map(|z| z.iter().map(|v| -2.0 * objective.lambda * v).collect())
        .collect();
    for p in &batch.pairs {
        let (i, j) = (p.i as usize, p.j as usize);
        let s_hat = dot(outputs[i], outputs[j]);
        let w = objective.loss.derivative(p.similar, s_hat);
        if w == 0.0 {
            continue;
        }
        for m in 0..r {
            d_out[i][m] += w * outputs[j][m];
            d_out[j][m] += w * outputs[i][m];
        }
    }

    let partials: Vec<Gradients> = ts
        .par_chunks(GRAD_CHUNK)
        .zip(d_out.par_chunks(GRAD_CHUNK))
        .map(|(tc, dc)| {
            let mut g = Gradients::zeros_like(params);
            for (t, d) in tc.iter().zip(dc) {
                backward(t, params, d, &mut g);
            }
            g
        })
        .collect();
    let mut total = Gradients::zeros_like(params);
    for g in &partials {
        total.add_assign(g);
    }
    if !total.is_finite() {
        return Err(Error::Divergence("gradient"));
    }
    Ok((value, total))
}

pub fn grad(
    batch: &PairBatch,
    train: &[SparseCase],
    params: &NetworkParams,
    objective: &Objective,
) -> Result<Gradients> {
    grad_with_value(batch, train, params, objective).map(|(_, g)| g)
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` of an arbitrary function of
/// the parameters, one scalar at a time.
pub fn finite_diff(
    params: &NetworkParams,
    eps: f64,
    f: impl Fn(&NetworkParams) -> f64,
) -> Gradients {
    let mut out = Gradients::zeros_like(params);
    let mut probe = params.clone();
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for k in 0..len {
            let orig = params.tensors()[t][k];
            probe.tensors_mut()[t][k] = orig + eps;
            let up = f(&probe);
            probe.tensors_mut()[t][k] = orig - eps;
            let down = f(&probe);
            probe.tensors_mut()[t][k] = orig;
            out.tensors_mut()[t][k] = (up - down) / (2.0 * eps);
        }
    }
    out
}

/// Finite-difference gradient of [`batch_objective`].
pub fn finite_diff_grad(
    batch: &PairBatch,
    train: &[SparseCase],
    params: &NetworkParams,
    objective: &Objective,
    eps: f64,
) -> Result<Gradients> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    // surface forward errors before the probe loop
    batch_objective(batch, train, params, objective)?;
    Ok(finite_diff(params, eps, |p| {
        batch_objective(batch, train, p, objective).unwrap_or(f64::NAN)
    }))
}

/// `(sum |1 - |z||, n*r - tr(Z^T Z))` for a set of relaxed codes with
/// entries in `[-1, 1]`; the first never exceeds the second.
pub fn regularizer_bound(codes: &[Vec<f64>]) -> (f64, f64) {
    let mut gap = 0.0;
    let mut trace = 0.0;
    let mut count = 0usize;
    for z in codes {
        for &v in z {
            gap += 1.0 - v.abs();
            trace += v * v;
            count += 1;
        }
    }
    (gap, count as f64 - trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over all parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &NetworkParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let zeros = |on: bool| -> Vec<Vec<f64>> {
            if on {
                shapes.iter().map(|&n| vec![0.0; n]).collect()
            } else {
                Vec::new()
            }
        };
        let adam = kind == OptimizerKind::Adam;
        OptimizerState {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(adam),
            v: zeros(adam),
        }
    }

    /// Descends along `grads`.
    pub fn apply(&mut self, params: &mut NetworkParams, grads: &Gradients) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (x, d) in p.iter_mut().zip(g) {
                        *x -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                let step = self.lr * c2.sqrt() / c1;
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    for k in 0..p.len() {
                        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                        p[k] -= step * m[k] / (v[k].sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Negatives kept per positive pair.
    pub neg_ratio: f64,
    /// Epochs without a `min_delta` improvement of the validation objective
    /// before stopping; 0 disables early stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            neg_ratio: 1.0,
            patience: 5,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective on the fixed validation batch after the epoch.
    pub objective: f64,
    /// Mean objective over the epoch's training batches.
    pub train_objective: f64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Training hit a non-finite value; `params` is the last finite state.
    pub diverged: bool,
}

/// Trains from a fresh initialization seeded by `config.seed`.
pub fn train(train_set: &[SparseCase], dim: usize, hyper: &Hyperparams, config: &TrainConfig) -> Result<TrainOutcome> {
    let params = init_params(hyper, dim, seed::derive(config.seed, Stream::Init))?;
    train_from(params, train_set, hyper, config)
}

/// Continues training `params`.
pub fn train_from(
    mut params: NetworkParams,
    train_set: &[SparseCase],
    hyper: &Hyperparams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut log = Vec::new();
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            log,
            stopped_early: false,
            diverged: false,
        });
    }
    if train_set.len() < 2 {
        return Err(Error::invalid("training needs at least two cases"));
    }
    let labels: std::collections::BTreeSet<Label> = train_set.iter().map(|c| c.label).collect();
    if labels.len() < 2 {
        warn!("training set has a single label; every pair is similar");
    }

    let objective = Objective::training(hyper);
    let sampling = seed::derive(config.seed, Stream::Sampling);
    let validation = sample_pairs(train_set, config.batch_size, config.neg_ratio, seed::child(sampling, u64::MAX))?;
    let mut optimizer = OptimizerState::new(config.optimizer, config.learning_rate, &params);
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size).max(1);

    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut step_counter = 0u64;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let (mut pos, mut neg, mut total) = (0, 0, 0.0);
        for _ in 0..steps_per_epoch {
            let batch = sample_pairs(train_set, config.batch_size, config.neg_ratio, seed::child(sampling, step_counter))?;
            step_counter += 1;
            pos += batch.positives();
            neg += batch.negatives();
            let (value, grads) = match grad_with_value(&batch, train_set, &params, &objective) {
                Ok(v) => v,
                Err(Error::Divergence(what)) => {
                    warn!("divergence at epoch {epoch}: {what}");
                    return Ok(TrainOutcome {
                        params,
                        log,
                        stopped_early: false,
                        diverged: true,
                    });
                }
                Err(e) => return Err(e),
            };
            total += value;
            let previous = params.clone();
            optimizer.apply(&mut params, &grads);
            if !params.is_finite() {
                return Ok(TrainOutcome {
                    params: previous,
                    log,
                    stopped_early: false,
                    diverged: true,
                });
            }
        }
        let val = batch_objective(&validation, train_set, &params, &objective)?;
        let record = EpochRecord {
            epoch,
            objective: val,
            train_objective: total / steps_per_epoch as f64,
            positive_pairs: pos,
            negative_pairs: neg,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        debug!("epoch {epoch}: validation objective {val:.4}");
        log.push(record);
        if !val.is_finite() {
            return Ok(TrainOutcome {
                params,
                log,
                stopped_early: false,
                diverged: true,
            });
        }
        if val < best - config.min_delta {
            best = val;
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        stopped_early,
        diverged: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub epochs: usize,
    pub pairs_per_step: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            epochs: 5,
            pairs_per_step: 32_768,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    pub candidate_pairs: usize,
    /// Pairs with nonzero adaptive loss at the start of the update.
    pub active_pairs: usize,
    pub steps: usize,
}

/// Hinge-gated retention update. Pairs whose adaptive loss is already zero
/// are dropped; when none remain, `params` is left untouched.
pub fn adaptive_update(
    params: &mut NetworkParams,
    pool: &[SparseCase],
    candidates: &[(usize, usize, bool)],
    hyper: &Hyperparams,
    config: &AdaptiveConfig,
) -> Result<AdaptiveOutcome> {
    let objective = Objective::adaptive(hyper);
    let mut outcome = AdaptiveOutcome {
        candidate_pairs: candidates.len(),
        ..Default::default()
    };
    if candidates.is_empty() {
        return Ok(outcome);
    }
    let mut involved: Vec<usize> = candidates.iter().flat_map(|&(a, b, _)| [a, b]).collect();
    involved.sort_unstable();
    involved.dedup();
    let codes: HashMap<usize, Vec<f64>> = involved
        .par_iter()
        .map(|&i| crate::network::relaxed_code(&pool[i].features, params).map(|z| (i, z)))
        .collect::<Result<_>>()?;
    let mut active: Vec<(usize, usize, bool)> = candidates
        .iter()
        .copied()
        .filter(|&(a, b, s)| objective.loss.value(s, dot(&codes[&a], &codes[&b])) > 0.0)
        .collect();
    outcome.active_pairs = active.len();
    if active.is_empty() {
        return Ok(outcome);
    }

    let mut rng = seed::rng(config.seed);
    let mut optimizer = OptimizerState::new(OptimizerKind::Adam, config.learning_rate, params);
    let chunk = config.pairs_per_step.max(1);
    for _ in 0..config.epochs {
        active.shuffle(&mut rng);
        for pairs in active.chunks(chunk) {
            let batch = PairBatch::from_pairs(pairs)?;
            let grads = grad(&batch, pool, params, &objective)?;
            optimizer.apply(params, &grads);
            if !params.is_finite() {
                return Err(Error::Divergence("parameters after adaptive step"));
            }
            outcome.steps += 1;
        }
    }
    Ok(outcome)
}

/// Training log writers: one CSV row / JSON object per epoch.
pub fn write_log_csv(log: &[EpochRecord], w: &mut impl Write) -> Result<()> {
    writeln!(w, "epoch,objective,train_objective,positive_pairs,negative_pairs,wall_ms")?;
    for r in log {
        writeln!(
            w,
            "{},{},{},{},{},{:.3}",
            r.epoch, r.objective, r.train_objective, r.positive_pairs, r.negative_pairs, r.wall_ms
        )?;
    }
    Ok(())
}

pub fn write_log_jsonl(log: &[EpochRecord], w: &mut impl Write) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}
