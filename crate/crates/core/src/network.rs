//! The hashing network: position embedding, multiview feature interaction,
//! fully connected layers and sign binarization.
//!
//! A case `x` with nonzero features `x_p` embeds each one as
//! `e_p = x_p * w_p` where `w_p` is the feature's slot vector (length
//! `k_w`). The interaction stage produces one value per view `k`:
//!
//! ```text
//! z_k = sum_{p<q} <e_p, e_q * V[:, k]>
//!     = 1/2 * sum_m V[m, k] * ((sum_p e_mp)^2 - sum_p e_mp^2)
//! ```
//!
//! The second form touches each nonzero feature once, so the cost is
//! `O(nnz * k_w + k_w * k_v)`. The interaction vector then passes through
//! rectifier hidden layers and a final `2 / (1 + e^x) - 1` squashing layer;
//! the code is the sign of that output.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::code::{HashCode, HashFunction};
use crate::data::{SparseCase, SparseVector};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Embedding dimension.
    pub k_w: usize,
    /// View dimension (width of the interaction output).
    pub k_v: usize,
    /// Code length in bits.
    pub r: usize,
    /// Number of fully connected layers, including the output layer.
    pub depth: usize,
    pub hidden_width: usize,
    /// Sigmoid bandwidth in the pairwise likelihood.
    pub alpha: f64,
    /// Quantization regularizer weight.
    pub lambda: f64,
    /// Retention margin offset.
    pub beta: f64,
    /// Retention cadence: update every `n_u` solved cases.
    pub n_u: usize,
    /// Number of cases retrieved per query.
    pub top_n: usize,
    /// Append a constant-1 feature so first-order terms enter the interaction.
    pub first_order: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            k_w: 64,
            k_v: 64,
            r: 36,
            depth: 3,
            hidden_width: 128,
            alpha: 0.6,
            lambda: 0.2,
            beta: 0.5,
            n_u: 100,
            top_n: 10,
            first_order: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("k_w", self.k_w),
            ("k_v", self.k_v),
            ("r", self.r),
            ("depth", self.depth),
            ("hidden_width", self.hidden_width),
            ("n_u", self.n_u),
            ("top_n", self.top_n),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1), got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }

    /// Widths of the activations from the interaction output to the code:
    /// `k_v, hidden, ..., hidden, r`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.k_v];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.depth - 1));
        sizes.push(self.r);
        sizes
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// `max(0, x)`, used on hidden layers.
    Relu,
    /// `2 / (1 + e^x) - 1`, the output squashing into `(-1, 1)`.
    Squash,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Squash => 2.0 / (1.0 + x.exp()) - 1.0,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Squash => -0.5 * (1.0 - y * y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.cols
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows
    }

    fn preactivate(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (o, b) in self.bias.iter().enumerate() {
            let row = self.weights.row(o);
            out.push(b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>());
        }
    }
}

/// Learnable parameters of the hash function.
///
/// The position-embedding matrix is conceptually `k_w x d`; it is stored
/// slot-major (`slots.row(j)` is the embedding vector of feature position
/// `j`) so that embedding a sparse case reads contiguous memory. With
/// `first_order` the matrix has one extra slot, at index `d`, for the
/// constant-1 feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub dim: usize,
    pub first_order: bool,
    /// `(d + first_order) x k_w`.
    pub slots: Matrix,
    /// `k_w x k_v`.
    pub view: Matrix,
    pub layers: Vec<Dense>,
}

/// Uniform(−1/√fan_in, 1/√fan_in) weights, zero biases. The position
/// embedding has fan-in 1 (each feature is a scalar times its slot).
pub fn init_params(hyper: &Hyperparams, d: usize, seed: u64) -> Result<NetworkParams> {
    hyper.validate()?;
    if d == 0 {
        return Err(Error::invalid("input dimension must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
    };

    let n_slots = d + usize::from(hyper.first_order);
    let slots = uniform(n_slots, hyper.k_w, 1);
    let view = uniform(hyper.k_w, hyper.k_v, hyper.k_w);

    let sizes = hyper.layer_sizes();
    let mut layers = Vec::with_capacity(hyper.depth);
    for (i, pair) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let weights = uniform(fan_out, fan_in, fan_in);
        let activation = if i + 2 == sizes.len() {
            Activation::Squash
        } else {
            Activation::Relu
        };
        layers.push(Dense {
            weights,
            bias: vec![0.0; fan_out],
            activation,
        });
    }
    Ok(NetworkParams {
        dim: d,
        first_order: hyper.first_order,
        slots,
        view,
        layers,
    })
}

/// Embeddings of a case's nonzero features, one `k_w` row per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveEmbeddings {
    pub k_w: usize,
    /// Slot index and feature value of each active feature.
    pub features: Vec<(usize, f64)>,
    /// `features.len() x k_w`, row-major.
    pub data: Vec<f64>,
}

impl ActiveEmbeddings {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.k_w..(p + 1) * self.k_w]
    }
}

impl NetworkParams {
    pub fn k_w(&self) -> usize {
        self.slots.cols
    }

    pub fn k_v(&self) -> usize {
        self.view.cols
    }

    pub fn code_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// All parameter tensors in canonical order: slots, view, then each
    /// layer's weights followed by its bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.slots.data, &self.view.data];
        for layer in &self.layers {
            out.push(&layer.weights.data);
            out.push(&layer.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.slots.data, &mut self.view.data];
        for layer in &mut self.layers {
            out.push(&mut layer.weights.data);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_dim(&self, x: &SparseVector) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.dim(),
            });
        }
        Ok(())
    }
}

/// `e_p = x_p * w_p` for every nonzero `x_p`; zero features emit nothing.
pub fn embed_features(x: &SparseVector, params: &NetworkParams) -> Result<ActiveEmbeddings> {
    params.check_dim(x)?;
    let k_w = params.k_w();
    let mut features: Vec<(usize, f64)> = x.iter().filter(|&(_, v)| v != 0.0).collect();
    if params.first_order {
        features.push((params.dim, 1.0));
    }
    let mut data = Vec::with_capacity(features.len() * k_w);
    for &(j, v) in &features {
        data.extend(params.slots.row(j).iter().map(|w| v * w));
    }
    Ok(ActiveEmbeddings {
        k_w,
        features,
        data,
    })
}

/// Interaction output plus the per-row sums the backward pass reuses.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub z: Vec<f64>,
    /// `sum_p e_mp` for each embedding row `m`.
    pub row_sum: Vec<f64>,
    /// `sum_p e_mp^2` for each embedding row `m`.
    pub row_sq: Vec<f64>,
}

/// Linear-time multiview interaction via the sum-of-squares identity.
pub fn interact_with_sums(emb: &ActiveEmbeddings, view: &Matrix) -> Interaction {
    let k_w = emb.k_w;
    let mut row_sum = vec![0.0; k_w];
    let mut row_sq = vec![0.0; k_w];
    for p in 0..emb.len() {
        for (m, &e) in emb.row(p).iter().enumerate() {
            row_sum[m] += e;
            row_sq[m] += e * e;
        }
    }
    let mut z = vec![0.0; view.cols];
    for m in 0..k_w {
        let c = 0.5 * (row_sum[m] * row_sum[m] - row_sq[m]);
        if c == 0.0 {
            continue;
        }
        for (zk, v) in z.iter_mut().zip(view.row(m)) {
            *zk += c * v;
        }
    }
    Interaction { z, row_sum, row_sq }
}

pub fn interact(emb: &ActiveEmbeddings, view: &Matrix) -> Vec<f64> {
    interact_with_sums(emb, view).z
}

/// Reference evaluation of the pairwise sum `sum_{p<q} <e_p, e_q * V[:, k]>`
/// by explicit double loop. Quadratic in the number of active features; used
/// as a test oracle.
pub fn interact_bruteforce(emb: &ActiveEmbeddings, view: &Matrix) -> Vec<f64> {
    let mut z = vec![0.0; view.cols];
    for p in 0..emb.len() {
        for q in p + 1..emb.len() {
            let (ep, eq) = (emb.row(p), emb.row(q));
            for (k, zk) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for m in 0..emb.k_w {
                    acc += ep[m] * eq[m] * view.get(m, k);
                }
                *zk += acc;
            }
        }
    }
    z
}

/// Everything computed on the way from a case to its relaxed code.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub embeddings: ActiveEmbeddings,
    pub interaction: Interaction,
    /// Pre-activation of each fully connected layer.
    pub pre: Vec<Vec<f64>>,
    /// Output of each fully connected layer; the last one is the relaxed code.
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Relaxed code `z^l`, every component in `(-1, 1)`.
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Input to layer `i` (`z^{i}` in zero-based layer numbering).
    pub fn layer_input(&self, i: usize) -> &[f64] {
        if i == 0 {
            &self.interaction.z
        } else {
            &self.post[i - 1]
        }
    }
}

pub fn forward(x: &SparseVector, params: &NetworkParams) -> Result<ForwardTrace> {
    let embeddings = embed_features(x, params)?;
    let interaction = interact_with_sums(&embeddings, &params.view);
    if interaction.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("interaction output"));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let input = post.last().unwrap_or(&interaction.z);
        let mut a = Vec::with_capacity(layer.outputs());
        layer.preactivate(input, &mut a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("layer pre-activation"));
        }
        let out = a.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(a);
        post.push(out);
    }
    Ok(ForwardTrace {
        embeddings,
        interaction,
        pre,
        post,
    })
}

/// Relaxed code only, skipping the trace bookkeeping.
pub fn relaxed_code(x: &SparseVector, params: &NetworkParams) -> Result<Vec<f64>> {
    let emb = embed_features(x, params)?;
    let mut cur = interact(&emb, &params.view);
    let mut next = Vec::new();
    for layer in &params.layers {
        layer.preactivate(&cur, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("layer pre-activation"));
        }
        for v in next.iter_mut() {
            *v = layer.activation.apply(*v);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

pub fn hash(case: &SparseCase, params: &NetworkParams) -> Result<HashCode> {
    params.hash_features(&case.features)
}

impl HashFunction for NetworkParams {
    fn code_len(&self) -> usize {
        NetworkParams::code_len(self)
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn hash_features(&self, x: &SparseVector) -> Result<HashCode> {
        Ok(HashCode::from_real(&relaxed_code(x, self)?))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HCBRNET\0";
const CHECKPOINT_VERSION: u32 = 1;
const FLAG_FIRST_ORDER: u32 = 1;

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Binary checkpoint: magic, version, `d, k_w, k_v, r, l`, the `l + 1` layer
/// widths, flags; then the position embedding (`k_w x slots`), the view
/// matrix and each layer's weights and bias, all row-major little-endian
/// `f64`.
pub fn write_checkpoint(params: &NetworkParams, w: &mut impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [
        params.dim,
        params.k_w(),
        params.k_v(),
        params.code_len(),
        params.depth(),
    ] {
        write_u64(w, v as u64)?;
    }
    write_u64(w, params.k_v() as u64)?;
    for layer in &params.layers {
        write_u64(w, layer.outputs() as u64)?;
    }
    let flags = if params.first_order { FLAG_FIRST_ORDER } else { 0 };
    w.write_all(&flags.to_le_bytes())?;
    write_f64s(w, &params.slots.transpose().data)?;
    write_f64s(w, &params.view.data)?;
    for layer in &params.layers {
        write_f64s(w, &layer.weights.data)?;
        write_f64s(w, &layer.bias)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<NetworkParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut hdr = [0usize; 5];
    for h in hdr.iter_mut() {
        *h = read_u64(r)? as usize;
    }
    let [dim, k_w, k_v, r_bits, depth] = hdr;
    if depth == 0 || depth > 64 || k_w == 0 || k_v == 0 {
        return Err(Error::Checkpoint("implausible header".into()));
    }
    let sizes = (0..=depth)
        .map(|_| read_u64(r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    if sizes[0] != k_v || sizes[depth] != r_bits {
        return Err(Error::Checkpoint("layer widths disagree with header".into()));
    }
    let flags = read_u32(r)?;
    let first_order = flags & FLAG_FIRST_ORDER != 0;
    let n_slots = dim + usize::from(first_order);
    let slots = Matrix {
        rows: k_w,
        cols: n_slots,
        data: read_f64s(r, k_w * n_slots)?,
    }
    .transpose();
    let view = Matrix {
        rows: k_w,
        cols: k_v,
        data: read_f64s(r, k_w * k_v)?,
    };
    let mut layers = Vec::with_capacity(depth);
    for (i, pair) in sizes.windows(2).enumerate() {
        let weights = Matrix {
            rows: pair[1],
            cols: pair[0],
            data: read_f64s(r, pair[0] * pair[1])?,
        };
        let bias = read_f64s(r, pair[1])?;
        let activation = if i + 1 == depth {
            Activation::Squash
        } else {
            Activation::Relu
        };
        layers.push(Dense {
            weights,
            bias,
            activation,
        });
    }
    Ok(NetworkParams {
        dim,
        first_order,
        slots,
        view,
        layers,
    })
}

pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<NetworkParams> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r)
}
