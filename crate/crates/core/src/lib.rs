//! Learned Hamming hashing for case-based reasoning.
//!
//! A small network maps sparse heterogeneous cases to binary codes; cases
//! are bucketed by code, retrieved by Hamming-ball lookup plus exact rerank,
//! and the network is refreshed from retained cases as the case base grows.

pub mod cbr;
pub mod code;
pub mod data;
pub mod error;
pub mod eval;
pub mod index;
pub mod lsh;
pub mod network;
pub mod seed;
pub mod synth;
pub mod training;

pub use cbr::{CbrEngine, EngineConfig, Hasher, Suggestion};
pub use code::{HashCode, HashFunction};
pub use data::{CaseId, Dataset, DatasetSchema, Label, SparseCase, SparseVector};
pub use error::{Error, Result};
pub use eval::{BenchReport, MetricReport};
pub use index::{HashIndex, RetrievalResult, RetrieveOptions};
pub use lsh::LshPlanes;
pub use network::{Hyperparams, NetworkParams};
pub use training::{AdaptiveConfig, TrainConfig};
