//! Packed ±1 hash codes.
//!
//! Bit `m` of the code is set iff component `m` is `+1`. Words are stored
//! little-endian (component 0 is the lowest bit of word 0) and unused high
//! bits of the last word are always zero, so the Hamming distance is the
//! popcount of the XOR.

use serde::{Deserialize, Serialize};

use crate::data::SparseVector;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HashCode {
    bits: usize,
    words: Vec<u64>,
}

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl HashCode {
    /// The all-(−1) code.
    pub fn zeros(bits: usize) -> Self {
        HashCode {
            bits,
            words: vec![0; words_for(bits)],
        }
    }

    /// `sgn` with `sgn(0) = +1`: negative components become −1, the rest +1.
    pub fn from_real(values: &[f64]) -> Self {
        let mut code = HashCode::zeros(values.len());
        for (m, &v) in values.iter().enumerate() {
            if !(v < 0.0) {
                code.words[m / 64] |= 1 << (m % 64);
            }
        }
        code
    }

    pub fn from_words(bits: usize, mut words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::invalid(format!(
                "{} words cannot hold a {bits}-bit code",
                words.len()
            )));
        }
        if !bits.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (bits % 64)) - 1;
            }
        }
        Ok(HashCode { bits, words })
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, m: usize) -> bool {
        self.words[m / 64] >> (m % 64) & 1 == 1
    }

    /// Component `m` as ±1.
    pub fn sign(&self, m: usize) -> i32 {
        if self.bit(m) {
            1
        } else {
            -1
        }
    }

    pub fn signs(&self) -> Vec<i32> {
        (0..self.bits).map(|m| self.sign(m)).collect()
    }

    pub fn flip(&mut self, m: usize) {
        assert!(m < self.bits, "bit {m} out of range for {}-bit code", self.bits);
        self.words[m / 64] ^= 1 << (m % 64);
    }

    pub fn flipped(&self, m: usize) -> Self {
        let mut c = self.clone();
        c.flip(m);
        c
    }

    /// Componentwise negation.
    pub fn negated(&self) -> Self {
        let words = self.words.iter().map(|w| !w).collect();
        HashCode::from_words(self.bits, words).expect("same length")
    }

    pub fn hamming(&self, other: &HashCode) -> Result<u32> {
        if self.bits != other.bits {
            return Err(Error::CodeLength(self.bits, other.bits));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum())
    }

    /// Inner product of the two ±1 vectors.
    pub fn inner(&self, other: &HashCode) -> Result<i64> {
        let d = self.hamming(other)? as i64;
        Ok(self.bits as i64 - 2 * d)
    }
}

/// Anything that maps a case's feature vector to a code: the learned network
/// or the random-hyperplane baseline.
pub trait HashFunction: Send + Sync {
    fn code_len(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn hash_features(&self, x: &SparseVector) -> Result<HashCode>;
}
