//! Random-hyperplane LSH baseline.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::code::{HashCode, HashFunction};
use crate::data::SparseVector;
use crate::error::{Error, Result};
use crate::seed;

/// `r` Gaussian projection vectors of length `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LshPlanes {
    dim: usize,
    bits: usize,
    seed: u64,
    /// Feature-major: entry `j * bits + m` is component `j` of plane `m`.
    coeffs: Vec<f64>,
}

impl LshPlanes {
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 {
            return Err(Error::invalid("code length must be at least 1"));
        }
        let mut rng = seed::rng(seed);
        let mut coeffs = vec![0.0; dim * bits];
        for m in 0..bits {
            for j in 0..dim {
                coeffs[j * bits + m] = StandardNormal.sample(&mut rng);
            }
        }
        Ok(LshPlanes {
            dim,
            bits,
            seed,
            coeffs,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn plane(&self, m: usize) -> Vec<f64> {
        (0..self.dim).map(|j| self.coeffs[j * self.bits + m]).collect()
    }

    /// `<x, plane_m>` for every `m`.
    pub fn project(&self, x: &SparseVector) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.dim(),
            });
        }
        let mut out = vec![0.0; self.bits];
        for (j, v) in x.iter() {
            let row = &self.coeffs[j * self.bits..(j + 1) * self.bits];
            for (o, &p) in out.iter_mut().zip(row) {
                *o += v * p;
            }
        }
        Ok(out)
    }
}

pub fn lsh_hash(x: &SparseVector, planes: &LshPlanes) -> Result<HashCode> {
    Ok(HashCode::from_real(&planes.project(x)?))
}

impl HashFunction for LshPlanes {
    fn code_len(&self) -> usize {
        self.bits
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn hash_features(&self, x: &SparseVector) -> Result<HashCode> {
        lsh_hash(x, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_vector_hashes_to_all_ones() {
        let planes = LshPlanes::new(12, 20, 3).unwrap();
        let code = lsh_hash(&SparseVector::empty(12), &planes).unwrap();
        assert_eq!(code, HashCode::zeros(20).negated());
    }

    #[test]
    fn dimension_mismatch() {
        let planes = LshPlanes::new(4, 8, 0).unwrap();
        assert!(matches!(
            lsh_hash(&SparseVector::empty(5), &planes),
            Err(Error::DimensionMismatch { expected: 4, actual: 5 })
        ));
    }

    #[test]
    fn sparse_projection_matches_dense() {
        let planes = LshPlanes::new(6, 5, 11).unwrap();
        let dense = [0.0, 0.3, 0.0, -1.2, 0.5, 0.0];
        let x = SparseVector::from_dense(&dense);
        let got = planes.project(&x).unwrap();
        for (m, g) in got.iter().enumerate() {
            let want: f64 = planes.plane(m).iter().zip(&dense).map(|(p, v)| p * v).sum();
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn determinism_per_seed() {
        assert_eq!(LshPlanes::new(10, 16, 5).unwrap(), LshPlanes::new(10, 16, 5).unwrap());
        assert_ne!(LshPlanes::new(10, 16, 5).unwrap(), LshPlanes::new(10, 16, 6).unwrap());
    }

    fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / n).collect()
    }

    #[test]
    fn collision_rate_tracks_angle() {
        let d = 8;
        let trials = 10_000;
        let mut rng = seed::rng(99);
        let (mut agree, mut expected, mut var) = (0.0, 0.0, 0.0);
        for t in 0..trials {
            let a = unit(&mut rng, d);
            let b = unit(&mut rng, d);
            let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let p = 1.0 - cos.clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
            let planes = LshPlanes::new(d, 1, seed::child(1234, t)).unwrap();
            let ca = lsh_hash(&SparseVector::from_dense(&a), &planes).unwrap();
            let cb = lsh_hash(&SparseVector::from_dense(&b), &planes).unwrap();
            agree += f64::from(u8::from(ca == cb));
            expected += p;
            var += p * (1.0 - p);
        }
        let se = var.sqrt();
        assert!((agree - expected).abs() <= 3.0 * se, "agree {agree} expected {expected} se {se}");
    }

    #[test]
    fn nearly_parallel_vectors_rarely_split() {
        let d = 16;
        let a: Vec<f64> = (0..d).map(|j| 1.0 + j as f64 * 0.1).collect();
        let mut b = a.clone();
        b[0] += 0.3;
        let cos = {
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let theta = cos.acos() / std::f64::consts::PI;
        let bits = 64;
        let seeds = 200;
        let mut total = 0u32;
        for s in 0..seeds {
            let planes = LshPlanes::new(d, bits, s).unwrap();
            let ca = lsh_hash(&SparseVector::from_dense(&a), &planes).unwrap();
            let cb = lsh_hash(&SparseVector::from_dense(&b), &planes).unwrap();
            total += ca.hamming(&cb).unwrap();
        }
        let rate = f64::from(total) / (bits * seeds as usize) as f64;
        let se = (theta * (1.0 - theta) / (bits * seeds as usize) as f64).sqrt();
        assert!((rate - theta).abs() <= 4.0 * se + 1e-3, "rate {rate} theta {theta}");
    }

    proptest! {
        #[test]
        fn scale_invariance(
            dense in proptest::collection::vec(-5.0f64..5.0, 10),
            k in -8i32..8,
            seed in any::<u64>(),
        ) {
            let planes = LshPlanes::new(10, 24, seed).unwrap();
            let x = SparseVector::from_dense(&dense);
            let c = 2f64.powi(k);
            prop_assert_eq!(lsh_hash(&x, &planes).unwrap(), lsh_hash(&x.scaled(c), &planes).unwrap());
            prop_assert_eq!(lsh_hash(&x, &planes).unwrap(), lsh_hash(&x.scaled(2.0), &planes).unwrap());
        }
    }
}
