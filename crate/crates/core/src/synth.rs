//! Seeded synthetic case bases for tests, demos and benchmarks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{CaseId, Dataset, Label, SparseCase, SparseVector};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct HeterogeneousSpec {
    pub n: usize,
    pub groups: usize,
    pub categories: usize,
    /// Probability that an informative group shows its class's category.
    pub fidelity: f64,
    pub noise_columns: usize,
}

impl Default for HeterogeneousSpec {
    fn default() -> Self {
        HeterogeneousSpec {
            n: 2000,
            groups: 5,
            categories: 4,
            fidelity: 0.7,
            noise_columns: 20,
        }
    }
}

/// Two balanced classes described by one-hot categorical groups whose value
/// leans toward the class, followed by uniform numeric noise in `[0, 1]`.
/// Columns: `groups * categories` one-hot slots, then the noise columns.
pub fn heterogeneous(spec: &HeterogeneousSpec, seed_value: u64) -> Dataset {
    let mut rng = seed::rng(seed::derive(seed_value, seed::Stream::Fixture));
    let onehot = spec.groups * spec.categories;
    let dim = onehot + spec.noise_columns;
    let cases = (0..spec.n)
        .map(|i| {
            let label = (i % 2) as Label;
            let mut entries = Vec::with_capacity(spec.groups + spec.noise_columns);
            for g in 0..spec.groups {
                let preferred = (label as usize + g) % spec.categories;
                let cat = if rng.random::<f64>() < spec.fidelity {
                    preferred
                } else {
                    let other = rng.random_range(0..spec.categories - 1);
                    if other >= preferred {
                        other + 1
                    } else {
                        other
                    }
                };
                entries.push((g * spec.categories + cat, 1.0));
            }
            for j in 0..spec.noise_columns {
                entries.push((onehot + j, rng.random::<f64>()));
            }
            SparseCase::new(i as CaseId, SparseVector::new(dim, entries).expect("ascending"), label)
        })
        .collect();
    Dataset {
        cases,
        dim,
        label_names: vec!["0".into(), "1".into()],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteredSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Active coordinates per cluster.
    pub support: usize,
    pub classes: usize,
    pub spread: f64,
}

impl Default for ClusteredSpec {
    fn default() -> Self {
        ClusteredSpec {
            n: 100_000,
            dim: 200,
            clusters: 500,
            support: 30,
            classes: 20,
            spread: 0.05,
        }
    }
}

/// Gaussian blobs on sparse supports. Cluster `c` carries label
/// `c % classes`; cases are assigned to clusters round-robin.
pub fn clustered(spec: &ClusteredSpec, seed_value: u64) -> Dataset {
    let mut rng = seed::rng(seed::derive(seed_value, seed::Stream::Fixture));
    let noise = Normal::new(0.0, spec.spread).expect("finite spread");
    let centers: Vec<Vec<(usize, f64)>> = (0..spec.clusters)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, spec.dim, spec.support.min(spec.dim)).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| (j, rng.random_range(0.2..1.0))).collect()
        })
        .collect();
    let cases = (0..spec.n)
        .map(|i| {
            let c = i % spec.clusters;
            let entries = centers[c]
                .iter()
                .map(|&(j, v)| (j, (v + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            SparseCase::new(
                i as CaseId,
                SparseVector::new(spec.dim, entries).expect("ascending"),
                (c % spec.classes) as Label,
            )
        })
        .collect();
    Dataset {
        cases,
        dim: spec.dim,
        label_names: (0..spec.classes).map(|c| c.to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heterogeneous_shape() {
        let ds = heterogeneous(&HeterogeneousSpec::default(), 1);
        assert_eq!(ds.cases.len(), 2000);
        assert_eq!(ds.dim, 40);
        assert!(ds.cases.iter().all(|c| c.features.nnz() <= 25));
        assert_eq!(ds.cases.iter().filter(|c| c.label == 1).count(), 1000);
        assert_eq!(ds, heterogeneous(&HeterogeneousSpec::default(), 1));
        // informative groups lean toward the class
        let hits = ds
            .cases
            .iter()
            .filter(|c| c.features.get(c.label as usize) == 1.0)
            .count();
        assert!((hits as f64 / 2000.0 - 0.7).abs() < 0.03);
    }

    #[test]
    fn clustered_shape() {
        let spec = ClusteredSpec {
            n: 1000,
            ..ClusteredSpec::default()
        };
        let ds = clustered(&spec, 2);
        assert_eq!(ds.cases.len(), 1000);
        assert!(ds.cases.iter().all(|c| c.features.nnz() <= 30 && c.label < 20));
        assert!(ds.cases.iter().flat_map(|c| c.features.values().to_vec()).all(|v| (0.0..=1.0).contains(&v)));
    }
}
