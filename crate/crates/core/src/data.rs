//! Synthetic datasets and partition plans for driving scenarios and tests.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neural::LabeledDataset;

/// Standard normal draw (Box-Muller).
fn normal(rng: &mut impl RngCore) -> f64 {
    let u1: f64 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let u2: f64 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let u1 = u1.max(1e-300);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Gaussian blobs with one deterministic center per class, balanced labels.
pub fn synthetic_blobs(
    classes: usize,
    features: usize,
    count: usize,
    noise: f64,
    seed: u64,
) -> LabeledDataset {
    assert!(classes >= 2 && features >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Well-separated centers: scaled coordinate directions with alternating
    // signs, wrapping around the feature axes.
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut center = vec![0.0; features];
            let axis = c % features;
            let sign = if (c / features) % 2 == 0 { 1.0 } else { -1.0 };
            center[axis] = sign * 3.0;
            if features > 1 {
                center[(axis + 1) % features] = sign * ((c / features) as f64);
            }
            center
        })
        .collect();
    let mut inputs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        let point = centers[class]
            .iter()
            .map(|&c| c + noise * normal(&mut rng))
            .collect();
        inputs.push(point);
        labels.push(class);
    }
    LabeledDataset {
        inputs,
        labels,
        input_shape: vec![features],
        num_classes: classes,
    }
}

/// Deterministic shuffle of a dataset.
pub fn shuffled(dataset: &LabeledDataset, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    dataset.subset(&order)
}

/// Splits off consecutive chunks of the given sizes; panics if the dataset is
/// too small.
pub fn take_splits(dataset: &LabeledDataset, sizes: &[usize]) -> Vec<LabeledDataset> {
    let total: usize = sizes.iter().sum();
    assert!(
        total <= dataset.len(),
        "requested {total} samples from a dataset of {}",
        dataset.len()
    );
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &size in sizes {
        let indices: Vec<usize> = (start..start + size).collect();
        out.push(dataset.subset(&indices));
        start += size;
    }
    out
}

/// How a hospital's training data is divided among its edge servers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionPlan {
    /// Contiguous equal slices (remainder spread over the first slices).
    Contiguous,
    /// Label-skewed split: per class, proportions drawn from a symmetric
    /// Dirichlet with the given concentration.
    LabelSkewed { alpha: f64 },
}

/// Gamma(shape, 1) via Marsaglia-Tsang, with the boost for shape < 1.
fn gamma(shape: f64, rng: &mut impl RngCore) -> f64 {
    if shape < 1.0 {
        let u: f64 = ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64).max(1e-300);
        return gamma(shape + 1.0, rng) * libm::pow(u, 1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64).max(1e-300);
        if libm::log(u) < 0.5 * x * x + d - d * v + d * libm::log(v) {
            return d * v;
        }
    }
}

/// Splits `dataset` into `parts` disjoint partitions covering every sample.
pub fn partition(
    dataset: &LabeledDataset,
    parts: usize,
    plan: &PartitionPlan,
    seed: u64,
) -> Vec<LabeledDataset> {
    assert!(parts >= 1);
    match plan {
        PartitionPlan::Contiguous => {
            let n = dataset.len();
            let base = n / parts;
            let extra = n % parts;
            let mut out = Vec::with_capacity(parts);
            let mut start = 0;
            for p in 0..parts {
                let size = base + usize::from(p < extra);
                let indices: Vec<usize> = (start..start + size).collect();
                out.push(dataset.subset(&indices));
                start += size;
            }
            out
        }
        PartitionPlan::LabelSkewed { alpha } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); parts];
            for class in 0..dataset.num_classes {
                let members: Vec<usize> = (0..dataset.len())
                    .filter(|&i| dataset.labels[i] == class)
                    .collect();
                let draws: Vec<f64> = (0..parts).map(|_| gamma(*alpha, &mut rng)).collect();
                let total: f64 = draws.iter().sum();
                let mut cut = 0usize;
                for (p, &g) in draws.iter().enumerate() {
                    let take = if p == parts - 1 {
                        members.len() - cut
                    } else {
                        libm::round(g / total * members.len() as f64) as usize
                    };
                    let take = take.min(members.len() - cut);
                    assignments[p].extend_from_slice(&members[cut..cut + take]);
                    cut += take;
                }
            }
            assignments
                .into_iter()
                .map(|mut idx| {
                    idx.sort_unstable();
                    dataset.subset(&idx)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_shaped() {
        let data = synthetic_blobs(3, 4, 90, 0.5, 1);
        data.validate().unwrap();
        assert_eq!(data.len(), 90);
        for class in 0..3 {
            assert_eq!(data.labels.iter().filter(|&&l| l == class).count(), 30);
        }
    }

    #[test]
    fn blobs_deterministic_under_seed() {
        let a = synthetic_blobs(2, 3, 40, 0.3, 7);
        let b = synthetic_blobs(2, 3, 40, 0.3, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn contiguous_partition_is_disjoint_and_total() {
        let data = synthetic_blobs(3, 2, 31, 0.5, 2);
        let parts = partition(&data, 4, &PartitionPlan::Contiguous, 0);
        assert_eq!(parts.len(), 4);
        let total: usize = parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, 31);
        assert_eq!(parts[0].len(), 8); // remainder goes to the front
        assert_eq!(parts[3].len(), 7);
        assert_eq!(parts[0].inputs[0], data.inputs[0]);
    }

    #[test]
    fn skewed_partition_keeps_every_sample() {
        let data = synthetic_blobs(4, 2, 120, 0.5, 3);
        let parts = partition(&data, 3, &PartitionPlan::LabelSkewed { alpha: 0.5 }, 9);
        let total: usize = parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, 120);
        let spread = |class: usize| -> Vec<usize> {
            parts
                .iter()
                .map(|p| p.labels.iter().filter(|&&l| l == class).count())
                .collect()
        };
        let any_skewed = (0..4).any(|c| {
            let s = spread(c);
            s.iter().max() != s.iter().min()
        });
        assert!(any_skewed);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let data = synthetic_blobs(2, 2, 50, 0.5, 4);
        let mixed = shuffled(&data, 11);
        assert_eq!(mixed.len(), data.len());
        assert_ne!(mixed.inputs, data.inputs);
        let mut original = data.inputs.clone();
        let mut permuted = mixed.inputs.clone();
        original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        permuted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(original, permuted);
    }

    #[test]
    fn take_splits_consumes_in_order() {
        let data = synthetic_blobs(2, 2, 30, 0.5, 5);
        let splits = take_splits(&data, &[10, 5, 15]);
        assert_eq!(splits[0].len(), 10);
        assert_eq!(splits[1].len(), 5);
        assert_eq!(splits[2].len(), 15);
        assert_eq!(splits[1].inputs[0], data.inputs[10]);
    }
}
