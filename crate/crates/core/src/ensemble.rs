//! Weighted ensemble prediction and grid-search weight tuning.
//!
//! Every hospital's model produces a probability matrix over the same ordered
//! evaluation set. The ensemble mixes the matrices with an l1-normalized
//! weight vector and predicts by row-wise argmax; the weights come from an
//! exhaustive grid search over the Cartesian product of candidate values,
//! keeping the first candidate that strictly improves accuracy.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::neural::argmax;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error("weight vector is all zeros")]
    AllZeroWeights,
    #[error("probability matrices are not aligned")]
    AlignmentMismatch,
    #[error("prediction and label lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("weight grid is empty or out of range")]
    BadGrid,
}

/// Per-sample class probabilities produced by one hospital's global model,
/// rows ordered by the shared evaluation-sample index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    pub hospital_id: String,
    pub model_id: String,
    pub rows: Vec<Vec<f64>>,
}

impl ProbabilityMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Rows must be proper distributions of equal width.
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let classes = self.num_classes();
        for row in &self.rows {
            if row.len() != classes {
                return Err(EnsembleError::AlignmentMismatch);
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
                return Err(EnsembleError::AlignmentMismatch);
            }
        }
        Ok(())
    }
}

fn check_alignment(mats: &[ProbabilityMatrix]) -> Result<(usize, usize), EnsembleError> {
    let Some(first) = mats.first() else {
        return Err(EnsembleError::AlignmentMismatch);
    };
    let rows = first.len();
    let classes = first.num_classes();
    for m in mats {
        if m.len() != rows || m.num_classes() != classes {
            return Err(EnsembleError::AlignmentMismatch);
        }
    }
    Ok((rows, classes))
}

/// A weight per hospital; `normalized` records whether it sums to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub alpha: Vec<f64>,
    pub normalized: bool,
}

/// Divides by the sum of absolute values.
pub fn l1_normalize(alpha: &[f64]) -> Result<EnsembleWeights, EnsembleError> {
    let total: f64 = alpha.iter().map(|a| a.abs()).sum();
    if total == 0.0 {
        return Err(EnsembleError::AllZeroWeights);
    }
    Ok(EnsembleWeights {
        alpha: alpha.iter().map(|a| a / total).collect(),
        normalized: true,
    })
}

/// Candidate weight values for the grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightGrid {
    pub values: Vec<f64>,
}

impl WeightGrid {
    /// `{0, step, 2*step, …, 1}`; the default step 0.1 gives 11 values.
    pub fn from_step(step: f64) -> Self {
        assert!(step > 0.0 && step <= 1.0, "grid step must be in (0, 1]");
        let mut values = Vec::new();
        let mut v = 0.0f64;
        while v < 1.0 - 1e-12 {
            values.push(v);
            v += step;
        }
        values.push(1.0);
        WeightGrid { values }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.values.is_empty()
            || self
                .values
                .windows(2)
                .any(|w| w[0] > w[1])
            || self.values.iter().any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(EnsembleError::BadGrid);
        }
        Ok(())
    }
}

impl Default for WeightGrid {
    fn default() -> Self {
        WeightGrid::from_step(0.1)
    }
}

/// Row-wise argmax of the weighted probability sum; ties break toward the
/// lowest class index.
pub fn ensemble_predict(
    mats: &[ProbabilityMatrix],
    weights: &EnsembleWeights,
) -> Result<Vec<usize>, EnsembleError> {
    let (rows, classes) = check_alignment(mats)?;
    if weights.alpha.len() != mats.len() {
        return Err(EnsembleError::AlignmentMismatch);
    }
    let mut labels = Vec::with_capacity(rows);
    let mut mixed = vec![0.0f64; classes];
    for row in 0..rows {
        mixed.iter_mut().for_each(|v| *v = 0.0);
        for (mat, &a) in mats.iter().zip(&weights.alpha) {
            for (acc, &p) in mixed.iter_mut().zip(&mat.rows[row]) {
                *acc += a * p;
            }
        }
        labels.push(argmax(&mixed));
    }
    Ok(labels)
}

/// Fraction of exact matches.
pub fn accuracy_score(predicted: &[usize], labels: &[usize]) -> Result<f64, EnsembleError> {
    if predicted.len() != labels.len() {
        return Err(EnsembleError::LengthMismatch(predicted.len(), labels.len()));
    }
    if predicted.is_empty() {
        return Err(EnsembleError::LengthMismatch(0, 0));
    }
    let correct = predicted
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Exhaustive search over the Cartesian product `W^h` in lexicographic
/// order. Every candidate is l1-normalized before evaluation; the all-zero
/// candidate is skipped; duplicate normalized candidates are evaluated once;
/// a candidate replaces the incumbent only on a strict accuracy improvement.
pub fn grid_search_weights(
    mats: &[ProbabilityMatrix],
    labels: &[usize],
    grid: &WeightGrid,
) -> Result<(EnsembleWeights, f64), EnsembleError> {
    grid.validate()?;
    let (rows, _) = check_alignment(mats)?;
    if rows != labels.len() {
        return Err(EnsembleError::LengthMismatch(rows, labels.len()));
    }
    let h = mats.len();
    let mut best: Option<(EnsembleWeights, f64)> = None;
    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut indices = vec![0usize; h];
    loop {
        let candidate: Vec<f64> = indices.iter().map(|&i| grid.values[i]).collect();
        if let Ok(normalized) = l1_normalize(&candidate) {
            let key: Vec<u64> = normalized.alpha.iter().map(|a| a.to_bits()).collect();
            if seen.insert(key) {
                let predicted = ensemble_predict(mats, &normalized)?;
                let accuracy = accuracy_score(&predicted, labels)?;
                let improves = match &best {
                    None => true,
                    Some((_, incumbent)) => accuracy > *incumbent,
                };
                if improves {
                    best = Some((normalized, accuracy));
                }
            }
        }
        // Lexicographic odometer over W^h, first coordinate most significant.
        let mut pos = h;
        loop {
            if pos == 0 {
                return best.ok_or(EnsembleError::AllZeroWeights);
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < grid.values.len() {
                break;
            }
            indices[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(hospital: &str, rows: Vec<Vec<f64>>) -> ProbabilityMatrix {
        ProbabilityMatrix {
            hospital_id: hospital.to_string(),
            model_id: format!("{hospital}/GM"),
            rows,
        }
    }

    fn random_matrix(hospital: &str, rows: usize, classes: usize, seed: u64) -> ProbabilityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..rows)
            .map(|_| {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / total).collect()
            })
            .collect();
        matrix(hospital, rows)
    }

    fn perfect_matrix(hospital: &str, labels: &[usize], classes: usize) -> ProbabilityMatrix {
        let rows = labels
            .iter()
            .map(|&y| {
                let mut row = vec![0.01; classes];
                row[y] = 1.0 - 0.01 * (classes - 1) as f64;
                row
            })
            .collect();
        matrix(hospital, rows)
    }

    /// Independent exhaustive oracle: no dedup, fresh mixing code.
    fn oracle_search(
        mats: &[ProbabilityMatrix],
        labels: &[usize],
        grid: &[f64],
    ) -> (Vec<f64>, f64) {
        let h = mats.len();
        let mut best_alpha: Option<Vec<f64>> = None;
        let mut best_acc = f64::NEG_INFINITY;
        let count = grid.len().pow(h as u32);
        for code in 0..count {
            let mut digits = Vec::with_capacity(h);
            let mut rest = code;
            for pos in 0..h {
                let place = grid.len().pow((h - 1 - pos) as u32);
                digits.push(grid[rest / place]);
                rest %= place;
            }
            let total: f64 = digits.iter().sum();
            if total == 0.0 {
                continue;
            }
            let alpha: Vec<f64> = digits.iter().map(|d| d / total).collect();
            let mut correct = 0usize;
            for (row, &y) in labels.iter().enumerate() {
                let classes = mats[0].rows[0].len();
                let mut mixed = vec![0.0; classes];
                for (m, &a) in mats.iter().zip(&alpha) {
                    for c in 0..classes {
                        mixed[c] += a * m.rows[row][c];
                    }
                }
                let mut arg = 0;
                for c in 1..classes {
                    if mixed[c] > mixed[arg] {
                        arg = c;
                    }
                }
                if arg == y {
                    correct += 1;
                }
            }
            let acc = correct as f64 / labels.len() as f64;
            if acc > best_acc {
                best_acc = acc;
                best_alpha = Some(alpha);
            }
        }
        (best_alpha.unwrap(), best_acc)
    }

    #[test]
    fn l1_normalize_basics() {
        let w = l1_normalize(&[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(w.alpha, vec![0.5, 0.25, 0.25]);
        assert!(w.normalized);

        let one_hot = l1_normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(one_hot.alpha, vec![1.0, 0.0, 0.0]);

        let already = l1_normalize(&[0.3, 0.3, 0.4]).unwrap();
        for (a, b) in already.alpha.iter().zip([0.3, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }

        assert_eq!(
            l1_normalize(&[0.0, 0.0]),
            Err(EnsembleError::AllZeroWeights)
        );
    }

    #[test]
    fn one_hot_weights_select_one_model() {
        let labels = vec![0, 1, 2, 1, 0];
        let m0 = random_matrix("H0", 5, 3, 1);
        let m1 = perfect_matrix("H1", &labels, 3);
        let m2 = random_matrix("H2", 5, 3, 2);
        let mats = vec![m0, m1.clone(), m2];
        let weights = l1_normalize(&[0.0, 1.0, 0.0]).unwrap();
        let predicted = ensemble_predict(&mats, &weights).unwrap();
        let own: Vec<usize> = m1.rows.iter().map(|r| argmax(r)).collect();
        assert_eq!(predicted, own);
    }

    #[test]
    fn identical_matrices_any_weights_same_argmax() {
        let m = random_matrix("H0", 6, 4, 3);
        let mut m2 = m.clone();
        m2.hospital_id = "H1".to_string();
        let mats = vec![m.clone(), m2];
        let own: Vec<usize> = m.rows.iter().map(|r| argmax(r)).collect();
        for alpha in [[0.5, 0.5], [0.9, 0.1], [0.2, 0.8]] {
            let w = l1_normalize(&alpha).unwrap();
            assert_eq!(ensemble_predict(&mats, &w).unwrap(), own);
        }
    }

    #[test]
    fn prediction_invariant_under_weight_rescaling() {
        let mats = vec![
            random_matrix("H0", 10, 3, 4),
            random_matrix("H1", 10, 3, 5),
            random_matrix("H2", 10, 3, 6),
        ];
        let base = EnsembleWeights {
            alpha: vec![0.2, 0.5, 0.3],
            normalized: true,
        };
        let scaled = EnsembleWeights {
            alpha: vec![0.4, 1.0, 0.6],
            normalized: false,
        };
        assert_eq!(
            ensemble_predict(&mats, &base).unwrap(),
            ensemble_predict(&mats, &scaled).unwrap()
        );
    }

    #[test]
    fn alignment_mismatch_detected() {
        let m0 = random_matrix("H0", 5, 3, 7);
        let m1 = random_matrix("H1", 4, 3, 8);
        let w = l1_normalize(&[0.5, 0.5]).unwrap();
        assert_eq!(
            ensemble_predict(&[m0, m1], &w),
            Err(EnsembleError::AlignmentMismatch)
        );
    }

    #[test]
    fn accuracy_score_fixture() {
        assert_eq!(accuracy_score(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy_score(&[0, 0, 0], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(accuracy_score(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(matches!(
            accuracy_score(&[1], &[1, 2]),
            Err(EnsembleError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn single_hospital_grid_search() {
        let labels = vec![0, 1, 0, 1];
        let m = perfect_matrix("H0", &labels, 2);
        let (weights, accuracy) =
            grid_search_weights(&[m], &labels, &WeightGrid::default()).unwrap();
        assert_eq!(weights.alpha, vec![1.0]);
        assert_eq!(accuracy, 1.0);
    }

    #[test]
    fn perfect_model_dominates_with_one_hot_candidates() {
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let mats = vec![
            random_matrix("H0", 12, 3, 9),
            perfect_matrix("H1", &labels, 3),
            random_matrix("H2", 12, 3, 10),
        ];
        let grid = WeightGrid {
            values: vec![0.0, 1.0],
        };
        let (weights, accuracy) = grid_search_weights(&mats, &labels, &grid).unwrap();
        assert_eq!(accuracy, 1.0);
        // Tuning-set accuracy must dominate each individual model.
        for m in &mats {
            let own: Vec<usize> = m.rows.iter().map(|r| argmax(r)).collect();
            assert!(accuracy >= accuracy_score(&own, &labels).unwrap());
        }
        assert!(weights.alpha.iter().sum::<f64>() > 0.999);
    }

    #[test]
    fn grid_search_matches_independent_oracle() {
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let mats = vec![
            random_matrix("H0", 9, 3, 11),
            random_matrix("H1", 9, 3, 12),
            random_matrix("H2", 9, 3, 13),
        ];
        let grid = WeightGrid {
            values: vec![0.0, 0.5, 1.0],
        };
        let (weights, accuracy) = grid_search_weights(&mats, &labels, &grid).unwrap();
        let (oracle_alpha, oracle_acc) = oracle_search(&mats, &labels, &grid.values);
        assert_eq!(accuracy, oracle_acc);
        assert_eq!(weights.alpha, oracle_alpha);
    }

    #[test]
    fn hospital_order_does_not_change_best_accuracy() {
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let mats = vec![
            random_matrix("H0", 10, 2, 21),
            random_matrix("H1", 10, 2, 22),
            random_matrix("H2", 10, 2, 23),
        ];
        let grid = WeightGrid::from_step(0.5);
        let (_, acc) = grid_search_weights(&mats, &labels, &grid).unwrap();
        let swapped = vec![mats[2].clone(), mats[0].clone(), mats[1].clone()];
        let (_, acc_swapped) = grid_search_weights(&swapped, &labels, &grid).unwrap();
        assert_eq!(acc, acc_swapped);
    }

    #[test]
    fn default_grid_has_eleven_values() {
        let grid = WeightGrid::default();
        assert_eq!(grid.values.len(), 11);
        assert_eq!(grid.values[0], 0.0);
        assert_eq!(grid.values[10], 1.0);
        grid.validate().unwrap();
    }
}
