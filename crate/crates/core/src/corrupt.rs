//! Label-flipping corruption around a random anchor row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::model::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborMetric {
    /// Euclidean distance on the features as given.
    #[default]
    Raw,
    /// Euclidean distance after z-scoring each column.
    Standardized,
}

/// Positions of the `k` rows nearest to `anchor` (the anchor itself first),
/// ordered by distance with ties broken by position.
pub fn nearest_neighbors(data: &LabeledDataset, anchor: usize, k: usize, metric: NeighborMetric) -> Result<Vec<usize>> {
    if anchor >= data.len() {
        return Err(McuError::invalid(format!("anchor {anchor} out of range for {} rows", data.len())));
    }
    if k == 0 || k > data.len() {
        return Err(McuError::invalid(format!("cannot take {k} neighbours from {} rows", data.len())));
    }
    let stats = match metric {
        NeighborMetric::Raw => vec![(0.0, 1.0); data.feature_dim()],
        NeighborMetric::Standardized => data.column_stats(),
    };
    let a = data.features(anchor);
    let mut keyed: Vec<(f64, bool, usize)> = (0..data.len())
        .map(|i| {
            let d2: f64 = data
                .features(i)
                .iter()
                .zip(a)
                .zip(&stats)
                .map(|((x, y), (_, s))| ((x - y) / s).powi(2))
                .sum();
            (d2, i != anchor, i)
        })
        .collect();
    keyed.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    Ok(keyed.into_iter().take(k).map(|(_, _, i)| i).collect())
}

/// Picks a random anchor, flips the labels of its `k` nearest neighbours
/// (anchor included) and returns the corrupted data with their positions.
pub fn make_corrupt_dataset(clean: &LabeledDataset, k: usize, seed: u64) -> Result<(LabeledDataset, Vec<usize>)> {
    make_corrupt_dataset_with(clean, k, seed, NeighborMetric::Raw)
}

pub fn make_corrupt_dataset_with(
    clean: &LabeledDataset,
    k: usize,
    seed: u64,
    metric: NeighborMetric,
) -> Result<(LabeledDataset, Vec<usize>)> {
    if k == 0 || k >= clean.len() {
        return Err(McuError::invalid(format!(
            "k must satisfy 0 < k < {} (got {k})",
            clean.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = rng.random_range(0..clean.len());
    let erased = nearest_neighbors(clean, anchor, k, metric)?;
    let corrupt = clean.with_flipped_labels(&erased)?;
    Ok((corrupt, erased))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;

    fn line(n: usize) -> LabeledDataset {
        LabeledDataset::new(
            Task::BinaryClassification,
            1,
            (0..n).map(|i| (vec![i as f64], (i % 2) as f64)),
        )
        .unwrap()
    }

    #[test]
    fn k_one_flips_only_the_anchor() {
        let clean = line(20);
        let (corrupt, erased) = make_corrupt_dataset(&clean, 1, 9).unwrap();
        assert_eq!(erased.len(), 1);
        let changed: Vec<usize> = (0..20).filter(|&i| corrupt.label(i) != clean.label(i)).collect();
        assert_eq!(changed, erased);
    }

    #[test]
    fn neighbours_on_a_line_are_contiguous() {
        let ds = line(10);
        let nn = nearest_neighbors(&ds, 4, 3, NeighborMetric::Raw).unwrap();
        assert_eq!(nn, vec![4, 3, 5]);
    }

    #[test]
    fn k_must_be_smaller_than_the_dataset() {
        let clean = line(5);
        assert!(make_corrupt_dataset(&clean, 5, 0).is_err());
        assert!(make_corrupt_dataset(&clean, 0, 0).is_err());
    }

    #[test]
    fn duplicate_rows_keep_anchor_first() {
        let ds = LabeledDataset::new(
            Task::BinaryClassification,
            1,
            vec![(vec![1.0], 0.0), (vec![1.0], 1.0), (vec![5.0], 1.0)],
        )
        .unwrap();
        assert_eq!(nearest_neighbors(&ds, 1, 2, NeighborMetric::Raw).unwrap(), vec![1, 0]);
    }
}
