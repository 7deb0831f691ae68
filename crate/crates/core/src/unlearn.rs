//! Reweighting a stored candidate set after an erase request.
//!
//! Only the candidate set and the erased rows are read. For each candidate
//! `g = h - log p(D_e | theta)`, which is the unnormalised log posterior on
//! the remaining data, and the importance weight is proportional to
//! `exp(g - alpha * h)`.

use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::model::{LabeledDataset, ParameterVector};
use crate::store::CandidateSet;

/// ESS below this fraction of `M` triggers a warning.
pub const ESS_WARN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    MapCandidate,
    #[default]
    WeightedMean,
}

impl std::str::FromStr for Estimator {
    type Err = McuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map-candidate" => Ok(Estimator::MapCandidate),
            "weighted-mean" => Ok(Estimator::WeightedMean),
            other => Err(McuError::invalid(format!(
                "unknown estimator '{other}' (expected map-candidate or weighted-mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnResult {
    pub g_values: Vec<f64>,
    pub weights: Vec<f64>,
    pub map_index: usize,
    pub map_candidate: ParameterVector,
    pub weighted_mean: ParameterVector,
    /// Per-coordinate `sqrt(sum_i w_i^2 (theta_i - mean)^2)`.
    pub weighted_std_error: Vec<f64>,
    pub ess: f64,
    pub alpha: f64,
}

impl UnlearnResult {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn ess_fraction(&self) -> f64 {
        self.ess / self.weights.len() as f64
    }

    pub fn estimate(&self, estimator: Estimator) -> &ParameterVector {
        match estimator {
            Estimator::MapCandidate => &self.map_candidate,
            Estimator::WeightedMean => &self.weighted_mean,
        }
    }

    /// Serialisable summary. Per-candidate `g_values` and `weights` are
    /// dropped when there are more than `elide_above` candidates.
    pub fn report(&self, elide_above: usize) -> UnlearnReport {
        let keep = self.len() <= elide_above;
        let (g_min, g_max) = self
            .g_values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
        UnlearnReport {
            num_candidates: self.len(),
            alpha: self.alpha,
            map_index: self.map_index,
            map_candidate: self.map_candidate.to_vec(),
            weighted_mean: self.weighted_mean.to_vec(),
            weighted_std_error: self.weighted_std_error.clone(),
            ess: self.ess,
            ess_fraction: self.ess_fraction(),
            max_weight: self.weights.iter().copied().fold(0.0, f64::max),
            g_min,
            g_max,
            elided: !keep,
            g_values: keep.then(|| self.g_values.clone()),
            weights: keep.then(|| self.weights.clone()),
        }
    }
}

/// JSON form of an [`UnlearnResult`]; the schema is in `docs/FORMATS.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub num_candidates: usize,
    pub alpha: f64,
    pub map_index: usize,
    pub map_candidate: Vec<f64>,
    pub weighted_mean: Vec<f64>,
    pub weighted_std_error: Vec<f64>,
    pub ess: f64,
    pub ess_fraction: f64,
    pub max_weight: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub elided: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<Vec<f64>>,
}

fn check_erased_shape(set: &CandidateSet, erased: &LabeledDataset) -> Result<()> {
    let spec = set.spec();
    let dim = spec.param_dim(erased.feature_dim())?;
    if dim != set.dim() {
        return Err(McuError::invalid(format!(
            "erased data implies {dim} parameters but candidates have {}",
            set.dim()
        )));
    }
    // Runs the label checks once instead of per candidate.
    spec.log_likelihood(&set.candidates()[0], erased)?;
    Ok(())
}

/// `g_i = h_i - log p(D_e | theta_i)` for every candidate.
pub fn compute_g(set: &CandidateSet, erased: &LabeledDataset) -> Result<Vec<f64>> {
    check_erased_shape(set, erased)?;
    let spec = set.spec();
    Ok(set
        .candidates()
        .iter()
        .zip(set.h_values())
        .map(|(theta, &h)| h - spec.log_likelihood_unchecked(theta, erased))
        .collect())
}

/// Importance weights `∝ exp(g_i - alpha * h_i)`, normalised to sum to one.
pub fn compute_weights(set: &CandidateSet, g_values: &[f64]) -> Result<Vec<f64>> {
    if g_values.len() != set.len() {
        return Err(McuError::invalid(format!(
            "{} g values for {} candidates",
            g_values.len(),
            set.len()
        )));
    }
    if g_values.iter().any(|g| g.is_nan()) {
        return Err(McuError::invalid("g values contain NaN"));
    }
    let alpha = set.alpha();
    let log_w: Vec<f64> = g_values.iter().zip(set.h_values()).map(|(g, h)| g - alpha * h).collect();
    normalize_log_weights(&log_w)
}

/// Exponentiates and normalises log weights after subtracting their maximum.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if log_w.is_empty() {
        return Err(McuError::invalid("no weights to normalise"));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || log_w.iter().any(|w| w.is_nan()) {
        return Err(McuError::invalid("log weights contain NaN"));
    }
    if !max.is_finite() {
        return Err(McuError::Numerical(format!("largest log weight is {max}")));
    }
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    Ok(w)
}

/// `1 / sum w_i^2` for normalised weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Weighted mean and per-coordinate weighted standard error of `rows`.
pub fn weighted_moments<R: AsRef<[f64]>>(rows: &[R], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let mut mean = vec![0.0; dim];
    for (row, &w) in rows.iter().zip(weights) {
        for (m, x) in mean.iter_mut().zip(row.as_ref()) {
            *m += w * x;
        }
    }
    let mut se = vec![0.0; dim];
    for (row, &w) in rows.iter().zip(weights) {
        for ((s, x), m) in se.iter_mut().zip(row.as_ref()).zip(&mean) {
            let dev = w * (x - m);
            *s += dev * dev;
        }
    }
    for s in &mut se {
        *s = s.sqrt();
    }
    (mean, se)
}

pub fn unlearn(set: &CandidateSet, erased: &LabeledDataset) -> Result<UnlearnResult> {
    let g_values = compute_g(set, erased)?;
    let weights = compute_weights(set, &g_values)?;
    let map_index = argmax(&g_values);
    let (mean, weighted_std_error) = weighted_moments(set.candidates(), &weights);
    let ess = effective_sample_size(&weights);
    if ess < ESS_WARN_FRACTION * set.len() as f64 {
        log::warn!(
            "effective sample size {ess:.2} is below {:.0}% of {} candidates; consider a smaller alpha",
            ESS_WARN_FRACTION * 100.0,
            set.len()
        );
    }
    Ok(UnlearnResult {
        map_candidate: set.candidates()[map_index].clone(),
        weighted_mean: ParameterVector::new(mean)?,
        weighted_std_error,
        g_values,
        weights,
        map_index,
        ess,
        alpha: set.alpha(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureMap, ModelSpec, Task};
    use crate::store::Provenance;

    fn toy_set(h: Vec<f64>, alpha: f64) -> CandidateSet {
        let spec = ModelSpec::logistic(FeatureMap::Identity, 1.0).unwrap();
        let cands = (0..h.len())
            .map(|i| ParameterVector::new(vec![i as f64 * 0.1, -(i as f64) * 0.2]).unwrap())
            .collect();
        let prov = Provenance {
            seeds: vec![0],
            config_digest: String::new(),
            dataset_digest: String::new(),
            created_unix: 0,
        };
        CandidateSet::new(cands, h, alpha, spec, prov).unwrap()
    }

    #[test]
    fn two_candidate_normalisation() {
        let set = toy_set(vec![-1.0, -2.0], 1.0);
        let g = [-1.0, -2.0 + 3f64.ln()];
        let w = compute_weights(&set, &g).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15);
        assert!((w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_erase_gives_uniform_weights_and_plain_mean() {
        let set = toy_set(vec![-3.0, -1.0, -2.0, -1.0], 1.0);
        let erased = LabeledDataset::empty(Task::BinaryClassification, 1).unwrap();
        let res = unlearn(&set, &erased).unwrap();
        assert_eq!(res.g_values, set.h_values());
        assert!(res.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        assert_eq!(res.map_index, 1);
        let mean = set.mean();
        for (a, b) in res.weighted_mean.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((res.ess - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nan_g_rejected() {
        let set = toy_set(vec![-1.0, -2.0], 1.0);
        assert!(compute_weights(&set, &[f64::NAN, 0.0]).is_err());
        assert!(compute_weights(&set, &[0.0]).is_err());
    }

    #[test]
    fn huge_log_weight_spread_stays_normalised() {
        let w = normalize_log_weights(&[-1e6, 0.0, -700.0, -1e300]).unwrap();
        assert_eq!(w[1], 1.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let set = toy_set(vec![-1.0, -2.0], 1.0);
        let erased = LabeledDataset::empty(Task::BinaryClassification, 3).unwrap();
        assert!(matches!(unlearn(&set, &erased), Err(McuError::InvalidArgument(_))));
    }

    #[test]
    fn report_elides_large_vectors() {
        let set = toy_set(vec![-1.0, -2.0, -3.0], 0.5);
        let erased = LabeledDataset::empty(Task::BinaryClassification, 1).unwrap();
        let res = unlearn(&set, &erased).unwrap();
        let full = res.report(10);
        assert_eq!(full.weights.as_ref().map(Vec::len), Some(3));
        let short = res.report(2);
        assert!(short.elided && short.weights.is_none());
        let json = serde_json::to_string(&short).unwrap();
        assert!(!json.contains("\"weights\""));
        let back: UnlearnReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, short);
    }

    #[test]
    fn estimator_parsing() {
        assert_eq!("map-candidate".parse::<Estimator>().unwrap(), Estimator::MapCandidate);
        assert_eq!("weighted-mean".parse::<Estimator>().unwrap(), Estimator::WeightedMean);
        assert!("mean".parse::<Estimator>().is_err());
    }
}
