//! Accuracy shift caused by unlearning each of several training subsets.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::metrics::evaluate_accuracy;
use crate::model::LabeledDataset;
use crate::store::CandidateSet;
use crate::unlearn::{unlearn, Estimator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEntry {
    pub subset_id: String,
    pub subset_size: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub delta: f64,
    pub ess: f64,
}

/// First, second and third quartile (linear interpolation between order
/// statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quartiles { q1: at(0.25), median: at(0.5), q3: at(0.75), min: v[0], max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetInfluenceReport {
    /// Sorted by descending delta, ties by ascending `subset_id`.
    pub entries: Vec<InfluenceEntry>,
    pub eval_set_id: String,
    pub estimator: Estimator,
    pub delta_quartiles: Quartiles,
}

impl SubsetInfluenceReport {
    pub fn entry(&self, subset_id: &str) -> Option<&InfluenceEntry> {
        self.entries.iter().find(|e| e.subset_id == subset_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per subset: `subset_id,subset_size,accuracy_before,accuracy_after,delta,ess`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subset_id,subset_size,accuracy_before,accuracy_after,delta,ess\n");
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.subset_id, e.subset_size, e.accuracy_before, e.accuracy_after, e.delta, e.ess
            )
            .unwrap();
        }
        out
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json())?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }
}

/// Unlearns each subset in turn and records how accuracy on `eval_data`
/// moves relative to the model that has unlearned nothing.
///
/// Subsets may overlap; each one is treated as a separate erase request.
pub fn subset_influence(
    set: &CandidateSet,
    subsets: &[(String, LabeledDataset)],
    eval_data: &LabeledDataset,
    eval_set_id: &str,
    estimator: Estimator,
) -> Result<SubsetInfluenceReport> {
    if subsets.is_empty() {
        return Err(McuError::invalid("no subsets to explain"));
    }
    if eval_data.is_empty() {
        return Err(McuError::invalid("evaluation set is empty"));
    }
    let spec = set.spec();
    let nothing = LabeledDataset::empty(eval_data.task(), eval_data.feature_dim())?;
    let baseline = unlearn(set, &nothing)?;
    let accuracy_before = evaluate_accuracy(spec, baseline.estimate(estimator), eval_data)?;

    let mut entries = subsets
        .par_iter()
        .map(|(id, subset)| {
            let res = unlearn(set, subset)?;
            let accuracy_after = evaluate_accuracy(spec, res.estimate(estimator), eval_data)?;
            Ok(InfluenceEntry {
                subset_id: id.clone(),
                subset_size: subset.len(),
                accuracy_before,
                accuracy_after,
                delta: accuracy_after - accuracy_before,
                ess: res.ess,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| a.subset_id.cmp(&b.subset_id)));
    let deltas: Vec<f64> = entries.iter().map(|e| e.delta).collect();
    Ok(SubsetInfluenceReport {
        delta_quartiles: Quartiles::of(&deltas).expect("at least one subset"),
        entries,
        eval_set_id: eval_set_id.to_string(),
        estimator,
    })
}
