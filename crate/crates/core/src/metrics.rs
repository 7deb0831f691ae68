use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::model::{LabeledDataset, ModelSpec, ParameterVector, Task};

/// Fraction of rows whose thresholded prediction matches the label.
///
/// A predicted probability of exactly 0.5 counts as class 1.
pub fn evaluate_accuracy(spec: &ModelSpec, theta: &ParameterVector, data: &LabeledDataset) -> Result<f64> {
    if spec.task() != Task::BinaryClassification {
        return Err(McuError::invalid("accuracy needs a classification model; use evaluate_mse"));
    }
    if data.is_empty() {
        return Err(McuError::invalid("cannot evaluate accuracy on an empty dataset"));
    }
    let mut hits = 0usize;
    for (x, y) in data.rows() {
        let p = spec.predict(theta, x)?;
        let class = if p >= 0.5 { 1.0 } else { 0.0 };
        hits += (class == y) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mean squared error of the regression mean.
pub fn evaluate_mse(spec: &ModelSpec, theta: &ParameterVector, data: &LabeledDataset) -> Result<f64> {
    if spec.task() != Task::Regression {
        return Err(McuError::invalid("mse needs a regression model"));
    }
    if data.is_empty() {
        return Err(McuError::invalid("cannot evaluate mse on an empty dataset"));
    }
    let mut sum = 0.0;
    for (x, y) in data.rows() {
        let r = spec.predict(theta, x)? - y;
        sum += r * r;
    }
    Ok(sum / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    Erased,
    Clean,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Erased => "erased",
            Split::Clean => "clean",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = McuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "erased" => Ok(Split::Erased),
            "clean" => Ok(Split::Clean),
            _ => Err(McuError::invalid(format!("unknown split '{s}'"))),
        }
    }
}

/// Which model produced a metric. `Mcu` tags render as `mcu-a{alpha}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelTag {
    TrainedD,
    RetrainedDr,
    Mcu(f64),
    BifLike,
    Naive,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelTag::TrainedD => f.write_str("trained-D"),
            ModelTag::RetrainedDr => f.write_str("retrained-Dr"),
            ModelTag::Mcu(alpha) => write!(f, "mcu-a{alpha}"),
            ModelTag::BifLike => f.write_str("bif-like"),
            ModelTag::Naive => f.write_str("naive"),
        }
    }
}

/// One metrics row. For regression recipes `accuracy` holds the MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model_tag: String,
    pub split: Split,
    pub accuracy: f64,
    pub wall_time_seconds: f64,
    pub subset_id: Option<usize>,
}

impl MetricsRecord {
    pub fn new(tag: ModelTag, split: Split, accuracy: f64, wall_time_seconds: f64, subset_id: Option<usize>) -> Self {
        MetricsRecord { model_tag: tag.to_string(), split, accuracy, wall_time_seconds, subset_id }
    }
}

pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for r in records {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_json(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(records).map_err(|e| McuError::invalid(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> McuError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => McuError::Io(io),
        kind => McuError::invalid(format!("{kind:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureMap;

    fn spec() -> ModelSpec {
        ModelSpec::logistic(FeatureMap::Identity, 1.0).unwrap()
    }

    #[test]
    fn zero_theta_on_balanced_labels_is_one_half() {
        let ds = LabeledDataset::new(
            Task::BinaryClassification,
            1,
            vec![(vec![1.0], 1.0), (vec![-1.0], 0.0), (vec![3.0], 0.0), (vec![2.0], 1.0)],
        )
        .unwrap();
        let acc = evaluate_accuracy(&spec(), &ParameterVector::zeros(2), &ds).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn separable_set_is_perfect() {
        let ds = LabeledDataset::new(
            Task::BinaryClassification,
            1,
            vec![(vec![-2.0], 0.0), (vec![-1.0], 0.0), (vec![1.0], 1.0), (vec![2.0], 1.0)],
        )
        .unwrap();
        let theta = ParameterVector::new(vec![0.0, 5.0]).unwrap();
        assert_eq!(evaluate_accuracy(&spec(), &theta, &ds).unwrap(), 1.0);
    }

    #[test]
    fn regression_model_rejected_for_accuracy() {
        let reg = ModelSpec::linear(FeatureMap::Identity, 1.0, 1.0).unwrap();
        let ds = LabeledDataset::new(Task::Regression, 1, vec![(vec![0.0], 0.3)]).unwrap();
        assert!(evaluate_accuracy(&reg, &ParameterVector::zeros(2), &ds).is_err());
        assert!((evaluate_mse(&reg, &ParameterVector::zeros(2), &ds).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn tags_render() {
        assert_eq!(ModelTag::Mcu(0.1).to_string(), "mcu-a0.1");
        assert_eq!(ModelTag::Mcu(1.0).to_string(), "mcu-a1");
        assert_eq!(ModelTag::RetrainedDr.to_string(), "retrained-Dr");
    }

    #[test]
    fn csv_column_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let recs = vec![
            MetricsRecord::new(ModelTag::TrainedD, Split::Train, 0.75, 0.5, None),
            MetricsRecord::new(ModelTag::Mcu(0.1), Split::Erased, 0.5, 0.01, Some(3)),
        ];
        write_metrics_csv(&recs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("model_tag,split,accuracy,wall_time_seconds,subset_id"));
        assert_eq!(lines.next(), Some("trained-D,train,0.75,0.5,"));
        assert_eq!(lines.next(), Some("mcu-a0.1,erased,0.5,0.01,3"));
    }
}
