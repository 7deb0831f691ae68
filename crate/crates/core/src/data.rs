//! CSV ingestion.
//!
//! Files are UTF-8 with a header row. One column holds the label; the
//! feature columns are either listed explicitly or taken to be every other
//! column in file order. Rows are numbered from 0 in error messages, which
//! matches the stable ids the rows receive.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::model::{LabeledDataset, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: String,
    /// `None` selects every non-label column.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    pub task: Task,
}

impl CsvSchema {
    pub fn classification(label: &str) -> Self {
        CsvSchema { label: label.to_string(), features: None, task: Task::BinaryClassification }
    }

    pub fn regression(label: &str) -> Self {
        CsvSchema { label: label.to_string(), features: None, task: Task::Regression }
    }
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let file = File::open(path)?;
    ingest_csv_reader(file, schema)
}

pub fn ingest_csv_reader<R: Read>(source: R, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| McuError::Schema(format!("column '{name}' not found in header")))
    };
    let label_col = find(&schema.label)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(names) => names.clone(),
        None => headers.iter().filter(|h| *h != schema.label).map(str::to_string).collect(),
    };
    if feature_names.is_empty() {
        return Err(McuError::Schema("no feature columns".into()));
    }
    let feature_cols = feature_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let dim = feature_cols.len();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| McuError::Parse {
                row,
                column: headers[col].to_string(),
                message: format!("'{raw}' is not a number"),
            })
        };
        for &c in &feature_cols {
            features.push(cell(c)?);
        }
        labels.push(cell(label_col)?);
    }
    LabeledDataset::from_parts(schema.task, dim, features, labels)?.with_names(feature_names, schema.label.clone())
}

/// Writes the dataset in the same layout [`ingest_csv`] reads, with the
/// label as the last column.
pub fn write_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    std::fs::write(path, data.canonical_csv())?;
    Ok(())
}

fn csv_error(e: csv::Error) -> McuError {
    let row = e.position().map_or(0, |p| p.record().saturating_sub(1) as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => McuError::Io(io),
        kind => McuError::Parse { row, column: String::new(), message: format!("{kind:?}") },
    }
}
