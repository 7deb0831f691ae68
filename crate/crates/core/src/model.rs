//! Probabilistic models shared by sampling, training and unlearning.
//!
//! Two likelihood families are supported, logistic regression for binary
//! labels and linear regression with Gaussian noise, each with an independent
//! zero-mean Gaussian prior on every parameter.
//!
//! Parameter layout is the same for both feature maps: entry 0 is the
//! constant term, followed by one coefficient per expanded feature. With the
//! identity map that is `(bias, w_1, .., w_d)`; with a polynomial map of
//! degree `k` on a scalar input it is `(a_0, a_1, .., a_k)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{McuError, Result};

/// A point in parameter space. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(McuError::invalid("parameter vector must have at least one entry"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(McuError::invalid(format!(
                "parameter entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(ParameterVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter dimension must be positive");
        ParameterVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance to another vector of the same dimension.
    pub fn distance(&self, other: &ParameterVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = McuError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParameterVector::new(values)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Vec<f64> {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    BinaryClassification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::BinaryClassification => f.write_str("binary-classification"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

/// Ordered `(features, label)` rows with a fixed feature dimension.
///
/// Every row carries a stable id. Datasets built directly number rows
/// `0..n`; subsets keep the ids of the rows they were taken from, so an
/// erased subset can always be traced back to its source rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    ids: Vec<usize>,
    feature_dim: usize,
    task: Task,
    feature_names: Vec<String>,
    label_name: String,
}

fn default_feature_names(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("x{j}")).collect()
}

impl LabeledDataset {
    pub fn empty(task: Task, feature_dim: usize) -> Result<Self> {
        Self::from_parts(task, feature_dim, Vec::new(), Vec::new())
    }

    pub fn new<I>(task: Task, feature_dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<f64>, f64)>,
    {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, (x, y)) in rows.into_iter().enumerate() {
            if x.len() != feature_dim {
                return Err(McuError::invalid(format!(
                    "row {i} has {} features, expected {feature_dim}",
                    x.len()
                )));
            }
            features.extend_from_slice(&x);
            labels.push(y);
        }
        Self::from_parts(task, feature_dim, features, labels)
    }

    /// Builds a dataset from a row-major feature buffer.
    pub fn from_parts(
        task: Task,
        feature_dim: usize,
        features: Vec<f64>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        let n = labels.len();
        let ids = (0..n).collect();
        Self::from_parts_with_ids(task, feature_dim, features, labels, ids)
    }

    fn from_parts_with_ids(
        task: Task,
        feature_dim: usize,
        features: Vec<f64>,
        labels: Vec<f64>,
        ids: Vec<usize>,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(McuError::invalid("feature dimension must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(McuError::invalid(format!(
                "feature buffer holds {} values, expected {} rows x {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(k) = features.iter().position(|v| !v.is_finite()) {
            return Err(McuError::data(format!(
                "row {} feature {} is not finite",
                k / feature_dim,
                k % feature_dim
            )));
        }
        for (i, &y) in labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(McuError::data(format!("row {i} label is not finite")));
            }
            if task == Task::BinaryClassification && y != 0.0 && y != 1.0 {
                return Err(McuError::data(format!(
                    "row {i} label {y} is not 0 or 1 for binary classification"
                )));
            }
        }
        Ok(LabeledDataset {
            features,
            labels,
            ids,
            feature_dim,
            task,
            feature_names: default_feature_names(feature_dim),
            label_name: "label".to_string(),
        })
    }

    pub fn with_names(mut self, feature_names: Vec<String>, label_name: String) -> Result<Self> {
        if feature_names.len() != self.feature_dim {
            return Err(McuError::invalid(format!(
                "{} feature names given for {} features",
                feature_names.len(),
                self.feature_dim
            )));
        }
        self.feature_names = feature_names;
        self.label_name = label_name;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (&[f64], f64)> + '_ {
        self.features
            .chunks_exact(self.feature_dim)
            .zip(self.labels.iter().copied())
    }

    fn check_positions(&self, positions: &[usize]) -> Result<()> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(McuError::invalid(format!(
                "row index {p} out of range for dataset of {} rows",
                self.len()
            )));
        }
        Ok(())
    }

    fn take(&self, positions: impl Iterator<Item = usize>) -> Self {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for p in positions {
            features.extend_from_slice(self.features(p));
            labels.push(self.labels[p]);
            ids.push(self.ids[p]);
        }
        LabeledDataset {
            features,
            labels,
            ids,
            feature_dim: self.feature_dim,
            task: self.task,
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
        }
    }

    /// Rows at the given positions, in the order given.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        self.check_positions(positions)?;
        Ok(self.take(positions.iter().copied()))
    }

    /// All rows not listed, in ascending position order.
    pub fn complement(&self, positions: &[usize]) -> Result<Self> {
        self.check_positions(positions)?;
        let mut drop = vec![false; self.len()];
        for &p in positions {
            drop[p] = true;
        }
        Ok(self.take((0..self.len()).filter(|&p| !drop[p])))
    }

    /// Splits into `(remaining, erased)`.
    pub fn partition(&self, erased: &[usize]) -> Result<(Self, Self)> {
        Ok((self.complement(erased)?, self.subset(erased)?))
    }

    /// Copy with the labels at `positions` replaced by `1 - y`.
    pub fn with_flipped_labels(&self, positions: &[usize]) -> Result<Self> {
        if self.task != Task::BinaryClassification {
            return Err(McuError::invalid("label flipping requires a classification dataset"));
        }
        self.check_positions(positions)?;
        let mut out = self.clone();
        for &p in positions {
            out.labels[p] = 1.0 - out.labels[p];
        }
        Ok(out)
    }

    /// Copy with every feature column standardised to zero mean and unit
    /// variance using the supplied per-column `(mean, std)` pairs.
    pub fn standardized_with(&self, stats: &[(f64, f64)]) -> Result<Self> {
        if stats.len() != self.feature_dim {
            return Err(McuError::invalid("standardisation stats do not match feature dimension"));
        }
        let mut out = self.clone();
        for row in out.features.chunks_exact_mut(self.feature_dim) {
            for (v, &(mean, std)) in row.iter_mut().zip(stats) {
                *v = (*v - mean) / std;
            }
        }
        Ok(out)
    }

    /// Per-column mean and (population) standard deviation. Constant
    /// columns get a standard deviation of 1 so standardising leaves them
    /// centred rather than producing NaN.
    pub fn column_stats(&self) -> Vec<(f64, f64)> {
        let n = self.len().max(1) as f64;
        (0..self.feature_dim)
            .map(|j| {
                let mean = self.rows().map(|(x, _)| x[j]).sum::<f64>() / n;
                let var = self.rows().map(|(x, _)| (x[j] - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                (mean, if std > 0.0 { std } else { 1.0 })
            })
            .collect()
    }

    /// Serialises as CSV: one header line, then one line per row with the
    /// features followed by the label. Reals use Rust's shortest
    /// round-trip formatting, so parsing the output recovers every value
    /// exactly. This byte string is what [`LabeledDataset::digest`] hashes.
    pub fn canonical_csv(&self) -> String {
        let mut out = String::new();
        for name in &self.feature_names {
            out.push_str(name);
            out.push(',');
        }
        out.push_str(&self.label_name);
        out.push('\n');
        for (x, y) in self.rows() {
            for v in x {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&y.to_string());
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of [`LabeledDataset::canonical_csv`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_csv().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LogisticRegression,
    LinearRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FeatureMap {
    /// Raw features plus a leading bias term.
    Identity,
    /// `(1, x, x^2, .., x^degree)` of a scalar input.
    Polynomial { degree: usize },
}

/// Prior and likelihood family. The prior mean is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub feature_map: FeatureMap,
    pub prior_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic function evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(z))`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

const LARGEST_BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

impl ModelSpec {
    pub fn logistic(feature_map: FeatureMap, prior_variance: f64) -> Result<Self> {
        let spec = ModelSpec {
            family: Family::LogisticRegression,
            feature_map,
            prior_variance,
            noise_variance: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(feature_map: FeatureMap, prior_variance: f64, noise_variance: f64) -> Result<Self> {
        let spec = ModelSpec {
            family: Family::LinearRegression,
            feature_map,
            prior_variance,
            noise_variance: Some(noise_variance),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(McuError::invalid(format!(
                "prior variance must be positive and finite, got {}",
                self.prior_variance
            )));
        }
        if let FeatureMap::Polynomial { degree } = self.feature_map {
            if degree == 0 {
                return Err(McuError::invalid("polynomial degree must be positive"));
            }
        }
        match (self.family, self.noise_variance) {
            (Family::LinearRegression, Some(v)) if v > 0.0 && v.is_finite() => Ok(()),
            (Family::LinearRegression, v) => Err(McuError::invalid(format!(
                "linear regression needs a positive noise variance, got {v:?}"
            ))),
            (Family::LogisticRegression, _) => Ok(()),
        }
    }

    pub fn task(&self) -> Task {
        match self.family {
            Family::LogisticRegression => Task::BinaryClassification,
            Family::LinearRegression => Task::Regression,
        }
    }

    /// Parameter dimension implied by this spec for inputs of `feature_dim`.
    pub fn param_dim(&self, feature_dim: usize) -> Result<usize> {
        match self.feature_map {
            FeatureMap::Identity => Ok(feature_dim + 1),
            FeatureMap::Polynomial { degree } if feature_dim == 1 => Ok(degree + 1),
            FeatureMap::Polynomial { .. } => Err(McuError::invalid(format!(
                "polynomial feature map needs scalar inputs, got feature dimension {feature_dim}"
            ))),
        }
    }

    fn noise_var(&self) -> f64 {
        self.noise_variance.unwrap_or(1.0)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let ok = match self.feature_map {
            FeatureMap::Identity => !theta.is_empty(),
            FeatureMap::Polynomial { degree } => theta.len() == degree + 1,
        };
        if ok {
            Ok(())
        } else {
            Err(McuError::invalid(format!(
                "parameter dimension {} is inconsistent with feature map {:?}",
                theta.len(),
                self.feature_map
            )))
        }
    }

    fn check_data(&self, theta: &[f64], data: &LabeledDataset) -> Result<()> {
        let expected = self.param_dim(data.feature_dim())?;
        if theta.len() != expected {
            return Err(McuError::invalid(format!(
                "parameter dimension {} does not match {expected} implied by feature dimension {}",
                theta.len(),
                data.feature_dim()
            )));
        }
        if self.family == Family::LogisticRegression && data.task() != Task::BinaryClassification
        {
            if let Some((i, y)) = data
                .labels()
                .iter()
                .enumerate()
                .find(|(_, &y)| y != 0.0 && y != 1.0)
            {
                return Err(McuError::data(format!(
                    "row {i} label {y} is not 0 or 1 for logistic regression"
                )));
            }
        }
        Ok(())
    }

    /// Dot product of `theta` with the expanded features of `x`.
    /// Dimensions are assumed checked.
    #[inline]
    fn linear_predictor(&self, theta: &[f64], x: &[f64]) -> f64 {
        match self.feature_map {
            FeatureMap::Identity => theta[1..]
                .iter()
                .zip(x)
                .fold(theta[0], |z, (w, xi)| z + w * xi),
            FeatureMap::Polynomial { .. } => {
                let x = x[0];
                theta.iter().rev().fold(0.0, |acc, a| acc * x + a)
            }
        }
    }

    /// Writes the expanded feature row of `x` into `out` (length = param dim).
    fn expand_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        match self.feature_map {
            FeatureMap::Identity => out[1..].copy_from_slice(x),
            FeatureMap::Polynomial { .. } => {
                for j in 1..out.len() {
                    out[j] = out[j - 1] * x[0];
                }
            }
        }
    }

    #[inline]
    fn log_likelihood_datum(&self, z: f64, y: f64) -> f64 {
        match self.family {
            Family::LogisticRegression => y * z - softplus(z),
            Family::LinearRegression => {
                let v = self.noise_var();
                let r = y - z;
                -0.5 * (2.0 * PI * v).ln() - r * r / (2.0 * v)
            }
        }
    }

    /// `sum_j log N(theta_j; 0, prior_variance)`.
    pub fn log_prior(&self, theta: &ParameterVector) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.log_prior_unchecked(theta))
    }

    fn log_prior_unchecked(&self, theta: &[f64]) -> f64 {
        let v = self.prior_variance;
        let norm = -0.5 * (2.0 * PI * v).ln();
        theta.iter().map(|t| norm - t * t / (2.0 * v)).sum()
    }

    /// Sum of per-row log-likelihoods, accumulated in ascending row order.
    pub fn log_likelihood(&self, theta: &ParameterVector, data: &LabeledDataset) -> Result<f64> {
        self.check_data(theta, data)?;
        Ok(self.log_likelihood_unchecked(theta, data))
    }

    pub(crate) fn log_likelihood_unchecked(&self, theta: &[f64], data: &LabeledDataset) -> f64 {
        let mut total = 0.0;
        for (x, y) in data.rows() {
            total += self.log_likelihood_datum(self.linear_predictor(theta, x), y);
        }
        total
    }

    /// `log_prior + log_likelihood`, the unnormalised log posterior.
    pub fn log_joint(&self, theta: &ParameterVector, data: &LabeledDataset) -> Result<f64> {
        self.check_data(theta, data)?;
        Ok(self.log_joint_unchecked(theta, data))
    }

    pub(crate) fn log_joint_unchecked(&self, theta: &[f64], data: &LabeledDataset) -> f64 {
        self.log_prior_unchecked(theta) + self.log_likelihood_unchecked(theta, data)
    }

    /// `P(y = 1 | x)` for logistic models, the predictive mean for linear.
    ///
    /// Logistic outputs are clamped to the open interval
    /// `[f64::MIN_POSITIVE, 1 - 2^-53]`, so they never round to exactly 0 or 1.
    pub fn predict(&self, theta: &ParameterVector, x: &[f64]) -> Result<f64> {
        let expected = self.param_dim(x.len())?;
        if theta.dim() != expected {
            return Err(McuError::invalid(format!(
                "input of {} features needs {expected} parameters, got {}",
                x.len(),
                theta.dim()
            )));
        }
        let z = self.linear_predictor(theta, x);
        Ok(match self.family {
            Family::LogisticRegression => sigmoid(z).clamp(f64::MIN_POSITIVE, LARGEST_BELOW_ONE),
            Family::LinearRegression => z,
        })
    }

    /// Analytic gradient of `log_joint` with respect to `theta`.
    pub fn grad_log_joint(&self, theta: &ParameterVector, data: &LabeledDataset) -> Result<ParameterVector> {
        self.check_data(theta, data)?;
        let mut grad: Vec<f64> = theta.iter().map(|t| -t / self.prior_variance).collect();
        self.accumulate_likelihood_grad(theta, data, &mut grad);
        ParameterVector::new(grad)
            .map_err(|_| McuError::Numerical("gradient is not finite".to_string()))
    }

    /// Gradient of the log-likelihood alone (no prior term).
    pub fn grad_log_likelihood(&self, theta: &ParameterVector, data: &LabeledDataset) -> Result<Vec<f64>> {
        self.check_data(theta, data)?;
        let mut grad = vec![0.0; theta.dim()];
        self.accumulate_likelihood_grad(theta, data, &mut grad);
        Ok(grad)
    }

    fn accumulate_likelihood_grad(&self, theta: &[f64], data: &LabeledDataset, grad: &mut [f64]) {
        let mut phi = vec![0.0; theta.len()];
        for (x, y) in data.rows() {
            let z = self.linear_predictor(theta, x);
            let residual = match self.family {
                Family::LogisticRegression => y - sigmoid(z),
                Family::LinearRegression => (y - z) / self.noise_var(),
            };
            self.expand_into(x, &mut phi);
            for (g, p) in grad.iter_mut().zip(&phi) {
                *g += residual * p;
            }
        }
    }

    /// Hessian of the negative log joint, `sum_i c_i phi_i phi_i^T + I / prior_variance`.
    pub fn neg_log_joint_hessian(&self, theta: &ParameterVector, data: &LabeledDataset) -> Result<DMatrix<f64>> {
        self.check_data(theta, data)?;
        let d = theta.dim();
        let mut h = DMatrix::<f64>::identity(d, d) / self.prior_variance;
        let mut phi = vec![0.0; d];
        for (x, _) in data.rows() {
            let c = match self.family {
                Family::LogisticRegression => {
                    let p = sigmoid(self.linear_predictor(theta, x));
                    p * (1.0 - p)
                }
                Family::LinearRegression => 1.0 / self.noise_var(),
            };
            self.expand_into(x, &mut phi);
            for a in 0..d {
                let ca = c * phi[a];
                for b in a..d {
                    h[(a, b)] += ca * phi[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        Ok(h)
    }
}
