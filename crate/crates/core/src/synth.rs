//! Seeded synthetic datasets and toy targets.
//!
//! Every generator draws from its own `ChaCha8Rng::seed_from_u64(seed)`
//! stream, so output is a pure function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::model::{sigmoid, FeatureMap, LabeledDataset, ModelSpec, Task};
use crate::sampler::LogTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// 50-point quartic regression with the 15 smallest-x points erased.
    LinregCluster,
    /// 50-point quartic-logit classification with an 8-point erased cluster.
    BinclassCluster,
    /// Two isotropic Gaussians standing in for full and remaining posteriors.
    TwoGaussian,
    /// Proposal/target pair for a 1-d importance-sampling check.
    Impsamp,
}

impl std::str::FromStr for SynthKind {
    type Err = McuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linreg-cluster" => Ok(SynthKind::LinregCluster),
            "binclass-cluster" => Ok(SynthKind::BinclassCluster),
            "two-gaussian" => Ok(SynthKind::TwoGaussian),
            "impsamp" => Ok(SynthKind::Impsamp),
            other => Err(McuError::invalid(format!(
                "unknown synthetic kind '{other}' (expected linreg-cluster, binclass-cluster, two-gaussian or impsamp)"
            ))),
        }
    }
}

/// A generated training set, the erased positions within it and the model
/// it is meant to be fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub data: LabeledDataset,
    pub erased: Vec<usize>,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Synthetic {
    Problem(SyntheticProblem),
    TwoGaussian(TwoGaussian),
    Impsamp(ImpsampPair),
}

pub fn generate_synthetic(kind: SynthKind, seed: u64) -> Result<Synthetic> {
    Ok(match kind {
        SynthKind::LinregCluster => Synthetic::Problem(linreg_cluster(seed)?),
        SynthKind::BinclassCluster => Synthetic::Problem(binclass_cluster(seed)?),
        SynthKind::TwoGaussian => Synthetic::TwoGaussian(TwoGaussian::default()),
        SynthKind::Impsamp => Synthetic::Impsamp(ImpsampPair::default()),
    })
}

/// Coefficients of the quartic the regression targets are drawn around.
pub const LINREG_TRUTH: [f64; 5] = [0.2, 1.5, -4.0, 1.0, 1.5];
pub const LINREG_NOISE_VARIANCE: f64 = 0.01;
pub const LINREG_PRIOR_VARIANCE: f64 = 4.0;

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// 35 points with `x ~ U(0.2, 1)` followed by 15 erased points with
/// `x ~ U(0, 0.2)`; `y = truth(x) + N(0, 0.01)`.
pub fn linreg_cluster(seed: u64) -> Result<SyntheticProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, LINREG_NOISE_VARIANCE.sqrt()).expect("valid std");
    let mut rows = Vec::with_capacity(50);
    for i in 0..50 {
        let x = if i < 35 { rng.random_range(0.2..1.0) } else { rng.random_range(0.0..0.2) };
        let y = horner(&LINREG_TRUTH, x) + noise.sample(&mut rng);
        rows.push((vec![x], y));
    }
    let data = LabeledDataset::new(Task::Regression, 1, rows)?.with_names(vec!["x".into()], "y".into())?;
    let spec = ModelSpec::linear(FeatureMap::Polynomial { degree: 4 }, LINREG_PRIOR_VARIANCE, LINREG_NOISE_VARIANCE)?;
    Ok(SyntheticProblem { data, erased: (35..50).collect(), spec })
}

pub const BINCLASS_PRIOR_VARIANCE: f64 = 5.0;

/// 42 points with `x ~ U(0, 1)` and labels from `sigmoid(6x - 3)`, then an
/// erased cluster of 8 points in `[0.7, 1.0]` all labelled 0.
pub fn binclass_cluster(seed: u64) -> Result<SyntheticProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(50);
    for _ in 0..42 {
        let x: f64 = rng.random_range(0.0..1.0);
        let u: f64 = rng.random();
        rows.push((vec![x], if u < sigmoid(6.0 * x - 3.0) { 1.0 } else { 0.0 }));
    }
    for _ in 0..8 {
        rows.push((vec![rng.random_range(0.7..1.0)], 0.0));
    }
    let data =
        LabeledDataset::new(Task::BinaryClassification, 1, rows)?.with_names(vec!["x".into()], "y".into())?;
    let spec = ModelSpec::logistic(FeatureMap::Polynomial { degree: 4 }, BINCLASS_PRIOR_VARIANCE)?;
    Ok(SyntheticProblem { data, erased: (42..50).collect(), spec })
}

/// Isotropic Gaussian log density up to a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoGaussian {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl IsoGaussian {
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let v = self.std * self.std;
        -0.5 * theta.iter().zip(&self.mean).map(|(t, m)| (t - m).powi(2)).sum::<f64>() / v
    }
}

impl LogTarget for IsoGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        IsoGaussian::log_density(self, theta)
    }
}

/// `full` plays the role of the posterior on all data and `remaining` the
/// posterior after erasure. Candidates are sampled from `full`, `h` is its
/// log density and `g` the log density of `remaining`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGaussian {
    pub full: IsoGaussian,
    pub remaining: IsoGaussian,
}

impl Default for TwoGaussian {
    fn default() -> Self {
        TwoGaussian {
            full: IsoGaussian { mean: vec![2.0, 4.0], std: 1.0 },
            remaining: IsoGaussian { mean: vec![1.0, 1.0], std: 1.0 },
        }
    }
}

/// Samples from `proposal`, reweighted toward `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpsampPair {
    pub proposal_mean: f64,
    pub proposal_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Default for ImpsampPair {
    fn default() -> Self {
        ImpsampPair { proposal_mean: 1.0, proposal_std: 1.5, target_mean: 0.0, target_std: 1.0 }
    }
}

fn normal_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

impl ImpsampPair {
    pub fn draw_proposal(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                self.proposal_mean + self.proposal_std * z
            })
            .collect()
    }

    pub fn draw_target(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                self.target_mean + self.target_std * z
            })
            .collect()
    }

    /// `log p(x) - log q(x)`.
    pub fn log_ratio(&self, x: f64) -> f64 {
        normal_log_pdf(x, self.target_mean, self.target_std) - normal_log_pdf(x, self.proposal_mean, self.proposal_std)
    }
}

/// 768-row, 8-feature binary dataset laid out like the Pima diabetes table.
///
/// Columns are loosely matched to the real table's marginals; the label is
/// drawn from a logistic model of the z-scored columns.
pub fn diabetes_standin(seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["pregnancies", "glucose", "blood_pressure", "skin_thickness", "insulin", "bmi", "pedigree", "age"];
    let n = |m: f64, s: f64, r: &mut ChaCha8Rng| {
        let z: f64 = r.sample(StandardNormal);
        m + s * z
    };
    let mut rows = Vec::with_capacity(768);
    for _ in 0..768 {
        let age = (21.0 + (n(0.0, 1.0, &mut rng) * 0.6 + 2.3).exp()).min(81.0).round();
        let pregnancies = ((age - 21.0) / 6.0 + n(0.0, 2.0, &mut rng)).clamp(0.0, 17.0).round();
        let glucose = n(121.0, 30.0, &mut rng).clamp(44.0, 199.0).round();
        let bp = n(72.0, 12.0, &mut rng).clamp(24.0, 122.0).round();
        let bmi = (n(32.0, 7.0, &mut rng).clamp(18.0, 67.0) * 10.0).round() / 10.0;
        let skin = (0.9 * bmi + n(0.0, 8.0, &mut rng)).clamp(7.0, 99.0).round();
        let insulin = (glucose * 1.1 + n(0.0, 80.0, &mut rng)).clamp(14.0, 846.0).round();
        let pedigree = ((n(-0.9, 0.6, &mut rng)).exp() * 1000.0).round() / 1000.0;
        let logit = -0.75
            + 1.1 * (glucose - 121.0) / 30.0
            + 0.7 * (bmi - 32.0) / 7.0
            + 0.35 * (age - 33.0) / 11.0
            + 0.25 * (pregnancies - 3.8) / 3.4
            + 0.3 * (pedigree - 0.47) / 0.33
            - 0.1 * (bp - 72.0) / 12.0;
        let u: f64 = rng.random();
        let y = if u < sigmoid(logit) { 1.0 } else { 0.0 };
        rows.push((vec![pregnancies, glucose, bp, skin, insulin, bmi, pedigree, age], y));
    }
    LabeledDataset::new(Task::BinaryClassification, 8, rows)?
        .with_names(names.iter().map(|s| s.to_string()).collect(), "outcome".into())
}

/// Binary dataset with five z-scored features, shaped like a preprocessed
/// phishing-page feature table. Labels follow a logistic model with a
/// strong signal, so the classes are close to linearly separable.
pub fn phishing_standin(n: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["url_length", "num_dots", "domain_age", "link_ratio", "form_external"];
    let weights = [3.0, -2.0, 2.4, 1.6, -1.2];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let logit = 0.5 + x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
        let u: f64 = rng.random();
        rows.push((x, if u < sigmoid(logit) { 1.0 } else { 0.0 }));
    }
    LabeledDataset::new(Task::BinaryClassification, 5, rows)?
        .with_names(names.iter().map(|s| s.to_string()).collect(), "phishing".into())
}
