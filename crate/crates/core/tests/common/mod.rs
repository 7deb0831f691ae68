#![allow(dead_code)]

use mcu_core::{FeatureMap, LabeledDataset, ModelSpec, Task};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Design row for a feature map, written out independently of the library.
pub fn design_row(map: &FeatureMap, x: &[f64]) -> Vec<f64> {
    match map {
        FeatureMap::Identity => std::iter::once(1.0).chain(x.iter().copied()).collect(),
        FeatureMap::Polynomial { degree } => (0..=*degree).map(|k| x[0].powi(k as i32)).collect(),
    }
}

/// Closed-form Gaussian posterior of Bayesian linear regression with a
/// zero-mean isotropic prior: returns (mean, covariance).
pub fn conjugate_posterior(spec: &ModelSpec, data: &LabeledDataset) -> (DVector<f64>, DMatrix<f64>) {
    let noise = spec.noise_variance.expect("linear model");
    let d = spec.param_dim(data.feature_dim()).unwrap();
    let mut precision = DMatrix::identity(d, d) / spec.prior_variance;
    let mut rhs = DVector::zeros(d);
    for (x, y) in data.rows() {
        let phi = DVector::from_vec(design_row(&spec.feature_map, x));
        precision += &phi * phi.transpose() / noise;
        rhs += &phi * (y / noise);
    }
    let chol = precision.cholesky().expect("posterior precision is positive definite");
    (chol.solve(&rhs), chol.inverse())
}

pub fn random_dataset(task: Task, n: usize, feature_dim: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..feature_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            let y = match task {
                Task::BinaryClassification => rng.random_range(0..2) as f64,
                Task::Regression => rng.random_range(-2.0..2.0),
            };
            (x, y)
        })
        .collect();
    LabeledDataset::new(task, feature_dim, rows).unwrap()
}

/// Plain `exp(z) / (1 + exp(z))`, valid wherever `exp(z)` is finite.
pub fn naive_sigmoid(z: f64) -> f64 {
    z.exp() / (1.0 + z.exp())
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
