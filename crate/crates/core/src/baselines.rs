//! Reference procedures: MAP training, retraining on the remaining data,
//! the naive "reverse training" unlearner and a one-step influence-function
//! unlearner.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::model::{LabeledDataset, ModelSpec, ParameterVector};

/// Full-batch optimiser settings.
///
/// `learning_rate` is the initial step length tried by the line search
/// (1.0 is a full Newton step for `train_map`, a plain gradient step
/// multiplier for `naive_unlearn`). The optimiser is deterministic, so
/// `seed` only travels along for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    pub grad_tolerance: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 200,
            learning_rate: 1.0,
            grad_tolerance: 1e-8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(McuError::invalid("max_iters must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(McuError::invalid("learning_rate must be positive"));
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance <= 0.0 {
            return Err(McuError::invalid("grad_tolerance must be positive"));
        }
        Ok(())
    }
}

/// Result of [`train_map`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    pub theta: ParameterVector,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the log-joint gradient at `theta`.
    pub grad_norm: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `h x = rhs` for symmetric positive definite `h`, reporting the
/// smallest eigenvalue when `h` is not positive definite.
fn solve_spd(h: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(rhs);
    match h.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs).iter().copied().collect()),
        None => {
            let eig = SymmetricEigen::new(h);
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let sign = if min < 0.0 { "negative" } else { "zero" };
            Err(McuError::Numerical(format!(
                "Hessian is not positive definite: smallest eigenvalue {min:.3e} is {sign}"
            )))
        }
    }
}

/// Maximises `log p(D | theta) + log p(theta)` with damped Newton steps and
/// a backtracking (Armijo) line search, starting from the origin.
///
/// Returns the final iterate with `converged = false` if the gradient
/// tolerance is not reached within `max_iters` or the line search stalls at
/// machine precision.
pub fn train_map(spec: &ModelSpec, data: &LabeledDataset, cfg: &OptimizerConfig) -> Result<MapFit> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(McuError::invalid("cannot train on an empty dataset"));
    }
    let dim = spec.param_dim(data.feature_dim())?;
    let mut theta = ParameterVector::zeros(dim);
    let mut objective = spec.log_joint(&theta, data)?;
    if !objective.is_finite() {
        return Err(McuError::Divergence {
            message: "objective is not finite at the starting point".into(),
            last_finite: theta.into_inner(),
        });
    }

    let mut iterations = 0;
    loop {
        let grad = spec.grad_log_joint(&theta, data)?;
        let grad_norm = inf_norm(&grad);
        if grad_norm <= cfg.grad_tolerance {
            return Ok(MapFit { theta, converged: true, iterations, grad_norm });
        }
        if iterations == cfg.max_iters {
            return Ok(MapFit { theta, converged: false, iterations, grad_norm });
        }
        iterations += 1;

        let hessian = spec.neg_log_joint_hessian(&theta, data)?;
        let direction = solve_spd(hessian, &grad).unwrap_or_else(|_| grad.to_vec());
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();

        let mut step = cfg.learning_rate;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t + step * d).collect();
            if let Ok(cand) = ParameterVector::new(cand) {
                let value = spec.log_joint(&cand, data)?;
                if value.is_finite() && value >= objective + 1e-4 * step * slope {
                    accepted = Some((cand, value));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, value)) => {
                theta = cand;
                objective = value;
            }
            None => {
                return Ok(MapFit { theta, converged: false, iterations, grad_norm });
            }
        }
    }
}

pub(crate) fn check_erased(data: &LabeledDataset, erased: &[usize]) -> Result<()> {
    let mut seen = vec![false; data.len()];
    for &i in erased {
        if i >= data.len() {
            return Err(McuError::invalid(format!(
                "erased index {i} out of range for {} rows",
                data.len()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(McuError::invalid(format!("erased index {i} listed twice")));
        }
    }
    if erased.len() == data.len() {
        return Err(McuError::invalid("cannot erase the entire dataset"));
    }
    Ok(())
}

/// MAP training on `D` with the rows at `erased_indices` removed.
pub fn retrain(
    spec: &ModelSpec,
    data: &LabeledDataset,
    erased_indices: &[usize],
    cfg: &OptimizerConfig,
) -> Result<MapFit> {
    check_erased(data, erased_indices)?;
    let remaining = data.complement(erased_indices)?;
    train_map(spec, &remaining, cfg)
}

/// Gradient descent on the unnormalised `log p(theta | D_e)`.
///
/// This is the catastrophic "reverse the training" unlearner: it only
/// exists to be compared against. Returns the iterate after exactly
/// `iters` steps along with the objective before each step and after the
/// last. A step that would increase the objective is retried with half the
/// step size.
pub fn naive_unlearn_trace(
    spec: &ModelSpec,
    theta_start: &ParameterVector,
    erased: &LabeledDataset,
    iters: usize,
    cfg: &OptimizerConfig,
) -> Result<(ParameterVector, Vec<f64>)> {
    cfg.validate()?;
    let mut theta = theta_start.clone();
    let mut objective = spec.log_joint(&theta, erased)?;
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(objective);
    let mut rate = cfg.learning_rate;
    for it in 0..iters {
        let grad = spec.grad_log_joint(&theta, erased).map_err(|_| McuError::Divergence {
            message: format!("gradient overflowed at iteration {it}"),
            last_finite: theta.to_vec(),
        })?;
        let mut stepped = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(grad.iter()).map(|(t, g)| t - rate * g).collect();
            let Ok(cand) = ParameterVector::new(cand) else {
                return Err(McuError::Divergence {
                    message: format!("iterate became non-finite at iteration {it}"),
                    last_finite: theta.into_inner(),
                });
            };
            let value = spec.log_joint(&cand, erased)?;
            if !value.is_finite() {
                return Err(McuError::Divergence {
                    message: format!("objective became non-finite at iteration {it}"),
                    last_finite: theta.into_inner(),
                });
            }
            if value <= objective {
                stepped = Some((cand, value));
                break;
            }
            rate *= 0.5;
        }
        let (cand, value) = stepped.ok_or_else(|| {
            McuError::Numerical(format!("no descent step found at iteration {it}"))
        })?;
        theta = cand;
        objective = value;
        trace.push(objective);
    }
    Ok((theta, trace))
}

pub fn naive_unlearn(
    spec: &ModelSpec,
    theta_start: &ParameterVector,
    erased: &LabeledDataset,
    iters: usize,
    cfg: &OptimizerConfig,
) -> Result<ParameterVector> {
    naive_unlearn_trace(spec, theta_start, erased, iters, cfg).map(|(theta, _)| theta)
}

/// One Newton step on the remaining-data objective from the full-data MAP:
/// `theta' = theta_map - H_r^{-1} sum_{e in D_e} grad log p(e | theta_map)`,
/// where `H_r` is the Hessian of the negative log joint over `D_r` at
/// `theta_map`. The step is exact when the objective is quadratic.
///
/// Unlike the MCMC unlearner this reads the whole training set.
pub fn influence_unlearn(
    spec: &ModelSpec,
    theta_map: &ParameterVector,
    data: &LabeledDataset,
    erased_indices: &[usize],
) -> Result<ParameterVector> {
    check_erased(data, erased_indices)?;
    if erased_indices.is_empty() {
        return Ok(theta_map.clone());
    }
    let (remaining, erased) = data.partition(erased_indices)?;
    let hessian = spec.neg_log_joint_hessian(theta_map, &remaining)?;
    let grad_erased = spec.grad_log_likelihood(theta_map, &erased)?;
    let delta = solve_spd(hessian, &grad_erased)?;
    ParameterVector::new(theta_map.iter().zip(&delta).map(|(t, d)| t - d).collect())
        .map_err(|_| McuError::Numerical("influence step is not finite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureMap, Task};

    fn logistic_1d() -> ModelSpec {
        ModelSpec::logistic(FeatureMap::Identity, 2.0).unwrap()
    }

    #[test]
    fn all_positive_labels_converge_under_prior() {
        let data = LabeledDataset::new(
            Task::BinaryClassification,
            1,
            (0..20).map(|i| (vec![i as f64 / 10.0 - 1.0], 1.0)),
        )
        .unwrap();
        let fit = train_map(&logistic_1d(), &data, &OptimizerConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm <= 1e-8);
        assert!(fit.theta[0] > 0.0);
    }

    #[test]
    fn symmetric_pair_has_zero_bias() {
        let data = LabeledDataset::new(
            Task::BinaryClassification,
            1,
            [(vec![1.5], 1.0), (vec![-1.5], 0.0)],
        )
        .unwrap();
        let fit = train_map(&logistic_1d(), &data, &OptimizerConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.theta[0].abs() < 1e-6);
        assert!(fit.theta[1] > 0.0);
    }

    #[test]
    fn empty_data_rejected() {
        let data = LabeledDataset::empty(Task::BinaryClassification, 1).unwrap();
        assert!(train_map(&logistic_1d(), &data, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn retrain_validates_indices() {
        let data = LabeledDataset::new(
            Task::BinaryClassification,
            1,
            [(vec![1.0], 1.0), (vec![-1.0], 0.0)],
        )
        .unwrap();
        let cfg = OptimizerConfig::default();
        let spec = logistic_1d();
        assert!(matches!(retrain(&spec, &data, &[0, 1], &cfg), Err(McuError::InvalidArgument(_))));
        assert!(retrain(&spec, &data, &[2], &cfg).is_err());
        assert!(retrain(&spec, &data, &[0, 0], &cfg).is_err());
        assert_eq!(
            retrain(&spec, &data, &[], &cfg).unwrap(),
            train_map(&spec, &data, &cfg).unwrap()
        );
    }

    #[test]
    fn naive_unlearn_zero_iterations_is_identity() {
        let spec = logistic_1d();
        let data = LabeledDataset::new(Task::BinaryClassification, 1, [(vec![1.0], 1.0)]).unwrap();
        let start = ParameterVector::new(vec![0.3, -0.7]).unwrap();
        let out = naive_unlearn(&spec, &start, &data, 0, &OptimizerConfig::default()).unwrap();
        assert_eq!(out, start);
    }

    #[test]
    fn naive_unlearn_reports_divergence() {
        let spec = ModelSpec::linear(FeatureMap::Identity, 1.0, 1.0).unwrap();
        let data = LabeledDataset::new(Task::Regression, 1, [(vec![1.0], 1.0)]).unwrap();
        let cfg = OptimizerConfig { learning_rate: 10.0, ..Default::default() };
        let err = naive_unlearn(&spec, &ParameterVector::new(vec![1.0, 1.0]).unwrap(), &data, 5000, &cfg)
            .unwrap_err();
        match err {
            McuError::Divergence { last_finite, .. } => {
                assert!(last_finite.iter().all(|v| v.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn influence_with_no_erasure_returns_map() {
        let spec = logistic_1d();
        let data = LabeledDataset::new(Task::BinaryClassification, 1, [(vec![1.0], 1.0), (vec![0.0], 0.0)]).unwrap();
        let theta = ParameterVector::new(vec![0.1, 0.2]).unwrap();
        assert_eq!(influence_unlearn(&spec, &theta, &data, &[]).unwrap(), theta);
    }

    #[test]
    fn indefinite_hessian_names_eigenvalue_sign() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let err = solve_spd(h, &[1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");
    }
}
