mod common;

use common::*;
use mcu_core::baselines::{train_map, OptimizerConfig};
use mcu_core::{FeatureMap, LabeledDataset, ModelSpec, ParameterVector, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|j| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40u64 {
        let (spec, data) = match case % 3 {
            0 => {
                let dim = rng.random_range(1..=9);
                let n = rng.random_range(0..=50);
                (ModelSpec::logistic(FeatureMap::Identity, 2.0).unwrap(), random_dataset(Task::BinaryClassification, n, dim, case))
            }
            1 => {
                let n = rng.random_range(1..=50);
                (
                    ModelSpec::logistic(FeatureMap::Polynomial { degree: 4 }, 5.0).unwrap(),
                    random_dataset(Task::BinaryClassification, n, 1, case),
                )
            }
            _ => {
                let dim = rng.random_range(1..=9);
                let n = rng.random_range(1..=50);
                (ModelSpec::linear(FeatureMap::Identity, 4.0, 0.5).unwrap(), random_dataset(Task::Regression, n, dim, case))
            }
        };
        let d = spec.param_dim(data.feature_dim()).unwrap();
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = spec.grad_log_joint(&ParameterVector::new(theta.clone()).unwrap(), &data).unwrap();
        let numeric = central_difference(
            |t| spec.log_joint(&ParameterVector::new(t.to_vec()).unwrap(), &data).unwrap(),
            &theta,
            1e-5,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-4, "case {case}: analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn logistic_likelihood_matches_naive_formula() {
    let spec = ModelSpec::logistic(FeatureMap::Polynomial { degree: 4 }, 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = random_dataset(Task::BinaryClassification, 10, 1, 4);
    let a: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let expected: f64 = data
        .rows()
        .map(|(x, y)| {
            let z: f64 = a.iter().enumerate().map(|(i, ai)| ai * x[0].powi(i as i32)).sum();
            let p = naive_sigmoid(z);
            if y == 1.0 { p.ln() } else { (1.0 - p).ln() }
        })
        .sum();
    let got = spec.log_likelihood(&ParameterVector::new(a.clone()).unwrap(), &data).unwrap();
    assert!(rel_close(got, expected, 1e-12), "{got} vs {expected}");
    for (x, _) in data.rows() {
        let z: f64 = a.iter().enumerate().map(|(i, ai)| ai * x[0].powi(i as i32)).sum();
        let p = spec.predict(&ParameterVector::new(a.clone()).unwrap(), x).unwrap();
        assert!((p - naive_sigmoid(z)).abs() < 1e-15);
    }
}

#[test]
fn prior_matches_direct_gaussian_density() {
    // log N(theta; 0, v I) summed with the constant written out term by term.
    let spec = ModelSpec::logistic(FeatureMap::Identity, 3.0).unwrap();
    let theta = vec![0.3, -1.2, 2.5, 0.0, 7.0];
    let expected: f64 = theta
        .iter()
        .map(|t| -0.5 * (2.0 * std::f64::consts::PI * 3.0).ln() - t * t / 6.0)
        .sum();
    let got = spec.log_prior(&ParameterVector::new(theta).unwrap()).unwrap();
    assert!(rel_close(got, expected, 1e-14));
}

#[test]
fn likelihood_is_permutation_invariant_and_additive() {
    let spec = ModelSpec::logistic(FeatureMap::Identity, 3.0).unwrap();
    let data = random_dataset(Task::BinaryClassification, 60, 4, 8);
    let theta = ParameterVector::new(vec![0.2, -0.7, 1.1, 0.4, -1.6]).unwrap();
    let full = spec.log_likelihood(&theta, &data).unwrap();

    let mut order: Vec<usize> = (0..60).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(1));
    let shuffled = data.subset(&order).unwrap();
    assert!(rel_close(spec.log_likelihood(&theta, &shuffled).unwrap(), full, 1e-12));
    assert_eq!(spec.log_likelihood(&theta, &data).unwrap().to_bits(), full.to_bits());

    let erased: Vec<usize> = (0..60).filter(|i| i % 7 == 2).collect();
    let (rest, er) = data.partition(&erased).unwrap();
    let parts = spec.log_likelihood(&theta, &rest).unwrap() + spec.log_likelihood(&theta, &er).unwrap();
    assert!(rel_close(full, parts, 1e-9));
    let joint_gap = spec.log_joint(&theta, &data).unwrap() - spec.log_joint(&theta, &rest).unwrap();
    assert!(rel_close(joint_gap, spec.log_likelihood(&theta, &er).unwrap(), 1e-9));
}

#[test]
fn empty_data_joint_is_the_prior() {
    let spec = ModelSpec::logistic(FeatureMap::Identity, 3.0).unwrap();
    let theta = ParameterVector::new(vec![1.0, 2.0, 3.0]).unwrap();
    let empty = LabeledDataset::empty(Task::BinaryClassification, 2).unwrap();
    assert_eq!(spec.log_joint(&theta, &empty).unwrap(), spec.log_prior(&theta).unwrap());
}

#[test]
fn grid_argmax_matches_closed_form_mode() {
    let spec = ModelSpec::linear(FeatureMap::Identity, 4.0, 0.25).unwrap();
    let data = random_dataset(Task::Regression, 30, 1, 21);
    let (mode, _) = conjugate_posterior(&spec, &data);
    let (lo, hi, steps) = (-2.0, 2.0, 801);
    let spacing = (hi - lo) / (steps - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..steps {
        for j in 0..steps {
            let t = [lo + spacing * i as f64, lo + spacing * j as f64];
            let v = spec.log_joint(&ParameterVector::new(t.to_vec()).unwrap(), &data).unwrap();
            if v > best.0 {
                best = (v, t[0], t[1]);
            }
        }
    }
    assert!((best.1 - mode[0]).abs() <= spacing, "{} vs {}", best.1, mode[0]);
    assert!((best.2 - mode[1]).abs() <= spacing, "{} vs {}", best.2, mode[1]);
}

#[test]
fn map_matches_conjugate_mode() {
    let spec = ModelSpec::linear(FeatureMap::Polynomial { degree: 4 }, 4.0, 0.01).unwrap();
    let problem = mcu_core::synth::linreg_cluster(0).unwrap();
    let (mode, _) = conjugate_posterior(&spec, &problem.data);
    let fit = train_map(&spec, &problem.data, &OptimizerConfig::default()).unwrap();
    assert!(fit.converged);
    for (a, b) in fit.theta.iter().zip(mode.iter()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn logistic_map_is_a_stationary_point() {
    let spec = ModelSpec::logistic(FeatureMap::Identity, 3.0).unwrap();
    let data = random_dataset(Task::BinaryClassification, 40, 3, 5);
    let fit = train_map(&spec, &data, &OptimizerConfig::default()).unwrap();
    let g = spec.grad_log_joint(&fit.theta, &data).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(fit.converged && norm < 1e-6, "gradient norm {norm}");
}
