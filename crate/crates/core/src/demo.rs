//! Small self-contained experiments used by the CLI `demo` commands and the
//! acceptance suite.

use serde::{Deserialize, Serialize};

use crate::baselines::{naive_unlearn, retrain, train_map, OptimizerConfig};
use crate::error::Result;
use crate::metrics::evaluate_mse;
use crate::sampler::{run_chain, sample_posterior, Proposal, SamplerConfig};
use crate::synth::{linreg_cluster, ImpsampPair, TwoGaussian};
use crate::unlearn::{effective_sample_size, normalize_log_weights, unlearn, weighted_moments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpsampOutcome {
    pub num_samples: usize,
    pub weighted_mean: f64,
    pub weighted_variance: f64,
    pub ess: f64,
    /// Plain Monte-Carlo moments from the same number of direct target draws.
    pub direct_mean: f64,
    pub direct_variance: f64,
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Draws `n` proposal samples with `seed` and reweights them; the direct
/// draws use `seed + 1`.
pub fn impsamp_demo(pair: &ImpsampPair, n: usize, seed: u64) -> Result<ImpsampOutcome> {
    let xs = pair.draw_proposal(n, seed);
    let log_w: Vec<f64> = xs.iter().map(|&x| pair.log_ratio(x)).collect();
    let w = normalize_log_weights(&log_w)?;
    let mean: f64 = xs.iter().zip(&w).map(|(x, w)| w * x).sum();
    let var: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum();
    let (direct_mean, direct_variance) = moments(&pair.draw_target(n, seed.wrapping_add(1)));
    Ok(ImpsampOutcome {
        num_samples: n,
        weighted_mean: mean,
        weighted_variance: var,
        ess: effective_sample_size(&w),
        direct_mean,
        direct_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightOutcome {
    pub alpha: f64,
    pub num_samples: usize,
    pub ess: f64,
    pub ess_fraction: f64,
    pub weighted_mean: Vec<f64>,
    pub acceptance_rate: f64,
}

fn reweight(sc: &TwoGaussian, alpha: f64, samples: &[Vec<f64>], h: &[f64], acceptance_rate: f64) -> Result<ReweightOutcome> {
    let log_w: Vec<f64> =
        samples.iter().zip(h).map(|(s, &h)| sc.remaining.log_density(s) - alpha * h).collect();
    let w = normalize_log_weights(&log_w)?;
    let ess = effective_sample_size(&w);
    let (mean, _) = weighted_moments(samples, &w);
    Ok(ReweightOutcome {
        alpha,
        num_samples: samples.len(),
        ess,
        ess_fraction: ess / samples.len() as f64,
        weighted_mean: mean,
        acceptance_rate,
    })
}

/// Samples `full^alpha` by Metropolis-Hastings from the full-posterior
/// centre and reweights toward `remaining`.
pub fn two_gaussian_mcmc(sc: &TwoGaussian, cfg: &SamplerConfig) -> Result<ReweightOutcome> {
    let chain = run_chain(&sc.full, &sc.full.mean, cfg)?;
    reweight(sc, cfg.alpha, &chain.samples, &chain.log_density, chain.stats.acceptance_rate())
}

/// Same reweighting with independent draws from `full^alpha`, which is an
/// isotropic Gaussian with standard deviation `std / sqrt(alpha)`.
pub fn two_gaussian_direct(sc: &TwoGaussian, alpha: f64, n: usize, seed: u64) -> Result<ReweightOutcome> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let s = sc.full.std / alpha.sqrt();
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            sc.full
                .mean
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    m + s * z
                })
                .collect()
        })
        .collect();
    let h: Vec<f64> = samples.iter().map(|t| sc.full.log_density(t)).collect();
    reweight(sc, alpha, &samples, &h, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatastrophicConfig {
    pub seed: u64,
    /// Gradient-descent lengths for the naive unlearner.
    pub naive_iters: Vec<usize>,
    pub naive_learning_rate: f64,
    pub sampler: SamplerConfig,
}

impl Default for CatastrophicConfig {
    fn default() -> Self {
        CatastrophicConfig {
            seed: 0,
            naive_iters: vec![100, 2000],
            naive_learning_rate: 5e-5,
            sampler: SamplerConfig {
                num_samples: 3000,
                burn_in: Some(5000),
                thin: 300,
                proposal_step: 1.0,
                proposal: Proposal::Laplace,
                alpha: 0.08,
                ..SamplerConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaivePoint {
    pub iters: usize,
    pub remaining_mse: f64,
    pub theta: Vec<f64>,
}

/// Mean squared error on the remaining data for each unlearner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatastrophicReport {
    pub trained_mse: f64,
    pub retrained_mse: f64,
    pub mcu_mse: f64,
    pub mcu_alpha: f64,
    pub naive: Vec<NaivePoint>,
}

/// Unlearns the low-x cluster from the synthetic polynomial regression by
/// (a) gradient descent on the erased-data log posterior and (b) candidate
/// reweighting, and reports how well each still fits the remaining data.
pub fn catastrophic_demo(cfg: &CatastrophicConfig) -> Result<CatastrophicReport> {
    let problem = linreg_cluster(cfg.seed)?;
    let (remaining, erased) = problem.data.partition(&problem.erased)?;
    let spec = problem.spec;
    let opt = OptimizerConfig::default();
    let trained = train_map(&spec, &problem.data, &opt)?;
    let retrained = retrain(&spec, &problem.data, &problem.erased, &opt)?;

    let naive_cfg = OptimizerConfig { learning_rate: cfg.naive_learning_rate, ..opt };
    let naive = cfg
        .naive_iters
        .iter()
        .map(|&iters| {
            let theta = naive_unlearn(&spec, &trained.theta, &erased, iters, &naive_cfg)?;
            Ok(NaivePoint { iters, remaining_mse: evaluate_mse(&spec, &theta, &remaining)?, theta: theta.into_inner() })
        })
        .collect::<Result<Vec<_>>>()?;

    let sampler = SamplerConfig { seed: cfg.seed, ..cfg.sampler.clone() };
    let set = sample_posterior(&spec, &problem.data, &sampler)?;
    let res = unlearn(&set, &erased)?;
    Ok(CatastrophicReport {
        trained_mse: evaluate_mse(&spec, &trained.theta, &remaining)?,
        retrained_mse: evaluate_mse(&spec, &retrained.theta, &remaining)?,
        mcu_mse: evaluate_mse(&spec, &res.weighted_mean, &remaining)?,
        mcu_alpha: sampler.alpha,
        naive,
    })
}

