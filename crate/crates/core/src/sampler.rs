//! Random-walk Metropolis-Hastings on a flattened target `f(theta)^alpha`.
//!
//! # Random stream
//!
//! Each chain owns one `ChaCha8Rng` seeded with `SeedableRng::seed_from_u64`
//! on the configured seed. Every iteration draws, in this order, `d`
//! standard normals (`rand_distr::StandardNormal`) for the proposal and one
//! uniform `f64` in `[0, 1)` for the accept test. Burn-in iterations use the
//! stream exactly like retained ones, so a chain can be replayed from its
//! seed alone.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{train_map, OptimizerConfig};
use crate::error::{McuError, Result};
use crate::model::{LabeledDataset, ModelSpec, ParameterVector};
use crate::store::{check_alpha, CandidateSet, Provenance};

const ADAPT_WINDOW: usize = 50;
const ADAPT_TARGET: f64 = 0.25;

/// Unnormalised log density the chain explores.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;
    /// `log f(theta)`; `-inf` marks an impossible state.
    fn log_density(&self, theta: &[f64]) -> f64;
}

/// `log p(D | theta) + log p(theta)` for a model and training set.
pub struct PosteriorTarget<'a> {
    spec: &'a ModelSpec,
    data: &'a LabeledDataset,
    dim: usize,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a LabeledDataset) -> Result<Self> {
        spec.validate()?;
        let dim = spec.param_dim(data.feature_dim())?;
        // Surface label problems now rather than mid-chain.
        spec.log_likelihood(&ParameterVector::zeros(dim), data)?;
        Ok(PosteriorTarget { spec, data, dim })
    }
}

impl LogTarget for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.spec.log_joint_unchecked(theta, self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// MAP estimate from [`train_map`], falling back to zeros if training fails.
    MapEstimate,
    Zeros,
    Explicit(Vec<f64>),
}

/// Shape of the Gaussian random-walk proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    /// `theta + step * z` with `z ~ N(0, I)`.
    #[default]
    Isotropic,
    /// `theta + step * L z`, where `L L^T` is the inverse Hessian of
    /// `-alpha * h` at the initial state. Still symmetric, so the accept
    /// test is unchanged; `step` becomes a dimensionless multiplier.
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Retained samples `M`, counted after burn-in and thinning.
    pub num_samples: usize,
    /// Discarded leading iterations; `None` means 10% of `num_samples`.
    pub burn_in: Option<usize>,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    /// Standard deviation of the isotropic Gaussian proposal, or the
    /// multiplier on the Laplace factor.
    pub proposal_step: f64,
    pub proposal: Proposal,
    pub alpha: f64,
    pub seed: u64,
    pub init: Init,
    /// Tune `proposal_step` toward a 25% acceptance rate during burn-in.
    pub adapt_step: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_samples: 1000,
            burn_in: None,
            thin: 1,
            proposal_step: 0.005,
            proposal: Proposal::Isotropic,
            alpha: 1.0,
            seed: 0,
            init: Init::MapEstimate,
            adapt_step: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(McuError::invalid("num_samples must be at least 1"));
        }
        if self.thin == 0 {
            return Err(McuError::invalid("thin must be at least 1"));
        }
        if !(self.proposal_step > 0.0 && self.proposal_step.is_finite()) {
            return Err(McuError::invalid("proposal_step must be positive"));
        }
        check_alpha(self.alpha)
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.num_samples / 10)
    }

    /// Hex SHA-256 of this configuration's JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("sampler config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

/// Tempered acceptance ratio `exp(alpha * (h_proposed - h_current))`.
///
/// Computed in log space; may overflow to `+inf` for very favourable
/// proposals, which the accept test treats as certain acceptance.
pub fn acceptance_ratio(h_proposed: f64, h_current: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if h_proposed.is_nan() || h_current.is_nan() {
        return Err(McuError::invalid("log densities must not be NaN"));
    }
    Ok(tempered_ratio(h_proposed, h_current, alpha))
}

#[inline]
fn tempered_ratio(h_proposed: f64, h_current: f64, alpha: f64) -> f64 {
    if h_proposed == f64::NEG_INFINITY {
        return 0.0;
    }
    (alpha * (h_proposed - h_current)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    /// Post-burn-in proposals and acceptances.
    pub proposals: usize,
    pub accepted: usize,
    pub burn_in: usize,
    /// Step size in use after burn-in (differs from the configured one only
    /// when adaptation is on).
    pub final_step: f64,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Retained states and their un-tempered log densities.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub stats: ChainStats,
}

/// Runs one chain targeting `target.log_density(theta) * alpha`.
///
/// Rejected proposals repeat the current state, so duplicates in the
/// output are expected.
pub fn run_chain<T: LogTarget + ?Sized>(target: &T, init: &[f64], cfg: &SamplerConfig) -> Result<Chain> {
    run_chain_scaled(target, init, cfg, None)
}

/// As [`run_chain`], with proposals `theta + step * L z` for a lower
/// triangular `L` (identity when `None`).
pub fn run_chain_scaled<T: LogTarget + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
    factor: Option<&DMatrix<f64>>,
) -> Result<Chain> {
    cfg.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(McuError::invalid(format!(
            "initial state has {} entries, target dimension is {dim}",
            init.len()
        )));
    }
    if let Some(l) = factor {
        if l.shape() != (dim, dim) {
            return Err(McuError::invalid("proposal factor does not match the target dimension"));
        }
    }
    let mut current = init.to_vec();
    let mut h_current = target.log_density(&current);
    if !h_current.is_finite() {
        return Err(McuError::Initialization(format!(
            "log density at the initial state is {h_current}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let burn_in = cfg.effective_burn_in();
    let total = burn_in + cfg.num_samples * cfg.thin;
    let mut step = cfg.proposal_step;
    let mut proposal = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut window_accepts = 0usize;
    let mut stats = ChainStats { proposals: 0, accepted: 0, burn_in, final_step: step };
    let mut samples = Vec::with_capacity(cfg.num_samples);
    let mut log_density = Vec::with_capacity(cfg.num_samples);

    for it in 0..total {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        match factor {
            None => {
                for ((p, c), zj) in proposal.iter_mut().zip(&current).zip(&z) {
                    *p = c + step * zj;
                }
            }
            Some(l) => {
                for i in 0..dim {
                    let lz: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                    proposal[i] = current[i] + step * lz;
                }
            }
        }
        let h_proposed = target.log_density(&proposal);
        let ratio = if h_proposed.is_finite() {
            tempered_ratio(h_proposed, h_current, cfg.alpha)
        } else {
            0.0
        };
        let u: f64 = rng.random();
        let accept = h_proposed.is_finite() && u <= ratio;
        if accept {
            current.copy_from_slice(&proposal);
            h_current = h_proposed;
        }

        if it < burn_in {
            if cfg.adapt_step {
                window_accepts += accept as usize;
                if (it + 1) % ADAPT_WINDOW == 0 {
                    let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
                    step *= (2.0 * (rate - ADAPT_TARGET)).exp();
                    window_accepts = 0;
                }
            }
            continue;
        }
        stats.proposals += 1;
        stats.accepted += accept as usize;
        if (it - burn_in + 1).is_multiple_of(cfg.thin) {
            samples.push(current.clone());
            log_density.push(h_current);
        }
    }
    stats.final_step = step;
    Ok(Chain { samples, log_density, stats })
}

fn resolve_init(spec: &ModelSpec, data: &LabeledDataset, dim: usize, init: &Init) -> Result<Vec<f64>> {
    match init {
        Init::Zeros => Ok(vec![0.0; dim]),
        Init::Explicit(v) => {
            if v.len() != dim {
                return Err(McuError::invalid(format!(
                    "explicit initial state has {} entries, model needs {dim}",
                    v.len()
                )));
            }
            Ok(v.clone())
        }
        Init::MapEstimate => Ok(match train_map(spec, data, &OptimizerConfig::default()) {
            Ok(fit) => fit.theta.into_inner(),
            Err(e) => {
                log::warn!("MAP initialisation failed ({e}); starting from zeros");
                vec![0.0; dim]
            }
        }),
    }
}

/// Cholesky factor of `(alpha * H)^{-1}`, `H` the negative log-joint
/// Hessian at `theta`.
pub fn laplace_factor(spec: &ModelSpec, data: &LabeledDataset, theta: &[f64], alpha: f64) -> Result<DMatrix<f64>> {
    let theta = ParameterVector::new(theta.to_vec())?;
    let h = spec.neg_log_joint_hessian(&theta, data)? * alpha;
    let cov = h
        .cholesky()
        .ok_or_else(|| McuError::Numerical("Hessian at the initial state is not positive definite".into()))?
        .inverse();
    let l = cov
        .cholesky()
        .ok_or_else(|| McuError::Numerical("Laplace covariance is not positive definite".into()))?
        .l();
    Ok(l)
}

/// Draws a candidate set from `p(theta | D)^alpha` and records chain stats.
pub fn sample_posterior_with_stats(
    spec: &ModelSpec,
    data: &LabeledDataset,
    cfg: &SamplerConfig,
) -> Result<(CandidateSet, ChainStats)> {
    cfg.validate()?;
    let target = PosteriorTarget::new(spec, data)?;
    let init = resolve_init(spec, data, target.dim(), &cfg.init)?;
    let factor = match cfg.proposal {
        Proposal::Isotropic => None,
        Proposal::Laplace => Some(laplace_factor(spec, data, &init, cfg.alpha)?),
    };
    let chain = run_chain_scaled(&target, &init, cfg, factor.as_ref())?;
    let candidates = chain
        .samples
        .into_iter()
        .map(ParameterVector::new)
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        seeds: vec![cfg.seed],
        config_digest: cfg.digest(),
        dataset_digest: data.digest(),
        created_unix: 0,
    };
    let set = CandidateSet::new(candidates, chain.log_density, cfg.alpha, *spec, provenance)?;
    Ok((set, chain.stats))
}

pub fn sample_posterior(spec: &ModelSpec, data: &LabeledDataset, cfg: &SamplerConfig) -> Result<CandidateSet> {
    sample_posterior_with_stats(spec, data, cfg).map(|(set, _)| set)
}

/// Runs independent chains (one per config, typically differing only in
/// seed) in parallel and concatenates them in config order.
pub fn sample_chains(spec: &ModelSpec, data: &LabeledDataset, cfgs: &[SamplerConfig]) -> Result<CandidateSet> {
    let sets = cfgs
        .par_iter()
        .map(|cfg| sample_posterior(spec, data, cfg))
        .collect::<Result<Vec<_>>>()?;
    CandidateSet::concat(sets)
}
