//! Machine unlearning by reweighting stored MCMC samples.
//!
//! A posterior (optionally flattened by a power `alpha`) is sampled once
//! with [`sampler::sample_posterior`], and every sample is stored next to
//! its log joint density. An erase request is then answered by
//! [`unlearn::unlearn`] from the stored samples and the erased rows alone.

pub mod baselines;
pub mod corrupt;
pub mod data;
pub mod demo;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod recipe;
pub mod sampler;
pub mod store;
pub mod synth;
pub mod unlearn;

pub use error::{ErrorCategory, McuError, Result};
pub use model::{FeatureMap, Family, LabeledDataset, ModelSpec, ParameterVector, Task};
pub use sampler::{sample_posterior, SamplerConfig};
pub use store::CandidateSet;
pub use unlearn::{unlearn, Estimator, UnlearnResult};
