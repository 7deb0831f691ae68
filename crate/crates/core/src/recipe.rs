//! Declarative experiment recipes.
//!
//! A recipe is a TOML document; `docs/FORMATS.md` describes every key. One
//! run trains the MAP model on the training split, draws one candidate set
//! per flattening scale, then answers every erase request with each
//! unlearner and records accuracies plus wall-clock timings.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{influence_unlearn, naive_unlearn, retrain, train_map, OptimizerConfig};
use crate::corrupt::{make_corrupt_dataset_with, NeighborMetric};
use crate::data::{ingest_csv, CsvSchema};
use crate::error::{McuError, Result};
use crate::explain::{subset_influence, SubsetInfluenceReport};
use crate::metrics::{
    evaluate_accuracy, evaluate_mse, write_metrics_csv, write_metrics_json, MetricsRecord, ModelTag, Split,
};
use crate::model::{LabeledDataset, ModelSpec, ParameterVector, Task};
use crate::sampler::{sample_posterior, Init, Proposal, SamplerConfig};
use crate::store::{save_to_path, CandidateSet};
use crate::synth::{binclass_cluster, diabetes_standin, linreg_cluster, phishing_standin};
use crate::unlearn::{unlearn, Estimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    DiabetesStandin,
    PhishingStandin,
    LinregCluster,
    BinclassCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Csv {
        /// Relative paths resolve against the recipe's directory.
        path: PathBuf,
        #[serde(flatten)]
        schema: CsvSchema,
    },
    Generator {
        generator: Generator,
        /// Total rows before the test split; ignored by fixed-size generators.
        #[serde(default)]
        rows: Option<usize>,
        #[serde(default)]
        data_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    #[serde(flatten)]
    pub source: DataSource,
    /// Rows held out at random as the test split (never sampled on).
    #[serde(default)]
    pub test_size: usize,
    /// Z-score features with statistics from the training split.
    #[serde(default)]
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub num_samples: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "one")]
    pub thin: usize,
    pub proposal_step: f64,
    #[serde(default)]
    pub proposal: Proposal,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub adapt_step: bool,
}

fn one() -> usize {
    1
}

fn default_alphas() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EraseRule {
    /// Each inner list is one erase request, as training-split positions.
    Explicit { indices: Vec<Vec<usize>> },
    /// `count` requests of `k` distinct random training rows.
    RandomK { k: usize, count: usize },
    /// Flip the labels of an anchor's `k` nearest neighbours (subset 0),
    /// then add `clean_subsets` random requests of `k` unflipped rows.
    NearestNeighborFlip {
        k: usize,
        #[serde(default)]
        clean_subsets: usize,
        #[serde(default)]
        metric: NeighborMetric,
    },
    /// The erased positions a synthetic generator ships with.
    Generated,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    RetrainedDr,
    BifLike,
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default = "default_splits")]
    pub splits: Vec<Split>,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_naive_iters")]
    pub naive_iters: usize,
    #[serde(default = "default_naive_rate")]
    pub naive_learning_rate: f64,
    /// Flattening scale used for the explanation report; defaults to the
    /// smallest configured alpha.
    #[serde(default)]
    pub explain_alpha: Option<f64>,
}

fn default_splits() -> Vec<Split> {
    vec![Split::Train, Split::Test, Split::Erased]
}

fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::RetrainedDr, Baseline::BifLike]
}

fn default_naive_iters() -> usize {
    100
}

fn default_naive_rate() -> f64 {
    1e-3
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            splits: default_splits(),
            baselines: default_baselines(),
            estimator: Estimator::default(),
            naive_iters: default_naive_iters(),
            naive_learning_rate: default_naive_rate(),
            explain_alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecipe {
    pub name: String,
    pub seed: u64,
    /// Threads used for per-request work. 1 keeps timings undisturbed.
    #[serde(default = "one")]
    pub workers: usize,
    pub model: ModelSpec,
    pub data: DataSection,
    pub sampler: SamplerSection,
    pub erase: EraseRule,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    /// Write candidate files and per-request unlearning reports.
    #[serde(default = "yes")]
    pub write_artifacts: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentRecipe {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let recipe: ExperimentRecipe =
            toml::from_str(text).map_err(|e| McuError::invalid(format!("recipe: {e}")))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.sampler.alphas.is_empty() {
            return Err(McuError::invalid("recipe needs at least one alpha"));
        }
        for &alpha in &self.sampler.alphas {
            self.sampler_config(alpha, 0).validate()?;
        }
        if self.workers == 0 {
            return Err(McuError::invalid("workers must be at least 1"));
        }
        Ok(())
    }

    fn sampler_config(&self, alpha: f64, chain: u64) -> SamplerConfig {
        SamplerConfig {
            num_samples: self.sampler.num_samples,
            burn_in: self.sampler.burn_in,
            thin: self.sampler.thin,
            proposal_step: self.sampler.proposal_step,
            proposal: self.sampler.proposal,
            alpha,
            seed: self.seed.wrapping_add(chain),
            init: Init::MapEstimate,
            adapt_step: self.sampler.adapt_step,
        }
    }
}

/// One erase request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraseRequest {
    pub subset_id: usize,
    pub label: String,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub train_seconds: f64,
    /// One entry per alpha, in recipe order.
    pub sample_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RecipeOutcome {
    pub records: Vec<MetricsRecord>,
    pub requests: Vec<EraseRequest>,
    pub explain: Option<SubsetInfluenceReport>,
    pub timings: StageTimings,
    pub candidate_sets: Vec<CandidateSet>,
}

struct Prepared {
    train: LabeledDataset,
    test: Option<LabeledDataset>,
    /// Training rows with their original labels, for corruption recipes.
    clean: Option<LabeledDataset>,
    requests: Vec<EraseRequest>,
}

fn load_source(section: &DataSection, base_dir: &Path, spec: &ModelSpec) -> Result<(LabeledDataset, Option<Vec<usize>>)> {
    match &section.source {
        DataSource::Csv { path, schema } => {
            let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            Ok((ingest_csv(&full, schema)?, None))
        }
        DataSource::Generator { generator, rows, data_seed } => {
            let ds = match generator {
                Generator::DiabetesStandin => (diabetes_standin(*data_seed)?, None),
                Generator::PhishingStandin => (phishing_standin(rows.unwrap_or(10_000), *data_seed)?, None),
                Generator::LinregCluster => {
                    let p = linreg_cluster(*data_seed)?;
                    check_generated_spec(spec, &p.spec)?;
                    (p.data, Some(p.erased))
                }
                Generator::BinclassCluster => {
                    let p = binclass_cluster(*data_seed)?;
                    check_generated_spec(spec, &p.spec)?;
                    (p.data, Some(p.erased))
                }
            };
            Ok(ds)
        }
    }
}

fn check_generated_spec(recipe: &ModelSpec, generated: &ModelSpec) -> Result<()> {
    if recipe.family != generated.family || recipe.feature_map != generated.feature_map {
        return Err(McuError::invalid("recipe model does not match the generator's model family"));
    }
    Ok(())
}

fn random_subset(pool: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = pool.to_vec();
    p.shuffle(&mut rng);
    p.truncate(k);
    p
}

fn prepare(recipe: &ExperimentRecipe, base_dir: &Path) -> Result<Prepared> {
    let (full, generated_erased) =
        load_source(&recipe.data, base_dir, &recipe.model).map_err(|e| e.in_stage("load-data"))?;

    let split = || -> Result<(LabeledDataset, Option<LabeledDataset>, Option<Vec<usize>>)> {
        let n = full.len();
        if recipe.data.test_size == 0 {
            return Ok((full.clone(), None, generated_erased.clone()));
        }
        if generated_erased.is_some() {
            return Err(McuError::invalid("synthetic problems with built-in erased sets take no test split"));
        }
        if recipe.data.test_size >= n {
            return Err(McuError::invalid(format!("test_size {} leaves no training rows", recipe.data.test_size)));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(recipe.seed ^ 0x7e57));
        let (test_idx, train_idx) = order.split_at(recipe.data.test_size);
        let mut train_idx = train_idx.to_vec();
        train_idx.sort_unstable();
        let mut test_idx = test_idx.to_vec();
        test_idx.sort_unstable();
        // Renumber so positions and ids agree within the training split.
        let renumber = |d: LabeledDataset| -> Result<LabeledDataset> {
            let x: Vec<f64> = (0..d.len()).flat_map(|i| d.features(i).to_vec()).collect();
            LabeledDataset::from_parts(d.task(), d.feature_dim(), x, d.labels().to_vec())?
                .with_names(d.feature_names().to_vec(), d.label_name().to_string())
        };
        Ok((renumber(full.subset(&train_idx)?)?, Some(renumber(full.subset(&test_idx)?)?), None))
    };
    let (mut train, mut test, generated) = split().map_err(|e| e.in_stage("split"))?;
    if recipe.data.standardize {
        let stats = train.column_stats();
        train = train.standardized_with(&stats)?;
        test = test.map(|t| t.standardized_with(&stats)).transpose()?;
    }

    let erase = || -> Result<(LabeledDataset, Option<LabeledDataset>, Vec<EraseRequest>)> {
        let n = train.len();
        let check_k = |k: usize| {
            if k == 0 || k >= n {
                Err(McuError::invalid(format!("subset size {k} must be in 1..{n}")))
            } else {
                Ok(())
            }
        };
        Ok(match &recipe.erase {
            EraseRule::None => (train.clone(), None, Vec::new()),
            EraseRule::Explicit { indices } => {
                let reqs = indices
                    .iter()
                    .enumerate()
                    .map(|(j, idx)| EraseRequest { subset_id: j, label: format!("explicit-{j:02}"), positions: idx.clone() })
                    .collect();
                (train.clone(), None, reqs)
            }
            EraseRule::Generated => {
                let positions = generated.clone().ok_or_else(|| {
                    McuError::invalid("erase rule 'generated' needs a synthetic problem with an erased set")
                })?;
                (train.clone(), None, vec![EraseRequest { subset_id: 0, label: "generated".into(), positions }])
            }
            EraseRule::RandomK { k, count } => {
                check_k(*k)?;
                let pool: Vec<usize> = (0..n).collect();
                let reqs = (0..*count)
                    .map(|j| EraseRequest {
                        subset_id: j,
                        label: format!("random-{j:02}"),
                        positions: random_subset(&pool, *k, recipe.seed.wrapping_add(1000 + j as u64)),
                    })
                    .collect();
                (train.clone(), None, reqs)
            }
            EraseRule::NearestNeighborFlip { k, clean_subsets, metric } => {
                check_k(*k)?;
                if train.task() != Task::BinaryClassification {
                    return Err(McuError::invalid("nearest-neighbor-flip needs a classification dataset"));
                }
                let (corrupt, flipped) = make_corrupt_dataset_with(&train, *k, recipe.seed, *metric)?;
                let flipped_set: HashSet<usize> = flipped.iter().copied().collect();
                let pool: Vec<usize> = (0..n).filter(|i| !flipped_set.contains(i)).collect();
                if *clean_subsets > 0 && pool.len() < *k {
                    return Err(McuError::invalid("not enough unflipped rows for clean subsets"));
                }
                let mut reqs = vec![EraseRequest { subset_id: 0, label: "flipped".into(), positions: flipped }];
                for j in 1..=*clean_subsets {
                    reqs.push(EraseRequest {
                        subset_id: j,
                        label: format!("clean-{j:02}"),
                        positions: random_subset(&pool, *k, recipe.seed.wrapping_add(2000 + j as u64)),
                    });
                }
                (corrupt, Some(train.clone()), reqs)
            }
        })
    };
    let (train, clean, requests) = erase().map_err(|e| e.in_stage("erase"))?;
    for r in &requests {
        crate::baselines::check_erased(&train, &r.positions).map_err(|e| e.in_stage("erase"))?;
    }
    Ok(Prepared { train, test, clean, requests })
}

fn score(spec: &ModelSpec, theta: &ParameterVector, data: &LabeledDataset) -> Result<f64> {
    match spec.task() {
        Task::BinaryClassification => evaluate_accuracy(spec, theta, data),
        Task::Regression => evaluate_mse(spec, theta, data),
    }
}

struct SplitSets<'a> {
    train: &'a LabeledDataset,
    test: Option<&'a LabeledDataset>,
    clean: Option<&'a LabeledDataset>,
}

impl SplitSets<'_> {
    fn get<'b>(&'b self, split: Split, erased: Option<&'b LabeledDataset>) -> Option<&'b LabeledDataset> {
        match split {
            Split::Train => Some(self.train),
            Split::Test => self.test,
            Split::Erased => erased,
            Split::Clean => self.clean,
        }
        .filter(|d| !d.is_empty())
    }
}

#[allow(clippy::too_many_arguments)]
fn rows_for(
    spec: &ModelSpec,
    sets: &SplitSets<'_>,
    splits: &[Split],
    erased: Option<&LabeledDataset>,
    tag: ModelTag,
    theta: &ParameterVector,
    seconds: f64,
    subset_id: Option<usize>,
) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for &split in splits {
        if let Some(d) = sets.get(split, erased) {
            out.push(MetricsRecord::new(tag, split, score(spec, theta, d)?, seconds, subset_id));
        }
    }
    Ok(out)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

/// Runs a recipe. Relative data paths resolve against `base_dir`; outputs
/// go to `out_dir` (created if missing).
pub fn run_recipe(recipe: &ExperimentRecipe, base_dir: &Path, out_dir: &Path) -> Result<RecipeOutcome> {
    recipe.validate()?;
    let spec = recipe.model;
    let prepared = prepare(recipe, base_dir)?;
    let train = &prepared.train;
    let splits = &recipe.evaluate.splits;
    for &s in splits {
        let missing = match s {
            Split::Test => prepared.test.is_none(),
            Split::Clean => prepared.clean.is_none(),
            _ => false,
        };
        if missing {
            return Err(McuError::invalid(format!("split '{s}' requested but the recipe does not produce it")));
        }
    }
    let sets = SplitSets { train, test: prepared.test.as_ref(), clean: prepared.clean.as_ref() };

    let opt = OptimizerConfig { seed: recipe.seed, ..OptimizerConfig::default() };
    let (trained, train_seconds) =
        timed(|| train_map(&spec, train, &opt)).map_err(|e| e.in_stage("train"))?;
    if !trained.converged {
        log::warn!("MAP training stopped after {} iterations without converging", trained.iterations);
    }

    let mut candidate_sets = Vec::new();
    let mut sample_seconds = Vec::new();
    for (i, &alpha) in recipe.sampler.alphas.iter().enumerate() {
        let cfg = recipe.sampler_config(alpha, i as u64);
        let (set, secs) = timed(|| sample_posterior(&spec, train, &cfg)).map_err(|e| e.in_stage("sample"))?;
        candidate_sets.push(set);
        sample_seconds.push(secs);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(recipe.workers)
        .build()
        .map_err(|e| McuError::invalid(format!("worker pool: {e}")))?;

    let per_request = |req: &EraseRequest| -> Result<(Vec<MetricsRecord>, Vec<crate::unlearn::UnlearnResult>)> {
        let (_, erased) = train.partition(&req.positions)?;
        let id = Some(req.subset_id);
        let mut rows = rows_for(&spec, &sets, splits, Some(&erased), ModelTag::TrainedD, &trained.theta, train_seconds, id)?;
        for b in &recipe.evaluate.baselines {
            let (tag, (theta, secs)) = match b {
                Baseline::RetrainedDr => (
                    ModelTag::RetrainedDr,
                    timed(|| retrain(&spec, train, &req.positions, &opt).map(|f| f.theta))?,
                ),
                Baseline::BifLike => (
                    ModelTag::BifLike,
                    timed(|| influence_unlearn(&spec, &trained.theta, train, &req.positions))?,
                ),
                Baseline::Naive => {
                    let cfg = OptimizerConfig { learning_rate: recipe.evaluate.naive_learning_rate, ..opt };
                    (
                        ModelTag::Naive,
                        timed(|| naive_unlearn(&spec, &trained.theta, &erased, recipe.evaluate.naive_iters, &cfg))?,
                    )
                }
            };
            rows.extend(rows_for(&spec, &sets, splits, Some(&erased), tag, &theta, secs, id)?);
        }
        let mut results = Vec::new();
        for set in &candidate_sets {
            let (res, secs) = timed(|| unlearn(set, &erased))?;
            let theta = res.estimate(recipe.evaluate.estimator).clone();
            rows.extend(rows_for(&spec, &sets, splits, Some(&erased), ModelTag::Mcu(set.alpha()), &theta, secs, id)?);
            results.push(res);
        }
        Ok((rows, results))
    };
    let outputs = pool
        .install(|| prepared.requests.par_iter().map(per_request).collect::<Result<Vec<_>>>())
        .map_err(|e| e.in_stage("unlearn"))?;

    let mut records = Vec::new();
    if prepared.requests.is_empty() {
        records = rows_for(&spec, &sets, splits, None, ModelTag::TrainedD, &trained.theta, train_seconds, None)
            .map_err(|e| e.in_stage("evaluate"))?;
    }
    for (rows, _) in &outputs {
        records.extend(rows.iter().cloned());
    }

    let explain = match (&recipe.erase, prepared.test.as_ref()) {
        (EraseRule::NearestNeighborFlip { .. }, Some(test)) if spec.task() == Task::BinaryClassification => {
            let alpha = recipe
                .evaluate
                .explain_alpha
                .unwrap_or_else(|| recipe.sampler.alphas.iter().copied().fold(f64::INFINITY, f64::min));
            let set = candidate_sets
                .iter()
                .find(|s| s.alpha() == alpha)
                .ok_or_else(|| McuError::invalid(format!("explain_alpha {alpha} is not among the sampled alphas")))
                .map_err(|e| e.in_stage("explain"))?;
            let subsets = prepared
                .requests
                .iter()
                .map(|r| Ok((r.label.clone(), train.subset(&r.positions)?)))
                .collect::<Result<Vec<_>>>()?;
            Some(
                pool.install(|| subset_influence(set, &subsets, test, "test", recipe.evaluate.estimator))
                    .map_err(|e| e.in_stage("explain"))?,
            )
        }
        _ => None,
    };

    let outcome = RecipeOutcome {
        records,
        requests: prepared.requests,
        explain,
        timings: StageTimings { train_seconds, sample_seconds },
        candidate_sets,
    };
    write_outputs(recipe, &outcome, &outputs, out_dir).map_err(|e| e.in_stage("write"))?;
    Ok(outcome)
}

fn write_outputs(
    recipe: &ExperimentRecipe,
    outcome: &RecipeOutcome,
    outputs: &[(Vec<MetricsRecord>, Vec<crate::unlearn::UnlearnResult>)],
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_metrics_csv(&outcome.records, &out_dir.join("metrics.csv"))?;
    write_metrics_json(&outcome.records, &out_dir.join("metrics.json"))?;
    let requests = serde_json::to_string_pretty(&outcome.requests).expect("requests serialise");
    std::fs::write(out_dir.join("erase_requests.json"), requests)?;
    let timings = serde_json::to_string_pretty(&outcome.timings).expect("timings serialise");
    std::fs::write(out_dir.join("timings.json"), timings)?;
    if let Some(report) = &outcome.explain {
        report.write(&out_dir.join("explain.json"), &out_dir.join("explain.csv"))?;
    }
    if recipe.write_artifacts {
        for set in &outcome.candidate_sets {
            save_to_path(set, &out_dir.join(format!("candidates_a{}.mcuc", set.alpha())))?;
        }
        let dir = out_dir.join("unlearn");
        std::fs::create_dir_all(&dir)?;
        for (req, (_, results)) in outcome.requests.iter().zip(outputs) {
            for res in results {
                let json = serde_json::to_string_pretty(&res.report(1000)).expect("report serialises");
                std::fs::write(dir.join(format!("subset{:03}_a{}.json", req.subset_id, res.alpha)), json)?;
            }
        }
    }
    Ok(())
}
