use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mcu_core::baselines::{retrain, train_map, OptimizerConfig};
use mcu_core::data::{ingest_csv, write_csv, CsvSchema};
use mcu_core::demo::{catastrophic_demo, impsamp_demo, CatastrophicConfig};
use mcu_core::explain::subset_influence;
use mcu_core::recipe::{run_recipe, ExperimentRecipe};
use mcu_core::sampler::{sample_chains, Proposal, SamplerConfig};
use mcu_core::store::{load_from_path, save_to_path};
use mcu_core::synth::{
    binclass_cluster, diabetes_standin, linreg_cluster, phishing_standin, ImpsampPair, TwoGaussian,
};
use mcu_core::{unlearn, ErrorCategory, Estimator, FeatureMap, LabeledDataset, McuError, ModelSpec, Result};

#[derive(Parser)]
#[command(name = "mcu", version, about = "Unlearning by reweighting stored MCMC samples")]
struct Cli {
    /// Overrides every seed the command would otherwise use.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that relative output paths are written under.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the MAP estimate and write it as JSON.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "theta.json")]
        out: PathBuf,
    },
    /// Draw a candidate set and save it in the binary candidate format.
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value = "candidates.mcuc")]
        out: PathBuf,
    },
    /// Answer an erase request from a saved candidate set.
    Unlearn {
        #[arg(long)]
        candidates: PathBuf,
        /// CSV of the rows to forget, with the training schema.
        #[arg(long)]
        erased: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        #[arg(long, default_value = "weighted-mean")]
        estimator: Estimator,
        /// Omit per-candidate vectors from the report above this many candidates.
        #[arg(long, default_value_t = 10_000)]
        elide_above: usize,
        #[arg(long, default_value = "unlearn.json")]
        out: PathBuf,
    },
    /// Refit the MAP estimate without the given rows.
    Retrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Zero-based row positions to drop, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        erase: Vec<usize>,
        #[arg(long, default_value = "retrained.json")]
        out: PathBuf,
    },
    /// Rank subsets by how unlearning each changes accuracy on an evaluation set.
    Explain {
        #[arg(long)]
        candidates: PathBuf,
        /// Repeatable `id=path.csv` pairs.
        #[arg(long = "subset", required = true)]
        subsets: Vec<String>,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        #[arg(long, default_value = "weighted-mean")]
        estimator: Estimator,
        #[arg(long, default_value = "explain")]
        out_prefix: String,
    },
    /// Built-in demonstrations.
    Demo {
        #[command(subcommand)]
        demo: Demo,
    },
    /// Write a synthetic dataset or toy target.
    Synth {
        kind: SynthTarget,
        /// Row count for generators that take one.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a TOML experiment recipe.
    RunRecipe {
        recipe: PathBuf,
        /// Parallel workers for per-request work; overrides the recipe.
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// Gradient descent on the erased data versus candidate reweighting.
    Catastrophic {
        #[arg(long, default_value = "catastrophic.json")]
        out: PathBuf,
    },
    /// One-dimensional importance-sampling check.
    Impsamp {
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value = "impsamp.json")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthTarget {
    LinregCluster,
    BinclassCluster,
    TwoGaussian,
    Impsamp,
    DiabetesStandin,
    PhishingStandin,
}

#[derive(Args)]
struct DataArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label: String,
    /// Feature columns; defaults to every non-label column.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Logistic,
    Linear,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "logistic")]
    model: ModelKind,
    /// `identity` or `polynomial:<degree>`.
    #[arg(long, default_value = "identity", value_parser = parse_feature_map)]
    feature_map: FeatureMap,
    #[arg(long, default_value_t = 3.0)]
    prior_variance: f64,
    #[arg(long)]
    noise_variance: Option<f64>,
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = 1000)]
    num_samples: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 0.005)]
    step: f64,
    #[arg(long, default_value = "isotropic")]
    proposal: ProposalKind,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Independent chains, seeded consecutively and concatenated.
    #[arg(long, default_value_t = 1)]
    chains: u64,
    #[arg(long)]
    adapt_step: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProposalKind {
    Isotropic,
    Laplace,
}

fn parse_feature_map(s: &str) -> std::result::Result<FeatureMap, String> {
    match s.split_once(':') {
        None if s == "identity" => Ok(FeatureMap::Identity),
        Some(("polynomial", d)) => {
            d.parse().map(|degree| FeatureMap::Polynomial { degree }).map_err(|_| format!("bad degree '{d}'"))
        }
        _ => Err(format!("expected 'identity' or 'polynomial:<degree>', got '{s}'")),
    }
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        match self.model {
            ModelKind::Logistic => ModelSpec::logistic(self.feature_map, self.prior_variance),
            ModelKind::Linear => {
                let noise = self
                    .noise_variance
                    .ok_or_else(|| McuError::InvalidArgument("--noise-variance is required for linear models".into()))?;
                ModelSpec::linear(self.feature_map, self.prior_variance, noise)
            }
        }
    }
}

fn schema(spec: &ModelSpec, label: &str, features: &Option<Vec<String>>) -> CsvSchema {
    CsvSchema { label: label.to_string(), features: features.clone(), task: spec.task() }
}

impl DataArgs {
    fn load(&self, spec: &ModelSpec) -> Result<LabeledDataset> {
        ingest_csv(&self.data, &schema(spec, &self.label, &self.features))
    }
}

struct Ctx {
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> Result<PathBuf> {
        let full = if p.is_absolute() { p.to_path_buf() } else { self.out_dir.join(p) };
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(full)
    }

    fn write_json<T: Serialize>(&self, p: &Path, value: &T) -> Result<PathBuf> {
        let full = self.path(p)?;
        std::fs::write(&full, serde_json::to_string_pretty(value).expect("serialisable output"))?;
        Ok(full)
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { seed: cli.seed, out_dir: cli.out_dir };
    match cli.command {
        Command::Train { data, model, out } => {
            let spec = model.spec()?;
            let ds = data.load(&spec)?;
            let cfg = OptimizerConfig { seed: ctx.seed.unwrap_or(0), ..OptimizerConfig::default() };
            let fit = train_map(&spec, &ds, &cfg)?;
            if !fit.converged {
                log::warn!("optimizer stopped after {} iterations with gradient norm {:e}", fit.iterations, fit.grad_norm);
            }
            let path = ctx.write_json(&out, &fit)?;
            println!("{}", path.display());
        }
        Command::Sample { data, model, sampler, out } => {
            let spec = model.spec()?;
            let ds = data.load(&spec)?;
            let base = SamplerConfig {
                num_samples: sampler.num_samples,
                burn_in: sampler.burn_in,
                thin: sampler.thin,
                proposal_step: sampler.step,
                proposal: match sampler.proposal {
                    ProposalKind::Isotropic => Proposal::Isotropic,
                    ProposalKind::Laplace => Proposal::Laplace,
                },
                alpha: sampler.alpha,
                seed: ctx.seed.unwrap_or(0),
                adapt_step: sampler.adapt_step,
                ..SamplerConfig::default()
            };
            if sampler.chains == 0 {
                return Err(McuError::InvalidArgument("--chains must be at least 1".into()));
            }
            let cfgs: Vec<SamplerConfig> = (0..sampler.chains)
                .map(|c| SamplerConfig { seed: base.seed.wrapping_add(c), ..base.clone() })
                .collect();
            let set = sample_chains(&spec, &ds, &cfgs)?.with_created_unix(now_unix());
            let path = ctx.path(&out)?;
            save_to_path(&set, &path)?;
            println!("{} ({} candidates)", path.display(), set.len());
        }
        Command::Unlearn { candidates, erased, label, features, estimator, elide_above, out } => {
            let set = load_from_path(&candidates)?;
            let er = ingest_csv(&erased, &schema(set.spec(), &label, &features))?;
            let res = unlearn(&set, &er)?;
            #[derive(Serialize)]
            struct Output {
                estimator: Estimator,
                estimate: Vec<f64>,
                #[serde(flatten)]
                report: mcu_core::unlearn::UnlearnReport,
            }
            let output = Output { estimator, estimate: res.estimate(estimator).to_vec(), report: res.report(elide_above) };
            let path = ctx.write_json(&out, &output)?;
            println!("{} (ess {:.1} of {})", path.display(), res.ess, res.len());
        }
        Command::Retrain { data, model, erase, out } => {
            let spec = model.spec()?;
            let ds = data.load(&spec)?;
            let cfg = OptimizerConfig { seed: ctx.seed.unwrap_or(0), ..OptimizerConfig::default() };
            let fit = retrain(&spec, &ds, &erase, &cfg)?;
            let path = ctx.write_json(&out, &fit)?;
            println!("{}", path.display());
        }
        Command::Explain { candidates, subsets, eval, label, features, estimator, out_prefix } => {
            let set = load_from_path(&candidates)?;
            let sch = schema(set.spec(), &label, &features);
            let loaded = subsets
                .iter()
                .map(|pair| {
                    let (id, path) = pair.split_once('=').ok_or_else(|| {
                        McuError::InvalidArgument(format!("--subset expects id=path.csv, got '{pair}'"))
                    })?;
                    Ok((id.to_string(), ingest_csv(Path::new(path), &sch)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let eval_data = ingest_csv(&eval, &sch)?;
            let eval_id = eval.file_stem().and_then(|s| s.to_str()).unwrap_or("eval").to_string();
            let report = subset_influence(&set, &loaded, &eval_data, &eval_id, estimator)?;
            let json = ctx.path(Path::new(&format!("{out_prefix}.json")))?;
            let csv = ctx.path(Path::new(&format!("{out_prefix}.csv")))?;
            report.write(&json, &csv)?;
            for e in &report.entries {
                println!("{}\t{:+.4}", e.subset_id, e.delta);
            }
        }
        Command::Demo { demo: Demo::Catastrophic { out } } => {
            let cfg = CatastrophicConfig { seed: ctx.seed.unwrap_or(0), ..CatastrophicConfig::default() };
            let report = catastrophic_demo(&cfg)?;
            println!("trained {:.4} retrained {:.4} mcu {:.4}", report.trained_mse, report.retrained_mse, report.mcu_mse);
            for p in &report.naive {
                println!("naive after {} iterations {:.4e}", p.iters, p.remaining_mse);
            }
            ctx.write_json(&out, &report)?;
        }
        Command::Demo { demo: Demo::Impsamp { samples, out } } => {
            let outcome = impsamp_demo(&ImpsampPair::default(), samples, ctx.seed.unwrap_or(0))?;
            println!(
                "weighted mean {:.4} variance {:.4} ess {:.0}",
                outcome.weighted_mean, outcome.weighted_variance, outcome.ess
            );
            ctx.write_json(&out, &outcome)?;
        }
        Command::Synth { kind, rows, out } => {
            let seed = ctx.seed.unwrap_or(0);
            let path = ctx.path(&out)?;
            match kind {
                SynthTarget::LinregCluster | SynthTarget::BinclassCluster => {
                    let p = if matches!(kind, SynthTarget::LinregCluster) { linreg_cluster(seed)? } else { binclass_cluster(seed)? };
                    write_csv(&p.data, &path)?;
                    let sidecar = path.with_extension("erased.json");
                    std::fs::write(&sidecar, serde_json::to_string(&p.erased).expect("indices serialise"))?;
                }
                SynthTarget::DiabetesStandin => write_csv(&diabetes_standin(seed)?, &path)?,
                SynthTarget::PhishingStandin => write_csv(&phishing_standin(rows.unwrap_or(10_000), seed)?, &path)?,
                SynthTarget::TwoGaussian => {
                    std::fs::write(&path, serde_json::to_string_pretty(&TwoGaussian::default()).expect("serialise"))?
                }
                SynthTarget::Impsamp => {
                    std::fs::write(&path, serde_json::to_string_pretty(&ImpsampPair::default()).expect("serialise"))?
                }
            }
            println!("{}", path.display());
        }
        Command::RunRecipe { recipe, workers } => {
            let mut r = ExperimentRecipe::from_path(&recipe)?;
            if let Some(seed) = ctx.seed {
                r.seed = seed;
            }
            if let Some(w) = workers {
                r.workers = w;
            }
            let base = recipe.parent().map(Path::to_path_buf).unwrap_or_default();
            let out = ctx.out_dir.join(&r.name);
            let outcome = run_recipe(&r, &base, &out)?;
            println!("{} metric rows, {} erase requests -> {}", outcome.records.len(), outcome.requests.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Usage => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Numerical => 3,
            })
        }
    }
}
