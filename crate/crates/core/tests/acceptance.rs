//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use mcu_core::demo::{catastrophic_demo, impsamp_demo, two_gaussian_direct, two_gaussian_mcmc, CatastrophicConfig};
use mcu_core::metrics::{MetricsRecord, Split};
use mcu_core::recipe::{run_recipe, ExperimentRecipe, RecipeOutcome};
use mcu_core::sampler::{acceptance_ratio, sample_posterior, Proposal, SamplerConfig};
use mcu_core::store::{load_from_path, save, CandidateSet};
use mcu_core::synth::{binclass_cluster, linreg_cluster, ImpsampPair, TwoGaussian};
use mcu_core::unlearn::{argmax, compute_g, unlearn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn recipes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

fn run_shipped(name: &str, out: &Path) -> (ExperimentRecipe, RecipeOutcome) {
    let path = recipes_dir().join(name);
    let recipe = ExperimentRecipe::from_path(&path).expect("shipped recipe parses");
    let outcome = run_recipe(&recipe, &recipes_dir(), out).expect("shipped recipe runs");
    (recipe, outcome)
}

fn mean_accuracy(records: &[MetricsRecord], tag: &str, split: Split) -> f64 {
    let xs: Vec<f64> = records.iter().filter(|r| r.model_tag == tag && r.split == split).map(|r| r.accuracy).collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median_time(records: &[MetricsRecord], tag: &str) -> f64 {
    // One timing per request: the erased-split row carries it.
    let mut xs: Vec<f64> = records
        .iter()
        .filter(|r| r.model_tag == tag && r.split == Split::Erased)
        .map(|r| r.wall_time_seconds)
        .collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    for _ in 0..10_000 {
        let hp: f64 = rng.random_range(-500.0..500.0);
        let h: f64 = rng.random_range(-500.0..500.0);
        let a: f64 = rng.random_range(1e-6..=1.0);
        let b: f64 = rng.random_range(1e-6..=1.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let flat = acceptance_ratio(hp, h, lo).unwrap().min(1.0);
        let sharp = acceptance_ratio(hp, h, hi).unwrap().min(1.0);
        violations += (flat < sharp) as usize;
    }
    verdict(violations == 0, format!("{violations} violations in 10000 triples"))
}

fn criterion_2() -> Verdict {
    let p = binclass_cluster(0).unwrap();
    let (rest, erased) = p.data.partition(&p.erased).unwrap();
    let cfg = SamplerConfig {
        num_samples: 3000,
        proposal_step: 1.0,
        proposal: Proposal::Laplace,
        seed: 2,
        ..SamplerConfig::default()
    };
    let set = sample_posterior(&p.spec, &p.data, &cfg).unwrap();
    let g = compute_g(&set, &erased).unwrap();
    let direct: Vec<f64> = set.candidates().iter().map(|c| p.spec.log_joint(c, &rest).unwrap()).collect();
    let worst = g
        .iter()
        .zip(&direct)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()))
        .fold(0.0, f64::max);
    let same_argmax = argmax(&g) == argmax(&direct);
    verdict(
        set.len() == 3000 && worst <= 1e-9 && same_argmax,
        format!("|D|={} |D_e|={} max rel err {worst:.2e}, argmax equal {same_argmax}", p.data.len(), erased.len()),
    )
}

fn criterion_3() -> Verdict {
    let o = impsamp_demo(&ImpsampPair::default(), 20_000, 0).unwrap();
    let ok = o.weighted_mean.abs() < 0.05 && (o.weighted_variance - 1.0).abs() < 0.1;
    let oracle_ok = o.direct_mean.abs() < 0.05 && (o.direct_variance - 1.0).abs() < 0.1;
    verdict(
        ok && oracle_ok,
        format!(
            "weighted mean {:.4} var {:.4}; direct mean {:.4} var {:.4}",
            o.weighted_mean, o.weighted_variance, o.direct_mean, o.direct_variance
        ),
    )
}

fn criterion_4() -> Verdict {
    let p = linreg_cluster(1).unwrap();
    let (rest, erased) = p.data.partition(&p.erased).unwrap();
    let (mu_r, _) = conjugate_posterior(&p.spec, &rest);
    let mut dists = Vec::new();
    let mut within = false;
    for alpha in [1.0, 0.08] {
        let cfg = SamplerConfig {
            num_samples: 3000,
            burn_in: Some(5000),
            thin: 300,
            proposal_step: 1.0,
            proposal: Proposal::Laplace,
            alpha,
            seed: 1,
            ..SamplerConfig::default()
        };
        let set = sample_posterior(&p.spec, &p.data, &cfg).unwrap();
        let res = unlearn(&set, &erased).unwrap();
        let d = res.weighted_mean.iter().zip(mu_r.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if alpha < 1.0 {
            within = res
                .weighted_mean
                .iter()
                .zip(mu_r.iter())
                .zip(&res.weighted_std_error)
                .all(|((m, t), se)| (m - t).abs() <= 3.0 * se);
        }
        dists.push(d);
    }
    verdict(
        within && dists[1] <= dists[0],
        format!("distance a=1 {:.4}, a=0.08 {:.4}; within 3 SE {within}", dists[0], dists[1]),
    )
}

fn criterion_5() -> Verdict {
    let sc = TwoGaussian::default();
    let cfg = |alpha: f64, step: f64| SamplerConfig {
        num_samples: 20_000,
        burn_in: Some(2000),
        thin: 5,
        proposal_step: step,
        alpha,
        seed: 3,
        ..SamplerConfig::default()
    };
    let sharp = two_gaussian_mcmc(&sc, &cfg(1.0, 1.7)).unwrap();
    let flat = two_gaussian_mcmc(&sc, &cfg(0.1, 5.0)).unwrap();
    let direct = two_gaussian_direct(&sc, 0.1, 20_000, 3).unwrap();
    let near = |m: &[f64]| m.iter().zip(&sc.remaining.mean).all(|(a, b)| (a - b).abs() <= 0.3);
    let ok = sharp.ess_fraction < 0.01 && flat.ess_fraction >= 0.01 && near(&flat.weighted_mean);
    let oracle_ok = direct.ess_fraction >= 0.01 && near(&direct.weighted_mean);
    verdict(
        ok && oracle_ok,
        format!(
            "ESS/M a=1 {:.4}, a=0.1 {:.4}; mean {:.3?}; direct ESS/M {:.4} mean {:.3?}",
            sharp.ess_fraction, flat.ess_fraction, flat.weighted_mean, direct.ess_fraction, direct.weighted_mean
        ),
    )
}

fn criterion_6() -> Verdict {
    let r = catastrophic_demo(&CatastrophicConfig::default()).unwrap();
    let naive_worse = r.naive.iter().all(|p| p.remaining_mse > r.trained_mse);
    let iters: Vec<usize> = r.naive.iter().map(|p| p.iters).collect();
    let contained = r.mcu_mse <= 2.0 * r.retrained_mse;
    verdict(
        naive_worse && contained && iters == [100, 2000],
        format!(
            "trained {:.4}, retrained {:.4}, mcu {:.4}, naive {:?}",
            r.trained_mse,
            r.retrained_mse,
            r.mcu_mse,
            r.naive.iter().map(|p| format!("{}:{:.3e}", p.iters, p.remaining_mse)).collect::<Vec<_>>()
        ),
    )
}

fn criterion_7(outcome: &RecipeOutcome) -> Verdict {
    let r = &outcome.records;
    let trained = mean_accuracy(r, "trained-D", Split::Erased);
    let retrained = mean_accuracy(r, "retrained-Dr", Split::Erased);
    let mcu = mean_accuracy(r, "mcu-a0.1", Split::Erased);
    let n = outcome.requests.len();
    let ok = n >= 5
        && outcome.requests.iter().all(|q| q.positions.len() == 200)
        && mcu < trained
        && (mcu - retrained).abs() <= (trained - retrained).abs();
    verdict(ok, format!("{n} requests; D_e accuracy trained {trained:.4}, retrained {retrained:.4}, mcu(0.1) {mcu:.4}"))
}

fn criterion_8(outcome: &RecipeOutcome) -> Verdict {
    let report = outcome.explain.as_ref().expect("corruption recipe produces an explanation");
    let flipped = report.entry("flipped").expect("flipped subset present");
    let clean: Vec<f64> = report.entries.iter().filter(|e| e.subset_id != "flipped").map(|e| e.delta).collect();
    let max_clean = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nonpositive = clean.iter().filter(|d| **d <= 0.0).count();
    let ok = clean.len() == 30 && flipped.delta > 0.0 && flipped.delta > max_clean && nonpositive >= 27;
    verdict(
        ok,
        format!("flipped delta {:+.4}, max clean {max_clean:+.4}, clean <= 0 in {nonpositive}/30", flipped.delta),
    )
}

fn criterion_9(outcome: &RecipeOutcome) -> Verdict {
    let r = &outcome.records;
    let (mcu, inf, re) = (median_time(r, "mcu-a0.1"), median_time(r, "bif-like"), median_time(r, "retrained-Dr"));
    verdict(
        mcu < inf && inf < re,
        format!("median seconds: unlearn {mcu:.2e}, influence {inf:.2e}, retrain {re:.2e}"),
    )
}

/// Metrics with the timing column removed.
fn untimed_metrics(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("metrics.csv"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(3);
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn untimed_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            if p.is_dir() {
                stack.push(p);
            } else if !name.starts_with("metrics.") && name != "timings.json" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10(first_runs: &[(&str, PathBuf)], scratch: &Path) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, first) in first_runs {
        let again = scratch.join(format!("rerun-{name}"));
        let (_, outcome) = run_shipped(name, &again);
        let same_files = untimed_files(first) == untimed_files(&again);
        let same_metrics = untimed_metrics(first) == untimed_metrics(&again);
        ok &= same_files && same_metrics;
        notes.push(format!("{name}: files {same_files}, metrics {same_metrics}"));
        for set in &outcome.candidate_sets {
            let mut a = Vec::new();
            save(set, &mut a).unwrap();
            let path = again.join(format!("candidates_a{}.mcuc", set.alpha()));
            if path.exists() {
                let loaded: CandidateSet = load_from_path(&path).unwrap();
                let mut b = Vec::new();
                save(&loaded, &mut b).unwrap();
                let exact = &loaded == set && a == b;
                ok &= exact;
                notes.push(format!("round trip a={} {exact}", set.alpha()));
            }
        }
    }
    verdict(ok, notes.join("; "))
}

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    println!("\nacceptance criteria");
    let mut lines = Vec::new();
    let mut record = |n: usize, limit: Option<f64>, started: Instant, v: Verdict| {
        let secs = started.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l);
        let pass = v.pass && in_time;
        let budget = limit.map_or(String::new(), |l| format!(" (limit {l} s)"));
        let line = format!(
            "criterion {n:>2}: {} | {} | {secs:.2} s{budget}",
            if pass { "PASS" } else { "FAIL" },
            v.detail
        );
        println!("{line}");
        lines.push((pass, line));
    };

    let t = Instant::now();
    record(1, Some(1.0), t, criterion_1());
    let t = Instant::now();
    record(2, Some(5.0), t, criterion_2());
    let t = Instant::now();
    record(3, Some(1.0), t, criterion_3());
    let t = Instant::now();
    record(4, Some(30.0), t, criterion_4());
    let t = Instant::now();
    record(5, Some(10.0), t, criterion_5());
    let t = Instant::now();
    record(6, Some(30.0), t, criterion_6());

    let diabetes_dir = scratch.path().join("diabetes");
    let t = Instant::now();
    let (_, diabetes) = run_shipped("diabetes.toml", &diabetes_dir);
    record(7, Some(300.0), t, criterion_7(&diabetes));

    let phishing_dir = scratch.path().join("phishing");
    let t = Instant::now();
    let (_, phishing) = run_shipped("phishing_corrupt.toml", &phishing_dir);
    record(8, Some(600.0), t, criterion_8(&phishing));

    let t = Instant::now();
    record(9, None, t, criterion_9(&diabetes));

    let t = Instant::now();
    let runs = [("diabetes.toml", diabetes_dir), ("phishing_corrupt.toml", phishing_dir)];
    record(10, None, t, criterion_10(&runs, scratch.path()));

    let failed: Vec<&String> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
