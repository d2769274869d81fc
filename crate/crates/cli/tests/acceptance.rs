//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criterion 8 needs the Adult files: set `INDIRECTML_ADULT=1` and point
//! `INDIRECTML_CACHE` at a populated cache (or allow the download).

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use indirect_cli::config;
use indirect_cli::presets::{self, TrialsPreset};
use indirect_cli::{pipeline, Context};
use indirect_core::datagen::{default_mixture, sample_indirect, sample_mixture, sample_mixture_stream};
use indirect_core::fisher::{
    asymptotic_variance, check_identifiability, fisher_bruteforce, fisher_direct, fisher_indirect,
    min_eigenvalue, DEFAULT_RANK_TOL,
};
use indirect_core::model::log_sum_exp;
use indirect_core::rng::{child_seed, rng_for, Stream};
use indirect_core::{
    indirect_nll, Activation, Architecture, ClassifierParams, FeatureMatrix, OptimizerConfig,
    SimplexVector, TransitionMatrix, WeakDataset,
};
use rand::seq::SliceRandom;
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_instance<R: Rng>(rng: &mut R) -> (SimplexVector, TransitionMatrix) {
    let k_z = rng.random_range(2..=8);
    let k_y = rng.random_range(2..=8);
    let w: Vec<f64> = (0..k_z).map(|_| rng.random_range(0.02..1.0)).collect();
    let theta = SimplexVector::from_weights(&w).unwrap();
    let mut rows = vec![vec![0.0; k_z]; k_y];
    for z in 0..k_z {
        for row in rows.iter_mut() {
            row[z] = if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() + 1e-3 };
        }
        if rows.iter().all(|r| r[z] == 0.0) {
            rows[rng.random_range(0..k_y)][z] = 1.0;
        }
        let s: f64 = rows.iter().map(|r| r[z]).sum();
        rows.iter_mut().for_each(|r| r[z] /= s);
    }
    (theta, TransitionMatrix::from_rows(&rows).unwrap())
}

fn criterion_1() -> Outcome {
    let mut rng = rng_for(101, Stream::Probe);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (theta, m) = random_instance(&mut rng);
        let d = (fisher_indirect(&theta, &m).unwrap() - fisher_bruteforce(&theta, &m).unwrap())
            .abs()
            .max();
        worst = worst.max(d);
    }
    verdict(worst <= 1e-10, format!("max |closed form - score covariance| = {worst:.2e} (<= 1e-10)"))
}

fn criterion_2() -> Outcome {
    let mut rng = rng_for(102, Stream::Probe);
    let mut margin = f64::INFINITY;
    let mut slack = f64::INFINITY;
    let mut invertible = 0;
    for _ in 0..1000 {
        let (theta, m) = random_instance(&mut rng);
        let info = fisher_indirect(&theta, &m).unwrap();
        margin = margin.min(min_eigenvalue(&(fisher_direct(&theta).unwrap() - &info)));
        let var = asymptotic_variance(&info, DEFAULT_RANK_TOL);
        if var.invertible {
            invertible += 1;
            for (v, t) in var.values.iter().zip(theta.as_slice()) {
                slack = slack.min(v - t);
            }
        }
    }
    verdict(
        margin >= -1e-9 && slack >= -1e-9,
        format!(
            "min eig(I_Z - I_Y) = {margin:.2e}, min [I_Y^-1]_ii - theta_i = {slack:.2e} over {invertible} invertible cases (both >= -1e-9)"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = rng_for(103, Stream::Probe);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let (n, d, k) = (rng.random_range(1..40), rng.random_range(1..6), rng.random_range(2..7));
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let arch = if trial % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp { hidden: vec![6], activation: Activation::Tanh }
        };
        let params = ClassifierParams::init(arch, d, k, trial).unwrap();
        let features = FeatureMatrix::new(n, d, x).unwrap();
        let data = WeakDataset::new("direct", features.clone(), z.clone(), TransitionMatrix::identity(k).unwrap()).unwrap();
        let batch: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        let batch = if batch.is_empty() { vec![0] } else { batch };
        let loss = indirect_nll(&params, &data, &batch).unwrap().loss;
        let ce = batch
            .iter()
            .map(|&i| {
                let logits = params.forward_logits(features.row(i)).unwrap();
                log_sum_exp(&logits) - logits[z[i]]
            })
            .sum::<f64>()
            / batch.len() as f64;
        worst = worst.max((loss - ce).abs());
    }
    verdict(worst <= 1e-12, format!("max |indirect NLL - cross-entropy| = {worst:.2e} (<= 1e-12)"))
}

fn constructors() -> Vec<(&'static str, TransitionMatrix)> {
    let props: Vec<SimplexVector> = [[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6], [0.3, 0.4, 0.3]]
        .iter()
        .map(|p| SimplexVector::new(p.to_vec()).unwrap())
        .collect();
    let priors = SimplexVector::new(vec![0.3, 0.3, 0.2, 0.2]).unwrap();
    vec![
        ("identity", TransitionMatrix::identity(3).unwrap()),
        ("ccn", TransitionMatrix::class_conditional_noise(3, 0.3).unwrap()),
        ("complementary", TransitionMatrix::uniform_complementary(3).unwrap()),
        ("coarse", TransitionMatrix::coarse_partition(3, &[vec![0, 2], vec![1]]).unwrap()),
        ("pu", TransitionMatrix::pu_censoring(0.5).unwrap()),
        ("llp", TransitionMatrix::llp_from_proportions(&props, &priors).unwrap()),
    ]
}

fn criterion_4() -> Outcome {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ci, (_, m)) in constructors().into_iter().enumerate() {
        let archs = [
            Architecture::Linear,
            Architecture::Mlp { hidden: vec![5], activation: Activation::Tanh },
            Architecture::Mlp { hidden: vec![4], activation: Activation::Relu },
        ];
        for (ai, arch) in archs.into_iter().enumerate() {
            let seed = (ci * 10 + ai) as u64;
            let mut rng = rng_for(seed, Stream::Probe);
            let (n, d) = (10, 3);
            let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let possible: Vec<usize> = (0..m.n_y()).filter(|&y| m.row(y).iter().any(|&v| v > 0.0)).collect();
            let obs = (0..n).map(|_| possible[rng.random_range(0..possible.len())]).collect();
            let data = WeakDataset::new("g", FeatureMatrix::new(n, d, x).unwrap(), obs, m.clone()).unwrap();
            let mut params = ClassifierParams::init(arch, d, m.n_z(), seed).unwrap();
            params.flat.iter_mut().for_each(|w| *w += rng.random_range(-0.5..0.5));
            let batch: Vec<usize> = (0..n).collect();
            let grad = indirect_nll(&params, &data, &batch).unwrap().grad;
            for p in 0..params.n_params() {
                let mut plus = params.clone();
                plus.flat[p] += h;
                let mut minus = params.clone();
                minus.flat[p] -= h;
                let fd = (indirect_nll(&plus, &data, &batch).unwrap().loss
                    - indirect_nll(&minus, &data, &batch).unwrap().loss)
                    / (2.0 * h);
                worst = worst.max((fd - grad[p]).abs() / fd.abs().max(grad[p].abs()).max(1e-6));
                checked += 1;
            }
        }
    }
    verdict(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over {checked} coordinates, 6 transitions x 3 models (<= 1e-5)"),
    )
}

/// Mean over probe points of the L-infinity distance between the fitted and
/// the true posterior.
fn posterior_error(n: usize, seed: u64, probes: &FeatureMatrix) -> f64 {
    let spec = default_mixture();
    let m = TransitionMatrix::class_conditional_noise(3, 0.3).unwrap();
    let sample = sample_mixture(&spec, n, seed).unwrap();
    let ys = sample_indirect(&sample.targets, &m, seed).unwrap();
    let data = WeakDataset::new("ccn", sample.features, ys, m).unwrap();
    let mut cfg = OptimizerConfig::gd(0.5, 3000);
    cfg.seed = seed;
    let init = ClassifierParams::init(Architecture::Linear, 2, 3, seed).unwrap();
    let out = indirect_core::train(init, n, &cfg, |p, b| indirect_nll(p, &data, b)).unwrap();
    probes
        .rows()
        .map(|x| {
            let fitted = out.params.predict_proba(x).unwrap();
            let truth = spec.posterior(x).unwrap();
            fitted
                .as_slice()
                .iter()
                .zip(truth.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / probes.n_rows() as f64
}

fn criterion_5() -> Outcome {
    let probes = sample_mixture_stream(&default_mixture(), 200, 5, Stream::Probe).unwrap().features;
    let sizes = [250usize, 1000, 4000];
    let errors: Vec<f64> = sizes
        .iter()
        .map(|&n| (0..5).map(|s| posterior_error(n, child_seed(500 + n as u64, s), &probes)).sum::<f64>() / 5.0)
        .collect();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    verdict(
        decreasing && errors[2] <= 0.05,
        format!(
            "mean L-inf posterior error {:.4} / {:.4} / {:.4} at n = 250 / 1000 / 4000 (strictly decreasing, last <= 0.05)",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn ctx() -> Context {
    Context {
        cache_dir: std::env::var_os("INDIRECTML_CACHE")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(".indirectml-cache")),
        source_url: None,
    }
}

fn criterion_6() -> Outcome {
    let preset: TrialsPreset = config::parse(presets::preset_text("synthetic-llp").unwrap()).unwrap();
    assert_eq!(preset.trials, 10);
    let runs = presets::run_trials(&preset, &ctx()).unwrap();
    let (llp, direct) = (runs["llp"].mean * 100.0, runs["direct"].mean * 100.0);
    verdict(
        (direct - llp).abs() <= 3.0,
        format!("LLP {llp:.2}% vs direct {direct:.2}% over 10 seeds (gap <= 3 points)"),
    )
}

fn criterion_7() -> Outcome {
    // (a) every coarse partition with fewer groups than classes.
    let mut rng = rng_for(107, Stream::Probe);
    let mut flagged = true;
    for _ in 0..200 {
        let k = rng.random_range(2..=10);
        let g = rng.random_range(1..k);
        let mut classes: Vec<usize> = (0..k).collect();
        classes.shuffle(&mut rng);
        let mut groups = vec![Vec::new(); g];
        for (i, c) in classes.into_iter().enumerate() {
            groups[if i < g { i } else { rng.random_range(0..g) }].push(c);
        }
        let m = TransitionMatrix::coarse_partition(k, &groups).unwrap();
        flagged &= !check_identifiability(&m, DEFAULT_RANK_TOL).identifiable;
    }

    // (b) swapping two classes of one group leaves the coarse likelihood unchanged.
    let preset: TrialsPreset = config::parse(presets::preset_text("coarse-combo").unwrap()).unwrap();
    let coarse_cfg = preset.runs["coarse"].clone().resolve(Some(3), None).unwrap();
    let data = pipeline::generate_synthetic(&coarse_cfg).unwrap().weak_datasets().unwrap().remove(0);
    let batch: Vec<usize> = (0..data.len()).collect();
    let mut swap_diff = 0.0f64;
    for (arch, seed) in [
        (Architecture::Linear, 1u64),
        (Architecture::Mlp { hidden: vec![8], activation: Activation::Relu }, 2),
    ] {
        let params = ClassifierParams::init(arch, data.input_dim(), 10, seed).unwrap();
        let base = indirect_nll(&params, &data, &batch).unwrap().loss;
        for (a, b) in [(0usize, 8usize), (2, 6), (3, 7)] {
            let mut swapped = params.clone();
            let last = params.layers().last().unwrap().clone();
            for i in 0..last.fan_in {
                swapped.flat.swap(last.weights.start + a * last.fan_in + i, last.weights.start + b * last.fan_in + i);
            }
            swapped.flat.swap(last.bias.start + a, last.bias.start + b);
            let loss = indirect_nll(&swapped, &data, &batch).unwrap().loss;
            swap_diff = swap_diff.max((loss - base).abs());
        }
    }

    // (c) ordering on the 10-class task.
    let runs = presets::run_trials(&preset, &ctx()).unwrap();
    let acc = |n: &str| runs[n].mean * 100.0;
    let (coarse, comp, combo, direct) = (acc("coarse"), acc("complementary"), acc("coarse_direct"), acc("direct"));
    let recovery = combo / direct;
    let ordered = coarse < comp && comp < combo;
    verdict(
        flagged && swap_diff <= 1e-12 && ordered && recovery >= 0.85,
        format!(
            "(a) coarse partitions non-identifiable: {flagged}; (b) max loss change under in-group swap {swap_diff:.1e} (<= 1e-12); \
             (c) coarse {coarse:.2}% < complementary {comp:.2}% < coarse+10% direct {combo:.2}%, direct {direct:.2}%, recovery {recovery:.3} (>= 0.85)"
        ),
    )
}

fn criterion_8() -> Outcome {
    if std::env::var("INDIRECTML_ADULT").ok().as_deref() != Some("1") {
        return Outcome::Skip("opt-in: set INDIRECTML_ADULT=1 (and INDIRECTML_CACHE) to download and run the Adult experiment".into());
    }
    let dir = tempfile::tempdir().unwrap();
    match indirect_cli::reproduce("adult-llp", None, dir.path(), &ctx()) {
        Ok(out) => {
            let detail = out
                .metrics
                .checks
                .iter()
                .map(|c| format!("{} = {:.2} ({})", c.name, c.value, c.expected))
                .collect::<Vec<_>>()
                .join("; ");
            verdict(out.metrics.pass, detail)
        }
        Err(e) => Outcome::Fail(format!("could not run: {e}")),
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_indirectml");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(bin)
            .args(["reproduce", "synthetic-llp", "--seed", "7", "--out"])
            .arg(&out)
            .env("INDIRECTML_CACHE", dir.path().join("cache"))
            .output()
            .unwrap();
        if !status.status.success() {
            return Outcome::Fail(format!("reproduce failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(std::fs::read(out.join("metrics.json")).unwrap());
    }
    verdict(
        outputs[0] == outputs[1],
        format!("two `reproduce synthetic-llp --seed 7` runs: metrics.json identical = {} ({} bytes)", outputs[0] == outputs[1], outputs[0].len()),
    )
}

fn main() {
    // Honour the libtest flags cargo passes (e.g. `--list`) by doing nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 Fisher closed form equals score covariance", criterion_1),
        ("2 Fisher ordering and variance bound", criterion_2),
        ("3 identity transition equals cross-entropy", criterion_3),
        ("4 analytic gradients", criterion_4),
        ("5 consistency as n grows", criterion_5),
        ("6 synthetic label proportions vs direct", criterion_6),
        ("7 coarse labels: non-identifiability and ordering", criterion_7),
        ("8 Adult label proportions", criterion_8),
        ("9 reproduce determinism", criterion_9),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {name}: {tag} [{:.1}s] {detail}", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
