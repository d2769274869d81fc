//! Data generation, training and evaluation for a [`RunConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indirect_core::adult::{self, AdultTask, RawAdult, TabularSchema};
use indirect_core::datagen::{
    estimate_llp_statistics, read_csv, sample_indirect, sample_mixture_stream, write_csv,
    LabeledSample, Sidecar,
};
use indirect_core::fisher::check_identifiability;
use indirect_core::optimizer::ADAM_EPSILON;
use indirect_core::rng::{child_seed, rng_for, Stream, RNG_ALGORITHM, STREAM_CONVENTION};
use indirect_core::simplex::{ARITHMETIC_TOL, CONSTRUCTION_TOL};
use indirect_core::{
    accuracy, train, ClassifierParams, CombinedObjective, FeatureMatrix, TransitionMatrix,
    WeakDataset,
};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AdultSupervision, DataConfig, RunConfig};
use crate::error::{CliError, Result};

pub const METRICS_SCHEMA: &str = "indirectml.metrics/v1";
pub const MANIFEST_SCHEMA: &str = "indirectml.manifest/v1";

/// Where external data lives.
#[derive(Debug, Clone)]
pub struct Context {
    pub cache_dir: PathBuf,
    /// Overrides the Adult download location.
    pub source_url: Option<String>,
}

impl Context {
    pub fn adult_url<'a>(&'a self, configured: Option<&'a str>) -> &'a str {
        self.source_url
            .as_deref()
            .or(configured)
            .unwrap_or(adult::DEFAULT_SOURCE_URL)
    }
}

/// One supervision source drawn for the synthetic task.
#[derive(Debug, Clone)]
pub struct GeneratedSource {
    pub name: String,
    pub fraction: f64,
    /// Rows of the training sample carrying this supervision, ascending.
    pub rows: Vec<usize>,
    pub observations: Vec<usize>,
    pub generating: TransitionMatrix,
    /// Matrix used for training; differs from `generating` when estimated.
    pub transition: TransitionMatrix,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: LabeledSample,
    pub test: LabeledSample,
    pub sources: Vec<GeneratedSource>,
}

impl SyntheticData {
    pub fn weak_datasets(&self) -> Result<Vec<WeakDataset>> {
        self.sources
            .iter()
            .map(|s| {
                Ok(WeakDataset::new(
                    s.name.clone(),
                    self.train.features.select(&s.rows),
                    s.observations.clone(),
                    s.transition.clone(),
                )?)
            })
            .collect()
    }
}

/// Draws the synthetic sample and every configured source. Source `i` uses
/// the child seed `child_seed(seed, i)` for its subset and observations.
pub fn generate_synthetic(cfg: &RunConfig) -> Result<SyntheticData> {
    let DataConfig::Synthetic { mixture, n_train, n_test, sources } = &cfg.data else {
        return Err(CliError::config("data.kind", "expected a synthetic data section"));
    };
    let spec = mixture.spec()?;
    let k = spec.n_components();
    let train = sample_mixture_stream(&spec, *n_train, cfg.seed, Stream::TrainSample)?;
    let test = sample_mixture_stream(&spec, *n_test, cfg.seed, Stream::TestSample)?;
    let mut out = Vec::with_capacity(sources.len());
    for (i, src) in sources.iter().enumerate() {
        let path = format!("data.sources[{i}].transition");
        let generating = src.transition.generating(k, &path)?;
        let seed = child_seed(cfg.seed, i as u64);
        let mut rows: Vec<usize> = (0..*n_train).collect();
        if src.fraction < 1.0 {
            let take = ((src.fraction * *n_train as f64).round() as usize).max(1);
            rows.shuffle(&mut rng_for(seed, Stream::Subset));
            rows.truncate(take);
            rows.sort_unstable();
        }
        let targets: Vec<usize> = rows.iter().map(|&r| train.targets[r]).collect();
        let observations = sample_indirect(&targets, &generating, seed)?;
        let transition = if src.transition.is_estimated() {
            let (props, priors) =
                estimate_llp_statistics(&targets, &observations, k, generating.n_y())?;
            TransitionMatrix::llp_from_proportions(&props, &priors)?
        } else {
            generating.clone()
        };
        out.push(GeneratedSource {
            name: src.name.clone(),
            fraction: src.fraction,
            rows,
            observations,
            generating,
            transition,
            seed,
        });
    }
    Ok(SyntheticData { train, test, sources: out })
}

fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("data")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn create_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(indirect_core::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes `train.csv` and `test.csv` (features and true classes) plus one CSV
/// and JSON sidecar per source. Returns the written paths.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = generate_synthetic(cfg)?;
    let dir = data_dir(cfg);
    create_dir(&dir)?;
    let mut written = Vec::new();
    for (name, sample) in [("train", &data.train), ("test", &data.test)] {
        let path = dir.join(format!("{name}.csv"));
        write_csv(create_file(&path)?, &sample.features, None, Some(&sample.targets))?;
        written.push(path);
    }
    for src in &data.sources {
        let path = dir.join(format!("{}.csv", src.name));
        let features = data.train.features.select(&src.rows);
        write_csv(create_file(&path)?, &features, Some(&src.observations), None)?;
        written.push(path);
        let sidecar = Sidecar {
            name: src.name.clone(),
            transition: src.transition.clone(),
            generating_transition: (src.transition != src.generating).then(|| src.generating.clone()),
            provenance: serde_json::json!({
                "seed": cfg.seed,
                "source_seed": src.seed,
                "fraction": src.fraction,
                "rows": src.rows.len(),
                "data": cfg.data,
            }),
        };
        let side = dir.join(format!("{}.json", src.name));
        sidecar.write(&side)?;
        written.push(side);
    }
    Ok(written)
}

fn load_weak(dir: &Path, name: &str) -> Result<WeakDataset> {
    let csv_path = dir.join(format!("{name}.csv"));
    let file = std::fs::File::open(&csv_path)
        .map_err(|e| CliError::io(format!("reading {}", csv_path.display()), e))?;
    let csv = read_csv(file)?;
    let sidecar = Sidecar::read(&dir.join(format!("{name}.json")))?;
    let obs = csv
        .observations
        .ok_or_else(|| CliError::Data(format!("{} has no `y` column", csv_path.display())))?;
    Ok(WeakDataset::new(name, csv.features, obs, sidecar.transition)?)
}

fn load_labeled(path: &Path) -> Result<LabeledSample> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let csv = read_csv(file)?;
    let targets = csv
        .targets
        .ok_or_else(|| CliError::Data(format!("{} has no `z` column", path.display())))?;
    Ok(LabeledSample { features: csv.features, targets })
}

/// Identifiability of each source and of all sources together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub name: String,
    pub n_examples: usize,
    pub n_observations: usize,
    pub rank: usize,
    pub identifiable: bool,
}

pub fn summarize_sources(datasets: &[WeakDataset], rank_tol: f64) -> Result<(Vec<SourceSummary>, bool)> {
    let summaries = datasets
        .iter()
        .map(|d| {
            let v = check_identifiability(d.transition(), rank_tol);
            SourceSummary {
                name: d.name.clone(),
                n_examples: d.len(),
                n_observations: d.transition().n_y(),
                rank: v.rank,
                identifiable: v.identifiable,
            }
        })
        .collect();
    Ok((summaries, combined_identifiable(datasets, rank_tol)?))
}

/// Full column rank of all matrices stacked, each block weighted by its
/// example count so the stack stays column-stochastic.
pub fn stacked_identifiable(parts: &[(usize, &TransitionMatrix)], rank_tol: f64) -> Result<bool> {
    let total: usize = parts.iter().map(|p| p.0).sum();
    let k = parts.first().map_or(0, |p| p.1.n_z());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, m) in parts {
        let w = *n as f64 / total.max(1) as f64;
        rows.extend(m.rows().into_iter().map(|r| r.into_iter().map(|v| v * w).collect::<Vec<_>>()));
    }
    // Renormalize so rounding in the weights cannot trip the column-sum check.
    let sums: Vec<f64> = (0..k).map(|z| rows.iter().map(|r| r[z]).sum()).collect();
    for r in rows.iter_mut() {
        for (v, s) in r.iter_mut().zip(&sums) {
            *v /= s;
        }
    }
    let stacked = TransitionMatrix::from_rows(&rows)?;
    Ok(check_identifiability(&stacked, rank_tol).identifiable)
}

pub fn combined_identifiable(datasets: &[WeakDataset], rank_tol: f64) -> Result<bool> {
    let parts: Vec<(usize, &TransitionMatrix)> = datasets.iter().map(|d| (d.len(), d.transition())).collect();
    stacked_identifiable(&parts, rank_tol)
}

/// Result of fitting a model on in-memory data.
#[derive(Debug, Clone)]
pub struct Fit {
    pub params: ClassifierParams,
    pub history: Vec<f64>,
    pub test_accuracy: Option<f64>,
}

pub fn fit(cfg: &RunConfig, datasets: Vec<WeakDataset>, test: Option<&LabeledSample>) -> Result<Fit> {
    let objective = CombinedObjective::new(datasets)?;
    let init = ClassifierParams::init(
        cfg.model.clone(),
        objective.input_dim(),
        objective.n_classes(),
        cfg.seed,
    )
    .map_err(|e| CliError::at("model", e))?;
    let out = train(init, objective.len(), &cfg.optimizer, |p, b| objective.evaluate(p, b))?;
    let test_accuracy = test
        .map(|t| accuracy(&out.params, &t.features, &t.targets))
        .transpose()?;
    Ok(Fit {
        params: out.params,
        history: out.history,
        test_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema: String,
    pub run: String,
    pub seed: u64,
    pub n_classes: usize,
    pub input_dim: usize,
    pub n_params: usize,
    pub sources: Vec<SourceSummary>,
    pub identifiable: bool,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub n_test: usize,
    pub warnings: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads the Adult task for `cfg`, fetching and caching as needed. Returns
/// the task and the digests of the raw files.
pub fn load_adult(cfg: &RunConfig, ctx: &Context) -> Result<(AdultTask, BTreeMap<String, String>)> {
    let DataConfig::Adult { target, grouping, source_url, .. } = &cfg.data else {
        return Err(CliError::config("data.kind", "expected an adult data section"));
    };
    let schema = TabularSchema::adult(target, grouping).map_err(|e| CliError::at("data", e))?;
    let files = adult::fetch(ctx.adult_url(source_url.as_deref()), &ctx.cache_dir)?;
    let raw = RawAdult::load(&files)?;
    let table = adult::preprocess(&raw, &schema)?;
    write_text(&ctx.cache_dir.join(format!("clean-{target}-{grouping}.csv")), &table.to_csv())?;
    let task = adult::build_llp_task(&table, &schema)?;
    let digests = BTreeMap::from([
        (adult::TRAIN_FILE.to_string(), files.train_sha256),
        (adult::TEST_FILE.to_string(), files.test_sha256),
    ]);
    Ok((task, digests))
}

/// Training datasets for an Adult config.
pub fn adult_datasets(task: &AdultTask, supervision: AdultSupervision) -> Result<Vec<WeakDataset>> {
    Ok(match supervision {
        AdultSupervision::Llp => vec![task.train.clone()],
        AdultSupervision::Direct => vec![WeakDataset::new(
            "direct",
            task.direct_train.features.clone(),
            task.direct_train.targets.clone(),
            TransitionMatrix::identity(task.class_levels.len())?,
        )?],
    })
}

/// Outcome of `cmd_train`.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Metrics,
    pub out_dir: PathBuf,
}

/// Trains on every configured source and writes `checkpoint.json`,
/// `loss_curve.csv`, `metrics.json` and `manifest.json` to the run directory.
/// A warning is printed to stderr before training when the combined
/// supervision does not identify the class posterior.
pub fn cmd_train(cfg: &RunConfig, ctx: &Context) -> Result<TrainReport> {
    let out_dir = cfg.out_dir();
    create_dir(&out_dir)?;
    let mut checksums = BTreeMap::new();
    let mut constants = serde_json::Map::new();
    let (datasets, test, transitions) = match &cfg.data {
        DataConfig::Synthetic { sources, .. } => {
            let written = cmd_generate(cfg)?;
            for p in &written {
                checksums.insert(relative(&out_dir, p), sha256_file(p)?);
            }
            let dir = data_dir(cfg);
            let datasets = sources
                .iter()
                .map(|s| load_weak(&dir, &s.name))
                .collect::<Result<Vec<_>>>()?;
            let transitions = sources
                .iter()
                .map(|s| Sidecar::read(&dir.join(format!("{}.json", s.name))).map_err(CliError::from))
                .collect::<Result<Vec<_>>>()?;
            let test = load_labeled(&dir.join("test.csv"))?;
            (datasets, test, serde_json::to_value(transitions).map_err(indirect_core::Error::from)?)
        }
        DataConfig::Adult { supervision, .. } => {
            let (task, digests) = load_adult(cfg, ctx)?;
            for (k, v) in digests {
                checksums.insert(format!("raw/{k}"), v);
            }
            constants.insert(
                "adult_grouping_maps".into(),
                serde_json::to_value(adult::grouping_maps()).map_err(indirect_core::Error::from)?,
            );
            constants.insert("adult_features".into(), serde_json::json!(task.feature_names));
            let datasets = adult_datasets(&task, *supervision)?;
            let transitions = serde_json::json!([{
                "name": datasets[0].name,
                "transition": datasets[0].transition(),
            }]);
            (datasets, task.test, transitions)
        }
    };
    let (sources, identifiable) = summarize_sources(&datasets, cfg.objective.rank_tol)?;
    let mut warnings = Vec::new();
    if !identifiable {
        let msg = format!(
            "supervision of run {:?} is not identifiable (sources: {}); the class posterior cannot be recovered from these observations",
            cfg.name,
            sources.iter().map(|s| format!("{} rank {}", s.name, s.rank)).collect::<Vec<_>>().join(", ")
        );
        eprintln!("warning: {msg}");
        warnings.push(msg);
    }
    let n_classes = datasets[0].n_classes();
    let input_dim = datasets[0].input_dim();
    let fit = fit(cfg, datasets, Some(&test))?;

    let checkpoint = out_dir.join("checkpoint.json");
    write_json(&checkpoint, &fit.params)?;
    let curve = out_dir.join("loss_curve.csv");
    let mut text = String::from("epoch,loss\n");
    for (e, l) in fit.history.iter().enumerate() {
        text.push_str(&format!("{e},{l:?}\n"));
    }
    write_text(&curve, &text)?;
    let metrics = Metrics {
        schema: METRICS_SCHEMA.into(),
        run: cfg.name.clone(),
        seed: cfg.seed,
        n_classes,
        input_dim,
        n_params: fit.params.n_params(),
        sources,
        identifiable,
        epochs: fit.history.len(),
        final_train_loss: fit.history.last().copied(),
        test_accuracy: fit.test_accuracy,
        n_test: test.len(),
        warnings,
    };
    let metrics_path = out_dir.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    for p in [&checkpoint, &curve, &metrics_path] {
        checksums.insert(relative(&out_dir, p), sha256_file(p)?);
    }
    constants.insert("rank_tol".into(), serde_json::json!(cfg.objective.rank_tol));
    constants.insert("adam_epsilon".into(), serde_json::json!(ADAM_EPSILON));
    constants.insert("simplex_construction_tol".into(), serde_json::json!(CONSTRUCTION_TOL));
    constants.insert("simplex_arithmetic_tol".into(), serde_json::json!(ARITHMETIC_TOL));
    let manifest = serde_json::json!({
        "schema": MANIFEST_SCHEMA,
        "config": cfg,
        "rng": { "algorithm": RNG_ALGORITHM, "stream_convention": STREAM_CONVENTION },
        "constants": constants,
        "transitions": transitions,
        "checksums": checksums,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(TrainReport { metrics, out_dir })
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run: String,
    pub accuracy: f64,
    pub n_test: usize,
}

/// Accuracy of the run's checkpoint on its held-out sample.
pub fn cmd_eval(cfg: &RunConfig, ctx: &Context) -> Result<EvalReport> {
    let out_dir = cfg.out_dir();
    let params: ClassifierParams = read_json(&out_dir.join("checkpoint.json"))?;
    let test = match &cfg.data {
        DataConfig::Synthetic { .. } => load_labeled(&data_dir(cfg).join("test.csv"))?,
        DataConfig::Adult { .. } => load_adult(cfg, ctx)?.0.test,
    };
    let report = EvalReport {
        run: cfg.name.clone(),
        accuracy: accuracy(&params, &test.features, &test.targets)?,
        n_test: test.len(),
    };
    write_json(&out_dir.join("eval.json"), &report)?;
    Ok(report)
}

/// Artifacts of a finished run, as read by `plot`.
pub struct RunArtifacts {
    pub params: ClassifierParams,
    pub history: Vec<f64>,
    pub test: Option<LabeledSample>,
    /// First source's features, observations and training matrix.
    pub source: Option<WeakDataset>,
    pub class_prior: Option<Vec<f64>>,
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    let checkpoint = dir.join("checkpoint.json");
    if !checkpoint.exists() {
        return Err(CliError::Data(format!(
            "{} is not a run directory (no checkpoint.json); run `indirectml train --config ... --out {}` first",
            dir.display(),
            dir.display()
        )));
    }
    let params: ClassifierParams = read_json(&checkpoint)?;
    let curve = std::fs::read_to_string(dir.join("loss_curve.csv"))
        .map_err(|e| CliError::io(format!("reading {}", dir.join("loss_curve.csv").display()), e))?;
    let history = curve
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| CliError::Data(format!("bad loss curve line {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = dir.join("data");
    let test = data.join("test.csv").exists().then(|| load_labeled(&data.join("test.csv"))).transpose()?;
    let train = data.join("train.csv").exists().then(|| load_labeled(&data.join("train.csv"))).transpose()?;
    let class_prior = train.as_ref().map(|t| {
        let mut counts = vec![0.0; params.n_classes];
        for &z in &t.targets {
            counts[z] += 1.0;
        }
        let n = t.targets.len() as f64;
        counts.into_iter().map(|c| c / n).collect()
    });
    let mut source = None;
    if let Ok(manifest) = read_json::<serde_json::Value>(&dir.join("manifest.json")) {
        if let Some(name) = manifest
            .pointer("/config/data/sources/0/name")
            .and_then(|v| v.as_str())
        {
            source = Some(load_weak(&data, name)?);
        }
    }
    Ok(RunArtifacts { params, history, test, source, class_prior })
}

/// Features of the first two columns, for plotting.
pub fn xy(features: &FeatureMatrix, i: usize) -> (f64, f64) {
    let r = features.row(i);
    (r[0], r[1])
}
