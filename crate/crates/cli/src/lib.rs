//! Config-driven experiment runner for learning from indirect observations.
//!
//! The binary `indirectml` is a thin wrapper over the `cmd_*` functions here;
//! tests drive the same functions directly.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod presets;

use std::path::Path;

use indirect_core::adult::{self, FetchedAdult, RawAdult};
use indirect_core::fisher::{check_identifiability, fisher_report, FisherReport, Identifiability};
use indirect_core::TransitionMatrix;
use serde::Serialize;

pub use config::{FisherConfig, RunConfig};
pub use error::{exit, CliError, Result};
pub use pipeline::{cmd_eval, cmd_generate, cmd_train, Context, Metrics};
pub use presets::reproduce;

/// Builds the Fisher report for `cfg` and writes it as `fisher.json` to `out`
/// when given.
pub fn cmd_fisher(cfg: &FisherConfig, out: Option<&Path>) -> Result<FisherReport> {
    let (theta, m) = cfg.resolve()?;
    let report = fisher_report(&theta, &m, cfg.rank_tol)?;
    if let Some(dir) = out.or(cfg.output.dir.as_deref()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        let mut text = serde_json::to_string_pretty(&report).map_err(indirect_core::Error::from)?;
        text.push('\n');
        let path = dir.join("fisher.json");
        std::fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceVerdict {
    pub name: String,
    pub verdict: Identifiability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifyReport {
    pub sources: Vec<SourceVerdict>,
    /// Whether all sources together identify the class posterior.
    pub combined_identifiable: bool,
}

/// Identifiability of every supervision source of a run config. Synthetic
/// sources are judged by their generating matrices; Adult needs the data.
pub fn cmd_identify(cfg: &RunConfig, ctx: &Context) -> Result<IdentifyReport> {
    let tol = cfg.objective.rank_tol;
    let (names, parts): (Vec<String>, Vec<(usize, TransitionMatrix)>) = match &cfg.data {
        config::DataConfig::Synthetic { mixture, n_train, sources, .. } => {
            let k = mixture.spec()?.n_components();
            sources
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let m = s.transition.generating(k, &format!("data.sources[{i}].transition"))?;
                    let n = ((s.fraction * *n_train as f64).round() as usize).max(1);
                    Ok((s.name.clone(), (n, m)))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        }
        config::DataConfig::Adult { supervision, .. } => {
            let (task, _) = pipeline::load_adult(cfg, ctx)?;
            pipeline::adult_datasets(&task, *supervision)?
                .into_iter()
                .map(|d| (d.name.clone(), (d.len(), d.transition().clone())))
                .unzip()
        }
    };
    let sources = names
        .into_iter()
        .zip(&parts)
        .map(|(name, (_, m))| SourceVerdict {
            name,
            verdict: check_identifiability(m, tol),
        })
        .collect();
    let refs: Vec<(usize, &TransitionMatrix)> = parts.iter().map(|(n, m)| (*n, m)).collect();
    Ok(IdentifyReport {
        sources,
        combined_identifiable: pipeline::stacked_identifiable(&refs, tol)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FetchReport {
    pub files: FetchedAdult,
    pub records: usize,
    pub expected_records: usize,
}

/// Downloads (or verifies the cached copy of) the Adult files.
pub fn cmd_fetch_adult(ctx: &Context) -> Result<FetchReport> {
    let files = adult::fetch(ctx.adult_url(None), &ctx.cache_dir)?;
    let records = RawAdult::load(&files)?.len();
    Ok(FetchReport {
        files,
        records,
        expected_records: adult::EXPECTED_RECORDS,
    })
}
