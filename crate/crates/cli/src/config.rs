//! Run configuration: one JSON document with sections `data`, `model`,
//! `objective`, `optimizer` and `output`, plus a top-level `seed`.

use std::path::{Path, PathBuf};

use indirect_core::datagen::{GaussianMixtureSpec, MixtureComponent};
use indirect_core::fisher::DEFAULT_RANK_TOL;
use indirect_core::{Architecture, OptimizerConfig, SimplexVector, TransitionMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Free-form run name, used in reports.
    pub name: String,
    /// Root seed. Every random stream of the run derives from it, and it
    /// overrides `optimizer.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub model: Architecture,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        mixture: MixtureConfig,
        n_train: usize,
        n_test: usize,
        sources: Vec<SourceConfig>,
    },
    Adult {
        target: String,
        grouping: String,
        /// `llp` trains on group observations, `direct` on true targets.
        supervision: AdultSupervision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source_url: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdultSupervision {
    Llp,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub means: Vec<Vec<f64>>,
    /// Mixing weights; equal when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// One covariance per component; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
}

/// One kind of supervision attached to (a subset of) the training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    /// Share of the training sample that receives this supervision.
    #[serde(default = "one")]
    pub fraction: f64,
    pub transition: TransitionSpec,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransitionSpec {
    Identity,
    Ccn { rate: f64 },
    UniformComplementary,
    CoarsePartition { groups: Vec<Vec<usize>> },
    PuCensoring { propensity: f64 },
    Matrix { rows: Vec<Vec<f64>> },
    /// Observations are drawn from `generating`; training uses the matrix
    /// re-estimated from the group frequencies of the sample.
    LlpEstimated { generating: Vec<Vec<f64>> },
}

impl TransitionSpec {
    /// Key holding the parameters of this spec, for error paths.
    fn key(&self) -> &'static str {
        match self {
            Self::Identity | Self::UniformComplementary => "kind",
            Self::Ccn { .. } => "rate",
            Self::CoarsePartition { .. } => "groups",
            Self::PuCensoring { .. } => "propensity",
            Self::Matrix { .. } => "rows",
            Self::LlpEstimated { .. } => "generating",
        }
    }

    /// The generating `p(Y | Z)` for `k` classes. `path` locates this entry in
    /// the config for error messages.
    pub fn generating(&self, k: usize, path: &str) -> Result<TransitionMatrix> {
        let built = match self {
            Self::Identity => TransitionMatrix::identity(k),
            Self::Ccn { rate } => TransitionMatrix::class_conditional_noise(k, *rate),
            Self::UniformComplementary => TransitionMatrix::uniform_complementary(k),
            Self::CoarsePartition { groups } => TransitionMatrix::coarse_partition(k, groups),
            Self::PuCensoring { propensity } => TransitionMatrix::pu_censoring(*propensity),
            Self::Matrix { rows } | Self::LlpEstimated { generating: rows } => {
                TransitionMatrix::from_rows(rows)
            }
        };
        let m = built.map_err(|e| CliError::at(format!("{path}.{}", self.key()), e))?;
        if m.n_z() != k {
            return Err(CliError::config(
                format!("{path}.{}", self.key()),
                format!("matrix has {} columns but the task has {k} classes", m.n_z()),
            ));
        }
        Ok(m)
    }

    pub fn is_estimated(&self) -> bool {
        matches!(self, Self::LlpEstimated { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Relative singular-value threshold for identifiability checks.
    #[serde(default = "rank_tol")]
    pub rank_tol: f64,
}

fn rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { rank_tol: rank_tol() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Config of the `fisher` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherConfig {
    pub theta: Vec<f64>,
    pub transition: TransitionSpec,
    #[serde(default = "rank_tol")]
    pub rank_tol: f64,
    #[serde(default)]
    pub output: OutputConfig,
}

impl FisherConfig {
    pub fn resolve(&self) -> Result<(SimplexVector, TransitionMatrix)> {
        let theta =
            SimplexVector::new(self.theta.clone()).map_err(|e| CliError::at("theta", e))?;
        let m = self.transition.generating(theta.len(), "transition")?;
        Ok((theta, m))
    }
}

/// Parses JSON, reporting the path of the offending key on failure.
pub fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { String::from("<root>") } else { path }, e.into_inner())
    })
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading config {}", path.display()), e))?;
    parse(&text)
}

impl MixtureConfig {
    pub fn spec(&self) -> Result<GaussianMixtureSpec> {
        let k = self.means.len();
        let d = self.means.first().map_or(0, Vec::len);
        if k < 2 || d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(CliError::config(
                "data.mixture.means",
                "need at least two means of one common, non-zero dimension",
            ));
        }
        let weights = match &self.weights {
            Some(w) => SimplexVector::new(w.clone())
                .map_err(|e| CliError::at("data.mixture.weights", e))?,
            None => SimplexVector::uniform(k).map_err(|e| CliError::at("data.mixture.weights", e))?,
        };
        if weights.len() != k {
            return Err(CliError::config("data.mixture.weights", "one weight per mean required"));
        }
        let covs = match &self.covariances {
            Some(c) if c.len() != k => {
                return Err(CliError::config("data.mixture.covariances", "one covariance per mean required"))
            }
            Some(c) => c.clone(),
            None => vec![(0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(); k],
        };
        let components = self
            .means
            .iter()
            .zip(covs)
            .map(|(mean, cov)| MixtureComponent { mean: mean.clone(), cov })
            .collect();
        Ok(GaussianMixtureSpec { components, weights })
    }
}

impl RunConfig {
    /// Applies command-line overrides and checks cross-section constraints.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.optimizer.seed = self.seed;
        if let Some(o) = out {
            self.output.dir = Some(o.to_path_buf());
        }
        self.optimizer
            .validate()
            .map_err(|e| CliError::at("optimizer", e))?;
        if let DataConfig::Synthetic { mixture, n_train, n_test, sources } = &self.data {
            let spec = mixture.spec()?;
            if *n_train == 0 {
                return Err(CliError::config("data.n_train", "must be positive"));
            }
            if *n_test == 0 {
                return Err(CliError::config("data.n_test", "must be positive"));
            }
            if sources.is_empty() {
                return Err(CliError::config("data.sources", "at least one supervision source is required"));
            }
            for (i, s) in sources.iter().enumerate() {
                let path = format!("data.sources[{i}]");
                if !(s.fraction > 0.0 && s.fraction <= 1.0) {
                    return Err(CliError::config(format!("{path}.fraction"), "must lie in (0, 1]"));
                }
                if matches!(s.name.as_str(), "train" | "test") || s.name.is_empty() || s.name.contains(['/', '\\']) {
                    return Err(CliError::config(
                        format!("{path}.name"),
                        "must be a plain file name other than \"train\" or \"test\"",
                    ));
                }
                if sources[..i].iter().any(|o| o.name == s.name) {
                    return Err(CliError::config(format!("{path}.name"), "duplicate source name"));
                }
                s.transition
                    .generating(spec.n_components(), &format!("{path}.transition"))?;
            }
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }
}
