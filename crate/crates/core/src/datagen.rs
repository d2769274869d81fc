//! Synthetic data following `p(X) p(Z | X) p(Y | Z)`: features and true
//! classes come from a Gaussian mixture, then each indirect observation is
//! drawn from the column of the transition matrix selected by the true class.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::rng::{rng_for, Stream};
use crate::simplex::SimplexVector;
use crate::transition::TransitionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub weights: SimplexVector,
}

/// Cholesky factors and log-densities for a validated mixture.
struct PreparedMixture {
    chol: Vec<DMatrix<f64>>,
    means: Vec<DVector<f64>>,
    inv: Vec<DMatrix<f64>>,
    log_det: Vec<f64>,
}

impl GaussianMixtureSpec {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Equal-weight mixture of identity-covariance Gaussians at `means`.
    pub fn isotropic(means: &[Vec<f64>]) -> Result<Self> {
        let d = means.first().map_or(0, Vec::len);
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let spec = Self {
            components: means
                .iter()
                .map(|m| MixtureComponent {
                    mean: m.clone(),
                    cov: cov.clone(),
                })
                .collect(),
            weights: SimplexVector::uniform(means.len())?,
        };
        spec.prepare()?;
        Ok(spec)
    }

    fn prepare(&self) -> Result<PreparedMixture> {
        let d = self.dim();
        if self.components.is_empty() || d == 0 {
            return Err(Error::InvalidShape("mixture needs components of positive dimension".into()));
        }
        if self.weights.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                context: "mixture weights",
                expected: self.components.len(),
                found: self.weights.len(),
            });
        }
        let mut out = PreparedMixture {
            chol: Vec::new(),
            means: Vec::new(),
            inv: Vec::new(),
            log_det: Vec::new(),
        };
        for (c, comp) in self.components.iter().enumerate() {
            if comp.mean.len() != d || comp.cov.len() != d || comp.cov.iter().any(|r| r.len() != d) {
                return Err(Error::DimensionMismatch {
                    context: "mixture component",
                    expected: d,
                    found: comp.mean.len(),
                });
            }
            let cov = DMatrix::from_fn(d, d, |i, j| comp.cov[i][j]);
            if (&cov - cov.transpose()).abs().max() > 1e-12 {
                return Err(Error::NonPdCovariance { component: c });
            }
            let chol = cov
                .clone()
                .cholesky()
                .ok_or(Error::NonPdCovariance { component: c })?;
            let l = chol.l();
            if l.diagonal().iter().any(|v| !(*v > 0.0)) {
                return Err(Error::NonPdCovariance { component: c });
            }
            out.log_det.push(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>());
            out.inv.push(chol.inverse());
            out.chol.push(l);
            out.means.push(DVector::from_column_slice(&comp.mean));
        }
        Ok(out)
    }

    /// Exact posterior `p(Z | x)` under the mixture.
    pub fn posterior(&self, x: &[f64]) -> Result<SimplexVector> {
        let prep = self.prepare()?;
        let xv = DVector::from_column_slice(x);
        let logs: Vec<f64> = (0..self.n_components())
            .map(|c| {
                let diff = &xv - &prep.means[c];
                let q = (diff.transpose() * &prep.inv[c] * &diff)[(0, 0)];
                self.weights[c].ln() - 0.5 * (q + prep.log_det[c])
            })
            .collect();
        let p = crate::model::softmax(&logs);
        SimplexVector::with_tolerance(p, 1e-10)
    }
}

/// Features with their true classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureMatrix,
    pub targets: Vec<usize>,
}

impl LabeledSample {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// Draws `n` points: `z ~ Categorical(weights)`, `x ~ N(mean_z, cov_z)`.
pub fn sample_mixture(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<LabeledSample> {
    sample_mixture_stream(spec, n, seed, Stream::TrainSample)
}

/// As [`sample_mixture`], drawing from an explicit stream (train and test
/// samples from one seed use different streams).
pub fn sample_mixture_stream(
    spec: &GaussianMixtureSpec,
    n: usize,
    seed: u64,
    stream: Stream,
) -> Result<LabeledSample> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let prep = spec.prepare()?;
    let d = spec.dim();
    let mut rng = rng_for(seed, stream);
    let mut data = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let z = categorical(&mut rng, spec.weights.as_slice());
        let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &prep.means[z] + &prep.chol[z] * noise;
        data.extend(x.iter());
        targets.push(z);
    }
    Ok(LabeledSample {
        features: FeatureMatrix::new(n, d, data)?,
        targets,
    })
}

/// Index drawn from `probs` by inverse CDF. Zero-probability entries are never
/// returned.
fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Draws `y_i ~ p(Y | Z = targets[i])` independently for every target.
pub fn sample_indirect(targets: &[usize], m: &TransitionMatrix, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng_for(seed, Stream::Observations);
    let columns: Vec<Vec<f64>> = (0..m.n_z()).map(|z| m.column(z)).collect();
    targets
        .iter()
        .map(|&z| {
            if z >= m.n_z() {
                return Err(Error::DimensionMismatch {
                    context: "target class vs transition columns",
                    expected: m.n_z(),
                    found: z + 1,
                });
            }
            Ok(categorical(&mut rng, &columns[z]))
        })
        .collect()
}

/// Empirical class composition of each group, `p(Z | Y = j)`, and the group
/// frequencies `p(Y)`.
pub fn estimate_llp_statistics(
    targets: &[usize],
    groups: &[usize],
    n_classes: usize,
    n_groups: usize,
) -> Result<(Vec<SimplexVector>, SimplexVector)> {
    if targets.len() != groups.len() {
        return Err(Error::DimensionMismatch {
            context: "group assignments",
            expected: targets.len(),
            found: groups.len(),
        });
    }
    let mut counts = vec![vec![0.0; n_classes]; n_groups];
    for (&z, &g) in targets.iter().zip(groups) {
        if z >= n_classes {
            return Err(Error::IndexOutOfRange { context: "class", index: z, len: n_classes });
        }
        if g >= n_groups {
            return Err(Error::IndexOutOfRange { context: "group", index: g, len: n_groups });
        }
        counts[g][z] += 1.0;
    }
    let sizes: Vec<f64> = counts.iter().map(|c| c.iter().sum()).collect();
    if let Some(group) = sizes.iter().position(|&s| s == 0.0) {
        return Err(Error::EmptyGroup { group });
    }
    let proportions = counts
        .iter()
        .map(|c| SimplexVector::from_weights(c))
        .collect::<Result<Vec<_>>>()?;
    Ok((proportions, SimplexVector::from_weights(&sizes)?))
}

/// The default three-class task: unit-covariance Gaussians at (0, 2),
/// (-2, -1) and (2, -1) with equal weights.
pub fn default_mixture() -> GaussianMixtureSpec {
    GaussianMixtureSpec::isotropic(&[vec![0.0, 2.0], vec![-2.0, -1.0], vec![2.0, -1.0]])
        .expect("default mixture is valid")
}

/// Generating `p(Y | Z)` of the default label-proportion task: four groups
/// over three classes, full column rank.
pub fn default_llp_transition() -> TransitionMatrix {
    TransitionMatrix::from_rows(&[
        vec![0.6, 0.1, 0.1],
        vec![0.2, 0.6, 0.1],
        vec![0.1, 0.2, 0.6],
        vec![0.1, 0.1, 0.2],
    ])
    .expect("default transition is valid")
}

/// Coarse grouping of the ten CIFAR-10 classes (airplane, automobile, bird,
/// cat, deer, dog, frog, horse, ship, truck) into large vehicles, small
/// vehicles, wild animals and domestic animals.
pub fn cifar10_coarse_groups() -> Vec<Vec<usize>> {
    vec![vec![0, 8], vec![1, 9], vec![2, 4, 6], vec![3, 5, 7]]
}

/// Writes a dataset as CSV with columns `f0..f{d-1}`, then `y` and `z` when given.
pub fn write_csv<W: Write>(
    out: W,
    features: &FeatureMatrix,
    observations: Option<&[usize]>,
    targets: Option<&[usize]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..features.n_cols()).map(|j| format!("f{j}")).collect();
    if observations.is_some() {
        header.push("y".into());
    }
    if targets.is_some() {
        header.push("z".into());
    }
    w.write_record(&header)?;
    for (i, row) in features.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if let Some(o) = observations {
            rec.push(o[i].to_string());
        }
        if let Some(t) = targets {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A dataset read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub features: FeatureMatrix,
    pub observations: Option<Vec<usize>>,
    pub targets: Option<Vec<usize>>,
}

pub fn read_csv<R: Read>(input: R) -> Result<CsvDataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let feature_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('f') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    let y_col = header.iter().position(|h| h == "y");
    let z_col = header.iter().position(|h| h == "z");
    let parse_label = |s: &str, col: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::SchemaMismatch(format!("bad {col} label {s:?}")))
    };
    let mut data = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec?;
        for &c in &feature_cols {
            let v: f64 = rec[c]
                .trim()
                .parse()
                .map_err(|_| Error::SchemaMismatch(format!("bad feature value {:?}", &rec[c])))?;
            data.push(v);
        }
        if let Some(c) = y_col {
            ys.push(parse_label(&rec[c], "y")?);
        }
        if let Some(c) = z_col {
            zs.push(parse_label(&rec[c], "z")?);
        }
        n += 1;
    }
    Ok(CsvDataset {
        features: FeatureMatrix::new(n, feature_cols.len(), data)?,
        observations: y_col.map(|_| ys),
        targets: z_col.map(|_| zs),
    })
}

/// JSON sidecar stored next to an indirect dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub name: String,
    pub transition: TransitionMatrix,
    /// Generating `p(Y | Z)`, when it differs from the training `transition`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generating_transition: Option<TransitionMatrix>,
    pub provenance: serde_json::Value,
}

impl Sidecar {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}
