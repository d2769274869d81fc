//! Negative log-likelihood of indirect observations.
//!
//! For an example `(x, y)` the classifier gives `theta = softmax(f(x; W))` and
//! the observation has probability `p(y | x) = sum_z M[y][z] theta_z`. The loss
//! is the mean of `-log p(y | x)`, evaluated in log space as
//! `logsumexp_z(log M[y][z] + log_softmax(f(x))_z)` over the classes with
//! `M[y][z] > 0`. Zero entries of `M` are skipped, never smoothed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_softmax, log_sum_exp, ClassifierParams, FeatureMatrix};
use crate::transition::TransitionMatrix;

/// Features paired with indirect observations and the matrix that produced them.
#[derive(Debug, Clone)]
pub struct WeakDataset {
    pub name: String,
    features: FeatureMatrix,
    observations: Vec<usize>,
    transition: TransitionMatrix,
}

impl WeakDataset {
    pub fn new(
        name: impl Into<String>,
        features: FeatureMatrix,
        observations: Vec<usize>,
        transition: TransitionMatrix,
    ) -> Result<Self> {
        if features.n_rows() != observations.len() {
            return Err(Error::DimensionMismatch {
                context: "observations",
                expected: features.n_rows(),
                found: observations.len(),
            });
        }
        if let Some(&y) = observations.iter().find(|&&y| y >= transition.n_y()) {
            return Err(Error::IndexOutOfRange {
                context: "observation",
                index: y,
                len: transition.n_y(),
            });
        }
        Ok(Self {
            name: name.into(),
            features,
            observations,
            transition,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn observations(&self) -> &[usize] {
        &self.observations
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    pub fn input_dim(&self) -> usize {
        self.features.n_cols()
    }

    pub fn n_classes(&self) -> usize {
        self.transition.n_z()
    }

    fn check_compatible(&self, params: &ClassifierParams) -> Result<()> {
        if self.n_classes() != params.n_classes {
            return Err(Error::DimensionMismatch {
                context: "dataset classes vs model outputs",
                expected: params.n_classes,
                found: self.n_classes(),
            });
        }
        if self.input_dim() != params.input_dim {
            return Err(Error::DimensionMismatch {
                context: "dataset features vs model input",
                expected: params.input_dim,
                found: self.input_dim(),
            });
        }
        Ok(())
    }
}

/// Mean negative log-likelihood and its gradient over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub n_examples: usize,
}

/// Sum of `-log p(y_i | x_i)` and its gradient, without the `1/|B|` factor.
struct Accumulator {
    total: f64,
    grad: Vec<f64>,
    count: usize,
}

impl Accumulator {
    fn new(n_params: usize) -> Self {
        Self {
            total: 0.0,
            grad: vec![0.0; n_params],
            count: 0,
        }
    }

    fn add_batch(
        &mut self,
        params: &ClassifierParams,
        data: &WeakDataset,
        batch: &[usize],
    ) -> Result<()> {
        data.check_compatible(params)?;
        let mut sorted = batch.to_vec();
        sorted.sort_unstable();
        let m = data.transition();
        let k = params.n_classes;
        let mut terms = vec![0.0; k];
        let mut upstream = vec![0.0; k];
        for &i in &sorted {
            if i >= data.len() {
                return Err(Error::IndexOutOfRange {
                    context: "batch",
                    index: i,
                    len: data.len(),
                });
            }
            let y = data.observations[i];
            let cache = params.forward_cached(data.features.row(i))?;
            let log_theta = log_softmax(cache.logits());
            let row = m.row(y);
            for z in 0..k {
                terms[z] = if row[z] > 0.0 {
                    row[z].ln() + log_theta[z]
                } else {
                    f64::NEG_INFINITY
                };
            }
            let log_p = log_sum_exp(&terms);
            if log_p == f64::NEG_INFINITY {
                return Err(Error::ImpossibleObservation {
                    example: i,
                    observation: y,
                });
            }
            // d(-log p)/d logit_z = theta_z - posterior_z, where
            // posterior_z = M[y][z] theta_z / p(y | x).
            for z in 0..k {
                upstream[z] = log_theta[z].exp() - (terms[z] - log_p).exp();
            }
            params.backward_accumulate(&cache, &upstream, 1.0, &mut self.grad)?;
            self.total -= log_p;
            self.count += 1;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<LossAndGrad> {
        if self.count == 0 {
            return Err(Error::EmptyBatch);
        }
        let n = self.count as f64;
        self.grad.iter_mut().for_each(|g| *g /= n);
        Ok(LossAndGrad {
            loss: self.total / n,
            grad: self.grad,
            n_examples: self.count,
        })
    }
}

/// Mean negative log-likelihood of the observations in `batch`.
///
/// Batch indices are summed in sorted order, so the result does not depend on
/// how the batch was shuffled.
pub fn indirect_nll(
    params: &ClassifierParams,
    data: &WeakDataset,
    batch: &[usize],
) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = Accumulator::new(params.n_params());
    acc.add_batch(params, data, batch)?;
    acc.finish()
}

/// Negative log-likelihood pooled over several sources of supervision.
///
/// Every selected observation contributes one term with weight one, so the
/// loss is the total over all sources divided by the total number of selected
/// examples. Individual batches may be empty as long as one is not.
pub fn combined_nll(
    params: &ClassifierParams,
    sources: &[(&WeakDataset, &[usize])],
) -> Result<LossAndGrad> {
    if sources.is_empty() {
        return Err(Error::EmptyCombination);
    }
    let n_z = sources[0].0.n_classes();
    if let Some((d, _)) = sources.iter().find(|(d, _)| d.n_classes() != n_z) {
        return Err(Error::DimensionMismatch {
            context: "classes shared across sources",
            expected: n_z,
            found: d.n_classes(),
        });
    }
    let mut acc = Accumulator::new(params.n_params());
    for (data, batch) in sources {
        acc.add_batch(params, data, batch)?;
    }
    acc.finish()
}

/// Several datasets addressed through one global index space, so a training
/// loop can shuffle and batch them together. Global index `g` belongs to the
/// first source whose cumulative length exceeds `g`.
#[derive(Debug, Clone)]
pub struct CombinedObjective {
    sources: Vec<WeakDataset>,
    offsets: Vec<usize>,
}

impl CombinedObjective {
    pub fn new(sources: Vec<WeakDataset>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::EmptyCombination);
        }
        let n_z = sources[0].n_classes();
        let d = sources[0].input_dim();
        for s in &sources {
            if s.n_classes() != n_z {
                return Err(Error::DimensionMismatch {
                    context: "classes shared across sources",
                    expected: n_z,
                    found: s.n_classes(),
                });
            }
            if s.input_dim() != d {
                return Err(Error::DimensionMismatch {
                    context: "input dimension shared across sources",
                    expected: d,
                    found: s.input_dim(),
                });
            }
        }
        let mut offsets = Vec::with_capacity(sources.len() + 1);
        offsets.push(0);
        for s in &sources {
            offsets.push(offsets.last().unwrap() + s.len());
        }
        Ok(Self { sources, offsets })
    }

    pub fn sources(&self) -> &[WeakDataset] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.sources[0].n_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.sources[0].input_dim()
    }

    /// Loss and gradient over a batch of global indices.
    pub fn evaluate(&self, params: &ClassifierParams, batch: &[usize]) -> Result<LossAndGrad> {
        let mut local: Vec<Vec<usize>> = vec![Vec::new(); self.sources.len()];
        for &g in batch {
            if g >= self.len() {
                return Err(Error::IndexOutOfRange {
                    context: "combined batch",
                    index: g,
                    len: self.len(),
                });
            }
            let s = self.offsets.partition_point(|&o| o <= g) - 1;
            local[s].push(g - self.offsets[s]);
        }
        let pairs: Vec<(&WeakDataset, &[usize])> = self
            .sources
            .iter()
            .zip(&local)
            .map(|(d, b)| (d, b.as_slice()))
            .collect();
        combined_nll(params, &pairs)
    }
}
