//! The conditional distribution of an indirect observation given the true
//! class, stored as a column-stochastic matrix.
//!
//! Rows index the observation `y`, columns index the true class `z`, so
//! `get(y, z) = p(Y = y | Z = z)` and every column sums to one. Every
//! supported kind of weak supervision reduces to one of these matrices.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{SimplexVector, ARITHMETIC_TOL, CONSTRUCTION_TOL};

/// `p(Y | Z)` as an `n_y x n_z` column-stochastic matrix.
///
/// Serialized as `{"n_y": .., "n_z": .., "rows": [[..], ..]}` with row-major
/// rows. Deserialization validates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransition", into = "RawTransition")]
pub struct TransitionMatrix {
    n_y: usize,
    n_z: usize,
    // row-major, entries[y * n_z + z]
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTransition {
    n_y: usize,
    n_z: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RawTransition> for TransitionMatrix {
    type Error = Error;
    fn try_from(raw: RawTransition) -> Result<Self> {
        if raw.rows.len() != raw.n_y {
            return Err(Error::DimensionMismatch {
                context: "transition rows",
                expected: raw.n_y,
                found: raw.rows.len(),
            });
        }
        Self::from_rows(&raw.rows).and_then(|m| {
            if m.n_z != raw.n_z {
                Err(Error::DimensionMismatch {
                    context: "transition columns",
                    expected: raw.n_z,
                    found: m.n_z,
                })
            } else {
                Ok(m)
            }
        })
    }
}

impl From<TransitionMatrix> for RawTransition {
    fn from(m: TransitionMatrix) -> Self {
        RawTransition {
            n_y: m.n_y,
            n_z: m.n_z,
            rows: m.rows(),
        }
    }
}

impl TransitionMatrix {
    /// Builds a matrix from row-major rows and validates it.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_y = rows.len();
        let n_z = rows.first().map_or(0, Vec::len);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n_z {
                return Err(Error::InvalidShape(format!(
                    "row {j} has {} entries, expected {n_z}",
                    row.len()
                )));
            }
        }
        let m = Self {
            n_y,
            n_z,
            entries: rows.concat(),
        };
        m.validate()?;
        Ok(m)
    }

    fn from_fn(n_y: usize, n_z: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(n_y * n_z);
        for y in 0..n_y {
            for z in 0..n_z {
                entries.push(f(y, z));
            }
        }
        let m = Self { n_y, n_z, entries };
        m.validate()?;
        Ok(m)
    }

    /// Checks shape, entry range and column sums (tolerance 1e-12).
    pub fn validate(&self) -> Result<()> {
        self.validate_with_tolerance(CONSTRUCTION_TOL)
    }

    fn validate_with_tolerance(&self, tol: f64) -> Result<()> {
        if self.n_y < 1 {
            return Err(Error::InvalidShape("need at least one observation outcome".into()));
        }
        if self.n_z < 2 {
            return Err(Error::InvalidShape(format!(
                "need at least two classes, found {}",
                self.n_z
            )));
        }
        if self.entries.len() != self.n_y * self.n_z {
            return Err(Error::InvalidShape("entry count does not match shape".into()));
        }
        for y in 0..self.n_y {
            for z in 0..self.n_z {
                let v = self.get(y, z);
                if v.is_nan() {
                    return Err(Error::EntryOutOfRange { row: y, column: z, value: v });
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry { row: y, column: z, value: v });
                }
                if v > 1.0 {
                    return Err(Error::EntryOutOfRange { row: y, column: z, value: v });
                }
            }
        }
        for z in 0..self.n_z {
            let sum = self.column_sum(z);
            if (sum - 1.0).abs() > tol {
                return Err(Error::ColumnNotStochastic { column: z, sum });
            }
        }
        Ok(())
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    /// `p(Y = y | Z = z)`.
    #[inline]
    pub fn get(&self, y: usize, z: usize) -> f64 {
        self.entries[y * self.n_z + z]
    }

    /// Row `y`: the likelihood of observation `y` under each class.
    pub fn row(&self, y: usize) -> &[f64] {
        &self.entries[y * self.n_z..(y + 1) * self.n_z]
    }

    pub fn column(&self, z: usize) -> Vec<f64> {
        (0..self.n_y).map(|y| self.get(y, z)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_y).map(|y| self.row(y).to_vec()).collect()
    }

    fn column_sum(&self, z: usize) -> f64 {
        (0..self.n_y).map(|y| self.get(y, z)).sum()
    }

    pub fn identity(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidClassCount(k));
        }
        Self::from_fn(k, k, |y, z| if y == z { 1.0 } else { 0.0 })
    }

    /// Symmetric class-conditional noise: keep the label with probability
    /// `1 - rate`, otherwise flip uniformly to one of the other classes.
    pub fn class_conditional_noise(k: usize, rate: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidClassCount(k));
        }
        let max = (k - 1) as f64 / k as f64;
        if !(0.0..max).contains(&rate) {
            return Err(Error::InvalidRate { rate, max });
        }
        let off = rate / (k - 1) as f64;
        Self::from_fn(k, k, |y, z| if y == z { 1.0 - rate } else { off })
    }

    /// Uniform complementary labels: the observation names one class the
    /// instance does not belong to, chosen uniformly among the other `k - 1`.
    pub fn uniform_complementary(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidClassCount(k));
        }
        let off = 1.0 / (k - 1) as f64;
        Self::from_fn(k, k, |y, z| if y == z { 0.0 } else { off })
    }

    /// Coarse-grained labels from a partition of the classes into disjoint
    /// groups. Observation `j` is the index of the group containing the class.
    pub fn coarse_partition(k: usize, groups: &[Vec<usize>]) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidClassCount(k));
        }
        let mut owner = vec![None; k];
        for (j, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::IncompletePartition(format!("group {j} is empty")));
            }
            for &class in group {
                if class >= k {
                    return Err(Error::IncompletePartition(format!(
                        "group {j} names class {class}, but there are only {k} classes"
                    )));
                }
                if owner[class].is_some() {
                    return Err(Error::OverlappingPartition { class });
                }
                owner[class] = Some(j);
            }
        }
        let missing: Vec<usize> = (0..k).filter(|&c| owner[c].is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::IncompletePartition(format!(
                "classes {missing:?} belong to no group"
            )));
        }
        Self::from_fn(groups.len(), k, |y, z| if owner[z] == Some(y) { 1.0 } else { 0.0 })
    }

    /// Positive-unlabeled learning in the censoring setting.
    ///
    /// Classes are `Z = 0` (positive) and `Z = 1` (negative); observations are
    /// `Y = 0` (labeled positive) and `Y = 1` (unlabeled). A positive is
    /// labeled with probability `propensity`; negatives are never labeled.
    pub fn pu_censoring(propensity: f64) -> Result<Self> {
        if !(propensity > 0.0 && propensity <= 1.0) {
            return Err(Error::InvalidPropensity(propensity));
        }
        Self::from_rows(&[vec![propensity, 0.0], vec![1.0 - propensity, 1.0]])
    }

    /// Multiclass label proportions.
    ///
    /// `proportions[j]` is the class composition `p(Z | Y = j)` of group `j`
    /// and `group_priors` is `p(Y)`. The transition matrix follows from Bayes'
    /// rule: `p(Y = j | Z = i) = p(Z = i | Y = j) p(Y = j) / p(Z = i)`.
    pub fn llp_from_proportions(
        proportions: &[SimplexVector],
        group_priors: &SimplexVector,
    ) -> Result<Self> {
        let n_y = proportions.len();
        if group_priors.len() != n_y {
            return Err(Error::DimensionMismatch {
                context: "group priors",
                expected: n_y,
                found: group_priors.len(),
            });
        }
        let k = proportions.first().map_or(0, SimplexVector::len);
        if k < 2 {
            return Err(Error::InvalidClassCount(k));
        }
        if let Some(bad) = proportions.iter().find(|p| p.len() != k) {
            return Err(Error::DimensionMismatch {
                context: "label proportions",
                expected: k,
                found: bad.len(),
            });
        }
        let class_prior: Vec<f64> = (0..k)
            .map(|i| (0..n_y).map(|j| proportions[j][i] * group_priors[j]).sum())
            .collect();
        if let Some(class) = class_prior.iter().position(|&p| p <= 0.0) {
            return Err(Error::ZeroClassPrior { class });
        }
        let mut m = Self {
            n_y,
            n_z: k,
            entries: vec![0.0; n_y * k],
        };
        for j in 0..n_y {
            for i in 0..k {
                m.entries[j * k + i] = proportions[j][i] * group_priors[j] / class_prior[i];
            }
        }
        m.validate_with_tolerance(ARITHMETIC_TOL)?;
        for i in 0..k {
            let sum = m.column_sum(i);
            for j in 0..n_y {
                m.entries[j * k + i] /= sum;
            }
        }
        Ok(m)
    }

    /// Forward map from a class distribution to the observation distribution:
    /// `phi_j = sum_i p(Y = j | Z = i) theta_i`.
    pub fn apply(&self, theta: &SimplexVector) -> Result<SimplexVector> {
        if theta.len() != self.n_z {
            return Err(Error::DimensionMismatch {
                context: "apply",
                expected: self.n_z,
                found: theta.len(),
            });
        }
        let phi = (0..self.n_y)
            .map(|y| dot(self.row(y), theta.as_slice()))
            .collect();
        SimplexVector::with_tolerance(phi, ARITHMETIC_TOL)
    }

    /// Groups of classes that share a non-zero row. For a coarse partition this
    /// recovers the partition itself.
    pub fn support_sets(&self) -> Vec<BTreeSet<usize>> {
        (0..self.n_y)
            .map(|y| (0..self.n_z).filter(|&z| self.get(y, z) > 0.0).collect())
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
