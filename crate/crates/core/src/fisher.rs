//! Score functions and Fisher information for categorical targets.
//!
//! Everything here works in the overparameterized simplex coordinates: `theta`
//! has `K` free-looking entries, the direct Fisher information is
//! `diag(1 / theta_i)`, and its inverse has diagonal `theta_i`. The sum-to-one
//! constraint is not projected out, so these are not the constrained
//! multinomial variances `theta_i (1 - theta_i)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::simplex::SimplexVector;
use crate::transition::TransitionMatrix;

/// Default relative threshold on singular values for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
/// Entries of `theta` below this count as being on the simplex boundary.
pub const INTERIOR_MIN: f64 = 1e-12;

fn check_interior(theta: &SimplexVector) -> Result<()> {
    for (index, &value) in theta.as_slice().iter().enumerate() {
        if value < INTERIOR_MIN {
            return Err(Error::ZeroProbability { index, value });
        }
    }
    Ok(())
}

fn check_dims(theta: &SimplexVector, m: &TransitionMatrix) -> Result<()> {
    if theta.len() != m.n_z() {
        return Err(Error::DimensionMismatch {
            context: "theta vs transition columns",
            expected: m.n_z(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// Score of a direct observation: `1 / theta_z` at position `z`, zero elsewhere.
pub fn score_direct(z: usize, theta: &SimplexVector) -> Result<Vec<f64>> {
    check_interior(theta)?;
    if z >= theta.len() {
        return Err(Error::IndexOutOfRange {
            context: "class",
            index: z,
            len: theta.len(),
        });
    }
    let mut s = vec![0.0; theta.len()];
    s[z] = 1.0 / theta[z];
    Ok(s)
}

/// Score of an indirect observation: entry `i` is `M[y][i] / phi_y`.
pub fn score_indirect(y: usize, theta: &SimplexVector, m: &TransitionMatrix) -> Result<Vec<f64>> {
    check_dims(theta, m)?;
    if y >= m.n_y() {
        return Err(Error::IndexOutOfRange {
            context: "observation",
            index: y,
            len: m.n_y(),
        });
    }
    let row = m.row(y);
    let phi_y: f64 = row.iter().zip(theta.as_slice()).map(|(a, t)| a * t).sum();
    if !(phi_y > 0.0) {
        return Err(Error::ZeroObservationProbability { index: y });
    }
    Ok(row.iter().map(|a| a / phi_y).collect())
}

/// `I_Z(theta) = diag(1 / theta_i)`.
pub fn fisher_direct(theta: &SimplexVector) -> Result<DMatrix<f64>> {
    check_interior(theta)?;
    let k = theta.len();
    Ok(DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 / theta[a] } else { 0.0 }))
}

/// Closed form `[I_Y]_{ab} = sum_j M[j][a] M[j][b] / phi_j`.
///
/// Rows of `M` that are entirely zero never occur and contribute nothing.
pub fn fisher_indirect(theta: &SimplexVector, m: &TransitionMatrix) -> Result<DMatrix<f64>> {
    check_dims(theta, m)?;
    check_interior(theta)?;
    let phi = m.apply(theta)?;
    let k = m.n_z();
    let mut info = DMatrix::zeros(k, k);
    for j in 0..m.n_y() {
        let row = m.row(j);
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        if !(phi[j] > 0.0) {
            return Err(Error::ZeroObservationProbability { index: j });
        }
        for a in 0..k {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..k {
                info[(a, b)] += row[a] * row[b] / phi[j];
            }
        }
    }
    Ok(info)
}

/// Fisher information as the covariance of the score, `E[s s^T]`, computed by
/// enumerating every observation outcome with its probability `phi_j`.
pub fn fisher_bruteforce(theta: &SimplexVector, m: &TransitionMatrix) -> Result<DMatrix<f64>> {
    check_dims(theta, m)?;
    check_interior(theta)?;
    let k = m.n_z();
    let mut info = DMatrix::zeros(k, k);
    for j in 0..m.n_y() {
        let phi_j: f64 = (0..k).map(|i| m.get(j, i) * theta[i]).sum();
        if phi_j == 0.0 && m.row(j).iter().all(|&v| v == 0.0) {
            continue;
        }
        let s = nalgebra::DVector::from_vec(score_indirect(j, theta, m)?);
        info += (&s * s.transpose()) * phi_j;
    }
    Ok(info)
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Singular values in descending order.
fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Diagonal of an inverse Fisher matrix, or all-infinite when it is singular.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticVariance {
    pub values: Vec<f64>,
    pub invertible: bool,
    pub singular_values: Vec<f64>,
}

/// Diagonal of `info^{-1}`, treating `info` as singular when its smallest
/// singular value is at most `rank_tol` times its largest.
pub fn asymptotic_variance(info: &DMatrix<f64>, rank_tol: f64) -> AsymptoticVariance {
    let sym = symmetrize(info);
    let k = sym.nrows();
    let sv = singular_values(&sym);
    let largest = sv.first().copied().unwrap_or(0.0);
    let smallest = sv.last().copied().unwrap_or(0.0);
    if k == 0 || !(largest > 0.0) || smallest <= rank_tol * largest {
        return AsymptoticVariance {
            values: vec![f64::INFINITY; k],
            invertible: false,
            singular_values: sv,
        };
    }
    let eig = SymmetricEigen::new(sym);
    let values = (0..k)
        .map(|i| {
            (0..k)
                .map(|e| eig.eigenvectors[(i, e)].powi(2) / eig.eigenvalues[e])
                .sum()
        })
        .collect();
    AsymptoticVariance {
        values,
        invertible: true,
        singular_values: sv,
    }
}

/// Whether distinct class distributions always give distinct observation
/// distributions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identifiability {
    pub identifiable: bool,
    pub rank: usize,
    pub n_z: usize,
    pub singular_values: Vec<f64>,
    pub rank_tol: f64,
    pub justification: String,
}

const IDENTIFIABILITY_NOTE: &str = "columns of M sum to 1, so any kernel vector d has sum(d) = 0 \
     and theta + t*d stays on the simplex for small t; M*theta1 = M*theta2 for distinct simplex \
     points exactly when M has a non-trivial kernel, so identifiability is full column rank";

/// Identifiable iff `rank(M) = n_z`, with rank counted as singular values
/// above `rank_tol * sigma_max`.
pub fn check_identifiability(m: &TransitionMatrix, rank_tol: f64) -> Identifiability {
    let a = DMatrix::from_row_slice(m.n_y(), m.n_z(), &m.rows().concat());
    let sv = singular_values(&a);
    let largest = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| s > rank_tol * largest).count();
    Identifiability {
        identifiable: rank == m.n_z(),
        rank,
        n_z: m.n_z(),
        singular_values: sv,
        rank_tol,
        justification: IDENTIFIABILITY_NOTE.to_string(),
    }
}

/// Smallest eigenvalue of `I_Z(theta) - I_Y(theta)`. Non-negative up to
/// rounding for every valid `M`.
pub fn verify_loewner(theta: &SimplexVector, m: &TransitionMatrix) -> Result<f64> {
    let diff = fisher_direct(theta)? - fisher_indirect(theta, m)?;
    Ok(min_eigenvalue(&diff))
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| a[(r, c)]).collect())
        .collect()
}

fn serialize_matrix<S: Serializer>(a: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(a).serialize(s)
}

// JSON has no infinity; singular directions serialize as null.
fn serialize_variances<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter()
        .map(|x| x.is_finite().then_some(*x))
        .collect::<Vec<_>>()
        .serialize(s)
}

/// Everything known about how informative `M` is at a given `theta`.
#[derive(Debug, Clone, Serialize)]
pub struct FisherReport {
    pub theta: SimplexVector,
    pub transition: TransitionMatrix,
    #[serde(serialize_with = "serialize_matrix")]
    pub info_direct: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub info_indirect: DMatrix<f64>,
    #[serde(serialize_with = "serialize_variances")]
    pub asym_var_direct: Vec<f64>,
    /// `null` in JSON marks an infinite variance (singular `I_Y`).
    #[serde(serialize_with = "serialize_variances")]
    pub asym_var_indirect: Vec<f64>,
    pub info_indirect_singular_values: Vec<f64>,
    pub psd_margin: f64,
    pub identifiable: bool,
    pub identifiability: Identifiability,
}

pub fn fisher_report(
    theta: &SimplexVector,
    m: &TransitionMatrix,
    rank_tol: f64,
) -> Result<FisherReport> {
    let info_direct = fisher_direct(theta)?;
    let info_indirect = fisher_indirect(theta, m)?;
    let direct = asymptotic_variance(&info_direct, rank_tol);
    let indirect = asymptotic_variance(&info_indirect, rank_tol);
    let identifiability = check_identifiability(m, rank_tol);
    let psd_margin = min_eigenvalue(&(&info_direct - &info_indirect));
    Ok(FisherReport {
        theta: theta.clone(),
        transition: m.clone(),
        info_direct,
        info_indirect,
        asym_var_direct: direct.values,
        asym_var_indirect: indirect.values,
        info_indirect_singular_values: indirect.singular_values,
        psd_margin,
        identifiable: identifiability.identifiable && indirect.invertible,
        identifiability,
    })
}

impl FisherReport {
    /// Plain-text table of the per-class variances.
    pub fn table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "{:>5}  {:>10}  {:>14}  {:>14}  {:>10}", "class", "theta", "var(direct)", "var(indirect)", "ratio").unwrap();
        for i in 0..self.theta.len() {
            let d = self.asym_var_direct[i];
            let v = self.asym_var_indirect[i];
            let (vs, ratio) = if v.is_finite() {
                (format!("{v:.6}"), format!("{:.3}", v / d))
            } else {
                ("inf".to_string(), "inf".to_string())
            };
            writeln!(out, "{i:>5}  {:>10.6}  {d:>14.6}  {vs:>14}  {ratio:>10}", self.theta[i]).unwrap();
        }
        writeln!(out, "psd margin (min eig I_Z - I_Y): {:.3e}", self.psd_margin).unwrap();
        writeln!(
            out,
            "identifiable: {} (rank {} of {})",
            self.identifiable, self.identifiability.rank, self.identifiability.n_z
        )
        .unwrap();
        out
    }
}
