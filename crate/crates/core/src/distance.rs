//! Closed-form statistical distances between Dirichlet embeddings.
//!
//! Everything is evaluated through log-gamma and digamma, so concentrations
//! in the thousands (systems with years of complete days) stay finite.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::lda::DirichletEmbedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SymKl,
    Bhattacharyya,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SymKl => "sym_kl",
            Metric::Bhattacharyya => "bhattacharyya",
        }
    }

    pub fn eval(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Metric::SymKl => sym_kl(a, b),
            Metric::Bhattacharyya => bhattacharyya(a, b),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sym_kl" => Ok(Metric::SymKl),
            "bhattacharyya" => Ok(Metric::Bhattacharyya),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("Dirichlet parameters must be non-empty"));
    }
    if a.iter().chain(b).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("Dirichlet concentrations must be positive and finite"));
    }
    Ok(())
}

/// `ln B(v) = sum_k ln Γ(v_k) - ln Γ(sum_k v_k)`.
fn ln_beta(v: &[f64]) -> f64 {
    v.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(v.iter().sum())
}

/// `KL(Dir(a) || Dir(b))`.
pub fn kl_dirichlet(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let a0: f64 = a.iter().sum();
    let b0: f64 = b.iter().sum();
    let dig_a0 = digamma(a0);
    let mut kl = ln_gamma(a0) - ln_gamma(b0);
    for (&ak, &bk) in a.iter().zip(b) {
        kl -= ln_gamma(ak) - ln_gamma(bk);
        kl += (ak - bk) * (digamma(ak) - dig_a0);
    }
    // cancellation can leave a tiny negative residue near a == b
    Ok(kl.max(0.0))
}

/// Symmetrized KL divergence, `(KL(a||b) + KL(b||a)) / 2`.
pub fn sym_kl(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(0.5 * (kl_dirichlet(a, b)? + kl_dirichlet(b, a)?))
}

/// Bhattacharyya distance `-ln ∫ sqrt(p_a p_b)`, zero for identical
/// parameters.
pub fn bhattacharyya(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let d = 0.5 * (ln_beta(a) + ln_beta(b)) - ln_beta(&mid);
    Ok(d.max(0.0))
}

/// Symmetric matrix of pairwise distances, with the system order it was
/// built in.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Vec<Vec<f64>>,
    pub metric: Metric,
    pub system_ids: Vec<String>,
}

impl DistanceMatrix {
    pub fn new(values: Vec<Vec<f64>>, metric: Metric, system_ids: Vec<String>) -> Result<Self> {
        let n = system_ids.len();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.len(),
            });
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            if row[i] != 0.0 {
                return Err(Error::invalid(format!("diagonal entry {i} is {}, not 0", row[i])));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("entry ({i}, {j}) = {v} is not a finite non-negative value")));
                }
                if (v - values[j][i]).abs() > 1e-10 {
                    return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            values,
            metric,
            system_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }
}

pub fn build_distance_matrix(embeddings: &[DirichletEmbedding], metric: Metric) -> Result<DistanceMatrix> {
    let n = embeddings.len();
    if let Some(first) = embeddings.first()
        && let Some(bad) = embeddings.iter().find(|e| e.gamma.len() != first.gamma.len())
    {
        return Err(Error::DimensionMismatch {
            expected: first.gamma.len(),
            got: bad.gamma.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let upper: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| metric.eval(&embeddings[i].gamma, &embeddings[j].gamma))
        .collect::<Result<_>>()?;
    let mut values = vec![vec![0.0; n]; n];
    for (&(i, j), d) in pairs.iter().zip(upper) {
        values[i][j] = d;
        values[j][i] = d;
    }
    DistanceMatrix::new(values, metric, embeddings.iter().map(|e| e.system_id.clone()).collect())
}
