//! Quantile summaries of clusters and the pinball-loss based dispersion and
//! leave-one-out sensitivity scores, computed on the original series with
//! their gaps.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::agglomerative::ClusterAssignment;
use crate::error::{Error, Result};
use crate::ingest::RawSeriesTable;

/// Linear interpolation between order statistics of an already sorted,
/// non-empty slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Same as [`quantile_sorted`] on `sorted` with the element at `skip`
/// removed. `None` when nothing is left.
fn quantile_sorted_without(sorted: &[f64], skip: usize, q: f64) -> Option<f64> {
    let m = sorted.len() - 1;
    if m == 0 {
        return None;
    }
    let at = |i: usize| if i < skip { sorted[i] } else { sorted[i + 1] };
    let pos = (m - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(at(lo) + (pos - lo as f64) * (at(hi) - at(lo)))
}

/// Empirical quantile of the finite values, `None` for an empty multiset.
pub fn empirical_quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, q))
}

/// Pinball loss of observation `x` against quantile prediction `y` at level `q`.
pub fn pinball(x: f64, y: f64, q: f64) -> f64 {
    (q * (x - y)).max((1.0 - q) * (y - x))
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("at least one quantile level is required"));
    }
    if levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::invalid("quantile levels must lie in (0, 1)"));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("quantile levels must be strictly increasing"));
    }
    Ok(())
}

/// Per-timestep quantiles of a cluster's members.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSummary {
    /// `T` rows of `Q` values; a row of `NaN` where no member was observed.
    pub values: Vec<Vec<f64>>,
    pub levels: Vec<f64>,
    pub cluster: usize,
    /// Number of members with a finite value at each timestep.
    pub coverage: Vec<usize>,
}

impl QuantileSummary {
    pub fn is_defined(&self, t: usize) -> bool {
        self.coverage[t] > 0
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn summarize_cluster(members: &[&[f64]], levels: &[f64], cluster: usize) -> Result<QuantileSummary> {
    validate_levels(levels)?;
    let Some(first) = members.first() else {
        return Err(Error::invalid(format!("cluster {cluster} has no members to summarize")));
    };
    let t_len = first.len();
    if let Some(m) = members.iter().find(|m| m.len() != t_len) {
        return Err(Error::DimensionMismatch {
            expected: t_len,
            got: m.len(),
        });
    }
    let mut values = Vec::with_capacity(t_len);
    let mut coverage = Vec::with_capacity(t_len);
    let mut buf = Vec::with_capacity(members.len());
    for t in 0..t_len {
        buf.clear();
        buf.extend(members.iter().map(|m| m[t]).filter(|v| v.is_finite()));
        buf.sort_by(f64::total_cmp);
        coverage.push(buf.len());
        if buf.is_empty() {
            values.push(vec![f64::NAN; levels.len()]);
        } else {
            values.push(levels.iter().map(|&q| quantile_sorted(&buf, q)).collect());
        }
    }
    Ok(QuantileSummary {
        values,
        levels: levels.to_vec(),
        cluster,
        coverage,
    })
}

/// Mean pinball loss over the `(t, i)` pairs where `x` is observed and the
/// summary is defined. `None` when there is no such pair.
pub fn quantile_score(x: &[f64], summary: &QuantileSummary) -> Result<Option<f64>> {
    if x.len() != summary.len() {
        return Err(Error::DimensionMismatch {
            expected: summary.len(),
            got: x.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, &xt) in x.iter().enumerate() {
        if !xt.is_finite() || !summary.is_defined(t) {
            continue;
        }
        for (&y, &q) in summary.values[t].iter().zip(&summary.levels) {
            total += pinball(xt, y, q);
            count += 1;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Mean score over systems, with the systems that could not be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub score: f64,
    /// Aligned with the assignment's systems.
    pub per_system: Vec<Option<f64>>,
    pub excluded: Vec<String>,
}

impl ScoreReport {
    fn from_scores(system_ids: &[String], per_system: Vec<Option<f64>>) -> Result<Self> {
        let scored: Vec<f64> = per_system.iter().flatten().copied().collect();
        if scored.is_empty() {
            return Err(Error::invalid("no system has a scoreable timestep"));
        }
        let excluded = system_ids
            .iter()
            .zip(&per_system)
            .filter(|(_, s)| s.is_none())
            .map(|(id, _)| id.clone())
            .collect();
        Ok(Self {
            score: scored.iter().sum::<f64>() / scored.len() as f64,
            per_system,
            excluded,
        })
    }
}

/// Row of `table` for every system of `assignment`, in assignment order.
fn rows_for<'a>(table: &'a RawSeriesTable, assignment: &ClusterAssignment) -> Result<Vec<&'a [f64]>> {
    let index: HashMap<&str, usize> = table.system_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    assignment
        .system_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&u| table.series(u))
                .ok_or_else(|| Error::invalid(format!("system {id} is not in the series table")))
        })
        .collect()
}

pub fn summarize_all(table: &RawSeriesTable, assignment: &ClusterAssignment, levels: &[f64]) -> Result<Vec<QuantileSummary>> {
    let rows = rows_for(table, assignment)?;
    (0..assignment.n_clusters)
        .into_par_iter()
        .map(|c| {
            let members: Vec<&[f64]> = assignment.members(c).into_iter().map(|u| rows[u]).collect();
            summarize_cluster(&members, levels, c)
        })
        .collect()
}

/// Summary of `system`'s cluster computed without `system` itself.
pub fn summarize_without(
    table: &RawSeriesTable,
    assignment: &ClusterAssignment,
    levels: &[f64],
    system: usize,
) -> Result<QuantileSummary> {
    let rows = rows_for(table, assignment)?;
    let c = assignment.labels[system];
    let members: Vec<&[f64]> = assignment
        .members(c)
        .into_iter()
        .filter(|&u| u != system)
        .map(|u| rows[u])
        .collect();
    if members.is_empty() {
        return Err(Error::ClusterTooSmall { cluster: c, size: 1 });
    }
    summarize_cluster(&members, levels, c)
}

/// Per-member `(sum of pinball terms, pair count)` for one cluster, against
/// the cluster's own quantiles (`leave_out == false`) or the quantiles of the
/// other members.
fn cluster_terms(members: &[&[f64]], levels: &[f64], leave_out: bool) -> Vec<(f64, usize)> {
    let t_len = members[0].len();
    let mut acc = vec![(0.0, 0usize); members.len()];
    let mut sorted = Vec::with_capacity(members.len());
    let mut own = vec![0.0; levels.len()];
    for t in 0..t_len {
        sorted.clear();
        sorted.extend(members.iter().map(|m| m[t]).filter(|v| v.is_finite()));
        if sorted.is_empty() {
            continue;
        }
        sorted.sort_by(f64::total_cmp);
        if !leave_out {
            for (o, &q) in own.iter_mut().zip(levels) {
                *o = quantile_sorted(&sorted, q);
            }
        }
        for (m, slot) in members.iter().zip(acc.iter_mut()) {
            let x = m[t];
            if !x.is_finite() {
                continue;
            }
            if leave_out {
                let skip = sorted.partition_point(|v| *v < x);
                for &q in levels {
                    if let Some(y) = quantile_sorted_without(&sorted, skip, q) {
                        slot.0 += pinball(x, y, q);
                        slot.1 += 1;
                    }
                }
            } else {
                for (&y, &q) in own.iter().zip(levels) {
                    slot.0 += pinball(x, y, q);
                    slot.1 += 1;
                }
            }
        }
    }
    acc
}

type ClusterTerms = (Vec<usize>, Vec<(f64, usize)>);

fn score(table: &RawSeriesTable, assignment: &ClusterAssignment, levels: &[f64], leave_out: bool) -> Result<ScoreReport> {
    validate_levels(levels)?;
    let rows = rows_for(table, assignment)?;
    // (member indices, per-member pinball sums and counts) for each cluster
    let per_cluster: Vec<ClusterTerms> = (0..assignment.n_clusters)
        .into_par_iter()
        .map(|c| {
            let idx = assignment.members(c);
            let members: Vec<&[f64]> = idx.iter().map(|&u| rows[u]).collect();
            let terms = cluster_terms(&members, levels, leave_out);
            (idx, terms)
        })
        .collect();
    let mut per_system = vec![None; assignment.labels.len()];
    for (idx, terms) in per_cluster {
        for (u, (sum, n)) in idx.into_iter().zip(terms) {
            per_system[u] = (n > 0).then(|| sum / n as f64);
        }
    }
    ScoreReport::from_scores(&assignment.system_ids, per_system)
}

/// Mean quantile score of every system against its own cluster's summary.
pub fn dispersion_score(table: &RawSeriesTable, assignment: &ClusterAssignment, levels: &[f64]) -> Result<ScoreReport> {
    score(table, assignment, levels, false)
}

/// Mean quantile score of every system against its cluster's summary with
/// the system left out. Every cluster needs at least two members.
pub fn sensitivity_score(table: &RawSeriesTable, assignment: &ClusterAssignment, levels: &[f64]) -> Result<ScoreReport> {
    if let Some((c, &size)) = assignment.sizes().iter().enumerate().find(|(_, s)| **s < 2) {
        return Err(Error::ClusterTooSmall { cluster: c, size });
    }
    score(table, assignment, levels, true)
}

/// A series with its gaps filled from a cluster summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSeries {
    pub system_id: String,
    pub values: Vec<f64>,
    pub imputed: Vec<bool>,
    /// Missing cells that stayed missing because no peer was observed.
    pub unfilled: usize,
}

/// Fills the missing cells of `system_id` with level `q` of its cluster's
/// summary computed without the system itself. Observed cells are copied.
pub fn impute_system(
    table: &RawSeriesTable,
    assignment: &ClusterAssignment,
    system_id: &str,
    q: f64,
) -> Result<ImputedSeries> {
    let u = assignment
        .system_ids
        .iter()
        .position(|s| s == system_id)
        .ok_or_else(|| Error::invalid(format!("system {system_id} is not in the cluster assignment")))?;
    let summary = summarize_without(table, assignment, &[q], u)?;
    let row = rows_for(table, assignment)?[u];
    let mut values = row.to_vec();
    let mut imputed = vec![false; row.len()];
    let mut unfilled = 0;
    for (t, v) in values.iter_mut().enumerate() {
        if v.is_finite() {
            continue;
        }
        if summary.is_defined(t) {
            *v = summary.values[t][0];
            imputed[t] = true;
        } else {
            unfilled += 1;
        }
    }
    Ok(ImputedSeries {
        system_id: system_id.to_string(),
        values,
        imputed,
        unfilled,
    })
}
