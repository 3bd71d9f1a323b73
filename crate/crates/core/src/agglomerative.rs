//! Agglomerative clustering on a precomputed distance matrix, and the
//! tilt/azimuth k-means baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::ingest::SystemMetadata;
use crate::kmeans::{self, KMeansConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    /// Size-weighted mean of pairwise distances (UPGMA).
    Average,
    /// Maximum pairwise distance.
    Complete,
}

impl Linkage {
    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            other => Err(Error::invalid(format!("unknown linkage {other:?}"))),
        }
    }
}

/// One merge step. Clusters are named by their smallest member index, so
/// `left < right` and the merged cluster keeps the name `left`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub new_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub system_ids: Vec<String>,
    /// Cluster of every system; labels are numbered in order of each
    /// cluster's first member.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// `None` for the angle baseline.
    pub linkage: Option<Linkage>,
    pub merge_trace: Vec<Merge>,
}

impl ClusterAssignment {
    pub fn from_labels(system_ids: Vec<String>, labels: &[usize], linkage: Option<Linkage>) -> Result<Self> {
        if system_ids.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: system_ids.len(),
                got: labels.len(),
            });
        }
        let (labels, n_clusters) = canonical_labels(labels);
        Ok(Self {
            system_ids,
            labels,
            n_clusters,
            linkage,
            merge_trace: Vec::new(),
        })
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&u| self.labels[u] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn min_cluster_size(&self) -> usize {
        self.sizes().into_iter().min().unwrap_or(0)
    }
}

/// Renumbers arbitrary labels by order of first appearance.
fn canonical_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Merges the closest pair of clusters until `n_clusters` remain. Ties go
/// to the lexicographically smallest `(left, right)` pair.
pub fn agglomerate(dist: &DistanceMatrix, n_clusters: usize, linkage: Linkage) -> Result<ClusterAssignment> {
    let n = dist.len();
    if n_clusters < 1 || n_clusters > n {
        return Err(Error::invalid(format!(
            "cannot cut {n} systems into {n_clusters} clusters"
        )));
    }
    let mut d = dist.values.clone();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(n - n_clusters);

    for _ in 0..n - n_clusters {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if best.is_none_or(|(bi, bj)| d[i][j] < d[bi][bj]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("at least two active clusters");
        let height = d[i][j];
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let merged = match linkage {
                Linkage::Average => (ni * d[k][i] + nj * d[k][j]) / (ni + nj),
                Linkage::Complete => d[k][i].max(d[k][j]),
            };
            d[k][i] = merged;
            d[i][k] = merged;
        }
        active[j] = false;
        size[i] += size[j];
        for o in owner.iter_mut().filter(|o| **o == j) {
            *o = i;
        }
        trace.push(Merge {
            left: i,
            right: j,
            height,
            new_size: size[i],
        });
    }

    let (labels, n_clusters) = canonical_labels(&owner);
    Ok(ClusterAssignment {
        system_ids: dist.system_ids.clone(),
        labels,
        n_clusters,
        linkage: Some(linkage),
        merge_trace: trace,
    })
}

/// k-means on `(tilt, azimuth)` in degrees, azimuth taken as a plain
/// coordinate.
pub fn baseline_angle_kmeans(meta: &[SystemMetadata], n_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    let missing: Vec<&str> = meta
        .iter()
        .filter(|m| !(m.tilt.is_finite() && m.azimuth.is_finite()))
        .map(|m| m.system_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("missing panel angles for systems {}", missing.join(", "))));
    }
    if n_clusters < 1 || n_clusters > meta.len() {
        return Err(Error::invalid(format!(
            "cannot cut {} systems into {n_clusters} clusters",
            meta.len()
        )));
    }
    let points: Vec<Vec<f64>> = meta.iter().map(|m| vec![m.tilt, m.azimuth]).collect();
    let fit = kmeans::fit(&points, &KMeansConfig::new(n_clusters, seed))?;
    ClusterAssignment::from_labels(meta.iter().map(|m| m.system_id.clone()).collect(), &fit.labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Metric;

    fn matrix(n: usize, entries: &[((usize, usize), f64)]) -> DistanceMatrix {
        let mut v = vec![vec![0.0; n]; n];
        for &((i, j), d) in entries {
            v[i][j] = d;
            v[j][i] = d;
        }
        DistanceMatrix::new(v, Metric::SymKl, (0..n).map(|i| format!("s{i}")).collect()).unwrap()
    }

    fn groups(a: &ClusterAssignment) -> Vec<Vec<usize>> {
        (0..a.n_clusters).map(|c| a.members(c)).collect()
    }

    #[test]
    fn three_points_hand_traced() {
        let d = matrix(3, &[((0, 1), 1.0), ((0, 2), 5.0), ((1, 2), 4.0)]);
        for l in [Linkage::Average, Linkage::Complete] {
            let a = agglomerate(&d, 2, l).unwrap();
            assert_eq!(groups(&a), vec![vec![0, 1], vec![2]]);
            assert_eq!(a.merge_trace, vec![Merge { left: 0, right: 1, height: 1.0, new_size: 2 }]);
        }
        let avg = agglomerate(&d, 1, Linkage::Average).unwrap();
        assert_eq!(avg.merge_trace[1].height, 4.5);
        let cmp = agglomerate(&d, 1, Linkage::Complete).unwrap();
        assert_eq!(cmp.merge_trace[1].height, 5.0);
    }

    #[test]
    fn four_points_both_linkages() {
        let d = matrix(
            4,
            &[((0, 1), 1.0), ((2, 3), 1.1), ((0, 2), 2.0), ((0, 3), 2.0), ((1, 2), 2.0), ((1, 3), 10.0)],
        );
        for l in [Linkage::Average, Linkage::Complete] {
            assert_eq!(groups(&agglomerate(&d, 2, l).unwrap()), vec![vec![0, 1], vec![2, 3]]);
        }
    }

    #[test]
    fn c_equal_u_and_c_one() {
        let d = matrix(3, &[((0, 1), 1.0), ((0, 2), 2.0), ((1, 2), 3.0)]);
        let a = agglomerate(&d, 3, Linkage::Average).unwrap();
        assert!(a.merge_trace.is_empty());
        assert_eq!(a.labels, vec![0, 1, 2]);
        let one = agglomerate(&d, 1, Linkage::Complete).unwrap();
        assert_eq!(one.labels, vec![0, 0, 0]);
        assert!(agglomerate(&d, 0, Linkage::Average).is_err());
        assert!(agglomerate(&d, 4, Linkage::Average).is_err());
    }

    #[test]
    fn ties_take_smallest_pair() {
        let d = matrix(4, &[((0, 1), 2.0), ((0, 2), 3.0), ((0, 3), 3.0), ((1, 2), 3.0), ((1, 3), 3.0), ((2, 3), 2.0)]);
        let a = agglomerate(&d, 3, Linkage::Complete).unwrap();
        assert_eq!((a.merge_trace[0].left, a.merge_trace[0].right), (0, 1));
    }

    fn meta(id: usize, tilt: f64, azimuth: f64) -> SystemMetadata {
        SystemMetadata {
            system_id: format!("s{id}"),
            capacity: 1.0,
            tilt,
            azimuth,
        }
    }

    #[test]
    fn baseline_recovers_angle_groups() {
        let meta: Vec<_> = (0..10)
            .map(|i| {
                let jitter = 0.1 * ((i % 3) as f64 - 1.0);
                if i % 2 == 0 { meta(i, 30.0 + jitter, 180.0 - jitter) } else { meta(i, 45.0 + jitter, 90.0 + jitter) }
            })
            .collect();
        for seed in 0..5 {
            let a = baseline_angle_kmeans(&meta, 2, seed).unwrap();
            assert_eq!(groups(&a), vec![vec![0, 2, 4, 6, 8], vec![1, 3, 5, 7, 9]]);
            assert_eq!(a, baseline_angle_kmeans(&meta, 2, seed).unwrap());
        }
        assert_eq!(baseline_angle_kmeans(&meta, 1, 0).unwrap().labels, vec![0; 10]);
    }

    #[test]
    fn baseline_names_systems_without_angles() {
        let meta = vec![meta(0, 30.0, 180.0), meta(1, f64::NAN, 90.0)];
        let err = baseline_angle_kmeans(&meta, 1, 0).unwrap_err();
        assert!(err.to_string().contains("s1"));
    }
}
