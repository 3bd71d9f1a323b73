//! Lloyd's k-means with k-means++ seeding.
//!
//! Shared by the wording step (daily profiles) and the tilt/azimuth baseline.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step, final pass included.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the
/// lowest index.
pub fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, point);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(centroids: &[Vec<f64>], points: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.par_iter().map(|p| nearest(centroids, p)).unzip()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut chosen = vec![false; m];
    let first = rng.random_range(0..m);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.par_iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[pick] = true;
        let c = points[pick].clone();
        d2.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centroids.push(c);
    }
    centroids
}

/// Moves the farthest point of a multi-member cluster into every empty
/// cluster, making it that cluster's centroid.
fn repair_empty(centroids: &mut [Vec<f64>], points: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<usize> = None;
        for i in 0..points.len() {
            if sizes[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("at least as many points as clusters");
        centroids[empty] = points[i].clone();
        labels[i] = empty;
        dists[i] = 0.0;
    }
}

pub fn fit(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansFit> {
    if points.is_empty() {
        return Err(Error::invalid("k-means needs at least one point"));
    }
    if cfg.k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if points.len() < cfg.k {
        return Err(Error::invalid(format!(
            "k-means with k = {} needs at least as many points, got {}",
            cfg.k,
            points.len()
        )));
    }
    if cfg.tol.is_nan() || cfg.tol <= 0.0 {
        return Err(Error::invalid("k-means tolerance must be positive"));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means points must be finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(points, cfg.k, &mut rng);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (mut labels, mut dists) = assign(&centroids, points);
        repair_empty(&mut centroids, points, &mut labels, &mut dists);
        trace.push(dists.iter().sum());

        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            let mean: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
            shift = shift.max(sq_dist(c, &mean).sqrt());
            *c = mean;
        }
        if shift < cfg.tol {
            converged = true;
            break;
        }
    }

    let (mut labels, mut dists) = assign(&centroids, points);
    repair_empty(&mut centroids, points, &mut labels, &mut dists);
    let inertia = dists.iter().sum();
    trace.push(inertia);
    Ok(KMeansFit {
        centroids,
        labels,
        inertia,
        inertia_trace: trace,
        iterations,
        converged,
    })
}
