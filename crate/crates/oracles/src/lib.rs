//! Independent reference computations used only by tests.
//!
//! Nothing here calls into `pvcluster`; every routine recomputes its answer
//! from definitions (numerical integration, exhaustive scans, contingency
//! tables).

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// `ln(1 + e^y)` without overflow.
fn softplus(y: f64) -> f64 {
    if y > 0.0 { y + (-y).exp().ln_1p() } else { y.exp().ln_1p() }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Nodes of the tanh-sinh rule on (0, 1) at step `h`: `(ln x, ln(1 - x), ln dx/dt)`.
fn tanh_sinh_nodes(h: f64) -> Vec<(f64, f64, f64)> {
    const T_MAX: f64 = 7.0;
    let n = (T_MAX / h).ceil() as i64;
    (-n..=n)
        .map(|i| {
            let t = i as f64 * h;
            let u = std::f64::consts::FRAC_PI_2 * t.sinh();
            let ln_x = -softplus(-2.0 * u);
            let ln_1mx = -softplus(2.0 * u);
            let ln_w = std::f64::consts::LN_2 + (std::f64::consts::FRAC_PI_2 * t.cosh()).ln() + ln_x + ln_1mx;
            (ln_x, ln_1mx, ln_w)
        })
        .collect()
}

/// Integral over (0, 1) of `exp(log_mag(x)) * factor(x)`, both given as
/// functions of `(ln x, ln(1 - x))` so endpoint singularities and tiny
/// densities never leave log space. The step is halved until two successive
/// estimates agree to `rel_tol`.
pub fn integrate_unit<F>(f: F, rel_tol: f64) -> f64
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let estimate = |h: f64| -> f64 {
        tanh_sinh_nodes(h)
            .into_iter()
            .map(|(lx, l1x, lw)| {
                let (log_mag, factor) = f(lx, l1x);
                if factor == 0.0 || log_mag + lw == f64::NEG_INFINITY {
                    0.0
                } else {
                    (log_mag + lw).exp() * factor
                }
            })
            .sum::<f64>()
            * h
    };
    let mut h = 0.25;
    let mut prev = estimate(h);
    for _ in 0..12 {
        h *= 0.5;
        let next = estimate(h);
        if (next - prev).abs() <= rel_tol * next.abs().max(1e-300) {
            return next;
        }
        prev = next;
    }
    prev
}

/// `ln ∫_0^1 x^(a-1) (1-x)^(b-1) dx`, evaluated numerically.
pub fn ln_beta_numeric(a: f64, b: f64) -> f64 {
    let mut h = 0.25;
    let ln_integral = |h: f64| {
        let logs: Vec<f64> = tanh_sinh_nodes(h)
            .into_iter()
            .map(|(lx, l1x, lw)| (a - 1.0) * lx + (b - 1.0) * l1x + lw)
            .collect();
        log_sum_exp(&logs) + h.ln()
    };
    let mut prev = ln_integral(h);
    for _ in 0..12 {
        h *= 0.5;
        let next = ln_integral(h);
        if (next - prev).abs() < 1e-14 * next.abs().max(1.0) {
            return next;
        }
        prev = next;
    }
    prev
}

/// Log density of Beta(a, b) with a numerically computed normalizer.
struct BetaDensity {
    a: f64,
    b: f64,
    ln_norm: f64,
}

impl BetaDensity {
    fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            ln_norm: ln_beta_numeric(a, b),
        }
    }

    fn ln_pdf(&self, ln_x: f64, ln_1mx: f64) -> f64 {
        (self.a - 1.0) * ln_x + (self.b - 1.0) * ln_1mx - self.ln_norm
    }
}

/// `KL(Beta(a) || Beta(b))` by quadrature of `p ln(p / q)`.
pub fn kl_beta_quadrature(a: [f64; 2], b: [f64; 2]) -> f64 {
    let p = BetaDensity::new(a[0], a[1]);
    let q = BetaDensity::new(b[0], b[1]);
    integrate_unit(
        |lx, l1x| {
            let lp = p.ln_pdf(lx, l1x);
            (lp, lp - q.ln_pdf(lx, l1x))
        },
        1e-13,
    )
}

/// Bhattacharyya distance `-ln ∫ sqrt(p q)` between two Beta densities.
pub fn bhattacharyya_beta_quadrature(a: [f64; 2], b: [f64; 2]) -> f64 {
    let p = BetaDensity::new(a[0], a[1]);
    let q = BetaDensity::new(b[0], b[1]);
    -integrate_unit(|lx, l1x| (0.5 * (p.ln_pdf(lx, l1x) + q.ln_pdf(lx, l1x)), 1.0), 1e-13).ln()
}

/// A merge as `(smaller representative, larger representative, height)`;
/// a cluster's representative is its smallest member.
pub type BruteMerge = (usize, usize, f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteLinkage {
    Average,
    Complete,
}

/// Full merge sequence recomputed from scratch at every step: each
/// inter-cluster distance is the mean or maximum over all original member
/// pairs. Ties go to the lexicographically smallest representative pair.
pub fn brute_force_linkage(d: &[Vec<f64>], linkage: BruteLinkage) -> Vec<BruteMerge> {
    let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut best_key = (usize::MAX, usize::MAX);
        for x in 0..clusters.len() {
            for y in 0..clusters.len() {
                if x == y {
                    continue;
                }
                let (rx, ry) = (clusters[x][0], clusters[y][0]);
                if rx > ry {
                    continue;
                }
                let pairs = clusters[x].iter().flat_map(|&i| clusters[y].iter().map(move |&j| (i, j)));
                let height = match linkage {
                    BruteLinkage::Average => {
                        let s: f64 = pairs.map(|(i, j)| d[i][j]).sum();
                        s / (clusters[x].len() * clusters[y].len()) as f64
                    }
                    BruteLinkage::Complete => pairs.map(|(i, j)| d[i][j]).fold(f64::NEG_INFINITY, f64::max),
                };
                let better = match best {
                    None => true,
                    Some((_, _, h)) => height < h || (height == h && (rx, ry) < best_key),
                };
                if better {
                    best = Some((x, y, height));
                    best_key = (rx, ry);
                }
            }
        }
        let (x, y, h) = best.unwrap();
        merges.push((best_key.0, best_key.1, h));
        let moved = clusters[y].clone();
        clusters[x].extend(moved);
        clusters[x].sort();
        clusters.remove(y);
    }
    merges
}

/// Mean pinball loss written out by cases, skipping missing
/// observations and undefined rows (`NaN` in `y`).
pub fn direct_quantile_score(x: &[f64], y: &[Vec<f64>], levels: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in 0..x.len() {
        if x[t].is_nan() || y[t].iter().any(|v| v.is_nan()) {
            continue;
        }
        for (i, &q) in levels.iter().enumerate() {
            let diff = x[t] - y[t][i];
            total += if diff >= 0.0 { q * diff } else { (q - 1.0) * diff };
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&n| choose2(n)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(a.len());
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Pearson chi-square test of independence; returns the p-value.
pub fn chi_square_independence(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0.0f64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let n = a.len() as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut stat = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                stat += (table[i][j] - e).powi(2) / e;
            }
        }
    }
    let dof = ((ka - 1) * (kb - 1)).max(1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_knows_simple_integrals() {
        // ∫ x^(a-1)(1-x)^(b-1) = Γ(a)Γ(b)/Γ(a+b)
        assert!((ln_beta_numeric(1.0, 1.0)).abs() < 1e-13);
        assert!((ln_beta_numeric(2.0, 3.0) - (1.0f64 / 12.0).ln()).abs() < 1e-13);
        assert!((ln_beta_numeric(0.5, 0.5) - std::f64::consts::PI.ln()).abs() < 1e-12);
        // singular at 0: ∫ x^-0.9 = 10
        assert!((ln_beta_numeric(0.1, 1.0) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_kl_by_hand() {
        let ln2 = std::f64::consts::LN_2;
        assert!((kl_beta_quadrature([2.0, 1.0], [1.0, 1.0]) - (ln2 - 0.5)).abs() < 1e-12);
        assert!((kl_beta_quadrature([1.0, 1.0], [2.0, 1.0]) - (1.0 - ln2)).abs() < 1e-12);
        assert!((bhattacharyya_beta_quadrature([2.0, 1.0], [1.0, 1.0]) - (1.5f64.ln() - 0.5 * ln2)).abs() < 1e-12);
    }

    #[test]
    fn ari_extremes() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn brute_force_three_points() {
        let d = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 4.0], vec![5.0, 4.0, 0.0]];
        assert_eq!(brute_force_linkage(&d, BruteLinkage::Average), vec![(0, 1, 1.0), (0, 2, 4.5)]);
        assert_eq!(brute_force_linkage(&d, BruteLinkage::Complete), vec![(0, 1, 1.0), (0, 2, 5.0)]);
    }

    #[test]
    fn four_point_merge_orders() {
        let mut d = vec![vec![0.0; 4]; 4];
        for &((i, j), v) in &[((0, 1), 1.0), ((2, 3), 1.1), ((0, 2), 2.0), ((0, 3), 2.0), ((1, 2), 2.0), ((1, 3), 10.0)] {
            d[i][j] = v;
            d[j][i] = v;
        }
        for l in [BruteLinkage::Average, BruteLinkage::Complete] {
            let m = brute_force_linkage(&d, l);
            assert_eq!((m[0].0, m[0].1), (0, 1));
            assert_eq!((m[1].0, m[1].1), (2, 3));
        }
        assert_eq!(brute_force_linkage(&d, BruteLinkage::Average)[2].2, 4.0);
    }
}
