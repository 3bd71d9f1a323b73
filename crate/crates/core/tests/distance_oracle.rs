//! Closed-form Beta/Dirichlet distances against numerical integration.

use pvcluster::distance::{bhattacharyya, kl_dirichlet, sym_kl};
use pvcluster_oracles::{bhattacharyya_beta_quadrature, kl_beta_quadrature};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_beta_pairs_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..120 {
        let a = [rng.random_range(0.1..50.0), rng.random_range(0.1..50.0)];
        let b = [rng.random_range(0.1..50.0), rng.random_range(0.1..50.0)];
        let kl = kl_dirichlet(&a, &b).unwrap();
        let kl_q = kl_beta_quadrature(a, b);
        let bh = bhattacharyya(&a, &b).unwrap();
        let bh_q = bhattacharyya_beta_quadrature(a, b);
        assert!((kl - kl_q).abs() < 1e-6, "KL {a:?} {b:?}: {kl} vs {kl_q}");
        assert!((bh - bh_q).abs() < 1e-6, "Bh {a:?} {b:?}: {bh} vs {bh_q}");
        worst = worst.max((kl - kl_q).abs()).max((bh - bh_q).abs());
    }
    assert!(worst < 1e-6);
}

#[test]
fn extreme_corners_match_quadrature() {
    for (a, b) in [
        ([0.1, 0.1], [50.0, 50.0]),
        ([0.1, 50.0], [50.0, 0.1]),
        ([0.5, 0.5], [1.0, 1.0]),
        ([49.0, 50.0], [50.0, 49.0]),
    ] {
        assert!((kl_dirichlet(&a, &b).unwrap() - kl_beta_quadrature(a, b)).abs() < 1e-6);
        assert!((bhattacharyya(&a, &b).unwrap() - bhattacharyya_beta_quadrature(a, b)).abs() < 1e-6);
    }
}

#[test]
fn worked_pair_two_one_versus_uniform() {
    let (a, b) = ([2.0, 1.0], [1.0, 1.0]);
    let sym_q = 0.5 * (kl_beta_quadrature(a, b) + kl_beta_quadrature(b, a));
    assert!((sym_q - 0.25).abs() < 1e-10);
    assert!((sym_kl(&a, &b).unwrap() - sym_q).abs() < 1e-10);
    let bh_q = bhattacharyya_beta_quadrature(a, b);
    assert!((bh_q - 0.058891).abs() < 1e-6);
    assert!((bhattacharyya(&a, &b).unwrap() - bh_q).abs() < 1e-10);
}
