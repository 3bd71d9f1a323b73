//! Grid search bookkeeping: coverage, determinism, cache transparency.

use std::collections::HashSet;

use pvcluster::DEFAULT_QUANTILE_LEVELS;
use pvcluster::agglomerative::Linkage;
use pvcluster::distance::Metric;
use pvcluster::evaluation::{dispersion_score, sensitivity_score};
use pvcluster::grid::{GridData, HyperGrid, run_grid, select_c, summarize_by_c};
use pvcluster::ingest::CapacitySource;
use pvcluster::pipeline::{EmbedSettings, Prepared, build_vocabulary, cluster, embed_with_vocabulary, prepare};
use pvcluster::synth::{SynthConfig, generate};

fn prepared() -> Prepared {
    let fleet = generate(&SynthConfig {
        n_systems: 18,
        days: 30,
        groups: 3,
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    prepare(&fleet.table, &fleet.metadata, CapacitySource::Metadata, 96).unwrap()
}

fn small_grid() -> HyperGrid {
    HyperGrid {
        c_values: vec![2, 3, 9, 18],
        k_values: vec![3, 4],
        w_values: vec![10, 20],
        metrics: vec![Metric::SymKl, Metric::Bhattacharyya],
        linkages: vec![Linkage::Average, Linkage::Complete],
        seeds: vec![0, 1],
    }
}

#[test]
fn every_setting_is_reported_once_and_deterministically() {
    let prep = prepared();
    let table = prep.embedded_table().unwrap();
    let data = GridData {
        table: &table,
        profiles: &prep.profiles,
    };
    let grid = small_grid();
    let a = run_grid(&data, &grid, &DEFAULT_QUANTILE_LEVELS, None, false, &HashSet::new()).unwrap();
    let b = run_grid(&data, &grid, &DEFAULT_QUANTILE_LEVELS, None, false, &HashSet::new()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), grid.settings().len());
    let ids: HashSet<String> = a.iter().map(|r| r.setting.id()).collect();
    assert_eq!(ids.len(), a.len());
    for r in &a {
        assert_eq!(r.valid, r.min_cluster_size >= 2 && r.error.is_none());
        assert_eq!(r.wall_time_ms, 0);
        if r.setting.c == 18 {
            assert!(!r.valid);
        }
    }
}

#[test]
fn cached_results_equal_fresh_pipeline_runs() {
    let prep = prepared();
    let table = prep.embedded_table().unwrap();
    let data = GridData {
        table: &table,
        profiles: &prep.profiles,
    };
    let grid = small_grid();
    let results = run_grid(&data, &grid, &DEFAULT_QUANTILE_LEVELS, None, false, &HashSet::new()).unwrap();
    for r in results.iter().filter(|r| r.valid).step_by(5) {
        let s = r.setting;
        let settings = EmbedSettings::new(s.w, s.k, s.seed);
        let vocab = build_vocabulary(&prep.profiles, &settings).unwrap();
        let emb = embed_with_vocabulary(&prep.profiles, &vocab, &settings).unwrap();
        let (_, a) = cluster(&emb.embeddings, s.metric, s.linkage, s.c).unwrap();
        let d = dispersion_score(&table, &a, &DEFAULT_QUANTILE_LEVELS).unwrap().score;
        let sens = sensitivity_score(&table, &a, &DEFAULT_QUANTILE_LEVELS).unwrap().score;
        assert_eq!(r.s_disp.unwrap().to_bits(), d.to_bits());
        assert_eq!(r.s_sens.unwrap().to_bits(), sens.to_bits());
    }
}

#[test]
fn skipped_settings_are_not_rerun() {
    let prep = prepared();
    let table = prep.embedded_table().unwrap();
    let data = GridData {
        table: &table,
        profiles: &prep.profiles,
    };
    let grid = small_grid();
    let all = run_grid(&data, &grid, &DEFAULT_QUANTILE_LEVELS, None, false, &HashSet::new()).unwrap();
    let done: HashSet<String> = all.iter().take(10).map(|r| r.setting.id()).collect();
    let rest = run_grid(&data, &grid, &DEFAULT_QUANTILE_LEVELS, None, false, &done).unwrap();
    assert_eq!(rest.len(), all.len() - 10);
    assert_eq!(&rest[..], &all[10..]);
}

#[test]
fn selection_uses_valid_settings_only() {
    let prep = prepared();
    let table = prep.embedded_table().unwrap();
    let data = GridData {
        table: &table,
        profiles: &prep.profiles,
    };
    let results = run_grid(&data, &small_grid(), &DEFAULT_QUANTILE_LEVELS, None, false, &HashSet::new()).unwrap();
    let summary = summarize_by_c(&results);
    assert!(summary.iter().all(|s| s.c != 18));
    let best = select_c(&results).unwrap();
    let min = summary.iter().map(|s| s.objective).fold(f64::INFINITY, f64::min);
    assert_eq!(summary.iter().find(|s| s.objective == min).unwrap().c, best);

    let only_invalid: Vec<_> = results.into_iter().filter(|r| !r.valid).collect();
    assert!(select_c(&only_invalid).is_err());
}

#[test]
fn single_point_grid() {
    let prep = prepared();
    let table = prep.embedded_table().unwrap();
    let data = GridData {
        table: &table,
        profiles: &prep.profiles,
    };
    let grid = HyperGrid {
        c_values: vec![3],
        k_values: vec![3],
        w_values: vec![10],
        metrics: vec![Metric::SymKl],
        linkages: vec![Linkage::Average],
        seeds: vec![4],
    };
    let results = run_grid(&data, &grid, &DEFAULT_QUANTILE_LEVELS, None, true, &HashSet::new()).unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].setting.id(), "C3-K3-W10-sym_kl-average-s4");
}
