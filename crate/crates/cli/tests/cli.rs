//! The `pvcluster` binary end to end, on synthetic and hand-made inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pvcluster_oracles::adjusted_rand_index;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pvcluster"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

/// Synthetic fleet in `dir`, returning (series, metadata) paths.
fn synth(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["synth", "--seed", "7", "--out_dir", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    (dir.join("series.csv"), dir.join("metadata.csv"))
}

#[test]
fn synth_writes_the_dataset_trio() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["synth", "--seed", "1", "--out_dir", s(tmp.path())]);
    assert_eq!(csv_rows(&tmp.path().join("series.csv")).len(), 120 * 96);
    assert_eq!(csv_rows(&tmp.path().join("metadata.csv")).len(), 60);
    assert_eq!(csv_rows(&tmp.path().join("ground_truth.csv")).len(), 60);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let bad_outage = run(&["synth", "--seed", "1", "--out_dir", s(&out), "--days", "5", "--global_outage", "3,9"]);
    assert_eq!(bad_outage.status.code(), Some(2));
    assert_eq!(run(&["synth", "--out_dir", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["embed", "--seed", "1", "--out_dir", s(&out)]).status.code(), Some(2));

    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 1\nout_dirr = \"x\"\n").unwrap();
    assert_eq!(run(&["synth", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn config_file_keys_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 1\nout_dir = \"{}\"\n[synth]\nn_systems = 6\ndays = 3\n",
            s(&tmp.path().join("out"))
        ),
    )
    .unwrap();
    ok(&["synth", "--config", s(&cfg), "--n_systems", "4"]);
    assert_eq!(csv_rows(&tmp.path().join("out/metadata.csv")).len(), 4);
    assert_eq!(csv_rows(&tmp.path().join("out/series.csv")).len(), 3 * 96);
    // kebab-case spelling works too
    ok(&["synth", "--config", s(&cfg), "--n-systems", "5"]);
    assert_eq!(csv_rows(&tmp.path().join("out/metadata.csv")).len(), 5);
}

#[test]
fn embed_writes_positive_gammas_with_the_right_mass_and_reuses_its_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, meta) = synth(tmp.path(), &["--n_systems", "12", "--days", "30"]);
    let out = tmp.path().join("emb");
    let args = [
        "embed", "--seed", "3", "--data", s(&data), "--metadata", s(&meta), "--out_dir", s(&out), "-K", "4", "-W", "20",
        "--alpha", "0.4",
    ];
    ok(&args);
    assert!(!out.join("INCOMPLETE").exists());
    let rows = csv_rows(&out.join("embeddings.csv"));
    assert_eq!(rows.len(), 12);
    for r in &rows {
        let gamma: Vec<f64> = r[1..5].iter().map(|v| v.parse().unwrap()).collect();
        let n_u: f64 = r[5].parse().unwrap();
        assert!(gamma.iter().all(|&g| g > 0.0));
        assert!((gamma.iter().sum::<f64>() - (n_u + 4.0 * 0.4)).abs() < 1e-6);
    }
    let first = fs::read(out.join("embeddings.csv")).unwrap();
    let rerun = ok(&args);
    assert!(String::from_utf8_lossy(&rerun.stderr).contains("reusing cached vocabulary"));
    assert_eq!(fs::read(out.join("embeddings.csv")).unwrap(), first);
}

#[test]
fn failed_embed_leaves_a_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, meta) = synth(tmp.path(), &["--n_systems", "4", "--days", "2"]);
    let out = tmp.path().join("emb");
    // more words than pooled profiles
    let r = run(&[
        "embed", "--seed", "1", "--data", s(&data), "--metadata", s(&meta), "--out_dir", s(&out), "-K", "2", "-W", "50",
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(fs::read_to_string(out.join("INCOMPLETE")).unwrap().contains("embed failed"));
}

fn embed_then(dir: &Path, data: &Path, meta: &Path, k: &str, w: &str) -> PathBuf {
    let out = dir.join("run");
    ok(&[
        "embed", "--seed", "2", "--data", s(data), "--metadata", s(meta), "--out_dir", s(&out), "-K", k, "-W", w,
    ]);
    out
}

#[test]
fn coupled_fleet_clusters_match_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, meta) = synth(tmp.path(), &["--n_systems", "24", "--days", "40", "--angle_coupling", "coupled"]);
    let out = embed_then(tmp.path(), &data, &meta, "3", "40");
    ok(&[
        "cluster", "--data", s(&data), "--metadata", s(&meta), "--out_dir", s(&out), "-C", "3", "--baseline", "true",
    ]);
    let truth: Vec<usize> = csv_rows(&tmp.path().join("ground_truth.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    let labels: Vec<usize> = csv_rows(&out.join("assignment.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(adjusted_rand_index(&truth, &labels), 1.0);
    for c in 0..3 {
        assert!(out.join(format!("summary_cluster_{c}.csv")).is_file());
    }
    let scores = csv_rows(&out.join("scores.csv"));
    assert_eq!(scores.len(), 2);
    assert!(scores[0][0].starts_with("entity"));
    assert!(scores[1][0].starts_with("baseline"));
}

#[test]
fn one_cluster_per_system() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, meta) = synth(tmp.path(), &["--n_systems", "8", "--days", "20"]);
    let out = embed_then(tmp.path(), &data, &meta, "3", "10");
    let base = ["cluster", "--data", s(&data), "--metadata", s(&meta), "--out_dir", s(&out), "-C", "8"];
    let refused = run(&base);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("at least two members"));

    let mut args = base.to_vec();
    args.extend(["--sensitivity", "false"]);
    ok(&args);
    let scores = csv_rows(&out.join("scores.csv"));
    assert_eq!(scores[0][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(scores[0][2], "");
}

fn grid_args<'a>(data: &'a Path, meta: &'a Path, out: &'a Path, c: &'a str, k: &'a str, w: &'a str) -> Vec<&'a str> {
    vec![
        "grid", "--seed", "0", "--data", s(data), "--metadata", s(meta), "--out_dir", s(out), "--c_values", c,
        "--k_values", k, "--w_values", w, "--metrics", "sym_kl", "--linkages", "average",
    ]
}

#[test]
fn grid_ledger_is_resumable_without_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, meta) = synth(tmp.path(), &["--n_systems", "12", "--days", "20"]);
    let one = tmp.path().join("one");
    ok(&grid_args(&data, &meta, &one, "3", "3", "10"));
    assert_eq!(csv_rows(&one.join("ledger.csv")).len(), 1);

    let full = tmp.path().join("full");
    ok(&grid_args(&data, &meta, &full, "2,3,4", "3,4", "10,15"));
    let complete = fs::read_to_string(full.join("ledger.csv")).unwrap();
    let lines: Vec<&str> = complete.lines().collect();
    assert_eq!(lines.len(), 13);

    // a sweep killed after its first block
    let partial = tmp.path().join("partial");
    fs::create_dir(&partial).unwrap();
    fs::write(partial.join("ledger.csv"), lines[..7].join("\n") + "\n").unwrap();
    ok(&grid_args(&data, &meta, &partial, "2,3,4", "3,4", "10,15"));
    assert_eq!(fs::read_to_string(partial.join("ledger.csv")).unwrap(), complete);
    ok(&grid_args(&data, &meta, &partial, "2,3,4", "3,4", "10,15"));
    assert_eq!(fs::read_to_string(partial.join("ledger.csv")).unwrap(), complete);
    assert_eq!(fs::read(partial.join("selection.csv")).unwrap(), fs::read(full.join("selection.csv")).unwrap());
}

#[test]
fn grid_without_valid_settings_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, meta) = synth(tmp.path(), &["--n_systems", "6", "--days", "10"]);
    let out = tmp.path().join("g");
    assert_eq!(run(&grid_args(&data, &meta, &out, "6", "3", "10")).status.code(), Some(1));
}

#[test]
fn grid_selects_about_the_true_group_count() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "synth", "--seed", "3", "--out_dir", s(tmp.path()), "--n_systems", "64", "--days", "60", "--groups", "8",
    ]);
    let (data, meta) = (tmp.path().join("series.csv"), tmp.path().join("metadata.csv"));
    let out = tmp.path().join("g");
    ok(&grid_args(&data, &meta, &out, "2,3,4,5,6,7,8,9,10,11,12,14,16", "12", "200"));
    let selected: usize = csv_rows(&out.join("selection.csv"))
        .iter()
        .find(|r| r[5] == "true")
        .map(|r| r[0].parse().unwrap())
        .unwrap();
    assert!((6..=10).contains(&selected), "selected C = {selected}");
}

/// Six 15-minute steps over two "days" of three steps; systems a-d form
/// one cluster, e-f another.
fn tiny_fleet(dir: &Path, series: &[(&str, [&str; 6])]) -> (PathBuf, PathBuf, PathBuf) {
    let data = dir.join("series.csv");
    let mut text = String::from("timestamp");
    for (id, _) in series {
        text += &format!(",{id}");
    }
    text.push('\n');
    for t in 0..6 {
        text += &format!("2022-06-01T{:02}:{:02}:00", t / 4, (t % 4) * 15);
        for (_, v) in series {
            text += &format!(",{}", v[t]);
        }
        text.push('\n');
    }
    fs::write(&data, text).unwrap();
    let meta = dir.join("metadata.csv");
    let mut m = String::from("system_id,capacity_wp,tilt_deg,azimuth_deg\n");
    for (id, _) in series {
        m += &format!("{id},2000,30,180\n");
    }
    fs::write(&meta, m).unwrap();
    let assignment = dir.join("assignment.csv");
    let mut a = String::from("system_id,cluster_label\n");
    for (i, (id, _)) in series.iter().enumerate() {
        a += &format!("{id},{}\n", if i < 4 { 0 } else { 1 });
    }
    fs::write(&assignment, a).unwrap();
    (data, meta, assignment)
}

fn impute(dir: &Path, data: &Path, meta: &Path, assignment: &Path, id: &str) -> Vec<Vec<String>> {
    ok(&[
        "impute", "--data", s(data), "--metadata", s(meta), "--assignment", s(assignment), "--out_dir", s(dir),
        "--system_id", id,
    ]);
    csv_rows(&dir.join(format!("imputed_{id}.csv")))
}

#[test]
fn missing_days_are_filled_from_the_other_members_median() {
    let tmp = tempfile::tempdir().unwrap();
    let series = [
        ("a", ["", "", "", "", "", ""]),
        ("b", ["100", "400", "900", "100", "200", "300"]),
        ("c", ["300", "200", "700", "500", "600", "100"]),
        ("d", ["200", "600", "800", "900", "", "200"]),
        ("e", ["1", "1", "1", "1", "1", "1"]),
        ("f", ["2", "2", "2", "2", "2", "2"]),
    ];
    let (data, meta, assignment) = tiny_fleet(tmp.path(), &series);
    let rows = impute(tmp.path(), &data, &meta, &assignment, "a");
    // medians of b, c, d; at t=4 only b and c are observed
    let expected = [200.0, 400.0, 800.0, 500.0, 400.0, 200.0];
    for (r, e) in rows.iter().zip(expected) {
        assert!((r[1].parse::<f64>().unwrap() - e).abs() < 1e-9, "{r:?}");
        assert_eq!(r[2], "1");
    }
    let report = csv_rows(&tmp.path().join("imputed_a_report.csv"));
    assert_eq!(report[0][2..], ["6".to_string(), "6".into(), "0".into()]);
}

#[test]
fn fully_observed_system_is_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let series = [
        ("a", ["0.1", "12.5", "3", "4", "5", "6"]),
        ("b", ["1", "2", "3", "4", "5", "6"]),
        ("c", ["1", "2", "3", "4", "5", "6"]),
        ("d", ["1", "2", "3", "4", "5", "6"]),
        ("e", ["1", "1", "1", "1", "1", "1"]),
        ("f", ["2", "2", "2", "2", "2", "2"]),
    ];
    let (data, meta, assignment) = tiny_fleet(tmp.path(), &series);
    let rows = impute(tmp.path(), &data, &meta, &assignment, "a");
    let values: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(values, ["0.1", "12.5", "3", "4", "5", "6"]);
    assert!(rows.iter().all(|r| r[2] == "0"));
}

#[test]
fn cells_with_no_observed_peer_stay_missing() {
    let tmp = tempfile::tempdir().unwrap();
    let series = [
        ("a", ["1", "", "3", "4", "5", "6"]),
        ("b", ["1", "", "3", "4", "5", "6"]),
        ("c", ["1", "", "3", "4", "5", "6"]),
        ("d", ["1", "", "3", "4", "5", "6"]),
        ("e", ["1", "1", "1", "1", "1", "1"]),
        ("f", ["2", "2", "2", "2", "2", "2"]),
    ];
    let (data, meta, assignment) = tiny_fleet(tmp.path(), &series);
    let rows = impute(tmp.path(), &data, &meta, &assignment, "a");
    assert_eq!(rows[1][1], "");
    assert_eq!(rows[1][2], "0");
    let report = csv_rows(&tmp.path().join("imputed_a_report.csv"));
    assert_eq!(report[0][4], "1");
}

#[test]
fn jobs_flag_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, meta) = synth(tmp.path(), &["--n_systems", "10", "--days", "15"]);
    let mut outs = Vec::new();
    for jobs in ["1", "3"] {
        let out = tmp.path().join(format!("j{jobs}"));
        ok(&[
            "embed", "--seed", "2", "--data", s(&data), "--metadata", s(&meta), "--out_dir", s(&out), "-K", "3", "-W", "10",
            "--jobs", jobs,
        ]);
        outs.push(fs::read(out.join("embeddings.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}
