use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use pvcluster::agglomerative::{self, ClusterAssignment, Linkage};
use pvcluster::distance::Metric;
use pvcluster::evaluation::{self, ScoreReport};
use pvcluster::grid::{self, GridData, HyperGrid};
use pvcluster::ingest::{self, CapacitySource, RawSeriesTable, SystemMetadata};
use pvcluster::io::{self, fmt_f64};
use pvcluster::kmeans;
use pvcluster::pipeline::{self, EmbedSettings};
use pvcluster::synth;
use pvcluster::wording::Vocabulary;

use crate::config::{ConfigError, Keys};

const INCOMPLETE_MARKER: &str = "INCOMPLETE";

fn out_dir(keys: &Keys) -> Result<PathBuf> {
    let dir = keys.out_dir()?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

/// An input file given explicitly, or its default name inside the output
/// directory.
fn input_or_default(explicit: Option<&Path>, dir: &Path, default: &str, key: &str) -> Result<PathBuf> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| dir.join(default));
    if !path.is_file() {
        return Err(ConfigError(format!("{key} file {} does not exist", path.display())).into());
    }
    Ok(path)
}

struct Inputs {
    table: RawSeriesTable,
    meta: Vec<SystemMetadata>,
    capacity: CapacitySource,
}

fn load_inputs(keys: &Keys) -> Result<Inputs> {
    let (data, metadata, capacity) = (keys.data()?, keys.metadata()?, keys.capacity_source()?);
    let table = ingest::load_table(data, &keys.missing_tokens()).with_context(|| format!("reading {}", data.display()))?;
    let meta = ingest::load_metadata(metadata).with_context(|| format!("reading {}", metadata.display()))?;
    Ok(Inputs { table, meta, capacity })
}

pub fn synth(keys: &Keys) -> Result<()> {
    let cfg = keys.synth_config(keys.require_seed()?)?;
    let dir = out_dir(keys)?;
    let fleet = synth::generate(&cfg)?;
    io::write_table(&dir.join("series.csv"), &fleet.table)?;
    io::write_metadata(&dir.join("metadata.csv"), &fleet.metadata)?;
    io::write_ground_truth(&dir.join("ground_truth.csv"), fleet.table.system_ids(), &fleet.groups)?;
    println!(
        "synth: {} systems, {} timesteps, {} groups -> {}",
        fleet.table.n_systems(),
        fleet.table.n_steps(),
        cfg.groups,
        dir.display()
    );
    Ok(())
}

/// A vocabulary left by an earlier run, if it was fitted with the same W
/// and seed on the same pooled profiles.
fn cached_vocabulary(dir: &Path, pooled: &[Vec<f64>], settings: &EmbedSettings) -> Option<Vocabulary> {
    let (path, sidecar) = (dir.join("vocabulary.csv"), dir.join("vocabulary_meta.csv"));
    if !(path.is_file() && sidecar.is_file()) {
        return None;
    }
    let vocab = io::read_vocabulary(&path, &sidecar).ok()?;
    if vocab.n_words() != settings.n_words || vocab.seed != settings.seed {
        return None;
    }
    if pooled.first().is_some_and(|p| p.len() != vocab.width()) {
        return None;
    }
    // the stored inertia fingerprints the data it was fitted on
    let inertia: f64 = pooled.iter().map(|p| kmeans::nearest(&vocab.centroids, p).1).sum();
    let same = (inertia - vocab.inertia).abs() <= 1e-9 * vocab.inertia.abs().max(1e-12);
    same.then_some(vocab)
}

pub fn embed(keys: &Keys) -> Result<()> {
    let seed = keys.require_seed()?;
    let settings = EmbedSettings {
        alpha: keys.alpha()?,
        ..EmbedSettings::new(keys.n_words()?, keys.n_topics()?, seed)
    };
    let profile_len = keys.profile_len()?;
    let inputs = load_inputs(keys)?;
    let dir = out_dir(keys)?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, "embed in progress\n")?;

    let run = || -> Result<()> {
        let prepared = pipeline::prepare(&inputs.table, &inputs.meta, inputs.capacity, profile_len)?;
        let pooled = prepared.profiles.pooled();
        let vocab = match cached_vocabulary(&dir, &pooled, &settings) {
            Some(v) => {
                eprintln!("embed: reusing cached vocabulary (W={}, seed={})", v.n_words(), v.seed);
                v
            }
            None => {
                let v = pipeline::build_vocabulary(&prepared.profiles, &settings)?;
                io::write_vocabulary(&dir.join("vocabulary.csv"), &dir.join("vocabulary_meta.csv"), &v)?;
                v
            }
        };
        let emb = pipeline::embed_with_vocabulary(&prepared.profiles, &vocab, &settings)?;
        io::write_documents(&dir.join("documents.csv"), &emb.documents)?;
        io::write_model(&dir.join("model.csv"), &emb.model)?;
        io::write_embeddings(&dir.join("embeddings.csv"), &emb.embeddings)?;
        write_profile_report(&dir.join("excluded.csv"), &prepared.profiles)?;
        let unconverged = emb.embeddings.iter().filter(|e| !e.converged).count();
        println!(
            "embed: {} systems embedded, {} excluded, {} pooled profiles, W={}, K={}{}",
            emb.embeddings.len(),
            prepared.profiles.excluded.len(),
            pooled.len(),
            settings.n_words,
            settings.n_topics,
            if unconverged > 0 { format!(", {unconverged} E-steps hit the iteration cap") } else { String::new() }
        );
        Ok(())
    };
    match run() {
        Ok(()) => {
            fs::remove_file(&marker)?;
            Ok(())
        }
        Err(e) => {
            fs::write(&marker, format!("embed failed: {e:#}\nartifacts in this directory may be partial\n"))?;
            Err(e)
        }
    }
}

/// Systems that could not be embedded, with their day counts.
fn write_profile_report(path: &Path, profiles: &ingest::ProfileBuild) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["system_id", "complete_days", "total_days"])?;
    for s in profiles.sets.iter().filter(|s| s.n_complete() == 0) {
        w.write_record([s.system_id.clone(), "0".into(), s.n_total_days.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_system_scores(path: &Path, a: &ClusterAssignment, disp: &ScoreReport, sens: Option<&ScoreReport>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["system_id", "cluster_label", "S_disp", "S_sens"])?;
    for (u, id) in a.system_ids.iter().enumerate() {
        let s = sens.and_then(|r| r.per_system[u]);
        w.write_record([
            id.clone(),
            a.labels[u].to_string(),
            disp.per_system[u].map(fmt_f64).unwrap_or_default(),
            s.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn filter_message(cluster: usize, size: usize) -> String {
    format!(
        "cluster {cluster} has {size} member(s): the sensitivity score needs every cluster to have at \
         least two members, and clusterings with a smaller cluster are filtered out; lower n_clusters or \
         pass --sensitivity false"
    )
}

pub fn cluster(keys: &Keys) -> Result<()> {
    let c = keys.n_clusters()?;
    let metric = keys.metric.unwrap_or(Metric::SymKl);
    let linkage = keys.linkage.unwrap_or(Linkage::Average);
    let levels = keys.quantile_levels()?;
    let want_sens = keys.sensitivity.unwrap_or(true);
    let dir = out_dir(keys)?;
    let emb_path = input_or_default(keys.embeddings.as_deref(), &dir, "embeddings.csv", "embeddings")?;
    let inputs = load_inputs(keys)?;

    let embeddings = io::read_embeddings(&emb_path).with_context(|| format!("reading {}", emb_path.display()))?;
    let (dist, assignment) = pipeline::cluster(&embeddings, metric, linkage, c)?;
    io::write_distance_matrix(&dir.join("distances.csv"), &dist)?;
    io::write_assignment(&dir.join("assignment.csv"), &assignment)?;
    io::write_merge_trace(&dir.join("merge_trace.csv"), &assignment.merge_trace)?;

    let normalized = ingest::normalize_by_capacity(&inputs.table, &inputs.meta, inputs.capacity)?;
    let table = normalized.select(&assignment.system_ids)?;
    for s in evaluation::summarize_all(&table, &assignment, &levels)? {
        io::write_summary(&dir.join(format!("summary_cluster_{}.csv", s.cluster)), table.timestamps(), &s)?;
    }
    let disp = evaluation::dispersion_score(&table, &assignment, &levels)?;
    let sens = if want_sens {
        match evaluation::sensitivity_score(&table, &assignment, &levels) {
            Ok(s) => Some(s),
            Err(pvcluster::Error::ClusterTooSmall { cluster, size }) => bail!(filter_message(cluster, size)),
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    write_system_scores(&dir.join("system_scores.csv"), &assignment, &disp, sens.as_ref())?;
    let entity_id = format!("entity-{metric}-{linkage}-C{c}");
    let mut rows = vec![(entity_id, disp.score, sens.as_ref().map(|s| s.score))];

    if keys.baseline.unwrap_or(false) {
        let by_id: std::collections::HashMap<&str, &SystemMetadata> =
            inputs.meta.iter().map(|m| (m.system_id.as_str(), m)).collect();
        let meta: Vec<SystemMetadata> = assignment
            .system_ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|m| (*m).clone())
                    .ok_or_else(|| pvcluster::Error::MissingMetadata(id.clone()))
            })
            .collect::<pvcluster::Result<_>>()?;
        let base = agglomerative::baseline_angle_kmeans(&meta, c, keys.seed.unwrap_or(0))?;
        io::write_assignment(&dir.join("baseline_assignment.csv"), &base)?;
        let bd = evaluation::dispersion_score(&table, &base, &levels)?;
        let bs = if want_sens { evaluation::sensitivity_score(&table, &base, &levels).ok() } else { None };
        rows.push((format!("baseline-angle_kmeans-C{c}"), bd.score, bs.map(|s| s.score)));
    }
    io::write_scores(&dir.join("scores.csv"), &rows)?;
    for (id, d, s) in &rows {
        println!(
            "cluster: {id}: S_disp={} S_sens={}",
            fmt_f64(*d),
            s.map(fmt_f64).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

pub fn grid(keys: &Keys) -> Result<()> {
    let seed = keys.require_seed()?;
    let mut hyper = keys.hyper_grid()?;
    if keys.grid.seeds.is_none() {
        hyper.seeds = vec![seed];
    }
    let levels = keys.quantile_levels()?;
    let alpha = keys.alpha()?;
    let profile_len = keys.profile_len()?;
    let record_timing = keys.record_timing.unwrap_or(false);
    let inputs = load_inputs(keys)?;
    let dir = out_dir(keys)?;

    let prepared = pipeline::prepare(&inputs.table, &inputs.meta, inputs.capacity, profile_len)?;
    let table = prepared.embedded_table()?;
    let data = GridData {
        table: &table,
        profiles: &prepared.profiles,
    };

    let ledger = dir.join("ledger.csv");
    let mut done: HashSet<String> = HashSet::new();
    if ledger.is_file() {
        done.extend(
            io::read_ledger(&ledger)
                .with_context(|| format!("reading existing ledger {}", ledger.display()))?
                .into_iter()
                .map(|r| r.setting.id()),
        );
    }
    let total = hyper.settings().len();
    let resumed = hyper.settings().iter().filter(|s| done.contains(&s.id())).count();
    if resumed > 0 {
        eprintln!("grid: resuming, {resumed} of {total} settings already in the ledger");
    }
    // one block per vocabulary, appended as soon as it finishes so an
    // interrupted sweep keeps its completed blocks
    for &s in &hyper.seeds {
        for &w in &hyper.w_values {
            let block = HyperGrid {
                w_values: vec![w],
                seeds: vec![s],
                ..hyper.clone()
            };
            let results = grid::run_grid(&data, &block, &levels, alpha, record_timing, &done)?;
            io::append_ledger(&ledger, &results)?;
            done.extend(results.iter().map(|r| r.setting.id()));
        }
    }

    let wanted: HashSet<String> = hyper.settings().iter().map(|s| s.id()).collect();
    let mut seen = HashSet::new();
    let results: Vec<_> = io::read_ledger(&ledger)?
        .into_iter()
        .filter(|r| wanted.contains(&r.setting.id()) && seen.insert(r.setting.id()))
        .collect();
    let n_valid = results.iter().filter(|r| r.valid).count();
    let summary = grid::summarize_by_c(&results);
    let selected = grid::select_c(&results).context("no valid setting in the grid; every clustering had a cluster with fewer than two members")?;
    io::write_selection(&dir.join("selection.csv"), &summary, selected)?;
    println!("grid: {total} settings, {n_valid} valid, selected C = {selected}");
    Ok(())
}

pub fn impute(keys: &Keys) -> Result<()> {
    let system_id = keys
        .system_id
        .clone()
        .ok_or_else(|| ConfigError("system_id is required".into()))?;
    let q = keys.q()?;
    let dir = out_dir(keys)?;
    let assignment_path = input_or_default(keys.assignment.as_deref(), &dir, "assignment.csv", "assignment")?;
    let inputs = load_inputs(keys)?;

    let assignment = io::read_assignment(&assignment_path, None)?;
    let normalized = ingest::normalize_by_capacity(&inputs.table, &inputs.meta, inputs.capacity)?;
    let filled = evaluation::impute_system(&normalized, &assignment, &system_id, q)?;

    let u = inputs
        .table
        .index_of(&system_id)
        .with_context(|| format!("system {system_id} is not in the series table"))?;
    let raw = inputs.table.series(u);
    let capacity = match inputs.capacity {
        CapacitySource::Metadata => {
            inputs
                .meta
                .iter()
                .find(|m| m.system_id == system_id)
                .ok_or_else(|| pvcluster::Error::MissingMetadata(system_id.clone()))?
                .capacity
        }
        CapacitySource::EmpiricalMax => raw.iter().filter(|v| !v.is_nan()).fold(0.0f64, |a, &b| a.max(b)),
    };
    // observed cells are copied from the input untouched
    let values = raw
        .iter()
        .zip(&filled.values)
        .zip(&filled.imputed)
        .map(|((&r, &f), &imp)| if imp { f * capacity } else { r })
        .collect();
    let out = evaluation::ImputedSeries { values, ..filled };
    let stem = format!("imputed_{system_id}");
    io::write_imputed(&dir.join(format!("{stem}.csv")), inputs.table.timestamps(), &out)?;

    let missing = raw.iter().filter(|v| v.is_nan()).count();
    let n_imputed = out.imputed.iter().filter(|&&b| b).count();
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}_report.csv")))?;
    w.write_record(["system_id", "q", "missing", "imputed", "unfilled"])?;
    w.write_record([
        system_id.clone(),
        fmt_f64(q),
        missing.to_string(),
        n_imputed.to_string(),
        out.unfilled.to_string(),
    ])?;
    w.flush()?;
    println!("impute: {system_id}: {missing} missing, {n_imputed} imputed, {} left missing", out.unfilled);
    Ok(())
}
