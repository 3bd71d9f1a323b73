//! CSV artifacts for every pipeline stage.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical values. Missing values are empty cells.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::agglomerative::{ClusterAssignment, Linkage, Merge};
use crate::distance::{DistanceMatrix, Metric};
use crate::error::{Error, Result};
use crate::evaluation::{ImputedSeries, QuantileSummary};
use crate::grid::{CSummary, SettingResult};
use crate::ingest::{RawSeriesTable, SystemMetadata, TIMESTAMP_FORMAT};
use crate::lda::{DirichletEmbedding, LdaModel};
use crate::wording::{EntityDocument, Vocabulary};

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() { String::new() } else { format!("{v}") }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn parse<T: std::str::FromStr>(raw: &str, row: usize, column: usize) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("cannot parse {raw:?}"),
    })
}

/// Reads `# key=value,key=value` from the first line of a file.
fn read_header_comment(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::invalid(format!("{} lacks a '# key=value' header line", path.display())))?;
    Ok(body
        .split(',')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn header_value<T: std::str::FromStr>(header: &BTreeMap<String, String>, key: &str) -> Result<T> {
    header
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::invalid(format!("header is missing a valid {key}")))
}

fn comment_writer(path: &Path, comment: &str) -> Result<csv::Writer<File>> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# {comment}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_table(path: &Path, table: &RawSeriesTable) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(table.system_ids().iter().cloned());
    w.write_record(&header)?;
    for (t, ts) in table.timestamps().iter().enumerate() {
        let mut rec = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
        rec.extend(table.rows().iter().map(|row| fmt_f64(row[t])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metadata(path: &Path, meta: &[SystemMetadata]) -> Result<()> {
    let mut w = writer(path)?;
    for m in meta {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ground_truth(path: &Path, ids: &[String], groups: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["system_id", "group"])?;
    for (id, g) in ids.iter().zip(groups) {
        w.write_record([id.clone(), g.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<(String, usize)>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        out.push((rec[0].to_string(), parse(&rec[1], row, 1)?));
    }
    Ok(out)
}

/// Writes the `W x T'` centroid matrix and a `key,value` sidecar with the
/// word count, seed and inertia.
pub fn write_vocabulary(path: &Path, sidecar: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = (0..vocab.width()).map(|i| format!("t{i}")).collect();
    w.write_record(&header)?;
    for c in &vocab.centroids {
        w.write_record(c.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let mut s = writer(sidecar)?;
    s.write_record(["key", "value"])?;
    s.write_record(["W".to_string(), vocab.n_words().to_string()])?;
    s.write_record(["seed".to_string(), vocab.seed.to_string()])?;
    s.write_record(["inertia".to_string(), fmt_f64(vocab.inertia)])?;
    s.flush().map_err(|e| Error::io(sidecar, e))
}

pub fn read_vocabulary(path: &Path, sidecar: &Path) -> Result<Vocabulary> {
    let mut r = reader(path)?;
    let mut centroids = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        centroids.push(rec.iter().enumerate().map(|(c, v)| parse(v, row, c)).collect::<Result<Vec<f64>>>()?);
    }
    let mut kv = BTreeMap::new();
    for rec in reader(sidecar)?.records() {
        let rec = rec?;
        kv.insert(rec[0].to_string(), rec[1].to_string());
    }
    let n_words: usize = header_value(&kv, "W")?;
    if n_words != centroids.len() {
        return Err(Error::DimensionMismatch {
            expected: n_words,
            got: centroids.len(),
        });
    }
    Vocabulary::new(centroids, header_value(&kv, "seed")?, header_value(&kv, "inertia")?)
}

/// Sparse `system_id, word, count` triplets.
pub fn write_documents(path: &Path, docs: &[EntityDocument]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["system_id", "word", "count"])?;
    for d in docs {
        for (word, count) in d.counts() {
            w.write_record([d.system_id.clone(), word.to_string(), count.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings(path: &Path, embeddings: &[DirichletEmbedding]) -> Result<()> {
    let mut w = writer(path)?;
    let k = embeddings.first().map_or(0, |e| e.gamma.len());
    let mut header = vec!["system_id".to_string()];
    header.extend((1..=k).map(|i| format!("gamma_{i}")));
    header.push("n_u".into());
    w.write_record(&header)?;
    for e in embeddings {
        let mut rec = vec![e.system_id.clone()];
        rec.extend(e.gamma.iter().map(|&g| fmt_f64(g)));
        rec.push(e.n_u.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<DirichletEmbedding>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Parse {
                row,
                column: 0,
                message: "expected system_id, gamma columns and n_u".into(),
            });
        }
        let last = rec.len() - 1;
        let gamma = (1..last).map(|c| parse(&rec[c], row, c)).collect::<Result<Vec<f64>>>()?;
        if gamma.iter().any(|&g| g.is_nan() || g <= 0.0) {
            return Err(Error::Parse {
                row,
                column: 1,
                message: "gamma components must be positive".into(),
            });
        }
        out.push(DirichletEmbedding {
            system_id: rec[0].to_string(),
            gamma,
            n_u: parse(&rec[last], row, last)?,
            converged: true,
        });
    }
    Ok(out)
}

pub fn write_model(path: &Path, model: &LdaModel) -> Result<()> {
    let mut w = comment_writer(
        path,
        &format!(
            "K={},W={},alpha={},seed={}",
            model.n_topics,
            model.n_words,
            fmt_f64(model.alpha),
            model.seed
        ),
    )?;
    let header: Vec<String> = (0..model.n_words).map(|i| format!("w{i}")).collect();
    w.write_record(&header)?;
    for row in &model.log_topic_word {
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<LdaModel> {
    let header = read_header_comment(path)?;
    let mut rows = Vec::new();
    for (row, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        rows.push(rec.iter().enumerate().map(|(c, v)| parse(v, row, c)).collect::<Result<Vec<f64>>>()?);
    }
    let k: usize = header_value(&header, "K")?;
    if rows.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: rows.len(),
        });
    }
    LdaModel::new(rows, header_value(&header, "alpha")?, header_value(&header, "seed")?)
}

pub fn write_distance_matrix(path: &Path, dist: &DistanceMatrix) -> Result<()> {
    let mut w = comment_writer(path, &format!("metric={}", dist.metric))?;
    let mut header = vec!["system_id".to_string()];
    header.extend(dist.system_ids.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in dist.system_ids.iter().zip(&dist.values) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_distance_matrix(path: &Path) -> Result<DistanceMatrix> {
    let header = read_header_comment(path)?;
    let metric: Metric = header
        .get("metric")
        .ok_or_else(|| Error::invalid("distance matrix header lacks a metric"))?
        .parse()?;
    let mut r = reader(path)?;
    let ids: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut values = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        values.push((1..rec.len()).map(|c| parse(&rec[c], row, c)).collect::<Result<Vec<f64>>>()?);
    }
    DistanceMatrix::new(values, metric, ids)
}

pub fn write_assignment(path: &Path, a: &ClusterAssignment) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["system_id", "cluster_label"])?;
    for (id, l) in a.system_ids.iter().zip(&a.labels) {
        w.write_record([id.clone(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_assignment(path: &Path, linkage: Option<Linkage>) -> Result<ClusterAssignment> {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        labels.push(parse(&rec[1], row, 1)?);
    }
    ClusterAssignment::from_labels(ids, &labels, linkage)
}

pub fn write_merge_trace(path: &Path, trace: &[Merge]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["i", "j", "height", "new_size"])?;
    for m in trace {
        w.write_record([m.left.to_string(), m.right.to_string(), fmt_f64(m.height), m.new_size.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, timestamps: &[chrono::NaiveDateTime], s: &QuantileSummary) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(s.levels.iter().map(|q| format!("q{q}")));
    header.push("coverage".into());
    w.write_record(&header)?;
    for ((ts, row), cov) in timestamps.iter().zip(&s.values).zip(&s.coverage) {
        let mut rec = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        rec.push(cov.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One `setting_id, S_disp, S_sens` row per scored setting.
pub fn write_scores(path: &Path, rows: &[(String, f64, Option<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["setting_id", "S_disp", "S_sens"])?;
    for (id, d, s) in rows {
        w.write_record([id.clone(), fmt_f64(*d), s.map(fmt_f64).unwrap_or_default()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const LEDGER_HEADER: [&str; 13] = [
    "setting_id",
    "C",
    "K",
    "W",
    "metric",
    "linkage",
    "seed",
    "valid",
    "min_cluster_size",
    "S_disp",
    "S_sens",
    "wall_time_ms",
    "error",
];

fn ledger_record(r: &SettingResult) -> Vec<String> {
    let s = &r.setting;
    vec![
        s.id(),
        s.c.to_string(),
        s.k.to_string(),
        s.w.to_string(),
        s.metric.to_string(),
        s.linkage.to_string(),
        s.seed.to_string(),
        r.valid.to_string(),
        r.min_cluster_size.to_string(),
        r.s_disp.map(fmt_f64).unwrap_or_default(),
        r.s_sens.map(fmt_f64).unwrap_or_default(),
        r.wall_time_ms.to_string(),
        r.error.clone().unwrap_or_default(),
    ]
}

/// Appends results to the ledger, writing the header if the file is new.
pub fn append_ledger(path: &Path, results: &[SettingResult]) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if !exists {
        w.write_record(LEDGER_HEADER)?;
    }
    for r in results {
        w.write_record(ledger_record(r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ledger(path: &Path) -> Result<Vec<SettingResult>> {
    use crate::grid::Setting;
    let mut out = Vec::new();
    for (row, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        let opt = |c: usize| -> Result<Option<f64>> {
            if rec[c].is_empty() { Ok(None) } else { parse(&rec[c], row, c).map(Some) }
        };
        out.push(SettingResult {
            setting: Setting {
                c: parse(&rec[1], row, 1)?,
                k: parse(&rec[2], row, 2)?,
                w: parse(&rec[3], row, 3)?,
                metric: rec[4].parse()?,
                linkage: rec[5].parse()?,
                seed: parse(&rec[6], row, 6)?,
            },
            valid: parse(&rec[7], row, 7)?,
            min_cluster_size: parse(&rec[8], row, 8)?,
            s_disp: opt(9)?,
            s_sens: opt(10)?,
            wall_time_ms: parse(&rec[11], row, 11)?,
            error: (!rec[12].is_empty()).then(|| rec[12].to_string()),
        });
    }
    Ok(out)
}

pub fn write_selection(path: &Path, summary: &[CSummary], selected: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["C", "n_valid", "median_S_disp", "median_S_sens", "objective", "selected"])?;
    for s in summary {
        w.write_record([
            s.c.to_string(),
            s.n_valid.to_string(),
            fmt_f64(s.median_disp),
            fmt_f64(s.median_sens),
            fmt_f64(s.objective),
            (s.c == selected).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_imputed(path: &Path, timestamps: &[chrono::NaiveDateTime], s: &ImputedSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["timestamp", &s.system_id, "imputed"])?;
    for ((ts, v), imp) in timestamps.iter().zip(&s.values).zip(&s.imputed) {
        w.write_record([ts.format(TIMESTAMP_FORMAT).to_string(), fmt_f64(*v), (*imp as u8).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
