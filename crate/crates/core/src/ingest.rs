//! Loading, validation, capacity normalization and daily profiling of raw
//! measurement tables.
//!
//! Missing cells are stored as `f64::NAN` throughout; every finite cell is
//! non-negative.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamp layout used when writing tables.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Per-system power series on a shared, evenly spaced time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeriesTable {
    timestamps: Vec<NaiveDateTime>,
    step_minutes: i64,
    system_ids: Vec<String>,
    /// One row per system, `NaN` marks a missing cell.
    values: Vec<Vec<f64>>,
}

impl RawSeriesTable {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        system_ids: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if system_ids.len() < 2 {
            return Err(Error::invalid(format!(
                "a table needs at least two systems, got {}",
                system_ids.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(Error::invalid("a table needs at least two timestamps"));
        }
        if values.len() != system_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: system_ids.len(),
                got: values.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &system_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate system id {id}")));
            }
        }
        let step_minutes = check_grid(&timestamps)?;
        for (u, row) in values.iter().enumerate() {
            if row.len() != timestamps.len() {
                return Err(Error::DimensionMismatch {
                    expected: timestamps.len(),
                    got: row.len(),
                });
            }
            for (t, &v) in row.iter().enumerate() {
                if v.is_nan() {
                    continue;
                }
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Parse {
                        row: t,
                        column: u + 1,
                        message: format!("value {v} for system {} is not a finite non-negative number", system_ids[u]),
                    });
                }
            }
        }
        Ok(Self {
            timestamps,
            step_minutes,
            system_ids,
            values,
        })
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn step_minutes(&self) -> i64 {
        self.step_minutes
    }

    pub fn system_ids(&self) -> &[String] {
        &self.system_ids
    }

    pub fn n_systems(&self) -> usize {
        self.system_ids.len()
    }

    pub fn n_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn series(&self, u: usize) -> &[f64] {
        &self.values[u]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn index_of(&self, system_id: &str) -> Option<usize> {
        self.system_ids.iter().position(|s| s == system_id)
    }

    pub fn missing_count(&self) -> usize {
        self.values
            .iter()
            .map(|row| row.iter().filter(|v| v.is_nan()).count())
            .sum()
    }

    /// Keeps only the listed systems, in the given order.
    pub fn select(&self, system_ids: &[String]) -> Result<Self> {
        let mut values = Vec::with_capacity(system_ids.len());
        for id in system_ids {
            let u = self
                .index_of(id)
                .ok_or_else(|| Error::invalid(format!("unknown system {id}")))?;
            values.push(self.values[u].clone());
        }
        Self::new(self.timestamps.clone(), system_ids.to_vec(), values)
    }
}

fn check_grid(timestamps: &[NaiveDateTime]) -> Result<i64> {
    let step = (timestamps[1] - timestamps[0]).num_minutes();
    if step <= 0 || timestamps[1] - timestamps[0] != chrono::Duration::minutes(step) {
        return Err(Error::Parse {
            row: 1,
            column: 0,
            message: "timestamps must increase by a whole number of minutes".into(),
        });
    }
    for (i, pair) in timestamps.windows(2).enumerate() {
        if pair[1] - pair[0] != chrono::Duration::minutes(step) {
            return Err(Error::Parse {
                row: i + 1,
                column: 0,
                message: format!("expected a constant {step}-minute step"),
            });
        }
    }
    Ok(step)
}

/// Physical description of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMetadata {
    pub system_id: String,
    #[serde(rename = "capacity_wp")]
    pub capacity: f64,
    #[serde(rename = "tilt_deg")]
    pub tilt: f64,
    #[serde(rename = "azimuth_deg")]
    pub azimuth: f64,
}

impl SystemMetadata {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::invalid(format!(
                "system {}: capacity must be positive, got {}",
                self.system_id, self.capacity
            )));
        }
        if !(0.0..=90.0).contains(&self.tilt) {
            return Err(Error::invalid(format!(
                "system {}: tilt {} outside [0, 90]",
                self.system_id, self.tilt
            )));
        }
        if !(0.0..360.0).contains(&self.azimuth) {
            return Err(Error::invalid(format!(
                "system {}: azimuth {} outside [0, 360)",
                self.system_id, self.azimuth
            )));
        }
        Ok(())
    }
}

/// Validates a metadata collection: one record per id, all fields in range.
pub fn validate_metadata(meta: &[SystemMetadata]) -> Result<()> {
    let mut seen = HashSet::new();
    for m in meta {
        m.validate()?;
        if !seen.insert(m.system_id.as_str()) {
            return Err(Error::invalid(format!("duplicate metadata for system {}", m.system_id)));
        }
    }
    Ok(())
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(ts);
        }
    }
    DateTime::parse_from_rfc3339(raw).ok().map(|ts| ts.naive_local())
}

/// Reads a wide CSV: first column timestamps, one column per system id.
/// Empty cells and cells equal to one of `missing_tokens` are missing.
pub fn load_table(path: &Path, missing_tokens: &[String]) -> Result<RawSeriesTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, missing_tokens)
}

pub fn read_table<R: std::io::Read>(reader: R, missing_tokens: &[String]) -> Result<RawSeriesTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::invalid("table needs a timestamp column and at least one system column"));
    }
    let system_ids: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for (i, id) in system_ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::Parse {
                row: 0,
                column: i + 1,
                message: format!("duplicate system id {id}"),
            });
        }
    }

    let tokens: HashSet<&str> = missing_tokens.iter().map(|s| s.as_str()).collect();
    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); system_ids.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != system_ids.len() + 1 {
            return Err(Error::Parse {
                row,
                column: 0,
                message: format!("expected {} fields, found {}", system_ids.len() + 1, record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            row,
            column: 0,
            message: format!("unparseable timestamp {:?}", &record[0]),
        })?;
        timestamps.push(ts);
        for (u, cell) in record.iter().skip(1).enumerate() {
            let v = if cell.trim().is_empty() || tokens.contains(cell) || tokens.contains(cell.trim()) {
                f64::NAN
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row,
                    column: u + 1,
                    message: format!("unparseable value {cell:?}"),
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Parse {
                        row,
                        column: u + 1,
                        message: format!("value {cell:?} is not a finite non-negative number"),
                    });
                }
                v
            };
            values[u].push(v);
        }
    }
    RawSeriesTable::new(timestamps, system_ids, values)
}

pub fn load_metadata(path: &Path) -> Result<Vec<SystemMetadata>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let meta = rdr.deserialize().collect::<std::result::Result<Vec<SystemMetadata>, _>>()?;
    validate_metadata(&meta)?;
    Ok(meta)
}

/// Where the per-system normalization constant comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacitySource {
    #[default]
    Metadata,
    /// Observed finite maximum of each series.
    EmpiricalMax,
}

/// Divides each system's finite values by its capacity; `NaN` passes through.
pub fn normalize_by_capacity(
    table: &RawSeriesTable,
    meta: &[SystemMetadata],
    source: CapacitySource,
) -> Result<RawSeriesTable> {
    let by_id: HashMap<&str, &SystemMetadata> = meta.iter().map(|m| (m.system_id.as_str(), m)).collect();
    let mut values = Vec::with_capacity(table.n_systems());
    for (u, id) in table.system_ids().iter().enumerate() {
        let series = table.series(u);
        let capacity = match source {
            CapacitySource::Metadata => {
                let m = by_id.get(id.as_str()).ok_or_else(|| Error::MissingMetadata(id.clone()))?;
                m.validate()?;
                m.capacity
            }
            CapacitySource::EmpiricalMax => {
                let max = series.iter().filter(|v| !v.is_nan()).fold(0.0f64, |a, &b| a.max(b));
                if max <= 0.0 {
                    return Err(Error::invalid(format!(
                        "system {id} has no positive observation to estimate capacity from"
                    )));
                }
                max
            }
        };
        values.push(series.iter().map(|&v| v / capacity).collect());
    }
    RawSeriesTable::new(table.timestamps().to_vec(), table.system_ids().to_vec(), values)
}

/// A system's fully observed profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityProfileSet {
    pub system_id: String,
    /// `N_u` rows of `profile_len` values, none missing.
    pub profiles: Vec<Vec<f64>>,
    /// Zero-based day index of every retained profile.
    pub day_indices: Vec<usize>,
    pub n_total_days: usize,
}

impl EntityProfileSet {
    pub fn n_complete(&self) -> usize {
        self.profiles.len()
    }

    pub fn n_dropped(&self) -> usize {
        self.n_total_days - self.profiles.len()
    }
}

/// Output of [`build_profiles`]: profile sets for every system, plus the
/// ids of systems with no complete profile (they cannot be embedded).
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBuild {
    pub sets: Vec<EntityProfileSet>,
    pub excluded: Vec<String>,
}

impl ProfileBuild {
    /// Profile sets with at least one complete day.
    pub fn usable(&self) -> impl Iterator<Item = &EntityProfileSet> {
        self.sets.iter().filter(|s| s.n_complete() > 0)
    }

    pub fn pooled(&self) -> Vec<Vec<f64>> {
        self.usable().flat_map(|s| s.profiles.iter().cloned()).collect()
    }
}

/// Cuts every series into consecutive `profile_len`-step profiles starting
/// at the first timestamp, which must fall on midnight, and drops every
/// profile with a missing value.
pub fn build_profiles(table: &RawSeriesTable, profile_len: usize) -> Result<ProfileBuild> {
    if profile_len == 0 {
        return Err(Error::invalid("profile length must be positive"));
    }
    let t = table.n_steps();
    if !t.is_multiple_of(profile_len) {
        return Err(Error::invalid(format!(
            "profile length {profile_len} does not divide the series length {t}"
        )));
    }
    let first = table.timestamps()[0];
    if first.time().num_seconds_from_midnight() != 0 {
        return Err(Error::invalid(format!(
            "series must start at midnight to align profiles with calendar days, starts at {first}"
        )));
    }
    let n_days = t / profile_len;
    let mut sets = Vec::with_capacity(table.n_systems());
    let mut excluded = Vec::new();
    for (u, id) in table.system_ids().iter().enumerate() {
        let mut profiles = Vec::new();
        let mut day_indices = Vec::new();
        for (day, chunk) in table.series(u).chunks_exact(profile_len).enumerate() {
            if chunk.iter().all(|v| !v.is_nan()) {
                profiles.push(chunk.to_vec());
                day_indices.push(day);
            }
        }
        if profiles.is_empty() {
            excluded.push(id.clone());
        }
        sets.push(EntityProfileSet {
            system_id: id.clone(),
            profiles,
            day_indices,
            n_total_days: n_days,
        });
    }
    Ok(ProfileBuild { sets, excluded })
}
