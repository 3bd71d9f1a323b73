//! Run configuration: a TOML file of flat keys plus `[synth]` and `[grid]`
//! tables, overlaid by command-line flags of the same names.

use std::path::{Path, PathBuf};

use clap::Args;
use pvcluster::agglomerative::Linkage;
use pvcluster::distance::Metric;
use pvcluster::grid::HyperGrid;
use pvcluster::ingest::CapacitySource;
use pvcluster::synth::{AngleCoupling, SynthConfig};
use serde::Deserialize;

/// Bad or missing configuration; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

fn config_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Keeps `self`'s value unless `over` sets one.
macro_rules! overlay {
    ($base:expr, $over:expr; $($field:ident),* $(,)?) => {
        $( if $over.$field.is_some() { $base.$field = $over.$field; } )*
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keys {
    /// Series CSV: a timestamp column then one column per system.
    #[arg(long = "data", value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Metadata CSV with system_id, capacity_wp, tilt_deg, azimuth_deg.
    #[arg(long = "metadata", value_name = "PATH")]
    pub metadata: Option<PathBuf>,
    /// Directory for every artifact of the run.
    #[arg(long = "out_dir", alias = "out-dir", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Cell values read as missing, besides empty cells.
    #[arg(long = "missing_tokens", alias = "missing-tokens", value_delimiter = ',')]
    pub missing_tokens: Option<Vec<String>>,
    /// `metadata` or `empirical_max`.
    #[arg(long = "capacity_source", alias = "capacity-source")]
    pub capacity_source: Option<String>,
    /// Timesteps per daily profile.
    #[arg(long = "profile_len", alias = "profile-len")]
    pub profile_len: Option<usize>,
    /// Topics K.
    #[arg(long = "n_topics", alias = "n-topics", short = 'K')]
    pub n_topics: Option<usize>,
    /// Vocabulary size W.
    #[arg(long = "n_words", alias = "n-words", short = 'W')]
    pub n_words: Option<usize>,
    /// Clusters C.
    #[arg(long = "n_clusters", alias = "n-clusters", short = 'C')]
    pub n_clusters: Option<usize>,
    /// Symmetric Dirichlet prior; defaults to 1/K.
    #[arg(long = "alpha")]
    pub alpha: Option<f64>,
    /// `sym_kl` or `bhattacharyya`.
    #[arg(long = "metric")]
    pub metric: Option<Metric>,
    /// `average` or `complete`.
    #[arg(long = "linkage")]
    pub linkage: Option<Linkage>,
    #[arg(long = "quantile_levels", alias = "quantile-levels", value_delimiter = ',')]
    pub quantile_levels: Option<Vec<f64>>,
    #[arg(long = "seed")]
    pub seed: Option<u64>,
    /// Compute the leave-one-out sensitivity score (cluster).
    #[arg(long = "sensitivity")]
    pub sensitivity: Option<bool>,
    /// Also score the tilt/azimuth k-means baseline (cluster).
    #[arg(long = "baseline")]
    pub baseline: Option<bool>,
    /// Embeddings CSV to cluster; defaults to `<out_dir>/embeddings.csv`.
    #[arg(long = "embeddings", value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Assignment CSV to impute from; defaults to `<out_dir>/assignment.csv`.
    #[arg(long = "assignment", value_name = "PATH")]
    pub assignment: Option<PathBuf>,
    /// System to impute.
    #[arg(long = "system_id", alias = "system-id")]
    pub system_id: Option<String>,
    /// Quantile level used to fill gaps.
    #[arg(long = "q")]
    pub q: Option<f64>,
    /// Worker threads; all cores by default.
    #[arg(long = "jobs", short = 'j')]
    pub jobs: Option<usize>,
    /// Record per-setting wall time in the grid ledger (breaks byte
    /// determinism of the ledger).
    #[arg(long = "record_timing", alias = "record-timing")]
    pub record_timing: Option<bool>,

    #[command(flatten)]
    #[serde(default)]
    pub synth: SynthKeys,
    #[command(flatten)]
    #[serde(default)]
    pub grid: GridKeys,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthKeys {
    #[arg(long = "n_systems", alias = "n-systems")]
    pub n_systems: Option<usize>,
    #[arg(long = "days")]
    pub days: Option<usize>,
    #[arg(long = "groups")]
    pub groups: Option<usize>,
    #[arg(long = "resolution_minutes", alias = "resolution-minutes")]
    pub resolution_minutes: Option<u32>,
    #[arg(long = "missing_day_rate", alias = "missing-day-rate")]
    pub missing_day_rate: Option<f64>,
    /// Half-open day range `start,end` missing for every system.
    #[arg(long = "global_outage", alias = "global-outage", value_delimiter = ',')]
    pub global_outage: Option<Vec<usize>>,
    /// `coupled` or `decoupled`.
    #[arg(long = "angle_coupling", alias = "angle-coupling")]
    pub angle_coupling: Option<AngleCoupling>,
    #[arg(long = "sub_day_gaps", alias = "sub-day-gaps")]
    pub sub_day_gaps: Option<bool>,
    /// First day, `YYYY-MM-DD`.
    #[arg(long = "start")]
    pub start: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridKeys {
    #[arg(long = "c_values", alias = "c-values", value_delimiter = ',')]
    pub c_values: Option<Vec<usize>>,
    #[arg(long = "k_values", alias = "k-values", value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    #[arg(long = "w_values", alias = "w-values", value_delimiter = ',')]
    pub w_values: Option<Vec<usize>>,
    #[arg(long = "metrics", value_delimiter = ',')]
    pub metrics: Option<Vec<Metric>>,
    #[arg(long = "linkages", value_delimiter = ',')]
    pub linkages: Option<Vec<Linkage>>,
    #[arg(long = "seeds", value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

impl Keys {
    pub fn from_file(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))
    }

    /// `self` with every key set in `over` replaced.
    pub fn overlay(mut self, over: Keys) -> Self {
        overlay!(self, over;
            data, metadata, out_dir, missing_tokens, capacity_source, profile_len, n_topics,
            n_words, n_clusters, alpha, metric, linkage, quantile_levels, seed, sensitivity,
            baseline, embeddings, assignment, system_id, q, jobs, record_timing);
        overlay!(self.synth, over.synth;
            n_systems, days, groups, resolution_minutes, missing_day_rate, global_outage,
            angle_coupling, sub_day_gaps, start);
        overlay!(self.grid, over.grid; c_values, k_values, w_values, metrics, linkages, seeds);
        self
    }

    pub fn require_seed(&self) -> ConfigResult<u64> {
        self.seed.ok_or_else(|| config_err("--seed is required for this subcommand"))
    }

    pub fn out_dir(&self) -> ConfigResult<&Path> {
        self.out_dir.as_deref().ok_or_else(|| config_err("out_dir is required"))
    }

    pub fn data(&self) -> ConfigResult<&Path> {
        existing(self.data.as_deref(), "data")
    }

    pub fn metadata(&self) -> ConfigResult<&Path> {
        existing(self.metadata.as_deref(), "metadata")
    }

    pub fn missing_tokens(&self) -> Vec<String> {
        self.missing_tokens.clone().unwrap_or_default()
    }

    pub fn capacity_source(&self) -> ConfigResult<CapacitySource> {
        match self.capacity_source.as_deref() {
            None | Some("metadata") => Ok(CapacitySource::Metadata),
            Some("empirical_max") => Ok(CapacitySource::EmpiricalMax),
            Some(other) => Err(config_err(format!(
                "capacity_source must be metadata or empirical_max, got {other:?}"
            ))),
        }
    }

    pub fn profile_len(&self) -> ConfigResult<usize> {
        positive(self.profile_len.unwrap_or(96), "profile_len")
    }

    pub fn n_topics(&self) -> ConfigResult<usize> {
        at_least(self.n_topics, 2, "n_topics")
    }

    pub fn n_words(&self) -> ConfigResult<usize> {
        at_least(self.n_words, 2, "n_words")
    }

    pub fn n_clusters(&self) -> ConfigResult<usize> {
        at_least(self.n_clusters, 1, "n_clusters")
    }

    pub fn alpha(&self) -> ConfigResult<Option<f64>> {
        match self.alpha {
            Some(a) if !(a > 0.0 && a.is_finite()) => Err(config_err(format!("alpha must be positive, got {a}"))),
            a => Ok(a),
        }
    }

    pub fn quantile_levels(&self) -> ConfigResult<Vec<f64>> {
        let levels = self
            .quantile_levels
            .clone()
            .unwrap_or_else(|| pvcluster::DEFAULT_QUANTILE_LEVELS.to_vec());
        pvcluster::evaluation::validate_levels(&levels).map_err(|e| config_err(format!("quantile_levels: {e}")))?;
        Ok(levels)
    }

    pub fn q(&self) -> ConfigResult<f64> {
        let q = self.q.unwrap_or(0.5);
        if !(q > 0.0 && q < 1.0) {
            return Err(config_err(format!("q must lie in (0, 1), got {q}")));
        }
        Ok(q)
    }

    pub fn synth_config(&self, seed: u64) -> ConfigResult<SynthConfig> {
        let d = SynthConfig::default();
        let s = &self.synth;
        let global_outage = match s.global_outage.as_deref() {
            None => None,
            Some([a, b]) => Some((*a, *b)),
            Some(other) => {
                return Err(config_err(format!(
                    "global_outage needs two day indices, got {other:?}"
                )));
            }
        };
        let start = match &s.start {
            None => d.start,
            Some(raw) => raw
                .parse()
                .map_err(|_| config_err(format!("start must be YYYY-MM-DD, got {raw:?}")))?,
        };
        let cfg = SynthConfig {
            n_systems: s.n_systems.unwrap_or(d.n_systems),
            days: s.days.unwrap_or(d.days),
            groups: s.groups.unwrap_or(d.groups),
            resolution_minutes: s.resolution_minutes.unwrap_or(d.resolution_minutes),
            missing_day_rate: s.missing_day_rate.unwrap_or(d.missing_day_rate),
            global_outage,
            angle_coupling: s.angle_coupling.unwrap_or(d.angle_coupling),
            sub_day_gaps: s.sub_day_gaps.unwrap_or(d.sub_day_gaps),
            start,
            seed,
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn hyper_grid(&self) -> ConfigResult<HyperGrid> {
        let d = HyperGrid::default();
        let g = &self.grid;
        let grid = HyperGrid {
            c_values: g.c_values.clone().unwrap_or(d.c_values),
            k_values: g.k_values.clone().unwrap_or(d.k_values),
            w_values: g.w_values.clone().unwrap_or(d.w_values),
            metrics: g.metrics.clone().unwrap_or(d.metrics),
            linkages: g.linkages.clone().unwrap_or(d.linkages),
            seeds: g.seeds.clone().unwrap_or(d.seeds),
        };
        grid.validate().map_err(|e| config_err(format!("grid: {e}")))?;
        Ok(grid)
    }
}

fn existing<'a>(path: Option<&'a Path>, key: &str) -> ConfigResult<&'a Path> {
    let path = path.ok_or_else(|| config_err(format!("{key} is required")))?;
    if !path.is_file() {
        return Err(config_err(format!("{key} file {} does not exist", path.display())));
    }
    Ok(path)
}

fn positive(v: usize, key: &str) -> ConfigResult<usize> {
    if v == 0 {
        return Err(config_err(format!("{key} must be positive")));
    }
    Ok(v)
}

fn at_least(v: Option<usize>, min: usize, key: &str) -> ConfigResult<usize> {
    match v {
        None => Err(config_err(format!("{key} is required"))),
        Some(v) if v < min => Err(config_err(format!("{key} must be at least {min}, got {v}"))),
        Some(v) => Ok(v),
    }
}
