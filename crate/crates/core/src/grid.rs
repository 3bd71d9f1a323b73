//! Exhaustive hyperparameter sweeps and selection of the cluster count.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agglomerative::Linkage;
use crate::distance::Metric;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::ingest::{ProfileBuild, RawSeriesTable};
use crate::lda::DirichletEmbedding;
use crate::pipeline::{self, EmbedSettings};
use crate::wording::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub c_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub w_values: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub linkages: Vec<Linkage>,
    pub seeds: Vec<u64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            c_values: vec![4, 6, 8, 10, 12, 16],
            k_values: vec![3, 5, 8, 12, 20],
            w_values: vec![50, 100, 200, 400],
            metrics: vec![Metric::SymKl, Metric::Bhattacharyya],
            linkages: vec![Linkage::Average, Linkage::Complete],
            seeds: vec![0],
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("c_values", self.c_values.is_empty()),
            ("k_values", self.k_values.is_empty()),
            ("w_values", self.w_values.is_empty()),
            ("metrics", self.metrics.is_empty()),
            ("linkages", self.linkages.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::invalid(format!("grid axis {name} is empty")));
        }
        if self.c_values.iter().any(|&c| c < 1) {
            return Err(Error::invalid("cluster counts must be at least 1"));
        }
        if self.k_values.iter().chain(&self.w_values).any(|&v| v < 2) {
            return Err(Error::invalid("topic and word counts must be at least 2"));
        }
        Ok(())
    }

    /// Every grid point, ordered by seed, W, K, metric, linkage, then C.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &w in &self.w_values {
                for &k in &self.k_values {
                    for &metric in &self.metrics {
                        for &linkage in &self.linkages {
                            for &c in &self.c_values {
                                out.push(Setting {
                                    c,
                                    k,
                                    w,
                                    metric,
                                    linkage,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Setting {
    pub c: usize,
    pub k: usize,
    pub w: usize,
    pub metric: Metric,
    pub linkage: Linkage,
    pub seed: u64,
}

impl Setting {
    pub fn id(&self) -> String {
        format!(
            "C{}-K{}-W{}-{}-{}-s{}",
            self.c, self.k, self.w, self.metric, self.linkage, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingResult {
    pub setting: Setting,
    pub s_disp: Option<f64>,
    pub s_sens: Option<f64>,
    /// True iff every cluster has at least two members and scoring succeeded.
    pub valid: bool,
    pub min_cluster_size: usize,
    pub error: Option<String>,
    pub wall_time_ms: u128,
}

/// Everything a sweep needs from the data: the normalized table restricted
/// to embeddable systems and their complete profiles.
pub struct GridData<'a> {
    pub table: &'a RawSeriesTable,
    pub profiles: &'a ProfileBuild,
}

fn failed(setting: Setting, err: String, started: Instant, timing: bool) -> SettingResult {
    SettingResult {
        setting,
        s_disp: None,
        s_sens: None,
        valid: false,
        min_cluster_size: 0,
        error: Some(err),
        wall_time_ms: if timing { started.elapsed().as_millis() } else { 0 },
    }
}

fn run_setting(
    data: &GridData<'_>,
    embeddings: &std::result::Result<Vec<DirichletEmbedding>, String>,
    setting: Setting,
    levels: &[f64],
    record_timing: bool,
) -> SettingResult {
    let started = Instant::now();
    let embeddings = match embeddings {
        Ok(e) => e,
        Err(msg) => return failed(setting, msg.clone(), started, record_timing),
    };
    let (_, assignment) = match pipeline::cluster(embeddings, setting.metric, setting.linkage, setting.c) {
        Ok(v) => v,
        Err(e) => return failed(setting, e.to_string(), started, record_timing),
    };
    let min_size = assignment.min_cluster_size();
    let mut result = SettingResult {
        setting,
        s_disp: None,
        s_sens: None,
        valid: false,
        min_cluster_size: min_size,
        error: None,
        wall_time_ms: 0,
    };
    if min_size >= 2 {
        let scores = evaluation::dispersion_score(data.table, &assignment, levels)
            .and_then(|d| Ok((d, evaluation::sensitivity_score(data.table, &assignment, levels)?)));
        match scores {
            Ok((d, s)) => {
                result.s_disp = Some(d.score);
                result.s_sens = Some(s.score);
                result.valid = true;
            }
            Err(e) => result.error = Some(e.to_string()),
        }
    }
    if record_timing {
        result.wall_time_ms = started.elapsed().as_millis();
    }
    result
}

/// Scores every grid point not listed in `skip`, in grid order. Vocabularies
/// are shared per `(W, seed)` and embeddings per `(K, W, seed)`.
pub fn run_grid(
    data: &GridData<'_>,
    grid: &HyperGrid,
    levels: &[f64],
    alpha: Option<f64>,
    record_timing: bool,
    skip: &HashSet<String>,
) -> Result<Vec<SettingResult>> {
    grid.validate()?;
    evaluation::validate_levels(levels)?;
    let todo: Vec<Setting> = grid.settings().into_iter().filter(|s| !skip.contains(&s.id())).collect();

    let vocab_keys: Vec<(usize, u64)> = unique(todo.iter().map(|s| (s.w, s.seed)));
    let vocabs: HashMap<(usize, u64), std::result::Result<Vocabulary, String>> = vocab_keys
        .par_iter()
        .map(|&(w, seed)| {
            let v = pipeline::build_vocabulary(data.profiles, &EmbedSettings::new(w, 2, seed)).map_err(|e| e.to_string());
            ((w, seed), v)
        })
        .collect();

    let embed_keys: Vec<(usize, usize, u64)> = unique(todo.iter().map(|s| (s.k, s.w, s.seed)));
    let embeddings: HashMap<(usize, usize, u64), std::result::Result<Vec<DirichletEmbedding>, String>> = embed_keys
        .par_iter()
        .map(|&(k, w, seed)| {
            let e = match &vocabs[&(w, seed)] {
                Ok(vocab) => {
                    let settings = EmbedSettings {
                        alpha,
                        ..EmbedSettings::new(w, k, seed)
                    };
                    pipeline::embed_with_vocabulary(data.profiles, vocab, &settings)
                        .map(|e| e.embeddings)
                        .map_err(|e| e.to_string())
                }
                Err(msg) => Err(msg.clone()),
            };
            ((k, w, seed), e)
        })
        .collect();

    Ok(todo
        .par_iter()
        .map(|&s| run_setting(data, &embeddings[&(s.k, s.w, s.seed)], s, levels, record_timing))
        .collect())
}

fn unique<T: Eq + std::hash::Hash + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut seen = HashSet::new();
    items.filter(|i| seen.insert(*i)).collect()
}

/// Median scores of one cluster count over its valid settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CSummary {
    pub c: usize,
    pub n_valid: usize,
    pub median_disp: f64,
    pub median_sens: f64,
    pub objective: f64,
}

/// `median S_disp + |median S_disp - median S_sens|` per cluster count,
/// pooled over every other axis.
pub fn summarize_by_c(results: &[SettingResult]) -> Vec<CSummary> {
    let mut by_c: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in results.iter().filter(|r| r.valid) {
        if let (Some(d), Some(s)) = (r.s_disp, r.s_sens) {
            let e = by_c.entry(r.setting.c).or_default();
            e.0.push(d);
            e.1.push(s);
        }
    }
    by_c.into_iter()
        .map(|(c, (d, s))| {
            let md = evaluation::empirical_quantile(&d, 0.5).expect("non-empty");
            let ms = evaluation::empirical_quantile(&s, 0.5).expect("non-empty");
            CSummary {
                c,
                n_valid: d.len(),
                median_disp: md,
                median_sens: ms,
                objective: md + (md - ms).abs(),
            }
        })
        .collect()
}

/// Cluster count minimizing the median-based objective; ties go to the
/// smaller count.
pub fn select_c(results: &[SettingResult]) -> Result<usize> {
    summarize_by_c(results)
        .into_iter()
        .fold(None::<CSummary>, |best, s| match best {
            Some(b) if b.objective <= s.objective => Some(b),
            _ => Some(s),
        })
        .map(|s| s.c)
        .ok_or(Error::NoValidResults)
}
