//! Seeded synthetic PV fleets with known behaviour groups.
//!
//! Each group has an archetype day: a truncated-cosine daylight bell with a
//! group-specific peak hour and a group-specific shading notch. Every day
//! shares a fleet-wide weather factor, every system has its own capacity,
//! a small peak jitter and multiplicative noise. Missing data comes in
//! whole days, per system and as a fleet-wide outage.

use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RawSeriesTable, SystemMetadata};

const NOISE_SIGMA: f64 = 0.05;
const MAX_NORMALIZED: f64 = 1.2;
const DAYLIGHT_HALF_WIDTH_H: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleCoupling {
    /// Panel angles follow the behaviour group.
    Coupled,
    /// Panel angles are drawn independently of the behaviour group.
    Decoupled,
}

impl FromStr for AngleCoupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(Self::Coupled),
            "decoupled" => Ok(Self::Decoupled),
            other => Err(Error::invalid(format!("unknown angle coupling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_systems: usize,
    pub days: usize,
    pub groups: usize,
    pub resolution_minutes: u32,
    pub missing_day_rate: f64,
    /// Half-open day range `[start, end)` missing for every system.
    pub global_outage: Option<(usize, usize)>,
    pub angle_coupling: AngleCoupling,
    /// Also blank one random hour on some observed days.
    pub sub_day_gaps: bool,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_systems: 60,
            days: 120,
            groups: 3,
            resolution_minutes: 15,
            missing_day_rate: 0.1,
            global_outage: None,
            angle_coupling: AngleCoupling::Decoupled,
            sub_day_gaps: false,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups < 2 || self.n_systems < self.groups {
            return Err(Error::invalid(format!(
                "need systems >= groups >= 2, got {} systems and {} groups",
                self.n_systems, self.groups
            )));
        }
        if self.days == 0 {
            return Err(Error::invalid("need at least one day"));
        }
        if self.resolution_minutes == 0 || 1440 % self.resolution_minutes != 0 {
            return Err(Error::invalid(format!(
                "resolution {} minutes does not divide a day",
                self.resolution_minutes
            )));
        }
        if !(0.0..1.0).contains(&self.missing_day_rate) {
            return Err(Error::invalid(format!(
                "missing_day_rate {} outside [0, 1)",
                self.missing_day_rate
            )));
        }
        if let Some((start, end)) = self.global_outage
            && !(start < end && end <= self.days)
        {
            return Err(Error::invalid(format!(
                "outage [{start}, {end}) does not fit in {} days",
                self.days
            )));
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> usize {
        (1440 / self.resolution_minutes) as usize
    }
}

#[derive(Debug, Clone)]
pub struct SynthFleet {
    pub table: RawSeriesTable,
    pub metadata: Vec<SystemMetadata>,
    /// Behaviour group of every system, aligned with the table.
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Archetype {
    peak_hour: f64,
    notch_hour: f64,
    notch_depth: f64,
    notch_width_h: f64,
    tilt: f64,
    azimuth: f64,
}

impl Archetype {
    /// Clear-sky shape at `hour`, peak 1.
    fn shape(&self, hour: f64, peak_shift: f64) -> f64 {
        let x = (hour - self.peak_hour - peak_shift) / DAYLIGHT_HALF_WIDTH_H;
        if x.abs() >= 1.0 {
            return 0.0;
        }
        let bell = (std::f64::consts::FRAC_PI_2 * x).cos();
        let z = (hour - self.notch_hour) / self.notch_width_h;
        bell * (1.0 - self.notch_depth * (-0.5 * z * z).exp())
    }
}

fn archetypes(groups: usize, rng: &mut ChaCha8Rng) -> Vec<Archetype> {
    (0..groups)
        .map(|g| {
            let frac = g as f64 / (groups - 1) as f64;
            let peak_hour = 11.0 + 3.0 * frac;
            Archetype {
                peak_hour,
                notch_hour: rng.random_range(8.0..17.0),
                notch_depth: rng.random_range(0.3..0.6),
                notch_width_h: rng.random_range(0.5..1.0),
                tilt: 15.0 + 30.0 * rng.random::<f64>(),
                // later peaks face further west
                azimuth: 180.0 + 15.0 * (peak_hour - 12.5),
            }
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthFleet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let arch = archetypes(cfg.groups, &mut rng);
    let weather: Vec<f64> = (0..cfg.days).map(|_| 1.0 - 0.9 * rng.random::<f64>()).collect();

    let steps = cfg.steps_per_day();
    let start: NaiveDateTime = cfg.start.and_hms_opt(0, 0, 0).unwrap();
    let timestamps: Vec<NaiveDateTime> = (0..steps * cfg.days)
        .map(|i| start + chrono::Duration::minutes(cfg.resolution_minutes as i64 * i as i64))
        .collect();

    let systems: Vec<(Vec<f64>, SystemMetadata, usize)> = (0..cfg.n_systems)
        .into_par_iter()
        .map(|u| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u as u64 + 1);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let group = u % cfg.groups;
            let a = &arch[group];
            let capacity = (rng.random_range(2000.0f64..8000.0) / 10.0).round() * 10.0;
            let peak_shift = 0.1 * normal.sample(&mut rng);

            let mut series = Vec::with_capacity(steps * cfg.days);
            for (day, &w) in weather.iter().enumerate() {
                let missing =
                    rng.random::<f64>() < cfg.missing_day_rate || cfg.global_outage.is_some_and(|(s, e)| (s..e).contains(&day));
                let gap_hour = (cfg.sub_day_gaps && !missing && rng.random::<f64>() < 0.5 * cfg.missing_day_rate)
                    .then(|| rng.random_range(0..24usize));
                for step in 0..steps {
                    let hour = step as f64 * cfg.resolution_minutes as f64 / 60.0;
                    let noise = 1.0 + NOISE_SIGMA * normal.sample(&mut rng);
                    if missing || gap_hour.is_some_and(|h| h == hour as usize) {
                        series.push(f64::NAN);
                        continue;
                    }
                    let norm = (a.shape(hour, peak_shift) * w * noise).clamp(0.0, MAX_NORMALIZED);
                    // millwatt resolution, rounded down so the cap holds after division
                    series.push((norm * capacity * 1000.0).floor() / 1000.0);
                }
            }

            let angle_group = match cfg.angle_coupling {
                AngleCoupling::Coupled => group,
                AngleCoupling::Decoupled => rng.random_range(0..cfg.groups),
            };
            let ag = &arch[angle_group];
            let tilt = (ag.tilt + 2.0 * normal.sample(&mut rng)).clamp(0.0, 90.0);
            let azimuth = (ag.azimuth + 5.0 * normal.sample(&mut rng)).rem_euclid(360.0);
            let meta = SystemMetadata {
                system_id: format!("pv{u:03}"),
                capacity,
                tilt: (tilt * 100.0).round() / 100.0,
                azimuth: ((azimuth * 100.0).round() / 100.0) % 360.0,
            };
            (series, meta, group)
        })
        .collect();

    let mut values = Vec::with_capacity(cfg.n_systems);
    let mut metadata = Vec::with_capacity(cfg.n_systems);
    let mut groups = Vec::with_capacity(cfg.n_systems);
    for (s, m, g) in systems {
        values.push(s);
        metadata.push(m);
        groups.push(g);
    }
    let ids = metadata.iter().map(|m| m.system_id.clone()).collect();
    Ok(SynthFleet {
        table: RawSeriesTable::new(timestamps, ids, values)?,
        metadata,
        groups,
    })
}
