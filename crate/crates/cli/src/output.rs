//! CSV and JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use trainguard_core::trainer::stats;
use trainguard_core::EpisodeMetrics;

/// Window of the moving average in curve files.
pub const CURVE_WINDOW: usize = 8;

/// One row of a metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub episode: usize,
    pub reward: f64,
    pub protect_times: usize,
    pub overspeed: usize,
    /// kWh
    pub energy: f64,
    /// s
    pub time: f64,
    /// s
    pub deviation: f64,
    pub arrived: bool,
}

impl MetricsRow {
    pub fn new(seed: u64, m: &EpisodeMetrics) -> Self {
        Self {
            seed,
            episode: m.episode,
            reward: m.total_reward,
            protect_times: m.protect_times,
            overspeed: m.overspeed_steps,
            energy: m.energy(),
            time: m.run_time,
            deviation: m.schedule_deviation,
            arrived: m.arrived,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub reward: f64,
    pub smoothed: f64,
}

pub fn curve(rewards: &[f64]) -> Vec<CurveRow> {
    stats::moving_average(rewards, CURVE_WINDOW)
        .into_iter()
        .zip(rewards)
        .enumerate()
        .map(|(episode, (smoothed, &reward))| CurveRow { episode, reward, smoothed })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>().with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn out_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

/// Aggregates over a set of episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_protect_times: f64,
    pub overspeed_steps: usize,
    pub arrived: usize,
    pub mean_energy: f64,
    pub mean_time: f64,
    pub mean_abs_deviation: f64,
    /// Minimum, quartiles and maximum of the per-episode protect times.
    pub protect_box: Option<[f64; 5]>,
    /// Mean action-selection time per step, ms.
    pub mean_select_ms: f64,
}

impl EpisodeSummary {
    pub fn of<'a>(ms: impl IntoIterator<Item = &'a EpisodeMetrics>) -> Self {
        let ms: Vec<&EpisodeMetrics> = ms.into_iter().collect();
        let col = |f: fn(&EpisodeMetrics) -> f64| ms.iter().map(|m| f(m)).collect::<Vec<f64>>();
        let protect = col(|m| m.protect_times as f64);
        Self {
            episodes: ms.len(),
            mean_reward: stats::mean(&col(|m| m.total_reward)),
            mean_protect_times: stats::mean(&protect),
            overspeed_steps: ms.iter().map(|m| m.overspeed_steps).sum(),
            arrived: ms.iter().filter(|m| m.arrived).count(),
            mean_energy: stats::mean(&col(EpisodeMetrics::energy)),
            mean_time: stats::mean(&col(|m| m.run_time)),
            mean_abs_deviation: stats::mean(&col(|m| m.schedule_deviation.abs())),
            protect_box: stats::five_numbers(&protect),
            mean_select_ms: stats::mean(&col(|m| m.select_time)) * 1e3,
        }
    }
}
