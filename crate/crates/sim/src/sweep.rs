//! Parameter sweeps: one row of aggregated statistics per axis value.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::trial::{run_trial, trial_seed, TrialResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N,
    K,
    M,
    SnrDb,
    L,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "n",
            Axis::K => "k",
            Axis::M => "m",
            Axis::SnrDb => "snr_db",
            Axis::L => "l",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &SimConfig, value: f64) -> Result<SimConfig> {
        let mut cfg = base.clone();
        if self != Axis::SnrDb && (value < 0.0 || value.fract() != 0.0) {
            return Err(SimError::Config(format!("axis {} needs a non-negative integer, got {value}", self.name())));
        }
        let int = value as usize;
        match self {
            Axis::N => cfg.n = int,
            Axis::K => cfg.k = int,
            Axis::M => cfg.m = int,
            Axis::SnrDb => cfg.snr_db = value,
            Axis::L => cfg.l = int,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Axis::N),
            "k" => Ok(Axis::K),
            "m" => Ok(Axis::M),
            "snr_db" => Ok(Axis::SnrDb),
            "l" => Ok(Axis::L),
            _ => Err(SimError::UnknownAxis(s.to_string())),
        }
    }
}

/// Parses `axis=v1,v2,...`.
pub fn parse_sweep(arg: &str) -> Result<(Axis, Vec<f64>)> {
    let (axis, values) = arg
        .split_once('=')
        .ok_or_else(|| SimError::Config(format!("sweep must look like axis=v1,v2, got {arg:?}")))?;
    let axis: Axis = axis.trim().parse()?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| SimError::Config(format!("bad sweep value {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(SimError::Config("sweep needs at least one value".into()));
    }
    Ok((axis, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub trials: usize,
    pub pe_mean: f64,
    /// Sample standard deviation over √trials; zero for a single trial.
    pub pe_stderr: f64,
    pub iters_mean: f64,
    pub nmse_db_mean: f64,
    pub runtime_ms_mean: f64,
    #[serde(default)]
    pub per_trial: Vec<TrialResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl SweepRow {
    pub fn aggregate(axis: &str, value: f64, per_trial: Vec<TrialResult>) -> Self {
        let n = per_trial.len();
        let pe_mean = mean(per_trial.iter().map(|t| t.pe));
        let pe_stderr = if n > 1 {
            let var = per_trial.iter().map(|t| (t.pe - pe_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            axis: axis.to_string(),
            value,
            trials: n,
            pe_mean,
            pe_stderr,
            iters_mean: mean(per_trial.iter().map(|t| t.iterations as f64)),
            nmse_db_mean: mean(per_trial.iter().map(|t| t.nmse_db)),
            runtime_ms_mean: mean(per_trial.iter().map(|t| t.runtime_ms)),
            per_trial,
        }
    }
}

/// Runs all trials of one configuration in parallel. Results come back in
/// trial order, so the aggregate does not depend on the thread count.
pub fn run_point(cfg: &SimConfig) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| run_trial(cfg, trial_seed(cfg.seed, i)))
        .collect()
}

/// Runs every sweep value. Without an axis a single row labelled `none`
/// is produced. Rows are sorted by value.
pub fn run_sweep(base: &SimConfig, sweep: Option<(Axis, &[f64])>) -> Result<Vec<SweepRow>> {
    let Some((axis, values)) = sweep else {
        return Ok(vec![SweepRow::aggregate("none", 0.0, run_point(base)?)]);
    };
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let cfg = axis.apply(base, v)?;
        log::info!("{axis} = {v}: {} trials", cfg.trials);
        let row = SweepRow::aggregate(axis.name(), v, run_point(&cfg)?);
        log::info!(
            "{axis} = {v}: pe {:.4} ± {:.4}, {:.1} iterations, {:.1} ms",
            row.pe_mean,
            row.pe_stderr,
            row.iters_mean,
            row.runtime_ms_mean
        );
        rows.push(row);
    }
    Ok(rows)
}
