//! Parameter sweeps over distance threshold, server count or client count.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Scenario};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::sim::{derive_seed, run_with_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    DistanceThreshold,
    ServerCount,
    ClientCount,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::DistanceThreshold => "distance_threshold",
            SweepVar::ServerCount => "server_count",
            SweepVar::ClientCount => "client_count",
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: f64) -> Result<()> {
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepVar::DistanceThreshold => config.sim.policy.distance_threshold_m = value,
            SweepVar::ServerCount => config.world.servers = count()?,
            SweepVar::ClientCount => config.world.clients = count()?,
        }
        config.validate()
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "distance_threshold" => Ok(SweepVar::DistanceThreshold),
            "server_count" => Ok(SweepVar::ServerCount),
            "client_count" => Ok(SweepVar::ClientCount),
            other => Err(Error::config(format!(
                "unknown sweep variable '{other}' (expected distance_threshold, server_count or client_count)"
            ))),
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVar,
    pub values: Vec<f64>,
    pub repetitions: usize,
}

impl SweepSpec {
    /// Parse `VAR=v1,v2,...`.
    pub fn parse(text: &str, repetitions: usize) -> Result<Self> {
        let (var, values) = text
            .split_once('=')
            .ok_or_else(|| Error::config(format!("sweep '{text}' is not VAR=v1,v2,...")))?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("sweep value '{v}' is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = SweepSpec {
            variable: var.parse()?,
            values,
            repetitions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep needs at least one value"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub policy: PolicyKind,
    pub repetition: usize,
    pub overall_delay_ms: f64,
    pub migration_cost_km: f64,
    pub mean_overloaded: f64,
}

/// Run every (value, policy, repetition) cell on a bounded worker pool.
///
/// Each repetition draws one world (scenario and link delays) shared by all
/// values and policies; each cell's policy stream is seeded from the master
/// seed, value, policy and repetition. Completed rows are written to `out`
/// in cell order; on the first failing cell the rows before it are flushed
/// and the error is returned.
pub fn run_sweep<W: Write>(
    spec: &SweepSpec,
    config: &ExperimentConfig,
    scenario: &Scenario,
    policies: &[PolicyKind],
    workers: usize,
    out: W,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if policies.is_empty() {
        return Err(Error::config("no policies to run"));
    }
    let master = config.sim.rng_seed;
    let mut cells = Vec::new();
    for &value in &spec.values {
        for &policy in policies {
            for rep in 0..spec.repetitions {
                cells.push((value, policy, rep));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::runtime(format!("worker pool: {e}")))?;
    let results: Vec<Result<SweepRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(value, policy, rep)| {
                let rep_label = rep.to_string();
                let value_label = value.to_string();
                let mut cfg = config.clone();
                spec.variable.apply(&mut cfg, value)?;
                cfg.sim.rng_seed = derive_seed(master, &["world", &rep_label]);
                cfg.sim.horizon_intervals = scenario.horizon(&cfg);
                let bundle = scenario.bundle(&cfg, cfg.sim.rng_seed)?;
                let seed = derive_seed(master, &["cell", &value_label, policy.name(), &rep_label]);
                let report = run_with_seed(&bundle, &cfg.sim, policy, seed)?;
                Ok(SweepRow {
                    sweep_value: value,
                    policy,
                    repetition: rep,
                    overall_delay_ms: report.aggregate.overall_delay_ms,
                    migration_cost_km: report.aggregate.total_migration_cost_km,
                    mean_overloaded: report.aggregate.mean_overloaded_servers,
                })
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut failure = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    write_sweep_csv(&rows, out)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::runtime(format!("writing csv: {e}"))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sweep_value",
        "policy",
        "repetition",
        "overall_delay_ms",
        "migration_cost_km",
        "mean_overloaded",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.sweep_value.to_string(),
            r.policy.to_string(),
            r.repetition.to_string(),
            r.overall_delay_ms.to_string(),
            r.migration_cost_km.to_string(),
            r.mean_overloaded.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::runtime(format!("writing csv: {e}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotMetric {
    OverallDelay,
    MigrationCost,
    Overloaded,
}

impl PlotMetric {
    pub const ALL: [PlotMetric; 3] = [PlotMetric::OverallDelay, PlotMetric::MigrationCost, PlotMetric::Overloaded];

    pub fn name(self) -> &'static str {
        match self {
            PlotMetric::OverallDelay => "overall_delay_ms",
            PlotMetric::MigrationCost => "migration_cost_km",
            PlotMetric::Overloaded => "mean_overloaded",
        }
    }

    fn of(self, row: &SweepRow) -> f64 {
        match self {
            PlotMetric::OverallDelay => row.overall_delay_ms,
            PlotMetric::MigrationCost => row.migration_cost_km,
            PlotMetric::Overloaded => row.mean_overloaded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub sweep_value: f64,
    pub policy: PolicyKind,
    pub mean: f64,
    /// Sample standard deviation over repetitions (0 for one repetition).
    pub stddev: f64,
    pub repetitions: usize,
}

/// Mean and standard deviation of `metric` per (sweep value, policy), in
/// order of first appearance of the value and policy order.
pub fn emit_plot_data(rows: &[SweepRow], metric: PlotMetric) -> Vec<PlotRow> {
    let mut order: Vec<f64> = Vec::new();
    let mut groups: BTreeMap<(usize, PolicyKind), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let vi = match order.iter().position(|&v| v == r.sweep_value) {
            Some(i) => i,
            None => {
                order.push(r.sweep_value);
                order.len() - 1
            }
        };
        groups.entry((vi, r.policy)).or_default().push(metric.of(r));
    }
    groups
        .into_iter()
        .map(|((vi, policy), xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let stddev = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            PlotRow {
                sweep_value: order[vi],
                policy,
                mean,
                stddev,
                repetitions: xs.len(),
            }
        })
        .collect()
}

pub fn write_plot_csv<W: Write>(rows: &[PlotRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep_value", "policy", "mean", "stddev", "repetitions"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.sweep_value.to_string(),
            r.policy.to_string(),
            r.mean.to_string(),
            r.stddev.to_string(),
            r.repetitions.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::runtime(format!("writing csv: {e}")))
}
