use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub interval: usize,
    /// Mean delay over the active users of this interval (0 when none).
    pub mean_delay_ms: f64,
    pub delay_samples: usize,
    pub migrations: usize,
    pub migration_cost_km: f64,
    pub overloaded_servers: usize,
    pub placement_failures: usize,
    pub powered_servers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    /// Mean over all (interval, active user) pairs of the serving delay.
    pub overall_delay_ms: f64,
    pub total_migration_cost_km: f64,
    pub mean_overloaded_servers: f64,
    pub total_migrations: usize,
    pub total_placement_failures: usize,
}

impl AggregateMetrics {
    pub fn from_intervals(rows: &[IntervalMetrics]) -> Self {
        let samples: usize = rows.iter().map(|r| r.delay_samples).sum();
        let weighted: f64 = rows.iter().map(|r| r.mean_delay_ms * r.delay_samples as f64).sum();
        AggregateMetrics {
            overall_delay_ms: if samples == 0 { 0.0 } else { weighted / samples as f64 },
            total_migration_cost_km: rows.iter().map(|r| r.migration_cost_km).sum(),
            mean_overloaded_servers: if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(|r| r.overloaded_servers as f64).sum::<f64>() / rows.len() as f64
            },
            total_migrations: rows.iter().map(|r| r.migrations).sum(),
            total_placement_failures: rows.iter().map(|r| r.placement_failures).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub per_interval: Vec<IntervalMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricsReport {
    pub fn new(policy: impl Into<String>, per_interval: Vec<IntervalMetrics>) -> Self {
        let aggregate = AggregateMetrics::from_intervals(&per_interval);
        MetricsReport {
            policy: policy.into(),
            per_interval,
            aggregate,
        }
    }

    /// Write the per-interval rows of several reports as one CSV table.
    pub fn write_csv<'a, W: Write>(reports: impl IntoIterator<Item = &'a MetricsReport>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        // Flattened serde structs cannot emit headers on their own.
        w.write_record([
            "policy",
            "interval",
            "mean_delay_ms",
            "delay_samples",
            "migrations",
            "migration_cost_km",
            "overloaded_servers",
            "placement_failures",
            "powered_servers",
        ])
        .map_err(csv_err)?;
        for report in reports {
            for row in &report.per_interval {
                w.write_record(&[
                    report.policy.clone(),
                    row.interval.to_string(),
                    row.mean_delay_ms.to_string(),
                    row.delay_samples.to_string(),
                    row.migrations.to_string(),
                    row.migration_cost_km.to_string(),
                    row.overloaded_servers.to_string(),
                    row.placement_failures.to_string(),
                    row.powered_servers.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::runtime(format!("writing metrics: {e}")))
    }

    /// Parse rows written by [`MetricsReport::write_csv`], grouped by policy
    /// in order of first appearance.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsReport>> {
        let mut r = csv::Reader::from_reader(input);
        let mut out: Vec<MetricsReport> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let num = |i: usize| -> Result<f64> {
                field(i).parse().map_err(|_| Error::runtime(format!("bad number '{}'", field(i))))
            };
            let int = |i: usize| -> Result<usize> {
                field(i).parse().map_err(|_| Error::runtime(format!("bad count '{}'", field(i))))
            };
            let row = IntervalMetrics {
                interval: int(1)?,
                mean_delay_ms: num(2)?,
                delay_samples: int(3)?,
                migrations: int(4)?,
                migration_cost_km: num(5)?,
                overloaded_servers: int(6)?,
                placement_failures: int(7)?,
                powered_servers: int(8)?,
            };
            match out.iter_mut().find(|m| m.policy == field(0)) {
                Some(m) => m.per_interval.push(row),
                None => out.push(MetricsReport {
                    policy: field(0).to_string(),
                    per_interval: vec![row],
                    aggregate: AggregateMetrics::default(),
                }),
            }
        }
        for m in &mut out {
            m.aggregate = AggregateMetrics::from_intervals(&m.per_interval);
        }
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::runtime(format!("metrics csv: {e}"))
}
