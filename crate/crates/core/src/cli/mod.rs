//! Experiment driver pieces: configuration files, scenario construction,
//! the competitive-ratio bound, parameter sweeps and plot data.

mod sweep;

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

pub use sweep::{
    emit_plot_data, run_sweep, write_plot_csv, write_sweep_csv, PlotMetric, PlotRow, SweepRow, SweepSpec,
    SweepVar,
};

use crate::error::{Error, Result};
use crate::model::{CompetitiveParams, SimConfig};
use crate::traces::{
    build_rush_hour_bundle, densify_workloads, kmeans_rush_hour, load_mobility_csv, load_station_csv,
    load_workload_dir, synth_scenario, TraceBundle, WorldParams,
};

/// Everything an experiment needs besides the scenario source.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub world: WorldParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.world.validate()
    }
}

/// Worst-case upper bound on PDMA's competitive ratio:
/// `1 + (2+ε+δ)·J·R / ((1+ε+δ)·(J+R))`.
pub fn competitive_bound(params: &CompetitiveParams) -> Result<f64> {
    params.validate()?;
    let (j, r) = (params.servers as f64, params.services as f64);
    let (e, d) = (params.epsilon, params.delta);
    Ok(1.0 + (2.0 + e + d) * j * r / ((1.0 + e + d) * (j + r)))
}

/// Where scenarios come from.
#[derive(Clone, Debug)]
pub enum Scenario {
    /// Regenerated per repetition from the world parameters.
    Synthetic,
    /// Extracted once from trace files.
    Traces(TraceBundle),
}

impl Scenario {
    /// Load `stations.csv` and `mobility.csv` (and `workloads/` if present)
    /// from `dir` and extract the rush-hour bundle.
    pub fn from_trace_dir(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        for name in ["stations.csv", "mobility.csv"] {
            if !dir.join(name).is_file() {
                return Err(Error::trace(format!("{}: missing {name}", dir.display())));
            }
        }
        let stations = load_station_csv(&dir.join("stations.csv"))?;
        let traces = load_mobility_csv(&dir.join("mobility.csv"))?;
        let wdir = dir.join("workloads");
        let workloads = if wdir.is_dir() { Some(load_workload_dir(&wdir)?) } else { None };
        let seed = config.sim.rng_seed;
        let selection = kmeans_rush_hour(&traces, &stations, &config.world, config.sim.interval_s, seed)?;
        info!(
            "rush-hour area: {} stations, {} users, intervals {}..{}",
            selection.selected_station_ids.len(),
            selection.selected_user_ids.len(),
            selection.window.0,
            selection.window.1
        );
        let bundle = build_rush_hour_bundle(
            &stations,
            &traces,
            &selection,
            workloads.as_deref(),
            &config.world,
            config.sim.interval_s,
            seed,
        )?;
        Ok(Scenario::Traces(densify_workloads(&bundle, config.world.densify)?))
    }

    /// Bundle for one run. Trace scenarios honor `world.servers` and
    /// `world.clients` by truncation when they are smaller than the data.
    pub fn bundle(&self, config: &ExperimentConfig, seed: u64) -> Result<TraceBundle> {
        match self {
            Scenario::Synthetic => {
                synth_scenario(&config.world, config.sim.horizon_intervals, config.sim.interval_s, seed)
            }
            Scenario::Traces(b) => {
                let j = config.world.servers.min(b.stations.len());
                let n = config.world.clients.min(b.users.len());
                if j == b.stations.len() && n == b.users.len() {
                    Ok(b.clone())
                } else {
                    b.truncated(j, n)
                }
            }
        }
    }

    /// Horizon the scenario can support under `config`.
    pub fn horizon(&self, config: &ExperimentConfig) -> usize {
        match self {
            Scenario::Synthetic => config.sim.horizon_intervals,
            Scenario::Traces(b) => b
                .services
                .iter()
                .map(|s| s.workload_trace.len())
                .min()
                .unwrap_or(0)
                .min(config.sim.horizon_intervals),
        }
    }
}
