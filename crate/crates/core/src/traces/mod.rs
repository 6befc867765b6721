//! Scenario inputs: station, mobility and workload traces, the synthetic
//! rush-hour generator and the K-means rush-hour extraction pipeline.

mod io;
mod rush_hour;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{
    load_mobility_csv, load_station_csv, load_workload_dir, write_mobility_csv, write_station_csv,
    write_workload_dir,
};
pub use rush_hour::{build_rush_hour_bundle, kmeans, kmeans_rush_hour, KMeans, RushHourSelection};
pub use synth::{synth_scenario, synth_world};

use crate::error::{Error, Result};
use crate::model::{
    BaseStation, EdgeServer, EdgeService, MobileUser, ServerId, ServiceId, StationId, StudyArea, UserId,
};
use crate::world::World;

const GIB: u64 = 1 << 30;

/// Everything a simulation run needs besides its configuration. Servers
/// are listed powered off and services unplaced; [`TraceBundle::to_world`]
/// turns the bundle into an initial world state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub stations: Vec<BaseStation>,
    pub servers: Vec<EdgeServer>,
    pub users: Vec<MobileUser>,
    pub services: Vec<EdgeService>,
    /// Time of interval 0 on the trace clock.
    pub start_s: f64,
    /// Users outside this area generate no requests.
    pub area: Option<StudyArea>,
}

impl TraceBundle {
    /// Fail before a run if any workload trace is shorter than the horizon
    /// or a user has no sample before the horizon ends.
    pub fn check_horizon(&self, horizon: usize, interval_s: f64) -> Result<()> {
        if horizon == 0 {
            return Ok(());
        }
        if let Some(svc) = self.services.iter().find(|s| s.workload_trace.len() < horizon) {
            return Err(Error::trace(format!(
                "service {}: workload trace has {} samples, horizon needs {horizon}",
                svc.id,
                svc.workload_trace.len()
            )));
        }
        let end = self.start_s + (horizon - 1) as f64 * interval_s;
        for u in &self.users {
            match u.trace.first_timestamp() {
                Some(t) if t <= end => {}
                _ => {
                    return Err(Error::trace(format!(
                        "user {} ({}): no trace sample within the horizon",
                        u.id, u.trace.label
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn to_world(&self, admission_cap: f64) -> Result<World> {
        let mut servers = self.servers.clone();
        for s in &mut servers {
            s.hosted_service_ids.clear();
            s.powered_on = false;
        }
        let mut services = self.services.clone();
        for s in &mut services {
            s.current_server_id = None;
            s.migration_log.clear();
        }
        World::new(self.stations.clone(), servers, self.users.clone(), services, admission_cap)
    }

    /// Keep the first `servers` stations and the first `clients` users,
    /// re-indexed densely.
    pub fn truncated(&self, servers: usize, clients: usize) -> Result<TraceBundle> {
        if servers == 0 || servers > self.stations.len() {
            return Err(Error::config(format!(
                "server count {servers} outside 1..={}",
                self.stations.len()
            )));
        }
        if clients == 0 || clients > self.users.len() {
            return Err(Error::config(format!(
                "client count {clients} outside 1..={}",
                self.users.len()
            )));
        }
        let mut out = self.clone();
        out.stations.truncate(servers);
        out.servers = self
            .stations
            .iter()
            .take(servers)
            .map(|st| self.servers[st.edge_server_id.index()].clone())
            .collect();
        for (i, (st, srv)) in out.stations.iter_mut().zip(out.servers.iter_mut()).enumerate() {
            st.id = StationId(i);
            st.edge_server_id = ServerId(i);
            srv.id = ServerId(i);
            srv.base_station_id = StationId(i);
        }
        out.users = self.users.iter().take(clients).cloned().collect();
        out.services = out
            .users
            .iter()
            .map(|u| self.services[u.service_id.index()].clone())
            .collect();
        for (i, (u, s)) in out.users.iter_mut().zip(out.services.iter_mut()).enumerate() {
            u.id = UserId(i);
            u.service_id = ServiceId(i);
            s.id = ServiceId(i);
            s.user_id = UserId(i);
        }
        Ok(out)
    }
}

/// Multiply every service's requested MIPS by `multiplier`, modelling
/// services that must be deployed together as one bundle. Utilization
/// traces are unchanged.
pub fn densify_workloads(bundle: &TraceBundle, multiplier: u32) -> Result<TraceBundle> {
    if multiplier == 0 {
        return Err(Error::config("densify multiplier must be >= 1"));
    }
    let mut out = bundle.clone();
    for s in &mut out.services {
        s.requested_mips *= multiplier as f64;
    }
    Ok(out)
}

/// Scenario shape: counts, study area, server and service sizing and the
/// synthetic mobility/workload generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub servers: usize,
    pub clients: usize,
    pub center_lat: f64,
    pub center_lng: f64,
    pub area_side_m: f64,
    pub server_cores: u32,
    pub core_mips_options: Vec<f64>,
    pub server_ram_gib: u64,
    pub server_storage_gib: u64,
    pub service_mips_options: Vec<f64>,
    pub service_ram_gib: u64,
    pub task_size_mi: f64,
    pub transmit_power_w: f64,
    /// Co-deployed services bundled into one (requested MIPS multiplier).
    pub densify: u32,
    /// Gathering points users' waypoints are drawn around.
    pub hotspots: usize,
    pub hotspot_sigma_m: f64,
    /// Probability that a new waypoint is drawn near a hotspot.
    pub hotspot_share: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub pause_max_s: f64,
    /// Each workload walks around a base level drawn from this range.
    pub workload_base_min: f64,
    pub workload_base_max: f64,
    pub workload_step: f64,
    /// Clusters used when locating the rush-hour area in real traces.
    pub kmeans_k: usize,
    pub rush_window_s: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            servers: 147,
            clients: 1000,
            center_lat: 37.7749,
            center_lng: -122.4194,
            area_side_m: 4000.0,
            server_cores: 8,
            core_mips_options: vec![2000.0, 3000.0, 4000.0],
            server_ram_gib: 80,
            server_storage_gib: 10_000,
            service_mips_options: vec![1000.0, 1500.0, 2000.0, 2500.0],
            service_ram_gib: 8,
            task_size_mi: 60.0,
            transmit_power_w: 0.5,
            densify: 2,
            hotspots: 6,
            hotspot_sigma_m: 300.0,
            hotspot_share: 0.7,
            speed_min_mps: 2.0,
            speed_max_mps: 12.0,
            pause_max_s: 300.0,
            workload_base_min: 0.2,
            workload_base_max: 0.8,
            workload_step: 0.05,
            kmeans_k: 10,
            rush_window_s: 3.0 * 3600.0,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::config("servers must be >= 1"));
        }
        if self.clients == 0 {
            return Err(Error::config("clients must be >= 1"));
        }
        crate::model::GeoPoint::new(self.center_lat, self.center_lng)?;
        if !(self.area_side_m > 0.0) {
            return Err(Error::config("area_side_m must be > 0"));
        }
        if self.server_cores == 0 || self.core_mips_options.is_empty() || self.service_mips_options.is_empty() {
            return Err(Error::config("server cores and MIPS options must be nonempty"));
        }
        if self
            .core_mips_options
            .iter()
            .chain(&self.service_mips_options)
            .any(|m| !(*m > 0.0))
        {
            return Err(Error::config("MIPS options must be > 0"));
        }
        if self.service_ram_gib > self.server_ram_gib {
            return Err(Error::config("a service needs more RAM than a server has"));
        }
        if self.densify == 0 {
            return Err(Error::config("densify must be >= 1"));
        }
        if !(self.task_size_mi > 0.0 && self.transmit_power_w > 0.0) {
            return Err(Error::config("task_size_mi and transmit_power_w must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.hotspot_share) || !(self.hotspot_sigma_m >= 0.0) {
            return Err(Error::config("hotspot_share must be in [0,1] and hotspot_sigma_m >= 0"));
        }
        if !(self.speed_min_mps > 0.0 && self.speed_min_mps <= self.speed_max_mps) || !(self.pause_max_s >= 0.0) {
            return Err(Error::config("invalid speed or pause range"));
        }
        if !(0.0 <= self.workload_base_min
            && self.workload_base_min <= self.workload_base_max
            && self.workload_base_max <= 1.0
            && self.workload_step >= 0.0)
        {
            return Err(Error::config("invalid workload walk parameters"));
        }
        if self.kmeans_k == 0 || !(self.rush_window_s > 0.0) {
            return Err(Error::config("kmeans_k and rush_window_s must be positive"));
        }
        Ok(())
    }

    pub fn area(&self) -> StudyArea {
        StudyArea {
            center: crate::model::GeoPoint {
                lat: self.center_lat,
                lng: self.center_lng,
            },
            half_side_m: self.area_side_m / 2.0,
        }
    }

    pub(crate) fn server_at(&self, idx: usize, capacity_mips: f64) -> EdgeServer {
        EdgeServer {
            id: ServerId(idx),
            base_station_id: StationId(idx),
            capacity_mips,
            capacity_ram: self.server_ram_gib * GIB,
            capacity_storage: self.server_storage_gib * GIB,
            hosted_service_ids: Default::default(),
            powered_on: false,
        }
    }

    pub(crate) fn service_ram(&self) -> u64 {
        self.service_ram_gib * GIB
    }
}
