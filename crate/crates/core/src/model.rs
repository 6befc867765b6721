//! Domain types shared across the simulator.
//!
//! Identifiers are dense indices: a `ServerId(j)` addresses `servers[j]` in
//! whatever collection owns the world, and likewise for stations, users and
//! services. Every entity stores its own id so lookups can be checked.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by the equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Utilization values above this are reported as this value.
pub const UTILIZATION_REPORT_CEILING: f64 = 1.5;

macro_rules! index_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_id!(StationId);
index_id!(ServerId);
index_id!(UserId);
index_id!(ServiceId);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lng: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lng: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lng) {
            return Err(Error::config(format!(
                "coordinate out of range: lat={lat}, lng={lng}"
            )));
        }
        Ok(GeoPoint { lat, lng })
    }

    /// Projected planar distance in meters (equirectangular, reference
    /// latitude at the midpoint of the two points).
    pub fn distance_m(&self, other: &GeoPoint) -> f64 {
        let (east, north) = self.displacement_m(other);
        east.hypot(north)
    }

    /// (east, north) displacement in meters from `self` to `other`.
    pub fn displacement_m(&self, other: &GeoPoint) -> (f64, f64) {
        let mean_lat = ((self.lat + other.lat) * 0.5).to_radians();
        let east = (other.lng - self.lng).to_radians() * mean_lat.cos() * EARTH_RADIUS_M;
        let north = (other.lat - self.lat).to_radians() * EARTH_RADIUS_M;
        (east, north)
    }

    /// Point displaced by the given meters east and north.
    pub fn offset_m(&self, east_m: f64, north_m: f64) -> GeoPoint {
        let lat = self.lat + (north_m / EARTH_RADIUS_M).to_degrees();
        let mean_lat = ((self.lat + lat) * 0.5).to_radians();
        let lng = self.lng + (east_m / (EARTH_RADIUS_M * mean_lat.cos())).to_degrees();
        GeoPoint { lat, lng }
    }
}

/// Axis-aligned square study area centered on a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyArea {
    pub center: GeoPoint,
    pub half_side_m: f64,
}

impl StudyArea {
    /// Inclusive, with a micrometer of slack for projection round-off.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        let (east, north) = self.center.displacement_m(p);
        let lim = self.half_side_m + 1e-6;
        east.abs() <= lim && north.abs() <= lim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: StationId,
    /// Identifier as it appeared in the source dataset.
    pub name: String,
    pub location: GeoPoint,
    pub edge_server_id: ServerId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeServer {
    pub id: ServerId,
    pub base_station_id: StationId,
    pub capacity_mips: f64,
    pub capacity_ram: u64,
    pub capacity_storage: u64,
    pub hosted_service_ids: BTreeSet<ServiceId>,
    pub powered_on: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub timestamp_s: f64,
    pub location: GeoPoint,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    /// Identifier as it appeared in the source dataset (taxi id).
    pub label: String,
    pub samples: Vec<TraceSample>,
}

impl MobilityTrace {
    pub fn new(label: impl Into<String>, samples: Vec<TraceSample>) -> Result<Self> {
        let trace = MobilityTrace {
            label: label.into(),
            samples,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .samples
            .windows(2)
            .any(|w| w[0].timestamp_s >= w[1].timestamp_s)
        {
            return Err(Error::trace(format!(
                "trace {}: timestamps not strictly increasing",
                self.label
            )));
        }
        Ok(())
    }

    pub fn first_timestamp(&self) -> Option<f64> {
        self.samples.first().map(|s| s.timestamp_s)
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.samples.last().map(|s| s.timestamp_s)
    }

    /// Position at time `t`, holding the last sample at or before `t`.
    /// Returns `None` before the first sample.
    pub fn position_at(&self, t: f64) -> Option<GeoPoint> {
        let idx = self.samples.partition_point(|s| s.timestamp_s <= t);
        idx.checked_sub(1).map(|i| self.samples[i].location)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobileUser {
    pub id: UserId,
    pub trace: MobilityTrace,
    pub service_id: ServiceId,
    /// Task size in millions of instructions.
    pub task_size_mi: f64,
    pub transmit_power_w: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub interval: usize,
    pub source_server_id: ServerId,
    pub dest_server_id: ServerId,
    pub cost_km: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeService {
    pub id: ServiceId,
    pub user_id: UserId,
    pub requested_mips: f64,
    pub requested_ram: u64,
    /// CPU utilization fraction per scheduling interval.
    pub workload_trace: Vec<f64>,
    pub current_server_id: Option<ServerId>,
    pub migration_log: Vec<MigrationRecord>,
}

impl EdgeService {
    pub fn workload_at(&self, interval: usize) -> Result<f64> {
        self.workload_trace.get(interval).copied().ok_or_else(|| {
            Error::config(format!(
                "service {}: workload trace has {} samples, interval {interval} requested",
                self.id,
                self.workload_trace.len()
            ))
        })
    }

    /// Absolute CPU demand (MIPS) at an interval.
    pub fn cpu_demand(&self, interval: usize) -> Result<f64> {
        Ok(self.workload_at(interval)? * self.requested_mips)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WirelessChannelParams {
    pub bandwidth_hz: f64,
    pub noise_power_w: f64,
    /// Path-loss intercept in dB at 1 km.
    pub pathloss_a_db: f64,
    /// Path-loss slope in dB per decade of distance.
    pub pathloss_b_db: f64,
}

impl Default for WirelessChannelParams {
    fn default() -> Self {
        WirelessChannelParams {
            bandwidth_hz: 20e6,
            noise_power_w: 2e-13,
            pathloss_a_db: 127.0,
            pathloss_b_db: 30.0,
        }
    }
}

impl WirelessChannelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_power_w", self.noise_power_w),
            ("pathloss_a_db", self.pathloss_a_db),
            ("pathloss_b_db", self.pathloss_b_db),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("channel.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    /// Shape of the assignment function.
    pub assignment_shape: f64,
    /// Utilization above which a server never accepts a new service.
    pub assignment_threshold: f64,
    /// Shape of the high-migration function.
    pub migration_shape: f64,
    /// Utilization at which the high-migration probability starts rising.
    pub migration_threshold: f64,
    pub delay_threshold_ms: f64,
    /// Radio range of a base station.
    pub distance_threshold_m: f64,
    /// Fraction of servers forming the Top-K pool.
    pub topk_fraction: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            assignment_shape: 2.0,
            assignment_threshold: 0.9,
            migration_shape: 0.25,
            migration_threshold: 0.9,
            delay_threshold_ms: 75.0,
            distance_threshold_m: 1500.0,
            topk_fraction: 0.1,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        let t = self.assignment_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::config(format!("assignment_threshold must be in (0,1], got {t}")));
        }
        let th = self.migration_threshold;
        if !(th > 0.0 && th < 1.0) {
            return Err(Error::config(format!("migration_threshold must be in (0,1), got {th}")));
        }
        for (name, v) in [
            ("assignment_shape", self.assignment_shape),
            ("migration_shape", self.migration_shape),
            ("delay_threshold_ms", self.delay_threshold_ms),
            ("distance_threshold_m", self.distance_threshold_m),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.topk_fraction > 0.0 && self.topk_fraction <= 1.0) {
            return Err(Error::config(format!(
                "topk_fraction must be in (0,1], got {}",
                self.topk_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub interval_s: f64,
    pub horizon_intervals: usize,
    pub migration_downtime_ms: f64,
    pub rng_seed: u64,
    pub overload_threshold: f64,
    pub link_delay_min_ms: f64,
    pub link_delay_max_ms: f64,
    /// Neighbors per station in the backhaul graph.
    pub knn_k: usize,
    /// Payload bits sent per unit of task size when offloading a task.
    pub bits_per_instruction: f64,
    /// Requested MIPS on a server may reach this multiple of its capacity.
    pub admission_cap: f64,
    /// Delay charged to an active user whose service has no placement, as a
    /// multiple of the delay threshold.
    pub failure_penalty_factor: f64,
    pub channel: WirelessChannelParams,
    pub policy: PolicyParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            interval_s: 60.0,
            horizon_intervals: 180,
            migration_downtime_ms: 50.0,
            rng_seed: 1,
            overload_threshold: 0.9,
            link_delay_min_ms: 5.0,
            link_delay_max_ms: 50.0,
            knn_k: 4,
            bits_per_instruction: 8.0,
            admission_cap: 2.0,
            failure_penalty_factor: 10.0,
            channel: WirelessChannelParams::default(),
            policy: PolicyParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval_s > 0.0) {
            return Err(Error::config("interval_s must be > 0"));
        }
        if !(self.link_delay_min_ms >= 0.0 && self.link_delay_min_ms <= self.link_delay_max_ms) {
            return Err(Error::config(format!(
                "link delay range invalid: [{}, {}]",
                self.link_delay_min_ms, self.link_delay_max_ms
            )));
        }
        if !(self.migration_downtime_ms >= 0.0) {
            return Err(Error::config("migration_downtime_ms must be >= 0"));
        }
        if !(self.overload_threshold > 0.0) {
            return Err(Error::config("overload_threshold must be > 0"));
        }
        if self.knn_k == 0 {
            return Err(Error::config("knn_k must be >= 1"));
        }
        if !(self.bits_per_instruction > 0.0) {
            return Err(Error::config("bits_per_instruction must be > 0"));
        }
        if !(self.admission_cap >= 1.0) {
            return Err(Error::config("admission_cap must be >= 1"));
        }
        if !(self.failure_penalty_factor >= 0.0) {
            return Err(Error::config("failure_penalty_factor must be >= 0"));
        }
        self.channel.validate()?;
        self.policy.validate()
    }

    pub fn failure_penalty_ms(&self) -> f64 {
        self.failure_penalty_factor * self.policy.delay_threshold_ms
    }
}

/// Inputs of the competitive-ratio bound. Communication cost per unit time
/// is normalized to 1; `epsilon` and `delta` are the processing and
/// migration costs relative to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitiveParams {
    pub servers: u64,
    pub services: u64,
    pub epsilon: f64,
    pub delta: f64,
}

impl CompetitiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 || self.services == 0 {
            return Err(Error::config("server and service counts must be >= 1"));
        }
        if !(self.epsilon >= 0.0 && self.delta >= 0.0) {
            return Err(Error::config("epsilon and delta must be >= 0"));
        }
        Ok(())
    }
}

/// CPU utilization of `server` at `interval`: hosted demand over capacity,
/// clamped to `[0, 1.5]`. Values above 1 mean the server is oversubscribed.
pub fn server_cpu_utilization(
    server: &EdgeServer,
    services: &[EdgeService],
    interval: usize,
) -> Result<f64> {
    let mut demand = 0.0;
    for sid in &server.hosted_service_ids {
        let svc = services
            .get(sid.index())
            .filter(|s| s.id == *sid)
            .ok_or_else(|| {
                Error::config(format!("server {} hosts unknown service {sid}", server.id))
            })?;
        demand += svc.cpu_demand(interval)?;
    }
    Ok((demand / server.capacity_mips).clamp(0.0, UTILIZATION_REPORT_CEILING))
}
