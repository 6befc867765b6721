//! Programmatic construction of small scenarios (hand-built topologies,
//! fixed positions and workloads).

use crate::model::{
    BaseStation, EdgeServer, EdgeService, GeoPoint, MobileUser, MobilityTrace, ServerId, ServiceId, StationId,
    StudyArea, TraceSample, UserId,
};
use crate::traces::TraceBundle;

pub const DEFAULT_SERVER_RAM: u64 = 80 << 30;
pub const DEFAULT_SERVICE_RAM: u64 = 8 << 30;

/// Builds a [`TraceBundle`] one station or user at a time. Each station
/// gets one co-located server; each user gets one service.
#[derive(Clone, Debug, Default)]
pub struct ScenarioBuilder {
    stations: Vec<BaseStation>,
    servers: Vec<EdgeServer>,
    users: Vec<MobileUser>,
    services: Vec<EdgeService>,
    area: Option<StudyArea>,
    task_size_mi: Option<f64>,
}

impl ScenarioBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Task size used for users added after this call (default 60 Mi).
    pub fn task_size(mut self, mi: f64) -> Self {
        self.task_size_mi = Some(mi);
        self
    }

    pub fn area(mut self, area: StudyArea) -> Self {
        self.area = Some(area);
        self
    }

    pub fn station(self, location: GeoPoint, capacity_mips: f64) -> Self {
        self.station_with_ram(location, capacity_mips, DEFAULT_SERVER_RAM)
    }

    pub fn station_with_ram(mut self, location: GeoPoint, capacity_mips: f64, ram: u64) -> Self {
        let j = self.stations.len();
        self.stations.push(BaseStation {
            id: StationId(j),
            name: format!("bs{j}"),
            location,
            edge_server_id: ServerId(j),
        });
        self.servers.push(EdgeServer {
            id: ServerId(j),
            base_station_id: StationId(j),
            capacity_mips,
            capacity_ram: ram,
            capacity_storage: 10_000 << 30,
            hosted_service_ids: Default::default(),
            powered_on: false,
        });
        self
    }

    /// A user that stays at `location` for the whole run.
    pub fn user_at(self, location: GeoPoint, requested_mips: f64, workload: Vec<f64>) -> Self {
        self.user(vec![(0.0, location)], requested_mips, workload)
    }

    /// A user following `(timestamp_s, location)` samples.
    pub fn user(mut self, samples: Vec<(f64, GeoPoint)>, requested_mips: f64, workload: Vec<f64>) -> Self {
        let i = self.users.len();
        self.users.push(MobileUser {
            id: UserId(i),
            trace: MobilityTrace {
                label: format!("u{i}"),
                samples: samples
                    .into_iter()
                    .map(|(timestamp_s, location)| TraceSample { timestamp_s, location })
                    .collect(),
            },
            service_id: ServiceId(i),
            task_size_mi: self.task_size_mi.unwrap_or(60.0),
            transmit_power_w: 0.5,
        });
        self.services.push(EdgeService {
            id: ServiceId(i),
            user_id: UserId(i),
            requested_mips,
            requested_ram: DEFAULT_SERVICE_RAM,
            workload_trace: workload,
            current_server_id: None,
            migration_log: Vec::new(),
        });
        self
    }

    pub fn build(self) -> TraceBundle {
        TraceBundle {
            stations: self.stations,
            servers: self.servers,
            users: self.users,
            services: self.services,
            start_s: 0.0,
            area: self.area,
        }
    }
}

/// Point `east_m` east and `north_m` north of a fixed reference location.
pub fn local_point(east_m: f64, north_m: f64) -> GeoPoint {
    GeoPoint {
        lat: 37.7749,
        lng: -122.4194,
    }
    .offset_m(east_m, north_m)
}
