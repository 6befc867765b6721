//! Mutable world state (placements) and the per-interval view policies use
//! to evaluate delays.

use crate::error::{Error, Result};
use crate::model::{
    server_cpu_utilization, BaseStation, EdgeServer, EdgeService, GeoPoint, MigrationRecord,
    MobileUser, ServerId, ServiceId, SimConfig, StationId, StudyArea, UserId, UTILIZATION_REPORT_CEILING,
};
use crate::network::{
    allocated_mips, computation_delay_ms, migration_cost_km, uplink_delay_ms, DelayMatrix,
    PathCache,
};

#[derive(Clone, Debug)]
pub struct World {
    pub stations: Vec<BaseStation>,
    pub servers: Vec<EdgeServer>,
    pub users: Vec<MobileUser>,
    pub services: Vec<EdgeService>,
    admission_cap: f64,
    interval: usize,
    requested_mips: Vec<f64>,
    requested_ram: Vec<u64>,
    cpu_demand: Vec<f64>,
}

impl World {
    pub fn new(
        stations: Vec<BaseStation>,
        servers: Vec<EdgeServer>,
        users: Vec<MobileUser>,
        services: Vec<EdgeService>,
        admission_cap: f64,
    ) -> Result<Self> {
        let mut world = World {
            interval: 0,
            requested_mips: vec![0.0; servers.len()],
            requested_ram: vec![0; servers.len()],
            cpu_demand: vec![0.0; servers.len()],
            stations,
            servers,
            users,
            services,
            admission_cap,
        };
        world.check_integrity()?;
        for j in 0..world.servers.len() {
            world.refresh_server(j);
        }
        Ok(world)
    }

    /// Recompute a server's aggregates from its host list, summing in host
    /// order so results match [`server_cpu_utilization`] exactly.
    fn refresh_server(&mut self, j: usize) {
        let (mut mips, mut ram, mut demand) = (0.0, 0, 0.0);
        for sid in &self.servers[j].hosted_service_ids {
            let svc = &self.services[sid.index()];
            mips += svc.requested_mips;
            ram += svc.requested_ram;
            demand += svc.workload_trace.get(self.interval).copied().unwrap_or(0.0) * svc.requested_mips;
        }
        self.requested_mips[j] = mips;
        self.requested_ram[j] = ram;
        self.cpu_demand[j] = demand;
    }

    /// Move the workload clock to `interval`.
    pub fn set_interval(&mut self, interval: usize) -> Result<()> {
        if let Some(svc) = self.services.iter().find(|s| s.workload_trace.len() <= interval) {
            return Err(Error::trace(format!(
                "service {}: workload trace ends before interval {interval}",
                svc.id
            )));
        }
        self.interval = interval;
        for j in 0..self.servers.len() {
            self.refresh_server(j);
        }
        Ok(())
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    /// Every id resolves, placements agree in both directions, and each
    /// service sits on at most one server.
    pub fn check_integrity(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        for (i, st) in self.stations.iter().enumerate() {
            if st.id.index() != i {
                return bad(format!("station at index {i} has id {}", st.id));
            }
            match self.servers.get(st.edge_server_id.index()) {
                Some(s) if s.base_station_id == st.id => {}
                _ => return bad(format!("station {} has no co-located server", st.id)),
            }
        }
        let mut host_of: Vec<Option<ServerId>> = vec![None; self.services.len()];
        for (j, server) in self.servers.iter().enumerate() {
            if server.id.index() != j {
                return bad(format!("server at index {j} has id {}", server.id));
            }
            if server.base_station_id.index() >= self.stations.len() {
                return bad(format!("server {j} references unknown station"));
            }
            if !(server.capacity_mips > 0.0) {
                return bad(format!("server {j} has no CPU capacity"));
            }
            for sid in &server.hosted_service_ids {
                let Some(slot) = host_of.get_mut(sid.index()) else {
                    return bad(format!("server {j} hosts unknown service {sid}"));
                };
                if slot.replace(server.id).is_some() {
                    return bad(format!("service {sid} hosted on more than one server"));
                }
            }
        }
        for (i, user) in self.users.iter().enumerate() {
            if user.id.index() != i {
                return bad(format!("user at index {i} has id {}", user.id));
            }
            match self.services.get(user.service_id.index()) {
                Some(s) if s.user_id == user.id => {}
                _ => return bad(format!("user {i} has no matching service")),
            }
        }
        for (r, svc) in self.services.iter().enumerate() {
            if svc.id.index() != r {
                return bad(format!("service at index {r} has id {}", svc.id));
            }
            if svc.user_id.index() >= self.users.len() {
                return bad(format!("service {r} references unknown user"));
            }
            if svc.current_server_id != host_of[r] {
                return bad(format!("service {r} placement disagrees with server host lists"));
            }
            if svc.workload_trace.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return bad(format!("service {r} workload outside [0,1]"));
            }
        }
        Ok(())
    }

    pub fn admission_cap(&self) -> f64 {
        self.admission_cap
    }

    pub fn server(&self, id: ServerId) -> &EdgeServer {
        &self.servers[id.index()]
    }

    pub fn service(&self, id: ServiceId) -> &EdgeService {
        &self.services[id.index()]
    }

    pub fn user(&self, id: UserId) -> &MobileUser {
        &self.users[id.index()]
    }

    pub fn user_of(&self, service: ServiceId) -> &MobileUser {
        self.user(self.service(service).user_id)
    }

    pub fn station_of(&self, server: ServerId) -> &BaseStation {
        &self.stations[self.server(server).base_station_id.index()]
    }

    pub fn server_ids(&self) -> impl Iterator<Item = ServerId> + '_ {
        self.servers.iter().map(|s| s.id)
    }

    pub fn requested_mips_on(&self, server: ServerId) -> f64 {
        self.requested_mips[server.index()]
    }

    /// Whether adding `service` keeps `server` within the admission limits:
    /// requested MIPS up to `admission_cap` times capacity, RAM up to capacity.
    pub fn admits(&self, server: ServerId, service: ServiceId) -> bool {
        let srv = self.server(server);
        let svc = self.service(service);
        if srv.hosted_service_ids.contains(&service) {
            return true;
        }
        self.requested_mips[server.index()] + svc.requested_mips
            <= srv.capacity_mips * self.admission_cap
            && self.requested_ram[server.index()] + svc.requested_ram <= srv.capacity_ram
    }

    /// CPU utilization at the current interval, clamped like
    /// [`server_cpu_utilization`].
    pub fn utilization(&self, server: ServerId) -> f64 {
        (self.cpu_demand[server.index()] / self.server(server).capacity_mips)
            .clamp(0.0, UTILIZATION_REPORT_CEILING)
    }

    /// Reference evaluation through the model helper.
    pub fn utilization_at(&self, server: ServerId, interval: usize) -> Result<f64> {
        server_cpu_utilization(self.server(server), &self.services, interval)
    }

    pub fn place(&mut self, service: ServiceId, server: ServerId) {
        assert!(
            self.services[service.index()].current_server_id.is_none(),
            "service {service} placed twice"
        );
        self.services[service.index()].current_server_id = Some(server);
        let srv = &mut self.servers[server.index()];
        srv.hosted_service_ids.insert(service);
        srv.powered_on = true;
        self.refresh_server(server.index());
    }

    /// Deallocate a service; an emptied server powers off.
    pub fn remove(&mut self, service: ServiceId) -> Option<ServerId> {
        let server = self.services[service.index()].current_server_id.take()?;
        let srv = &mut self.servers[server.index()];
        srv.hosted_service_ids.remove(&service);
        if srv.hosted_service_ids.is_empty() {
            srv.powered_on = false;
        }
        self.refresh_server(server.index());
        Some(server)
    }

    pub fn migration_cost_km(&self, source: ServerId, dest: ServerId) -> Result<f64> {
        migration_cost_km(
            &self.stations,
            self.server(source).base_station_id,
            self.server(dest).base_station_id,
        )
    }

    pub fn log_migration(&mut self, service: ServiceId, record: MigrationRecord) {
        self.services[service.index()].migration_log.push(record);
    }

    /// Station nearest to a point; ties go to the lowest id.
    pub fn nearest_station(&self, p: &GeoPoint) -> Option<StationId> {
        self.stations
            .iter()
            .map(|s| (s.location.distance_m(p), s.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }
}

/// How a user reaches a given serving station in one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attachment {
    /// Station the user's radio is connected to.
    pub current: StationId,
    pub radio_distance_m: f64,
}

/// Everything that is fixed for one scheduling interval: the delay matrix,
/// user positions and their nearest stations.
#[derive(Debug)]
pub struct IntervalView<'c> {
    pub interval: usize,
    pub config: &'c SimConfig,
    paths: PathCache,
    positions: Vec<Option<GeoPoint>>,
    nearest: Vec<Option<StationId>>,
}

impl<'c> IntervalView<'c> {
    /// `positions[u]` is `None` for users that generate no requests this
    /// interval.
    pub fn new(
        world: &World,
        config: &'c SimConfig,
        interval: usize,
        matrix: DelayMatrix,
        positions: Vec<Option<GeoPoint>>,
    ) -> Self {
        let nearest = positions
            .iter()
            .map(|p| p.as_ref().and_then(|p| world.nearest_station(p)))
            .collect();
        IntervalView {
            interval,
            config,
            paths: PathCache::new(matrix),
            positions,
            nearest,
        }
    }

    /// User positions at time `time_s`; users outside `area` are inactive.
    pub fn positions_at(world: &World, time_s: f64, area: Option<&StudyArea>) -> Vec<Option<GeoPoint>> {
        world
            .users
            .iter()
            .map(|u| {
                u.trace
                    .position_at(time_s)
                    .filter(|p| area.is_none_or(|a| a.contains(p)))
            })
            .collect()
    }

    pub fn paths(&self) -> &PathCache {
        &self.paths
    }

    pub fn matrix(&self) -> &DelayMatrix {
        self.paths.matrix()
    }

    /// Drop cached shortest paths (used when timing per-request work).
    pub fn clear_path_cache(&mut self) {
        self.paths.clear();
    }

    pub fn position(&self, user: UserId) -> Option<GeoPoint> {
        self.positions[user.index()]
    }

    pub fn is_active(&self, user: UserId) -> bool {
        self.positions[user.index()].is_some()
    }

    pub fn nearest_station(&self, user: UserId) -> Option<StationId> {
        self.nearest[user.index()]
    }

    /// The user talks directly to `serving` while it is within radio range;
    /// otherwise it connects through its nearest station.
    pub fn attachment(&self, world: &World, user: UserId, serving: StationId) -> Option<Attachment> {
        let pos = self.position(user)?;
        let d_serving = world.stations[serving.index()].location.distance_m(&pos);
        if d_serving <= self.config.policy.distance_threshold_m {
            return Some(Attachment {
                current: serving,
                radio_distance_m: d_serving,
            });
        }
        let nearest = self.nearest_station(user)?;
        Some(Attachment {
            current: nearest,
            radio_distance_m: world.stations[nearest.index()].location.distance_m(&pos),
        })
    }

    /// Uplink plus forwarding delay for `user` served from `server`.
    pub fn communication_delay(&self, world: &World, user: UserId, server: ServerId) -> Result<f64> {
        let serving = world.server(server).base_station_id;
        let att = self
            .attachment(world, user, serving)
            .ok_or_else(|| Error::runtime(format!("user {user} has no position")))?;
        let u = world.user(user);
        let payload = u.task_size_mi * self.config.bits_per_instruction;
        Ok(uplink_delay_ms(&self.config.channel, payload, u.transmit_power_w, att.radio_distance_m)?
            + self.paths.delay(att.current, serving)?)
    }

    /// Execution time of `service` on `server`, counting `service` as hosted
    /// there even if it is not yet.
    pub fn computation_delay(&self, world: &World, service: ServiceId, server: ServerId) -> Result<f64> {
        let svc = world.service(service);
        let mut total = world.requested_mips_on(server);
        if svc.current_server_id != Some(server) {
            total += svc.requested_mips;
        }
        let w = allocated_mips(svc.requested_mips, total, world.server(server).capacity_mips);
        computation_delay_ms(world.user(svc.user_id).task_size_mi, w)
    }

    /// Communication plus computation delay of `service` if served by `server`.
    pub fn delay_on(&self, world: &World, service: ServiceId, server: ServerId) -> Result<f64> {
        let user = world.service(service).user_id;
        Ok(self.communication_delay(world, user, server)?
            + self.computation_delay(world, service, server)?)
    }

    /// Current end-to-end delay (no migration downtime), `None` when the
    /// service is unplaced or its user is inactive.
    pub fn service_delay(&self, world: &World, service: ServiceId) -> Result<Option<f64>> {
        let svc = world.service(service);
        match svc.current_server_id {
            Some(server) if self.is_active(svc.user_id) => self.delay_on(world, service, server).map(Some),
            _ => Ok(None),
        }
    }
}
