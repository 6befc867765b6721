use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    apply_placement, delay_violations, restore_or_drop, Placement, PolicyKind, Relocation,
    SchedulingPolicy,
};
use crate::error::{Error, Result};
use crate::model::{ServerId, ServiceId};
use crate::world::{IntervalView, World};

/// Server closest to the user's position that can still admit `service`;
/// ties go to the lowest id.
pub fn nearest_admissible(world: &World, view: &IntervalView, service: ServiceId) -> Result<Option<ServerId>> {
    let user = world.service(service).user_id;
    let pos = view
        .position(user)
        .ok_or_else(|| Error::runtime(format!("no position for user {user}")))?;
    let mut ranked: Vec<(f64, ServerId)> = world
        .servers
        .iter()
        .map(|s| (world.stations[s.base_station_id.index()].location.distance_m(&pos), s.id))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().map(|(_, id)| id).find(|&id| world.admits(id, service)))
}

fn nearest_placement(world: &World, view: &IntervalView, service: ServiceId) -> Result<Placement> {
    Ok(nearest_admissible(world, view, service)?.map_or(Placement::ScaleUp, Placement::Server))
}

/// Always serve from the server nearest to the user; migrate as soon as the
/// nearest station changes.
pub struct NearestFirst;

impl SchedulingPolicy for NearestFirst {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Nf
    }

    fn assign(&mut self, world: &World, view: &IntervalView, service: ServiceId) -> Result<Placement> {
        nearest_placement(world, view, service)
    }

    fn migrate_pass(&mut self, world: &mut World, view: &IntervalView) -> Result<Vec<Relocation>> {
        let mut moves = Vec::new();
        for r in 0..world.services.len() {
            let service = ServiceId(r);
            let svc = world.service(service);
            let (Some(source), Some(nearest)) = (svc.current_server_id, view.nearest_station(svc.user_id)) else {
                continue;
            };
            if world.server(source).base_station_id == nearest {
                continue;
            }
            match nearest_admissible(world, view, service)? {
                Some(dest) if dest != source => {
                    world.remove(service);
                    world.place(service, dest);
                    moves.push(Relocation {
                        service,
                        source,
                        outcome: super::Outcome::Placed(dest),
                    });
                }
                _ => {}
            }
        }
        Ok(moves)
    }
}

/// Initial placement on the nearest server; never migrates.
pub struct NeverMigrate;

impl SchedulingPolicy for NeverMigrate {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Nm
    }

    fn assign(&mut self, world: &World, view: &IntervalView, service: ServiceId) -> Result<Placement> {
        nearest_placement(world, view, service)
    }

    fn migrate_pass(&mut self, _world: &mut World, _view: &IntervalView) -> Result<Vec<Relocation>> {
        Ok(Vec::new())
    }
}

/// Place on a uniformly random server among the ⌈fraction·J⌉ busiest that
/// can admit the service; services whose delay reaches the threshold are
/// re-placed the same way.
pub struct TopK {
    fraction: f64,
    delay_threshold_ms: f64,
    rng: ChaCha8Rng,
}

impl TopK {
    pub fn new(fraction: f64, delay_threshold_ms: f64, rng: ChaCha8Rng) -> Self {
        TopK {
            fraction,
            delay_threshold_ms,
            rng,
        }
    }

    pub fn pool_size(&self, servers: usize) -> usize {
        ((self.fraction * servers as f64).ceil() as usize).clamp(1, servers.max(1))
    }

    fn choose(&mut self, world: &World, service: ServiceId) -> Option<ServerId> {
        let mut ranked: Vec<(f64, ServerId)> = world
            .server_ids()
            .filter(|&j| world.admits(j, service))
            .map(|j| (world.utilization(j), j))
            .collect();
        if ranked.is_empty() {
            return None;
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let k = self.pool_size(world.servers.len()).min(ranked.len());
        Some(ranked[self.rng.gen_range(0..k)].1)
    }
}

impl SchedulingPolicy for TopK {
    fn kind(&self) -> PolicyKind {
        PolicyKind::TopK
    }

    fn assign(&mut self, world: &World, _view: &IntervalView, service: ServiceId) -> Result<Placement> {
        Ok(self.choose(world, service).map_or(Placement::ScaleUp, Placement::Server))
    }

    fn migrate_pass(&mut self, world: &mut World, view: &IntervalView) -> Result<Vec<Relocation>> {
        let violators = delay_violations(world, view, self.delay_threshold_ms)?;
        for &(service, _) in &violators {
            world.remove(service);
        }
        let none = Default::default();
        let mut moves = Vec::new();
        for (service, source) in violators {
            let placement = self.choose(world, service).map_or(Placement::ScaleUp, Placement::Server);
            let outcome = apply_placement(world, view, service, placement, &none)
                .unwrap_or_else(|| restore_or_drop(world, service, source));
            moves.push(Relocation { service, source, outcome });
        }
        Ok(moves)
    }
}
