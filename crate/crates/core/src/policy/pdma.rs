use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::functions::{assignment_probability, high_migration_probability};
use super::{
    apply_placement, delay_violations, restore_or_drop, Outcome, Placement, PolicyKind,
    Relocation, SchedulingPolicy,
};
use crate::error::{Error, Result};
use crate::model::{PolicyParams, ServerId, ServiceId};
use crate::network::{allocated_mips, computation_delay_ms};
use crate::world::{IntervalView, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject,
}

/// One server's Bernoulli trial for an assignment request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDecision {
    pub verdict: Verdict,
    pub trial_probability: f64,
    pub rng_draw: f64,
}

impl AssignmentDecision {
    fn trial<R: Rng + ?Sized>(probability: f64, rng: &mut R) -> Self {
        let draw: f64 = rng.gen();
        AssignmentDecision {
            verdict: if draw < probability { Verdict::Accept } else { Verdict::Reject },
            trial_probability: probability,
            rng_draw: draw,
        }
    }
}

/// Outcome of one assignment request with every trial that was drawn, in
/// draw order.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentTrace {
    pub placement: Placement,
    pub trials: Vec<(ServerId, AssignmentDecision)>,
}

/// Whether putting `service` on `server` would push a co-hosted service that
/// currently meets the delay threshold over it (only possible when the
/// server's requests go past its capacity).
fn keeps_cohosted_within(
    world: &World,
    view: &IntervalView,
    server: ServerId,
    service: ServiceId,
    threshold_ms: f64,
) -> Result<bool> {
    let srv = world.server(server);
    let total = world.requested_mips_on(server);
    let grown = total + world.service(service).requested_mips;
    if grown <= srv.capacity_mips {
        return Ok(true);
    }
    for &other in &srv.hosted_service_ids {
        let o = world.service(other);
        if !view.is_active(o.user_id) {
            continue;
        }
        let comm = view.communication_delay(world, o.user_id, server)?;
        let task = world.user(o.user_id).task_size_mi;
        let before = comm + computation_delay_ms(task, allocated_mips(o.requested_mips, total, srv.capacity_mips))?;
        let after = comm + computation_delay_ms(task, allocated_mips(o.requested_mips, grown, srv.capacity_mips))?;
        if before < threshold_ms && after >= threshold_ms {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Service assignment: every eligible server whose end-to-end delay for the
/// request is below the threshold runs one Bernoulli trial on its current
/// CPU utilization (draws in ascending server id); the accepting server
/// nearest to the service's location wins, ties to the lowest id. With no
/// acceptance the result is [`Placement::ScaleUp`].
///
/// `source` is `None` for an initial placement (the service is located at
/// its user) and the server it was evicted from for a migration.
pub fn pdma_assign<R: Rng + ?Sized>(
    world: &World,
    view: &IntervalView,
    params: &PolicyParams,
    service: ServiceId,
    source: Option<ServerId>,
    excluded: &BTreeSet<ServerId>,
    rng: &mut R,
) -> Result<AssignmentTrace> {
    let user = world.service(service).user_id;
    let active = view.is_active(user);
    let location = match source {
        Some(src) => world.station_of(src).location,
        None => view
            .position(user)
            .ok_or_else(|| Error::runtime(format!("initial placement for inactive user {user}")))?,
    };

    let mut trials = Vec::new();
    let mut best: Option<(f64, ServerId)> = None;
    for server in &world.servers {
        let j = server.id;
        if excluded.contains(&j) || !world.admits(j, service) {
            continue;
        }
        if active {
            if view.delay_on(world, service, j)? >= params.delay_threshold_ms {
                continue;
            }
            if !keeps_cohosted_within(world, view, j, service, params.delay_threshold_ms)? {
                continue;
            }
        }
        let p = assignment_probability(
            world.utilization(j),
            params.assignment_shape,
            params.assignment_threshold,
        );
        let decision = AssignmentDecision::trial(p, rng);
        trials.push((j, decision));
        if decision.verdict == Verdict::Accept {
            let d = world.station_of(j).location.distance_m(&location);
            if best.is_none_or(|(bd, bj)| d.total_cmp(&bd).then(j.cmp(&bj)).is_lt()) {
                best = Some((d, j));
            }
        }
    }
    Ok(AssignmentTrace {
        placement: best.map_or(Placement::ScaleUp, |(_, j)| Placement::Server(j)),
        trials,
    })
}

/// One migration pass. Phase 1 reassigns every service whose delay reached
/// the threshold. Phase 2 runs a high-migration trial on each over-utilized
/// server; on success its services are evicted, largest CPU demand first,
/// until it is no longer over-utilized, and the evictees are reassigned to
/// servers other than the ones drained in this pass.
pub fn pdma_migrate_pass<R: Rng + ?Sized>(
    world: &mut World,
    view: &IntervalView,
    params: &PolicyParams,
    rng: &mut R,
) -> Result<Vec<Relocation>> {
    let mut moves = Vec::new();

    let violators = delay_violations(world, view, params.delay_threshold_ms)?;
    for &(service, _) in &violators {
        world.remove(service);
    }
    let nothing = BTreeSet::new();
    for (service, source) in violators {
        let trace = pdma_assign(world, view, params, service, Some(source), &nothing, rng)?;
        let outcome = apply_placement(world, view, service, trace.placement, &nothing)
            .unwrap_or_else(|| restore_or_drop(world, service, source));
        moves.push(Relocation { service, source, outcome });
    }

    let overload = view.config.overload_threshold;
    let interval = world.interval();
    let mut drained = BTreeSet::new();
    let mut evicted = Vec::new();
    let candidates: Vec<ServerId> = world.server_ids().collect();
    for j in candidates {
        if !world.server(j).powered_on {
            continue;
        }
        let x = world.utilization(j);
        if x <= overload {
            continue;
        }
        let p = high_migration_probability(x, params.migration_threshold, params.migration_shape)?;
        let draw: f64 = rng.gen();
        if draw >= p {
            continue;
        }
        drained.insert(j);
        let mut by_demand = Vec::new();
        for &s in &world.server(j).hosted_service_ids {
            by_demand.push((world.service(s).cpu_demand(interval)?, s));
        }
        by_demand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, s) in by_demand {
            if world.utilization(j) <= overload {
                break;
            }
            world.remove(s);
            evicted.push((s, j));
        }
    }
    for (service, source) in evicted {
        let trace = pdma_assign(world, view, params, service, Some(source), &drained, rng)?;
        let outcome = apply_placement(world, view, service, trace.placement, &drained)
            .unwrap_or(Outcome::Failed { restored: false });
        moves.push(Relocation { service, source, outcome });
    }
    Ok(moves)
}

pub struct Pdma {
    params: PolicyParams,
    rng: ChaCha8Rng,
}

impl Pdma {
    pub fn new(params: PolicyParams, rng: ChaCha8Rng) -> Self {
        Pdma { params, rng }
    }
}

impl SchedulingPolicy for Pdma {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Pdma
    }

    fn assign(&mut self, world: &World, view: &IntervalView, service: ServiceId) -> Result<Placement> {
        Ok(pdma_assign(world, view, &self.params, service, None, &BTreeSet::new(), &mut self.rng)?.placement)
    }

    fn migrate_pass(&mut self, world: &mut World, view: &IntervalView) -> Result<Vec<Relocation>> {
        pdma_migrate_pass(world, view, &self.params, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use rand::rngs::mock::StepRng;
    use rand::SeedableRng;

    use super::*;
    use crate::builder::{local_point, ScenarioBuilder};
    use crate::model::SimConfig;
    use crate::network::DelayMatrix;

    fn view<'c>(world: &World, cfg: &'c SimConfig, links: &[(usize, usize, f64)]) -> IntervalView<'c> {
        let matrix = DelayMatrix::from_links(0, world.stations.len(), links).unwrap();
        let positions = IntervalView::positions_at(world, 0.0, None);
        IntervalView::new(world, cfg, 0, matrix, positions)
    }

    fn chain(n: usize, d: f64) -> Vec<(usize, usize, f64)> {
        (1..n).map(|i| (i - 1, i, d)).collect()
    }

    #[test]
    fn saturated_servers_force_scale_up() {
        let bundle = ScenarioBuilder::new()
            .task_size(6.0)
            .station(local_point(0.0, 0.0), 4000.0)
            .station(local_point(100.0, 0.0), 4000.0)
            .user_at(local_point(0.0, 0.0), 4000.0, vec![0.95])
            .user_at(local_point(100.0, 0.0), 4000.0, vec![0.95])
            .user_at(local_point(50.0, 0.0), 1000.0, vec![0.5])
            .build();
        let mut world = bundle.to_world(2.0).unwrap();
        world.place(ServiceId(0), ServerId(0));
        world.place(ServiceId(1), ServerId(1));
        let cfg = SimConfig::default();
        let v = view(&world, &cfg, &chain(2, 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = pdma_assign(&world, &v, &cfg.policy, ServiceId(2), None, &BTreeSet::new(), &mut rng).unwrap();
        assert_eq!(t.placement, Placement::ScaleUp);
        assert_eq!(t.trials.len(), 2);
        assert!(t.trials.iter().all(|(_, d)| d.trial_probability == 0.0 && d.verdict == Verdict::Reject));
    }

    #[test]
    fn single_eligible_server_with_zero_draw_is_chosen() {
        // Server 1 is out of radio range and behind a slow link.
        let bundle = ScenarioBuilder::new()
            .station(local_point(0.0, 0.0), 4000.0)
            .station(local_point(5000.0, 0.0), 4000.0)
            .user_at(local_point(0.0, 0.0), 2000.0, vec![1.0])
            .user_at(local_point(10.0, 0.0), 1000.0, vec![0.5])
            .build();
        let mut world = bundle.to_world(2.0).unwrap();
        world.place(ServiceId(0), ServerId(0));
        let cfg = SimConfig::default();
        let v = view(&world, &cfg, &chain(2, 200.0));
        let mut rng = StepRng::new(0, 0);
        let t = pdma_assign(&world, &v, &cfg.policy, ServiceId(1), None, &BTreeSet::new(), &mut rng).unwrap();
        assert_eq!(t.placement, Placement::Server(ServerId(0)));
        assert_eq!(t.trials.len(), 1);
        assert_eq!(t.trials[0].1.rng_draw, 0.0);
        assert_eq!(t.trials[0].1.verdict, Verdict::Accept);
    }

    #[test]
    fn three_server_hand_trace() {
        // Utilizations 0.3, 0.6, 0.8 at 0, 300 and 600 m; the new user sits
        // at 650 m, so proximity order is 2, 1, 0.
        let loads = [0.3, 0.6, 0.8];
        let mut b = ScenarioBuilder::new();
        for (j, _) in loads.iter().enumerate() {
            b = b.station(local_point(300.0 * j as f64, 0.0), 10_000.0);
        }
        for (j, &x) in loads.iter().enumerate() {
            b = b.user_at(local_point(300.0 * j as f64, 0.0), 10_000.0 * x, vec![1.0]);
        }
        let bundle = b.user_at(local_point(650.0, 0.0), 1000.0, vec![0.1]).build();
        let mut world = bundle.to_world(2.0).unwrap();
        for j in 0..3 {
            world.place(ServiceId(j), ServerId(j));
        }
        let cfg = SimConfig::default();
        let v = view(&world, &cfg, &chain(3, 10.0));
        let m2 = 4.0 / 27.0 * 0.9f64.powi(3);
        for seed in 0..32 {
            let mut oracle = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<f64> = (0..3).map(|_| oracle.gen()).collect();
            let accepted: Vec<usize> = (0..3)
                .filter(|&j| draws[j] < loads[j] * loads[j] * (0.9 - loads[j]) / m2)
                .collect();
            let expected = [2, 1, 0]
                .into_iter()
                .find(|j| accepted.contains(j))
                .map_or(Placement::ScaleUp, |j| Placement::Server(ServerId(j)));

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = pdma_assign(&world, &v, &cfg.policy, ServiceId(3), None, &BTreeSet::new(), &mut rng).unwrap();
            assert_eq!(t.placement, expected, "seed {seed}");
            let got: Vec<f64> = t.trials.iter().map(|(_, d)| d.rng_draw).collect();
            assert_eq!(got, draws);
        }
    }

    #[test]
    fn quiet_world_has_nothing_to_migrate() {
        let bundle = ScenarioBuilder::new()
            .station(local_point(0.0, 0.0), 10_000.0)
            .user_at(local_point(0.0, 0.0), 2000.0, vec![0.5])
            .build();
        let mut world = bundle.to_world(2.0).unwrap();
        world.place(ServiceId(0), ServerId(0));
        let cfg = SimConfig::default();
        let v = view(&world, &cfg, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(pdma_migrate_pass(&mut world, &v, &cfg.policy, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn overloaded_server_sheds_its_largest_service() {
        // 3500 + 3000 + 3000 + 2500 = 12000 on 10000 MIPS: 1.2. Evicting the
        // 3500 leaves 0.85.
        let mips = [3500.0, 3000.0, 3000.0, 2500.0];
        let mut b = ScenarioBuilder::new()
            .station(local_point(0.0, 0.0), 10_000.0)
            .station(local_point(200.0, 0.0), 10_000.0);
        for m in mips {
            b = b.user_at(local_point(0.0, 0.0), m, vec![1.0]);
        }
        let mut world = b.build().to_world(2.0).unwrap();
        for r in 0..4 {
            world.place(ServiceId(r), ServerId(0));
        }
        assert!((world.utilization(ServerId(0)) - 1.2).abs() < 1e-12);
        let cfg = SimConfig::default();
        let v = view(&world, &cfg, &chain(2, 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let moves = pdma_migrate_pass(&mut world, &v, &cfg.policy, &mut rng).unwrap();
        assert_eq!(moves.len(), 1);
        assert_eq!(moves[0].service, ServiceId(0));
        assert_eq!(moves[0].destination(), Some(ServerId(1)));
        assert!((world.utilization(ServerId(0)) - 0.85).abs() < 1e-12);
        world.check_integrity().unwrap();
    }

    #[test]
    fn delay_equal_to_threshold_triggers_migration() {
        let bundle = ScenarioBuilder::new()
            .station(local_point(0.0, 0.0), 4000.0)
            .station(local_point(100.0, 0.0), 4000.0)
            .user_at(local_point(0.0, 0.0), 2000.0, vec![0.5])
            .build();
        let mut world = bundle.to_world(2.0).unwrap();
        world.place(ServiceId(0), ServerId(0));
        let mut cfg = SimConfig::default();
        let d = view(&world, &cfg, &chain(2, 10.0)).delay_on(&world, ServiceId(0), ServerId(0)).unwrap();
        cfg.policy.delay_threshold_ms = d;
        let v = view(&world, &cfg, &chain(2, 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let moves = pdma_migrate_pass(&mut world, &v, &cfg.policy, &mut rng).unwrap();
        assert_eq!(moves.len(), 1);
        assert_eq!(moves[0].service, ServiceId(0));
        assert_eq!(moves[0].source, ServerId(0));
    }

    #[test]
    fn excluded_servers_get_no_trial() {
        let bundle = ScenarioBuilder::new()
            .station(local_point(0.0, 0.0), 2000.0)
            .user_at(local_point(0.0, 0.0), 2000.0, vec![0.5])
            .user_at(local_point(0.0, 0.0), 500.0, vec![0.5])
            .build();
        let mut world = bundle.to_world(2.0).unwrap();
        world.place(ServiceId(0), ServerId(0));
        let cfg = SimConfig::default();
        let v = view(&world, &cfg, &[]);
        let excluded = BTreeSet::from([ServerId(0)]);
        let mut rng = StepRng::new(0, 0);
        let t = pdma_assign(&world, &v, &cfg.policy, ServiceId(1), None, &excluded, &mut rng).unwrap();
        assert!(t.trials.is_empty());
        assert_eq!(t.placement, Placement::ScaleUp);
    }
}
