//! Scheduling policies: PDMA (probabilistic, delay- and mobility-aware) and
//! the nearest-first, never-migrate and Top-K baselines.
//!
//! A policy decides initial placements and runs one migration pass per
//! interval. It owns its random stream; the engine serializes all calls.

mod baselines;
pub mod functions;
mod pdma;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{nearest_admissible, NearestFirst, NeverMigrate, TopK};
pub use functions::{assignment_peak, assignment_probability, high_migration_probability};
pub use pdma::{pdma_assign, pdma_migrate_pass, AssignmentDecision, AssignmentTrace, Pdma, Verdict};

use crate::error::{Error, Result};
use crate::model::{PolicyParams, ServerId, ServiceId};
use crate::world::{IntervalView, World};

/// Result of an assignment decision before it is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Server(ServerId),
    /// No server accepted: power on an idle one.
    ScaleUp,
}

/// Where a (re)assigned service ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Placed(ServerId),
    ScaledUp(ServerId),
    /// No server could take the service. It stayed on its source when that
    /// was still possible, otherwise it is unplaced.
    Failed { restored: bool },
}

impl Outcome {
    pub fn server(&self) -> Option<ServerId> {
        match *self {
            Outcome::Placed(s) | Outcome::ScaledUp(s) => Some(s),
            Outcome::Failed { .. } => None,
        }
    }
}

/// One service handled by a migration pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relocation {
    pub service: ServiceId,
    pub source: ServerId,
    pub outcome: Outcome,
}

impl Relocation {
    /// Destination when the service actually changed servers.
    pub fn destination(&self) -> Option<ServerId> {
        self.outcome.server().filter(|&d| d != self.source)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Pdma,
    Nf,
    Nm,
    TopK,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Pdma, PolicyKind::Nf, PolicyKind::Nm, PolicyKind::TopK];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Pdma => "pdma",
            PolicyKind::Nf => "nf",
            PolicyKind::Nm => "nm",
            PolicyKind::TopK => "topk",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pdma" => Ok(PolicyKind::Pdma),
            "nf" => Ok(PolicyKind::Nf),
            "nm" => Ok(PolicyKind::Nm),
            "topk" | "top-k" => Ok(PolicyKind::TopK),
            other => Err(Error::config(format!(
                "unknown policy '{other}' (expected pdma, nf, nm or topk)"
            ))),
        }
    }
}

pub trait SchedulingPolicy {
    fn kind(&self) -> PolicyKind;

    /// Initial placement decision for an unplaced service of an active user.
    fn assign(&mut self, world: &World, view: &IntervalView, service: ServiceId) -> Result<Placement>;

    /// One migration pass at an interval boundary. Placements are applied to
    /// `world` as the pass proceeds.
    fn migrate_pass(&mut self, world: &mut World, view: &IntervalView) -> Result<Vec<Relocation>>;
}

pub fn build_policy(kind: PolicyKind, params: &PolicyParams, seed: u64) -> Box<dyn SchedulingPolicy> {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        PolicyKind::Pdma => Box::new(Pdma::new(params.clone(), rng)),
        PolicyKind::Nf => Box::new(NearestFirst),
        PolicyKind::Nm => Box::new(NeverMigrate),
        PolicyKind::TopK => Box::new(TopK::new(params.topk_fraction, params.delay_threshold_ms, rng)),
    }
}

/// Power on an idle (powered-off) server for `service`: the one at the
/// user's nearest station if idle, otherwise the idle server whose station
/// is closest to it. Servers in `excluded` are not eligible.
pub fn scale_up(
    world: &World,
    view: &IntervalView,
    service: ServiceId,
    excluded: &BTreeSet<ServerId>,
) -> Option<ServerId> {
    let user = world.service(service).user_id;
    let origin = view.nearest_station(user)?;
    let origin_loc = world.stations[origin.index()].location;
    world
        .servers
        .iter()
        .filter(|s| !s.powered_on && !excluded.contains(&s.id) && world.admits(s.id, service))
        .map(|s| (world.stations[s.base_station_id.index()].location.distance_m(&origin_loc), s.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Apply a placement decision to an unplaced service.
pub fn apply_placement(
    world: &mut World,
    view: &IntervalView,
    service: ServiceId,
    placement: Placement,
    excluded: &BTreeSet<ServerId>,
) -> Option<Outcome> {
    match placement {
        Placement::Server(s) => {
            world.place(service, s);
            Some(Outcome::Placed(s))
        }
        Placement::ScaleUp => scale_up(world, view, service, excluded).map(|s| {
            world.place(service, s);
            Outcome::ScaledUp(s)
        }),
    }
}

/// Put a service whose reassignment failed back on its source if the source
/// can still take it.
fn restore_or_drop(world: &mut World, service: ServiceId, source: ServerId) -> Outcome {
    if world.admits(source, service) {
        world.place(service, source);
        Outcome::Failed { restored: true }
    } else {
        Outcome::Failed { restored: false }
    }
}

/// Services of active users whose current end-to-end delay is at least the
/// threshold, in server then service order.
fn delay_violations(world: &World, view: &IntervalView, threshold_ms: f64) -> Result<Vec<(ServiceId, ServerId)>> {
    let mut out = Vec::new();
    for server in &world.servers {
        for &sid in &server.hosted_service_ids {
            if let Some(d) = view.service_delay(world, sid)? {
                if d >= threshold_ms {
                    out.push((sid, server.id));
                }
            }
        }
    }
    Ok(out)
}
