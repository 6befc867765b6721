//! Seed-reproducible synthetic stand-in for the station, taxi and workload
//! datasets: uniform stations, random-waypoint users drawn toward a few
//! hotspots, and bounded random-walk workloads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{densify_workloads, TraceBundle, WorldParams};
use crate::error::{Error, Result};
use crate::model::{
    BaseStation, EdgeService, MobileUser, MobilityTrace, ServerId, ServiceId, StationId, TraceSample, UserId,
};

/// Pull of a workload back toward its base level per interval.
const WORKLOAD_REVERSION: f64 = 0.1;

struct Waypoints {
    side: f64,
    hotspots: Vec<(f64, f64)>,
    share: f64,
    jitter: Normal<f64>,
}

impl Waypoints {
    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        if !self.hotspots.is_empty() && rng.gen::<f64>() < self.share {
            let &(hx, hy) = self.hotspots.choose(rng).unwrap();
            let x = (hx + self.jitter.sample(rng)).clamp(0.0, self.side);
            let y = (hy + self.jitter.sample(rng)).clamp(0.0, self.side);
            (x, y)
        } else {
            (rng.gen_range(0.0..=self.side), rng.gen_range(0.0..=self.side))
        }
    }
}

/// Random-waypoint positions (meters from the area's south-west corner)
/// sampled at the start of each of `horizon` intervals.
fn waypoint_walk(
    params: &WorldParams,
    points: &Waypoints,
    horizon: usize,
    interval_s: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let mut pos = points.sample(rng);
    let mut dest = points.sample(rng);
    let mut speed = rng.gen_range(params.speed_min_mps..=params.speed_max_mps);
    let mut pause: f64 = 0.0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        out.push(pos);
        let mut left = interval_s;
        while left > 0.0 {
            if pause > 0.0 {
                let p = pause.min(left);
                pause -= p;
                left -= p;
                continue;
            }
            let (dx, dy) = (dest.0 - pos.0, dest.1 - pos.1);
            let dist = dx.hypot(dy);
            let reach = speed * left;
            if reach < dist {
                pos = (pos.0 + dx / dist * reach, pos.1 + dy / dist * reach);
                left = 0.0;
            } else {
                pos = dest;
                left -= dist / speed;
                dest = points.sample(rng);
                speed = rng.gen_range(params.speed_min_mps..=params.speed_max_mps);
                pause = rng.gen_range(0.0..=params.pause_max_s);
            }
        }
    }
    out
}

pub(super) fn workload_walk(params: &WorldParams, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.gen_range(params.workload_base_min..=params.workload_base_max);
    let step = params.workload_step;
    let mut w = base;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        out.push(w);
        let noise = if step > 0.0 { rng.gen_range(-step..=step) } else { 0.0 };
        w = (w + WORKLOAD_REVERSION * (base - w) + noise).clamp(0.0, 1.0);
    }
    out
}

/// Synthetic world with `params.servers` stations, `params.clients` users
/// and traces covering `horizon` intervals from time 0. Requested MIPS are
/// not densified; see [`synth_scenario`].
pub fn synth_world(params: &WorldParams, horizon: usize, interval_s: f64, seed: u64) -> Result<TraceBundle> {
    params.validate()?;
    if !(interval_s > 0.0) {
        return Err(Error::config("interval_s must be > 0"));
    }
    let area = params.area();
    let side = params.area_side_m;
    let half = area.half_side_m;
    let to_geo = |(x, y): (f64, f64)| area.center.offset_m(x - half, y - half);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stations = Vec::with_capacity(params.servers);
    let mut servers = Vec::with_capacity(params.servers);
    for j in 0..params.servers {
        let xy = (rng.gen_range(0.0..=side), rng.gen_range(0.0..=side));
        stations.push(BaseStation {
            id: StationId(j),
            name: format!("bs{j}"),
            location: to_geo(xy),
            edge_server_id: ServerId(j),
        });
        let core = *params.core_mips_options.choose(&mut rng).unwrap();
        servers.push(params.server_at(j, core * params.server_cores as f64));
    }

    let margin = 0.1 * side;
    let hotspots = (0..params.hotspots)
        .map(|_| (rng.gen_range(margin..=side - margin), rng.gen_range(margin..=side - margin)))
        .collect();
    let points = Waypoints {
        side,
        hotspots,
        share: params.hotspot_share,
        jitter: Normal::new(0.0, params.hotspot_sigma_m.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::config(format!("hotspot_sigma_m: {e}")))?,
    };

    let mut users = Vec::with_capacity(params.clients);
    let mut services = Vec::with_capacity(params.clients);
    for i in 0..params.clients {
        let samples = waypoint_walk(params, &points, horizon, interval_s, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(t, xy)| TraceSample {
                timestamp_s: t as f64 * interval_s,
                location: to_geo(xy),
            })
            .collect();
        users.push(MobileUser {
            id: UserId(i),
            trace: MobilityTrace::new(format!("u{i}"), samples)?,
            service_id: ServiceId(i),
            task_size_mi: params.task_size_mi,
            transmit_power_w: params.transmit_power_w,
        });
        services.push(EdgeService {
            id: ServiceId(i),
            user_id: UserId(i),
            requested_mips: *params.service_mips_options.choose(&mut rng).unwrap(),
            requested_ram: params.service_ram(),
            workload_trace: workload_walk(params, horizon, &mut rng),
            current_server_id: None,
            migration_log: Vec::new(),
        });
    }

    Ok(TraceBundle {
        stations,
        servers,
        users,
        services,
        start_s: 0.0,
        area: Some(area),
    })
}

/// [`synth_world`] followed by bundling co-deployed services
/// (`params.densify`).
pub fn synth_scenario(params: &WorldParams, horizon: usize, interval_s: f64, seed: u64) -> Result<TraceBundle> {
    densify_workloads(&synth_world(params, horizon, interval_s, seed)?, params.densify)
}
