//! Locating the congested area in real traces: K-means over all taxi
//! positions, a square around the densest cluster, and the busiest window.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::workload_walk;
use super::{TraceBundle, WorldParams};
use crate::error::{Error, Result};
use crate::model::{
    BaseStation, EdgeService, GeoPoint, MobileUser, MobilityTrace, ServerId, ServiceId, StationId, StudyArea,
    UserId,
};

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL_M: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<(f64, f64)>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn nearest(c: &[(f64, f64)], p: (f64, f64)) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &ci) in c.iter().enumerate() {
        let d = sq_dist(ci, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[(f64, f64)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut centroids = vec![*points.choose(rng).unwrap()];
    let mut d2: Vec<f64> = points.iter().map(|&p| sq_dist(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[pick];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding on planar points.
pub fn kmeans(points: &[(f64, f64)], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    if points.len() < k {
        return Err(Error::trace(format!("{} points, fewer than k = {k}", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignments = vec![0; points.len()];
    let mut inertia_history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut inertia = 0.0;
        for (a, &p) in assignments.iter_mut().zip(points) {
            let (i, d) = nearest(&centroids, p);
            *a = i;
            inertia += d;
        }
        inertia_history.push(inertia);
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (&a, &p) in assignments.iter().zip(points) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        let mut moved: f64 = 0.0;
        for (c, &(sx, sy, n)) in centroids.iter_mut().zip(&sums) {
            if n == 0 {
                continue;
            }
            let next = (sx / n as f64, sy / n as f64);
            moved = moved.max(sq_dist(*c, next).sqrt());
            *c = next;
        }
        if moved < KMEANS_TOL_M {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia_history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RushHourSelection {
    pub center: GeoPoint,
    pub half_side_m: f64,
    pub selected_station_ids: BTreeSet<StationId>,
    /// Indices into the trace list.
    pub selected_user_ids: BTreeSet<usize>,
    /// Half-open interval range on the grid starting at `grid_origin_s`.
    pub window: (usize, usize),
    pub grid_origin_s: f64,
}

impl RushHourSelection {
    pub fn area(&self) -> StudyArea {
        StudyArea {
            center: self.center,
            half_side_m: self.half_side_m,
        }
    }

    pub fn start_s(&self, interval_s: f64) -> f64 {
        self.grid_origin_s + self.window.0 as f64 * interval_s
    }
}

/// Cluster every trace sample, center a square of side `params.area_side_m`
/// on the most populous cluster, keep the stations inside it and pick the
/// window of `params.rush_window_s` with the most distinct users inside.
pub fn kmeans_rush_hour(
    traces: &[MobilityTrace],
    stations: &[BaseStation],
    params: &WorldParams,
    interval_s: f64,
    seed: u64,
) -> Result<RushHourSelection> {
    let samples: Vec<_> = traces.iter().flat_map(|t| &t.samples).collect();
    if samples.is_empty() {
        return Err(Error::trace("no trace samples"));
    }
    if !(interval_s > 0.0) {
        return Err(Error::config("interval_s must be > 0"));
    }
    let n = samples.len() as f64;
    let reference = GeoPoint {
        lat: samples.iter().map(|s| s.location.lat).sum::<f64>() / n,
        lng: samples.iter().map(|s| s.location.lng).sum::<f64>() / n,
    };
    let points: Vec<(f64, f64)> = samples.iter().map(|s| reference.displacement_m(&s.location)).collect();
    let km = kmeans(&points, params.kmeans_k, seed)?;
    let mut counts = vec![0usize; params.kmeans_k];
    for &a in &km.assignments {
        counts[a] += 1;
    }
    let densest = (0..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
    let (ce, cn) = km.centroids[densest];
    let area = StudyArea {
        center: reference.offset_m(ce, cn),
        half_side_m: params.area_side_m / 2.0,
    };
    let selected_station_ids = stations
        .iter()
        .filter(|s| area.contains(&s.location))
        .map(|s| s.id)
        .collect();

    let origin = samples.iter().map(|s| s.timestamp_s).fold(f64::INFINITY, f64::min);
    let slot = |t: f64| ((t - origin) / interval_s).floor() as usize;
    let grid_len = slot(samples.iter().map(|s| s.timestamp_s).fold(f64::NEG_INFINITY, f64::max)) + 1;
    let width = ((params.rush_window_s / interval_s).ceil() as usize).clamp(1, grid_len);
    let starts = grid_len - width + 1;

    // Difference array over window starts: user u counts toward start s when
    // any of its inside-slots falls in [s, s + width).
    let inside: Vec<Vec<usize>> = traces
        .iter()
        .map(|t| {
            let mut v: Vec<usize> = t
                .samples
                .iter()
                .filter(|s| area.contains(&s.location))
                .map(|s| slot(s.timestamp_s))
                .collect();
            v.dedup();
            v
        })
        .collect();
    let mut diff = vec![0i64; starts + 1];
    for slots in &inside {
        let mut covered: Option<(usize, usize)> = None;
        for &x in slots {
            let lo = (x + 1).saturating_sub(width);
            let hi = x.min(starts - 1);
            if lo > hi {
                continue;
            }
            covered = match covered {
                Some((a, b)) if lo <= b + 1 => Some((a, b.max(hi))),
                Some((a, b)) => {
                    diff[a] += 1;
                    diff[b + 1] -= 1;
                    Some((lo, hi))
                }
                None => Some((lo, hi)),
            };
        }
        if let Some((a, b)) = covered {
            diff[a] += 1;
            diff[b + 1] -= 1;
        }
    }
    let (mut best, mut best_count, mut running) = (0, i64::MIN, 0);
    for (s, d) in diff.iter().take(starts).enumerate() {
        running += d;
        if running > best_count {
            best = s;
            best_count = running;
        }
    }
    let window = (best, best + width);
    let selected_user_ids = inside
        .iter()
        .enumerate()
        .filter(|(_, slots)| slots.iter().any(|&x| x >= window.0 && x < window.1))
        .map(|(i, _)| i)
        .collect();

    Ok(RushHourSelection {
        center: area.center,
        half_side_m: area.half_side_m,
        selected_station_ids,
        selected_user_ids,
        window,
        grid_origin_s: origin,
    })
}

/// Turn a selection into a bundle: selected stations (re-indexed) with
/// servers sized from `params`, one user and service per selected trace.
/// Service `r` replays `workloads[r mod n]` cyclically; without workloads a
/// synthetic random walk is drawn.
pub fn build_rush_hour_bundle(
    stations: &[BaseStation],
    traces: &[MobilityTrace],
    selection: &RushHourSelection,
    workloads: Option<&[Vec<f64>]>,
    params: &WorldParams,
    interval_s: f64,
    seed: u64,
) -> Result<TraceBundle> {
    if selection.selected_station_ids.is_empty() {
        return Err(Error::trace("no base station inside the rush-hour area"));
    }
    if selection.selected_user_ids.is_empty() {
        return Err(Error::trace("no user inside the rush-hour area"));
    }
    let horizon = selection.window.1 - selection.window.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out_stations = Vec::new();
    let mut servers = Vec::new();
    for (j, &sid) in selection.selected_station_ids.iter().enumerate() {
        let src = stations
            .get(sid.index())
            .ok_or_else(|| Error::trace(format!("selected station {sid} not in dataset")))?;
        out_stations.push(BaseStation {
            id: StationId(j),
            name: src.name.clone(),
            location: src.location,
            edge_server_id: ServerId(j),
        });
        let core = *params.core_mips_options.choose(&mut rng).unwrap();
        servers.push(params.server_at(j, core * params.server_cores as f64));
    }
    let mut users = Vec::new();
    let mut services = Vec::new();
    for (r, &ti) in selection.selected_user_ids.iter().enumerate() {
        let trace = traces
            .get(ti)
            .ok_or_else(|| Error::trace(format!("selected trace {ti} not in dataset")))?;
        let workload_trace = match workloads {
            Some(w) if !w.is_empty() => {
                let src = &w[r % w.len()];
                (0..horizon).map(|t| src[t % src.len()]).collect()
            }
            _ => workload_walk(params, horizon, &mut rng),
        };
        users.push(MobileUser {
            id: UserId(r),
            trace: trace.clone(),
            service_id: ServiceId(r),
            task_size_mi: params.task_size_mi,
            transmit_power_w: params.transmit_power_w,
        });
        services.push(EdgeService {
            id: ServiceId(r),
            user_id: UserId(r),
            requested_mips: *params.service_mips_options.choose(&mut rng).unwrap(),
            requested_ram: params.service_ram(),
            workload_trace,
            current_server_id: None,
            migration_log: Vec::new(),
        });
    }
    Ok(TraceBundle {
        stations: out_stations,
        servers,
        users,
        services,
        start_s: selection.start_s(interval_s),
        area: Some(selection.area()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TraceSample;

    fn trace(label: &str, pts: &[(f64, GeoPoint)]) -> MobilityTrace {
        MobilityTrace::new(
            label,
            pts.iter()
                .map(|&(t, location)| TraceSample { timestamp_s: t, location })
                .collect(),
        )
        .unwrap()
    }

    fn params(k: usize) -> WorldParams {
        WorldParams {
            kmeans_k: k,
            rush_window_s: 180.0,
            ..Default::default()
        }
    }

    #[test]
    fn identical_points_give_that_center() {
        let p = GeoPoint::new(37.77, -122.42).unwrap();
        let traces: Vec<_> = (0..5).map(|i| trace(&i.to_string(), &[(0.0, p), (60.0, p)])).collect();
        let sel = kmeans_rush_hour(&traces, &[], &params(3), 60.0, 1).unwrap();
        assert!((sel.center.lat - p.lat).abs() < 1e-9);
        assert!((sel.center.lng - p.lng).abs() < 1e-9);
    }

    #[test]
    fn larger_blob_wins() {
        let west = GeoPoint::new(37.77, -122.50).unwrap();
        let east = GeoPoint::new(37.77, -122.40).unwrap();
        let mut traces = Vec::new();
        for i in 0..4 {
            let p = west.offset_m(i as f64 * 10.0, 0.0);
            traces.push(trace(&format!("w{i}"), &[(0.0, p)]));
        }
        for i in 0..9 {
            let p = east.offset_m(0.0, i as f64 * 10.0);
            traces.push(trace(&format!("e{i}"), &[(0.0, p)]));
        }
        let sel = kmeans_rush_hour(&traces, &[], &params(2), 60.0, 7).unwrap();
        assert!(sel.center.distance_m(&east) < 100.0);
        assert_eq!(sel.selected_user_ids, (4..13).collect());
    }

    #[test]
    fn single_cluster_center_is_the_mean() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (0.0, 30.0), (50.0, 50.0)];
        let km = kmeans(&pts, 1, 3).unwrap();
        let (x, y) = km.centroids[0];
        assert!((x - 15.0).abs() < 1e-12 && (y - 20.0).abs() < 1e-12);
    }

    #[test]
    fn fewer_points_than_k() {
        assert!(kmeans(&[(0.0, 0.0)], 2, 0).is_err());
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..400).map(|_| (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0))).collect();
        let km = kmeans(&pts, 8, 11).unwrap();
        assert!(km.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-6));
        assert_eq!(km, kmeans(&pts, 8, 11).unwrap());
    }

    #[test]
    fn busiest_window_is_chosen() {
        let c = GeoPoint::new(37.77, -122.42).unwrap();
        let far = c.offset_m(50_000.0, 0.0);
        // Slots 0..=7, window of 3 slots. Four users are inside during
        // slots 5..=7; one visits only at slot 0.
        let mut traces = vec![trace("early", &[(0.0, c), (60.0, far)])];
        for i in 0..4 {
            traces.push(trace(&format!("u{i}"), &[(0.0, far), (300.0, c), (360.0, c), (420.0, c)]));
        }
        let p = WorldParams {
            area_side_m: 1000.0,
            ..params(2)
        };
        let sel = kmeans_rush_hour(&traces, &[], &p, 60.0, 2).unwrap();
        assert!(sel.center.distance_m(&c) < 1.0);
        // Earliest start whose window reaches slot 5.
        assert_eq!(sel.window, (3, 6));
        assert_eq!(sel.selected_user_ids, (1..5).collect());
    }
}
