//! Delay and cost model: wireless uplink rate, backhaul forwarding over the
//! per-interval link-delay matrix, computation time under proportional CPU
//! sharing, migration downtime and migration distance.

use std::cell::OnceCell;
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{BaseStation, SimConfig, StationId, WirelessChannelParams};

/// Backhaul connectivity between base stations: the symmetrized union of
/// each station's k nearest neighbors, bridged until connected.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    size: usize,
    /// Undirected edges `(a, b)` with `a < b`, sorted.
    edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn knn(stations: &[BaseStation], k: usize) -> Result<Self> {
        let n = stations.len();
        if n == 0 {
            return Err(Error::config("at least one base station is required"));
        }
        if n == 1 {
            return Ok(Topology { size: 1, edges: Vec::new() });
        }
        if k >= n {
            return Err(Error::config(format!(
                "knn_k = {k} must be smaller than the station count {n}"
            )));
        }
        let dist = |a: usize, b: usize| stations[a].location.distance_m(&stations[b].location);

        let mut edges = BTreeSet::new();
        for a in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
            others.sort_by(|&x, &y| dist(a, x).total_cmp(&dist(a, y)).then(x.cmp(&y)));
            for &b in others.iter().take(k) {
                edges.insert((a.min(b), a.max(b)));
            }
        }

        // Join stray components to the component of station 0 through the
        // shortest available edge until a single component remains.
        loop {
            let comp = components(n, &edges);
            if comp.iter().all(|&c| c == comp[0]) {
                break;
            }
            let mut best: Option<(f64, usize, usize)> = None;
            for a in (0..n).filter(|&a| comp[a] == comp[0]) {
                for b in (0..n).filter(|&b| comp[b] != comp[0]) {
                    let d = dist(a, b);
                    if best.is_none_or(|(bd, ba, bb)| (d, a, b) < (bd, ba, bb)) {
                        best = Some((d, a, b));
                    }
                }
            }
            let (_, a, b) = best.expect("disconnected graph has a crossing pair");
            edges.insert((a.min(b), a.max(b)));
        }

        Ok(Topology {
            size: n,
            edges: edges.into_iter().collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Draw one delay matrix over this topology. Delays are quantized to
    /// 1/1024 ms so that path sums are exact regardless of summation order.
    pub fn draw_matrix<R: Rng + ?Sized>(
        &self,
        interval: usize,
        min_ms: f64,
        max_ms: f64,
        rng: &mut R,
    ) -> DelayMatrix {
        let links: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let d = if max_ms > min_ms { rng.gen_range(min_ms..=max_ms) } else { min_ms };
                (a, b, quantize_ms(d).clamp(min_ms, max_ms))
            })
            .collect();
        DelayMatrix::from_links(interval, self.size, &links)
            .expect("topology edges are valid links")
    }
}

const DELAY_QUANTUM_PER_MS: f64 = 1024.0;

fn quantize_ms(d: f64) -> f64 {
    (d * DELAY_QUANTUM_PER_MS).round() / DELAY_QUANTUM_PER_MS
}

fn components(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

/// Link delays between base stations for one scheduling interval. Absent
/// links are stored as `f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayMatrix {
    pub interval: usize,
    size: usize,
    direct: Vec<f64>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl DelayMatrix {
    pub fn from_links(interval: usize, size: usize, links: &[(usize, usize, f64)]) -> Result<Self> {
        let mut direct = vec![f64::INFINITY; size * size];
        for i in 0..size {
            direct[i * size + i] = 0.0;
        }
        let mut adjacency = vec![Vec::new(); size];
        for &(a, b, d) in links {
            if a >= size || b >= size || a == b {
                return Err(Error::config(format!("invalid link ({a}, {b})")));
            }
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::config(format!("invalid link delay {d} on ({a}, {b})")));
            }
            direct[a * size + b] = d;
            direct[b * size + a] = d;
            adjacency[a].push((b, d));
            adjacency[b].push((a, d));
        }
        Ok(DelayMatrix {
            interval,
            size,
            direct,
            adjacency,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Direct link delay, `None` when the stations are not adjacent.
    pub fn direct(&self, a: usize, b: usize) -> Option<f64> {
        let d = self.direct[a * self.size + b];
        d.is_finite().then_some(d)
    }

    pub fn neighbors(&self, a: usize) -> &[(usize, f64)] {
        &self.adjacency[a]
    }

    pub fn is_connected(&self) -> bool {
        self.size == 0 || shortest_paths_from(self, 0).iter().all(|d| d.is_finite())
    }
}

/// Draw the link-delay matrix for one interval.
pub fn regenerate_delay_matrix<R: Rng + ?Sized>(
    stations: &[BaseStation],
    config: &SimConfig,
    interval: usize,
    rng: &mut R,
) -> Result<DelayMatrix> {
    let topology = Topology::knn(stations, config.knn_k)?;
    Ok(topology.draw_matrix(interval, config.link_delay_min_ms, config.link_delay_max_ms, rng))
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest delays (Dijkstra). Unreachable nodes are infinite.
pub fn shortest_paths_from(matrix: &DelayMatrix, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; matrix.size];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { cost: 0.0, node: source });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        for &(next, w) in matrix.neighbors(node) {
            let c = cost + w;
            if c < dist[next] {
                dist[next] = c;
                heap.push(Frontier { cost: c, node: next });
            }
        }
    }
    dist
}

/// Minimum forwarding delay between two stations over the backhaul.
pub fn forwarding_delay(matrix: &DelayMatrix, from: StationId, to: StationId) -> Result<f64> {
    check_station(matrix, from)?;
    check_station(matrix, to)?;
    if from == to {
        return Ok(0.0);
    }
    finite_path(shortest_paths_from(matrix, from.index())[to.index()], from, to)
}

fn check_station(matrix: &DelayMatrix, id: StationId) -> Result<()> {
    if id.index() >= matrix.size {
        return Err(Error::config(format!("station {id} not in delay matrix")));
    }
    Ok(())
}

fn finite_path(d: f64, from: StationId, to: StationId) -> Result<f64> {
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::runtime(format!("station {to} unreachable from {from}")))
    }
}

/// Lazily computed shortest-path rows for one delay matrix.
#[derive(Debug)]
pub struct PathCache {
    matrix: DelayMatrix,
    rows: Vec<OnceCell<Vec<f64>>>,
}

impl PathCache {
    pub fn new(matrix: DelayMatrix) -> Self {
        let rows = (0..matrix.size()).map(|_| OnceCell::new()).collect();
        PathCache { matrix, rows }
    }

    pub fn matrix(&self) -> &DelayMatrix {
        &self.matrix
    }

    pub fn delay(&self, from: StationId, to: StationId) -> Result<f64> {
        if from == to {
            return Ok(0.0);
        }
        check_station(&self.matrix, from)?;
        check_station(&self.matrix, to)?;
        let row = self.rows[from.index()].get_or_init(|| shortest_paths_from(&self.matrix, from.index()));
        finite_path(row[to.index()], from, to)
    }

    /// Drop all computed rows.
    pub fn clear(&mut self) {
        for row in &mut self.rows {
            row.take();
        }
    }
}

/// Path loss in dB for a distance in meters (distance enters in km).
pub fn path_loss_db(channel: &WirelessChannelParams, distance_m: f64) -> f64 {
    channel.pathloss_a_db + channel.pathloss_b_db * (distance_m / 1000.0).log10()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkRate {
    pub bits_per_s: f64,
    /// The distance was non-positive and was evaluated at 1 m.
    pub clamped: bool,
}

/// Shannon-capacity uplink rate at the given distance.
pub fn transmission_rate(
    channel: &WirelessChannelParams,
    transmit_power_w: f64,
    distance_m: f64,
) -> LinkRate {
    let clamped = !(distance_m > 0.0);
    let d = if clamped { 1.0 } else { distance_m };
    let gain = 10f64.powf(path_loss_db(channel, d) / 10.0);
    let snr = transmit_power_w / (gain * channel.noise_power_w);
    LinkRate {
        bits_per_s: channel.bandwidth_hz * (1.0 + snr).log2(),
        clamped,
    }
}

/// Time to push `payload_bits` over the uplink, in ms.
pub fn uplink_delay_ms(
    channel: &WirelessChannelParams,
    payload_bits: f64,
    transmit_power_w: f64,
    distance_m: f64,
) -> Result<f64> {
    let rate = transmission_rate(channel, transmit_power_w, distance_m).bits_per_s;
    if !(rate > 0.0) {
        return Err(Error::runtime(format!(
            "zero uplink rate at {distance_m} m with {transmit_power_w} W"
        )));
    }
    Ok(payload_bits / rate * 1000.0)
}

/// Uplink plus backhaul forwarding delay, in ms.
#[allow(clippy::too_many_arguments)]
pub fn communication_delay_ms(
    channel: &WirelessChannelParams,
    payload_bits: f64,
    transmit_power_w: f64,
    radio_distance_m: f64,
    matrix: &DelayMatrix,
    current: StationId,
    serving: StationId,
) -> Result<f64> {
    Ok(uplink_delay_ms(channel, payload_bits, transmit_power_w, radio_distance_m)?
        + forwarding_delay(matrix, current, serving)?)
}

/// MIPS a service actually receives: its request, scaled down
/// proportionally when the server's total requests exceed capacity.
pub fn allocated_mips(requested_mips: f64, total_requested_mips: f64, capacity_mips: f64) -> f64 {
    if total_requested_mips <= capacity_mips {
        requested_mips
    } else {
        requested_mips * capacity_mips / total_requested_mips
    }
}

/// Task execution time in ms for `task_mi` million instructions.
pub fn computation_delay_ms(task_mi: f64, allocated_mips: f64) -> Result<f64> {
    if !(allocated_mips > 0.0) {
        return Err(Error::config(format!(
            "service allocated {allocated_mips} MIPS; cannot execute"
        )));
    }
    Ok(task_mi / allocated_mips * 1000.0)
}

pub fn migration_delay_ms(source: StationId, dest: StationId, config: &SimConfig) -> f64 {
    if source == dest {
        0.0
    } else {
        config.migration_downtime_ms
    }
}

/// Distance between two stations in km.
pub fn migration_cost_km(
    stations: &[BaseStation],
    source: StationId,
    dest: StationId,
) -> Result<f64> {
    let lookup = |id: StationId| {
        stations
            .get(id.index())
            .filter(|s| s.id == id)
            .ok_or_else(|| Error::config(format!("unknown station {id}")))
    };
    Ok(lookup(source)?.location.distance_m(&lookup(dest)?.location) / 1000.0)
}
