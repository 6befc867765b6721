//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgesched::builder::{local_point, ScenarioBuilder};
use edgesched::cli::{competitive_bound, run_sweep, write_sweep_csv, ExperimentConfig, Scenario, SweepSpec, SweepVar};
use edgesched::model::{CompetitiveParams, ServerId, ServiceId, SimConfig};
use edgesched::network::{forwarding_delay, DelayMatrix, Topology};
use edgesched::policy::{assignment_probability, high_migration_probability, pdma_assign, PolicyKind};
use edgesched::sim::{derive_seed, run, Engine};
use edgesched::traces::{synth_world, TraceBundle, WorldParams};
use edgesched::world::{IntervalView, World};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn assignment_function() -> Verdict {
    let start = Instant::now();
    let mut worst_peak: f64 = 0.0;
    let mut bad = 0usize;
    const GRID: usize = 10_000;
    for p in [0.5, 1.0, 2.0, 4.0] {
        for t in [0.5, 0.9] {
            for i in 0..GRID {
                let x = 1.05 * i as f64 / (GRID - 1) as f64;
                let f = assignment_probability(x, p, t);
                if !(0.0..=1.0).contains(&f) || ((x >= t || x <= 0.0) && f != 0.0) {
                    bad += 1;
                }
            }
            let peak = assignment_probability(p * t / (p + 1.0), p, t);
            worst_peak = worst_peak.max((peak - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        bad == 0 && worst_peak <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("{bad} bad grid points, peak error {worst_peak:.1e}, {elapsed:.2?}"),
    )
}

fn migration_function() -> Verdict {
    let start = Instant::now();
    let th = 0.9;
    let mut bad = 0usize;
    let mut edge: f64 = 0.0;
    for beta in [0.1, 0.25, 1.0, 4.0] {
        edge = edge.max(high_migration_probability(th, th, beta).unwrap().abs());
        edge = edge.max((high_migration_probability(1.0, th, beta).unwrap() - 1.0).abs());
        let mut prev = f64::NEG_INFINITY;
        for i in 0..1000 {
            let x = 1.2 * i as f64 / 999.0;
            let f = high_migration_probability(x, th, beta).unwrap();
            if f < prev {
                bad += 1;
            }
            prev = f;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        bad == 0 && edge <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("{bad} monotonicity breaks, endpoint error {edge:.1e}, {elapsed:.2?}"),
    )
}

fn shortest_paths() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0usize;
    for _ in 0..200 {
        let n = rng.gen_range(1..=20);
        // Spanning tree plus random extra edges; delays on a 1/1024 ms grid
        // so that any summation order is exact.
        let mut links = Vec::new();
        for b in 1..n {
            links.push((rng.gen_range(0..b), b));
        }
        for _ in 0..rng.gen_range(0..=2 * n) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                links.push((a, b));
            }
        }
        let links: Vec<(usize, usize, f64)> = links
            .into_iter()
            .map(|(a, b)| (a, b, rng.gen_range(5 * 1024..=50 * 1024) as f64 / 1024.0))
            .collect();
        let matrix = DelayMatrix::from_links(0, n, &links).unwrap();

        let mut fw = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in fw.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for &(a, b, d) in &links {
            fw[a][b] = fw[a][b].min(d);
            fw[b][a] = fw[b][a].min(d);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if fw[i][k] + fw[k][j] < fw[i][j] {
                        fw[i][j] = fw[i][k] + fw[k][j];
                    }
                }
            }
        }
        for (i, row) in fw.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                let got = forwarding_delay(&matrix, edgesched::model::StationId(i), edgesched::model::StationId(j));
                if got.ok() != Some(want) {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("{mismatches} mismatching pairs over 200 graphs, {elapsed:.2?}"),
    )
}

fn bound(j: u64, r: u64, epsilon: f64, delta: f64) -> f64 {
    competitive_bound(&CompetitiveParams { servers: j, services: r, epsilon, delta }).unwrap()
}

fn matrix_for(world: &World, cfg: &SimConfig) -> DelayMatrix {
    // Same topology and stream the engine uses for interval 0.
    let topo = Topology::knn(&world.stations, cfg.knn_k).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &["network"]));
    topo.draw_matrix(0, cfg.link_delay_min_ms, cfg.link_delay_max_ms, &mut rng)
}

/// Cheapest admissible full placement by exhaustive search: total
/// (communication, computation) delay.
fn optimal_single_interval(bundle: &TraceBundle, cfg: &SimConfig) -> Option<(f64, f64)> {
    let base = bundle.to_world(cfg.admission_cap).unwrap();
    let (j, r) = (base.servers.len(), base.services.len());
    let matrix = matrix_for(&base, cfg);
    let mut best: Option<(f64, f64)> = None;
    let mut choice = vec![0usize; r];
    'outer: loop {
        let mut world = base.clone();
        let mut ok = true;
        for (s, &srv) in choice.iter().enumerate() {
            if !world.admits(ServerId(srv), ServiceId(s)) {
                ok = false;
                break;
            }
            world.place(ServiceId(s), ServerId(srv));
        }
        if ok {
            let positions = IntervalView::positions_at(&world, 0.0, None);
            let view = IntervalView::new(&world, cfg, 0, matrix.clone(), positions);
            let (mut comm, mut comp) = (0.0, 0.0);
            for (s, &c) in choice.iter().enumerate() {
                let srv = ServerId(c);
                let user = world.service(ServiceId(s)).user_id;
                comm += view.communication_delay(&world, user, srv).unwrap();
                comp += view.computation_delay(&world, ServiceId(s), srv).unwrap();
            }
            if best.is_none_or(|(c, p)| comm + comp < c + p) {
                best = Some((comm, comp));
            }
        }
        for slot in choice.iter_mut() {
            *slot += 1;
            if *slot < j {
                continue 'outer;
            }
            *slot = 0;
        }
        break;
    }
    best
}

fn competitive_ratio() -> Verdict {
    let start = Instant::now();
    let table_ok = (bound(10, 10, 0.0, 0.0) - 11.0).abs() <= 1e-9
        && (bound(1, 1, 1.0, 1.0) - 5.0 / 3.0).abs() <= 1e-9
        && {
            let limit = 1.0 + 100.0 / 20.0;
            let b = bound(10, 10, 1e6, 1e6);
            b >= limit && b - limit <= 1e-3
        };

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    let mut scenarios = 0usize;
    // Scenarios where PDMA found the scale-up pool exhausted.
    let (mut with_failures, mut violations_with_failures) = (0usize, 0usize);
    while scenarios < 100 {
        let j = rng.gen_range(1..=5usize);
        let r = rng.gen_range(1..=5usize);
        let mut b = ScenarioBuilder::new();
        for _ in 0..j {
            let cap = [8000.0, 12_000.0, 16_000.0][rng.gen_range(0..3)];
            b = b.station(local_point(rng.gen_range(0.0..3000.0), rng.gen_range(0.0..3000.0)), cap);
        }
        for _ in 0..r {
            let mips = [1000.0, 1500.0, 2000.0, 2500.0][rng.gen_range(0..4)];
            let at = local_point(rng.gen_range(0.0..3000.0), rng.gen_range(0.0..3000.0));
            b = b.user_at(at, mips, vec![rng.gen_range(0.2..1.0)]);
        }
        let bundle = b.build();
        let cfg = SimConfig {
            horizon_intervals: 1,
            rng_seed: rng.gen(),
            knn_k: 4.min(j.saturating_sub(1)).max(1),
            ..Default::default()
        };
        let Some((comm, comp)) = optimal_single_interval(&bundle, &cfg) else {
            continue;
        };
        scenarios += 1;
        let opt = comm + comp;
        // Unit communication cost; processing and migration costs relative
        // to it as realized by the optimum.
        let per_service_comm = (comm / r as f64).max(1e-12);
        let epsilon = comp / comm.max(1e-12);
        let delta = cfg.migration_downtime_ms / per_service_comm;
        let ratio_bound = bound(j as u64, r as u64, epsilon, delta);

        let engine = Engine::new(&bundle, &cfg, PolicyKind::Pdma, rng.gen()).unwrap();
        let (report, _) = engine.run_to_end().unwrap();
        let row = &report.per_interval[0];
        let pdma = row.mean_delay_ms * row.delay_samples as f64;
        worst = worst.max(pdma / (ratio_bound * opt));
        let above = pdma > ratio_bound * opt * (1.0 + 1e-12);
        if row.placement_failures > 0 {
            with_failures += 1;
        }
        if above {
            violations += 1;
            if row.placement_failures > 0 {
                violations_with_failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        table_ok && violations == 0 && elapsed < Duration::from_secs(30),
        format!(
            "tabulated values {}, {violations}/100 scenarios above the bound \
             (worst cost/(bound·OPT) = {worst:.3}); {violations_with_failures} of them had placement \
             failures, {}/{} scenarios without failures above the bound; {elapsed:.2?}",
            if table_ok { "match" } else { "MISMATCH" },
            violations - violations_with_failures,
            100 - with_failures,
        ),
    )
}

fn delay_accounting() -> Verdict {
    // Station A at the origin, B 2200 m east, one 20 ms link between them.
    // The user starts 100 m from A, then moves 200 m short of B, out of A's
    // 1500 m range: it reaches A through B.
    let bundle = ScenarioBuilder::new()
        .station(local_point(0.0, 0.0), 4000.0)
        .station(local_point(2200.0, 0.0), 4000.0)
        .user(
            vec![(0.0, local_point(100.0, 0.0)), (60.0, local_point(2000.0, 0.0))],
            2000.0,
            vec![0.5, 0.5],
        )
        .build();
    let cfg = SimConfig {
        horizon_intervals: 2,
        knn_k: 1,
        link_delay_min_ms: 20.0,
        link_delay_max_ms: 20.0,
        ..Default::default()
    };
    let report = run(&bundle, &cfg, PolicyKind::Nm).unwrap();

    let uplink = |d_m: f64| {
        let g = 10f64.powf((127.0 + 30.0 * (d_m / 1000.0).log10()) / 10.0);
        let rate = 20e6 * (1.0 + 0.5 / (g * 2e-13)).log2();
        60.0 * 8.0 / rate * 1000.0
    };
    let compute = 60.0 / 2000.0 * 1000.0;
    let expected = [uplink(100.0) + compute, uplink(200.0) + 20.0 + compute];
    let got: Vec<f64> = report.per_interval.iter().map(|r| r.mean_delay_ms).collect();
    let err = got.iter().zip(expected).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max);
    let overall = (expected[0] + expected[1]) / 2.0;
    let overall_err = (report.aggregate.overall_delay_ms - overall).abs();
    let cost = report.aggregate.total_migration_cost_km;
    verdict(
        got.len() == 2 && err <= 1e-9 && overall_err <= 1e-9 && cost == 0.0,
        format!("per-interval error {err:.1e}, overall error {overall_err:.1e}, NM cost {cost} km"),
    )
}

fn determinism() -> Verdict {
    let mut config = ExperimentConfig::default();
    config.sim.rng_seed = 11;
    config.sim.horizon_intervals = 20;
    config.world.servers = 30;
    config.world.clients = 150;
    config.world.area_side_m = 1800.0;
    let spec = SweepSpec {
        variable: SweepVar::DistanceThreshold,
        values: vec![500.0, 1500.0],
        repetitions: 2,
    };
    let csv = || {
        let rows = run_sweep(&spec, &config, &Scenario::Synthetic, &PolicyKind::ALL, 1, std::io::sink()).unwrap();
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        out
    };
    let (a, b) = (csv(), csv());
    verdict(a == b && !a.is_empty(), format!("{} bytes, identical: {}", a.len(), a == b))
}

fn assign_complexity() -> Verdict {
    const PROBES: usize = 100;
    let sizes = [100usize, 200, 400, 800];
    let mut per_call = Vec::new();
    for &j in &sizes {
        let params = WorldParams {
            servers: j,
            clients: 4 * j,
            area_side_m: 4000.0 * (j as f64 / 147.0).sqrt(),
            densify: 1,
            ..Default::default()
        };
        let cfg = SimConfig { horizon_intervals: 1, ..Default::default() };
        let bundle = synth_world(&params, 1, cfg.interval_s, 21).unwrap();
        let mut world = bundle.to_world(cfg.admission_cap).unwrap();
        let placed = 4 * j - PROBES;
        for r in 0..placed {
            let user = world.service(ServiceId(r)).user_id;
            let at = world.user(user).trace.samples[0].location;
            let nearest = world.nearest_station(&at).unwrap();
            let srv = world.stations[nearest.index()].edge_server_id;
            if world.admits(srv, ServiceId(r)) {
                world.place(ServiceId(r), srv);
            }
        }
        let matrix = matrix_for(&world, &cfg);
        let positions = IntervalView::positions_at(&world, 0.0, None);
        let mut view = IntervalView::new(&world, &cfg, 0, matrix, positions);
        let none = Default::default();
        let mut best = Duration::MAX;
        for round in 0..9 {
            view.clear_path_cache();
            let mut rng = ChaCha8Rng::seed_from_u64(round);
            let start = Instant::now();
            for r in placed..4 * j {
                let t = pdma_assign(&world, &view, &cfg.policy, ServiceId(r), None, &none, &mut rng).unwrap();
                std::hint::black_box(t);
            }
            best = best.min(start.elapsed());
        }
        per_call.push(best.as_secs_f64() / PROBES as f64);
    }
    let reference = |j: usize| j as f64 * (j as f64).ln();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &j) in sizes.iter().enumerate().skip(1) {
        let observed = per_call[i] / per_call[0];
        let allowed = 1.3 * reference(j) / reference(sizes[0]);
        ok &= observed <= allowed;
        parts.push(format!("J={j}: {observed:.2}x (limit {allowed:.2}x)"));
    }
    verdict(
        ok,
        format!("{:.1} µs/call at J=100; {}", per_call[0] * 1e6, parts.join(", ")),
    )
}

struct PolicyMeans {
    cost: f64,
    overloaded: f64,
    delay: f64,
}

fn rush_hour_runs() -> (BTreeMap<PolicyKind, PolicyMeans>, Duration) {
    let seeds = 1..=5u64;
    let n = seeds.clone().count() as f64;
    let mut sums: BTreeMap<PolicyKind, PolicyMeans> = BTreeMap::new();
    let mut slowest = Duration::ZERO;
    for seed in seeds {
        let mut config = ExperimentConfig::default();
        config.sim.rng_seed = seed;
        let bundle = Scenario::Synthetic.bundle(&config, seed).unwrap();
        for p in PolicyKind::ALL {
            let start = Instant::now();
            let report = run(&bundle, &config.sim, p).unwrap();
            slowest = slowest.max(start.elapsed());
            let m = sums.entry(p).or_insert(PolicyMeans { cost: 0.0, overloaded: 0.0, delay: 0.0 });
            m.cost += report.aggregate.total_migration_cost_km / n;
            m.overloaded += report.aggregate.mean_overloaded_servers / n;
            m.delay += report.aggregate.overall_delay_ms / n;
        }
    }
    (sums, slowest)
}

fn threshold_trend() -> Verdict {
    let mut config = ExperimentConfig::default();
    config.sim.rng_seed = 1;
    let values = vec![200.0, 500.0, 1000.0, 1500.0, 2000.0];
    let spec = SweepSpec {
        variable: SweepVar::DistanceThreshold,
        values: values.clone(),
        repetitions: 5,
    };
    let policies = [PolicyKind::Pdma, PolicyKind::Nf, PolicyKind::TopK];
    let rows = run_sweep(&spec, &config, &Scenario::Synthetic, &policies, 1, std::io::sink()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in policies {
        let means: Vec<f64> = values
            .iter()
            .map(|&v| {
                let ds: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.policy == p && r.sweep_value == v)
                    .map(|r| r.overall_delay_ms)
                    .collect();
                ds.iter().sum::<f64>() / ds.len() as f64
            })
            .collect();
        let rising = means.windows(2).any(|w| w[1] > w[0] * 1.05);
        ok &= !rising;
        let shown: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
        parts.push(format!("{p} [{}]", shown.join(" → ")));
    }
    verdict(ok, format!("mean delay ms, 200→2000 m: {}", parts.join("; ")))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Verdict)> = vec![
        ("1 assignment function", assignment_function()),
        ("2 migration function", migration_function()),
        ("3 shortest paths", shortest_paths()),
        ("4 competitive bound", competitive_ratio()),
        ("5 delay accounting", delay_accounting()),
        ("6 determinism", determinism()),
        ("7 assign complexity", assign_complexity()),
    ];

    let (m, slowest) = rush_hour_runs();
    let (pdma, nf, nm, topk) = (&m[&PolicyKind::Pdma], &m[&PolicyKind::Nf], &m[&PolicyKind::Nm], &m[&PolicyKind::TopK]);
    results.push((
        "8 migration cost",
        verdict(
            pdma.cost <= 0.5 * nf.cost && pdma.cost <= 0.25 * topk.cost && slowest < Duration::from_secs(120),
            format!(
                "PDMA {:.1} km = {:.3}x NF, {:.3}x Top-K; slowest run {slowest:.1?}",
                pdma.cost,
                pdma.cost / nf.cost,
                pdma.cost / topk.cost
            ),
        ),
    ));
    results.push((
        "9 overloaded servers",
        verdict(
            pdma.overloaded <= 0.5 * nm.overloaded && pdma.overloaded <= 0.5 * topk.overloaded,
            format!(
                "PDMA {:.2}, NM {:.2}, Top-K {:.2}",
                pdma.overloaded, nm.overloaded, topk.overloaded
            ),
        ),
    ));
    results.push((
        "10 overall delay",
        verdict(
            pdma.delay <= nm.delay && pdma.delay <= 1.1 * nf.delay,
            format!("PDMA {:.1} ms, NF {:.1} ms, NM {:.1} ms", pdma.delay, nf.delay, nm.delay),
        ),
    ));
    results.push(("11 threshold trend", threshold_trend()));

    let mut failed = 0;
    for (name, v) in &results {
        println!("criterion {name}: {} — {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.ok);
    }
    if failed == 0 {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria failed", results.len());
        ExitCode::FAILURE
    }
}
