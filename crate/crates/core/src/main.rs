use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use edgesched::cli::{
    competitive_bound, emit_plot_data, run_sweep, write_plot_csv, ExperimentConfig, PlotMetric, Scenario,
    SweepSpec,
};
use edgesched::model::CompetitiveParams;
use edgesched::sim::{compare_policies, MetricsReport};
use edgesched::{Error, PolicyKind, Result};

#[derive(Parser)]
#[command(version, about = "Edge service assignment and migration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the competitive-ratio upper bound.
    Bound {
        #[arg(long)]
        servers: u64,
        #[arg(long)]
        services: u64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated policies (pdma, nf, nm, topk).
    #[arg(long, value_delimiter = ',', default_value = "pdma,nf,nm,topk")]
    policy: Vec<String>,
    /// Parameter sweep, e.g. distance_threshold=200,500,1000.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the synthetic scenario generator (default without --traces).
    #[arg(long, conflicts_with = "traces")]
    synth: bool,
    /// Directory with stations.csv, mobility.csv and optional workloads/.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Worker threads for sweeps (defaults to available cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn execute(args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.sim.rng_seed = seed;
    }
    let policies = args
        .policy
        .iter()
        .map(|p| p.parse())
        .collect::<Result<Vec<PolicyKind>>>()?;
    let scenario = match &args.traces {
        Some(dir) => Scenario::from_trace_dir(dir, &config)?,
        None => Scenario::Synthetic,
    };
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io { path: args.out.clone(), source })?;

    if let Some(sweep) = &args.sweep {
        let spec = SweepSpec::parse(sweep, args.reps)?;
        let workers = args
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let rows = run_sweep(&spec, &config, &scenario, &policies, workers, create(&args.out.join("metrics.csv"))?)?;
        let mut figures = BTreeMap::new();
        for metric in PlotMetric::ALL {
            let plot = emit_plot_data(&rows, metric);
            write_plot_csv(&plot, create(&args.out.join(format!("figure_{}.csv", metric.name())))?)?;
            figures.insert(metric.name(), plot);
        }
        let report = serde_json::json!({ "sweep": spec, "rows": rows, "figures": figures });
        write_json(&args.out.join("report.json"), &report)?;
        info!("{} sweep rows written to {}", rows.len(), args.out.display());
        return Ok(());
    }

    config.sim.horizon_intervals = scenario.horizon(&config);
    let bundle = scenario.bundle(&config, config.sim.rng_seed)?;
    let reports = compare_policies(&bundle, &config.sim, &policies)?;
    let ordered: Vec<&MetricsReport> = policies.iter().map(|p| &reports[p]).collect();
    MetricsReport::write_csv(ordered.iter().copied(), create(&args.out.join("metrics.csv"))?)?;
    let by_name: BTreeMap<&str, &MetricsReport> = ordered.iter().map(|r| (r.policy.as_str(), *r)).collect();
    write_json(&args.out.join("report.json"), &by_name)?;
    for r in &ordered {
        println!(
            "{:<5} delay {:>9.3} ms  migration cost {:>10.3} km  overloaded {:>7.3}",
            r.policy,
            r.aggregate.overall_delay_ms,
            r.aggregate.total_migration_cost_km,
            r.aggregate.mean_overloaded_servers
        );
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|e| Error::runtime(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Bound { servers, services, epsilon, delta }) => competitive_bound(&CompetitiveParams {
            servers,
            services,
            epsilon,
            delta,
        })
        .map(|b| println!("{b}")),
        None => execute(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
