//! Command-line harness: run single episodes, sweep experiment plans, train
//! and transfer the deep-Q agent, and validate dataset files.

use anyhow::{anyhow, bail, Context, Result};
use atc_core::control::{run_policy_traced, ControllerConfig, ControllerKind, SignalController};
use atc_core::experiment::{emit_csv, emit_curve_csv, emit_json, run_plan, ExperimentPlan};
use atc_core::network::{
    generate_grid, generate_poisson_flow, load_cityflow, FlowSpec, GridSpec, PoissonFlowConfig,
};
use atc_core::observer::{observe, ObservationMode};
use atc_core::rl::{
    evaluate_policy_traced, load_checkpoint, run_xlight, save_checkpoint, transfer_eval,
    RewardMode, TrainConfig,
};
use atc_core::sim::{SimConfig, World};
use atc_core::{EpisodeMetrics, TrafficNetwork};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "atc", version, about = "Deterministic traffic-signal control benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one controller and write episode metrics.
    Simulate(SimulateArgs),
    /// Run a plan file: scenario x method x sweep point x seed.
    Sweep(SweepArgs),
    /// Train the shared deep-Q agent on a scenario.
    Train(TrainArgs),
    /// Evaluate a trained model's transfer ratio onto a target scenario.
    Transfer(TransferArgs),
    /// Parse and validate CityFlow-format data files.
    Validate(ValidateArgs),
}

/// Where the network and demand come from: either a synthetic grid with
/// Poisson arrivals or a pair of CityFlow files.
#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Grid size as ROWSxCOLS, e.g. 3x3.
    #[arg(long, conflicts_with_all = ["roadnet", "flow"])]
    grid: Option<String>,
    /// East-west segment length in meters (grid scenarios).
    #[arg(long, default_value_t = 300.0)]
    ew_length: f64,
    /// North-south segment length in meters (grid scenarios).
    #[arg(long, default_value_t = 300.0)]
    ns_length: f64,
    #[arg(long, default_value_t = 3)]
    lanes: u32,
    /// Speed limit in m/s.
    #[arg(long, default_value_t = 11.11)]
    max_speed: f64,
    /// Poisson arrival rate per entry road, vehicles per second.
    #[arg(long, default_value_t = 0.1)]
    poisson_rate: f64,
    /// CityFlow roadnet JSON path.
    #[arg(long, requires = "flow")]
    roadnet: Option<PathBuf>,
    /// CityFlow flow JSON path.
    #[arg(long, requires = "roadnet")]
    flow: Option<PathBuf>,
}

impl ScenarioArgs {
    fn build(&self, horizon: u32, seed: u64) -> Result<(Arc<TrafficNetwork>, FlowSpec, String)> {
        if let (Some(roadnet), Some(flow)) = (&self.roadnet, &self.flow) {
            let roadnet_bytes =
                std::fs::read(roadnet).with_context(|| format!("reading {}", roadnet.display()))?;
            let flow_bytes =
                std::fs::read(flow).with_context(|| format!("reading {}", flow.display()))?;
            let (net, flowspec) = load_cityflow(&roadnet_bytes, &flow_bytes)?;
            let name = format!("cityflow:{}", roadnet.display());
            return Ok((Arc::new(net), flowspec, name));
        }
        let grid = self.grid.as_deref().unwrap_or("1x1");
        let (rows, cols) = parse_grid(grid)?;
        let net = Arc::new(generate_grid(&GridSpec {
            rows,
            cols,
            ew_length: self.ew_length,
            ns_length: self.ns_length,
            lanes_per_road: self.lanes,
            max_speed: self.max_speed,
        })?);
        let flow = generate_poisson_flow(
            &net,
            &PoissonFlowConfig::new(self.poisson_rate, horizon as f64, seed),
        )?;
        Ok((net, flow, format!("grid:{rows}x{cols}")))
    }
}

fn parse_grid(s: &str) -> Result<(u32, u32)> {
    let (rows, cols) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("grid must look like 3x3, got {s:?}"))?;
    Ok((rows.trim().parse()?, cols.trim().parse()?))
}

fn parse_obs_mode(s: &str) -> Result<ObservationMode> {
    match s {
        "default" => Ok(ObservationMode::Default),
        "config1" => Ok(ObservationMode::Config1),
        "config2" => Ok(ObservationMode::Config2),
        "config3" => Ok(ObservationMode::Config3),
        other => bail!("unknown obs-mode {other:?} (default|config1|config2|config3)"),
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// fixedtime | maxpressure | efficientmp | advancedmp | mplight
    #[arg(long)]
    controller: String,
    #[arg(long, default_value_t = 1.0)]
    w1: f64,
    #[arg(long, default_value_t = 15)]
    t_duration: u32,
    #[arg(long, default_value = "default")]
    obs_mode: String,
    /// Model checkpoint, required when controller = mplight.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3600)]
    horizon: u32,
    /// Episode metrics JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-tick trace JSON-lines (clock, phases, per-lane counts).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Per-tick observation dump JSON-lines.
    #[arg(long)]
    obs_dump: Option<PathBuf>,
}

struct TickWriter {
    trace: Option<std::io::BufWriter<std::fs::File>>,
    obs: Option<std::io::BufWriter<std::fs::File>>,
    t_duration: u32,
    obs_mode: ObservationMode,
}

impl TickWriter {
    fn new(
        trace_path: &Option<PathBuf>,
        obs_path: &Option<PathBuf>,
        t_duration: u32,
        obs_mode: ObservationMode,
    ) -> Result<TickWriter> {
        let open = |p: &PathBuf| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(
                std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        };
        Ok(TickWriter {
            trace: trace_path.as_ref().map(&open).transpose()?,
            obs: obs_path.as_ref().map(&open).transpose()?,
            t_duration,
            obs_mode,
        })
    }

    fn on_tick(&mut self, world: &World) {
        if let Some(w) = &mut self.trace {
            let phases: Vec<usize> =
                (0..world.signal_count()).map(|si| world.signal(si).active).collect();
            let counts: Vec<usize> = world
                .network()
                .lanes
                .iter()
                .map(|l| world.lane_vehicle_ids(l.id).len())
                .collect();
            let line = json!({ "t": world.clock(), "phases": phases, "lane_counts": counts });
            writeln!(w, "{line}").expect("trace write");
        }
        if let Some(w) = &mut self.obs {
            let all: Vec<_> = (0..world.signal_count())
                .map(|si| observe(world, world.signal_node(si), self.t_duration, self.obs_mode))
                .collect();
            let line = json!({ "t": world.clock(), "observations": all });
            writeln!(w, "{line}").expect("obs dump write");
        }
    }
}

fn metrics_report(
    scenario: &str,
    method: &str,
    seed: u64,
    horizon: u32,
    m: &EpisodeMetrics,
) -> serde_json::Value {
    json!({
        "scenario": scenario,
        "method": method,
        "seed": seed,
        "horizon": horizon,
        "average_travel_time": m.average_travel_time,
        "throughput": m.throughput,
        "injected": m.injected,
        "truncated": m.truncated,
        "empty": m.empty,
        "config_hash": m.config_hash,
        "travel_time_rule": "vehicles still in the system at the horizon contribute horizon - entry",
        "queue_series": m.queue_series,
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (net, flow, name) = args.scenario.build(args.horizon, args.seed)?;
    let sim_cfg = SimConfig { horizon: args.horizon, seed: args.seed, ..Default::default() };
    let obs_mode = parse_obs_mode(&args.obs_mode)?;
    let mut ticks = TickWriter::new(&args.trace, &args.obs_dump, args.t_duration, obs_mode)?;

    let metrics = if args.controller == "mplight" {
        let model = args.model.as_ref().ok_or_else(|| anyhow!("--model is required for mplight"))?;
        let (qnet, _hash) = load_checkpoint(model)?;
        let cfg = TrainConfig {
            t_duration: args.t_duration,
            obs_mode,
            seed: args.seed,
            ..Default::default()
        };
        let run = evaluate_policy_traced(&qnet, &net, &flow, &cfg, &sim_cfg, |w| ticks.on_tick(w))?;
        run.metrics
    } else {
        let kind = ControllerKind::parse(&args.controller)
            .ok_or_else(|| anyhow!("unknown controller {:?}", args.controller))?;
        let ctrl = SignalController::new(
            kind,
            ControllerConfig { t_duration: args.t_duration, w1: args.w1, ..Default::default() },
        );
        let run = run_policy_traced(net, &flow, &ctrl, &sim_cfg, |w| ticks.on_tick(w))?;
        run.metrics
    };

    println!(
        "{name} {}: avg travel time {:.2} s, throughput {}/{} (seed {})",
        args.controller, metrics.average_travel_time, metrics.throughput, metrics.injected, args.seed
    );
    if let Some(out) = &args.out {
        let report = metrics_report(&name, &args.controller, args.seed, args.horizon, &metrics);
        std::fs::write(out, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

#[derive(Args)]
struct SweepArgs {
    /// Plan file (TOML or JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Results CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let plan = ExperimentPlan::from_path(&args.plan)?;
    let table = run_plan(&plan);
    emit_csv(&table, &args.out)?;
    if let Some(json_path) = &args.json {
        emit_json(&table, json_path)?;
    }
    let failures = table.rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "{} rows written to {} ({failures} failed cells)",
        table.rows.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 50)]
    episodes: u32,
    #[arg(long, default_value_t = 15)]
    t_duration: u32,
    #[arg(long, default_value = "default")]
    obs_mode: String,
    /// pressure | queue
    #[arg(long, default_value = "pressure")]
    reward: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3600)]
    horizon: u32,
    /// Model checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Training-curve CSV output.
    #[arg(long)]
    curve: Option<PathBuf>,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (net, flow, name) = args.scenario.build(args.horizon, args.seed)?;
    let sim_cfg = SimConfig { horizon: args.horizon, seed: args.seed, ..Default::default() };
    let cfg = TrainConfig {
        episodes: args.episodes,
        t_duration: args.t_duration,
        obs_mode: parse_obs_mode(&args.obs_mode)?,
        reward_mode: match args.reward.as_str() {
            "pressure" => RewardMode::Pressure,
            "queue" => RewardMode::Queue,
            other => bail!("unknown reward {other:?} (pressure|queue)"),
        },
        seed: args.seed,
        ..Default::default()
    };
    let outcome = run_xlight(&net, &flow, &cfg, &sim_cfg)?;
    save_checkpoint(&outcome.net, &cfg.fingerprint(), &args.out)?;
    if let Some(curve) = &args.curve {
        emit_curve_csv(&outcome.curve, curve)?;
    }
    println!(
        "{name}: trained {} episodes, eval travel time {:.2} s (last-10 mean {:.2} s), model -> {}",
        args.episodes,
        outcome.eval.metrics.average_travel_time,
        outcome.last10_mean_travel_time,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct TransferArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 50)]
    episodes: u32,
    #[arg(long, default_value_t = 15)]
    t_duration: u32,
    #[arg(long, default_value = "default")]
    obs_mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3600)]
    horizon: u32,
    /// Transfer report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_transfer(args: TransferArgs) -> Result<()> {
    let (net, flow, name) = args.scenario.build(args.horizon, args.seed)?;
    let (qnet, _) = load_checkpoint(&args.model)?;
    let sim_cfg = SimConfig { horizon: args.horizon, seed: args.seed, ..Default::default() };
    let cfg = TrainConfig {
        episodes: args.episodes,
        t_duration: args.t_duration,
        obs_mode: parse_obs_mode(&args.obs_mode)?,
        seed: args.seed,
        ..Default::default()
    };
    let report = transfer_eval(&qnet, &net, &flow, &cfg, &sim_cfg)?;
    println!(
        "{name}: transfer ratio {:.4} (transfer {:.2} s / direct {:.2} s)",
        report.ratio, report.transfer_travel_time, report.direct_travel_time
    );
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    roadnet: PathBuf,
    /// Flow file; omitted means an empty demand.
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Write the parsed network back out in canonical JSON.
    #[arg(long)]
    canonical: Option<PathBuf>,
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let roadnet =
        std::fs::read(&args.roadnet).with_context(|| format!("reading {}", args.roadnet.display()))?;
    let flow_bytes = match &args.flow {
        Some(p) => std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => b"[]".to_vec(),
    };
    let (net, flow) = load_cityflow(&roadnet, &flow_bytes)?;
    net.validate()?;
    println!(
        "ok: {} intersections ({} signalized), {} roads, {} lanes, {} flow entries",
        net.intersections.len(),
        net.signalized_count(),
        net.roads.len(),
        net.lanes.len(),
        flow.entries.len()
    );
    println!("provenance: {}", net.provenance);
    if let Some(out) = &args.canonical {
        std::fs::write(out, net.to_canonical_json())
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Train(args) => cmd_train(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Validate(args) => cmd_validate(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
