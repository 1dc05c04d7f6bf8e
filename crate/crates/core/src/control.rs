//! Classical signal controllers behind one decision interface.
//!
//! - FixedTime: clock-driven phase split, blind to traffic.
//! - MaxPressure: argmax of classic (unaveraged) phase pressure.
//! - Efficient-MP: argmax of lane-count-averaged phase pressure.
//! - Advanced-MP: keeps the current phase while its weighted demand
//!   `d(current) * W1` strictly exceeds the maximum phase pressure,
//!   otherwise falls back to the Efficient-MP choice.
//!
//! Controllers are pure: a decision depends only on the observation, the
//! current phase, the clock, and the configuration.

use crate::metrics::{compute_metrics, EpisodeMetrics};
use crate::network::{FlowSpec, TrafficNetwork, PHASE_COUNT};
use crate::observer::{observe, IntersectionObservation, ObservationMode};
use crate::sim::{SimConfig, SimError, World};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    FixedTime,
    MaxPressure,
    EfficientMp,
    AdvancedMp,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::FixedTime => "fixedtime",
            ControllerKind::MaxPressure => "maxpressure",
            ControllerKind::EfficientMp => "efficientmp",
            ControllerKind::AdvancedMp => "advancedmp",
        }
    }

    pub fn parse(name: &str) -> Option<ControllerKind> {
        match name {
            "fixedtime" => Some(ControllerKind::FixedTime),
            "maxpressure" => Some(ControllerKind::MaxPressure),
            "efficientmp" => Some(ControllerKind::EfficientMp),
            "advancedmp" => Some(ControllerKind::AdvancedMp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Decision interval in seconds.
    pub t_duration: u32,
    /// Demand weight W1 for Advanced-MP.
    pub w1: f64,
    /// Green seconds per phase for FixedTime.
    pub fixed_split: [u32; 4],
    /// On pressure ties, stay on the current phase instead of jumping to the
    /// lowest index.
    pub prefer_current_on_tie: bool,
    /// Variant: exclude the current phase from max{p(s)} in the Advanced-MP
    /// keep condition. The literal rule includes it.
    pub exclude_current_in_max: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            t_duration: 15,
            w1: 1.0,
            fixed_split: [30; 4],
            prefer_current_on_tie: true,
            exclude_current_in_max: false,
        }
    }
}

/// Outcome of one controller query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub target: usize,
    pub keep_current: bool,
    pub diag: DecisionDiag,
}

/// What the controller compared when deciding, for logs and tests.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecisionDiag {
    /// max{p(s)} the decision compared against.
    pub max_pressure: f64,
    /// d(current) at decision time.
    pub current_demand: u32,
    /// d(current) * W1, the current phase's request.
    pub request_current: f64,
    /// Advanced-MP kept the phase because demand outweighed pressure.
    pub kept_by_demand: bool,
}

fn argmax_with_tie(values: &[f64], current: usize, prefer_current: bool) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if prefer_current && values[current] == max {
        return current;
    }
    values.iter().position(|&v| v == max).unwrap_or(0)
}

/// Phase by clock position within the fixed cycle.
pub fn fixed_time_decide(clock: u32, cfg: &ControllerConfig) -> Decision {
    let cycle: u32 = cfg.fixed_split.iter().sum();
    debug_assert!(cycle > 0 && cfg.fixed_split.iter().all(|&s| s > 0));
    let mut pos = clock % cycle;
    let mut target = PHASE_COUNT - 1;
    for (i, &span) in cfg.fixed_split.iter().enumerate() {
        if pos < span {
            target = i;
            break;
        }
        pos -= span;
    }
    Decision { target, keep_current: false, diag: DecisionDiag::default() }
}

/// Classic max-pressure: argmax over unaveraged queue-difference sums.
pub fn max_pressure_decide(obs: &IntersectionObservation, cfg: &ControllerConfig) -> Decision {
    let values: Vec<f64> = obs.classic_phase_pressure.iter().map(|&p| p as f64).collect();
    let target = argmax_with_tie(&values, obs.current_phase, cfg.prefer_current_on_tie);
    Decision {
        target,
        keep_current: target == obs.current_phase,
        diag: DecisionDiag { max_pressure: values[target], ..DecisionDiag::default() },
    }
}

/// Efficient-MP: argmax over lane-count-averaged phase pressures.
pub fn efficient_mp_decide(obs: &IntersectionObservation, cfg: &ControllerConfig) -> Decision {
    let target = argmax_with_tie(&obs.phase_pressure, obs.current_phase, cfg.prefer_current_on_tie);
    Decision {
        target,
        keep_current: target == obs.current_phase,
        diag: DecisionDiag { max_pressure: obs.phase_pressure[target], ..DecisionDiag::default() },
    }
}

/// Advanced-MP. The keep condition is strict: `d(current) * W1 > max{p(s)}`
/// maintains the phase, equality switches.
pub fn advanced_mp_decide(obs: &IntersectionObservation, current: usize, cfg: &ControllerConfig) -> Decision {
    let max_pressure = obs
        .phase_pressure
        .iter()
        .enumerate()
        .filter(|&(i, _)| !(cfg.exclude_current_in_max && i == current))
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    let demand = obs.phase_demand[current];
    let request = demand as f64 * cfg.w1;
    let diag = DecisionDiag {
        max_pressure,
        current_demand: demand,
        request_current: request,
        kept_by_demand: request > max_pressure,
    };
    if request > max_pressure {
        return Decision { target: current, keep_current: true, diag };
    }
    let target = argmax_with_tie(&obs.phase_pressure, current, cfg.prefer_current_on_tie);
    Decision { target, keep_current: target == current, diag }
}

/// A controller instance: kind plus configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalController {
    pub kind: ControllerKind,
    pub config: ControllerConfig,
}

impl SignalController {
    pub fn new(kind: ControllerKind, config: ControllerConfig) -> Self {
        SignalController { kind, config }
    }

    pub fn decide(&self, clock: u32, obs: &IntersectionObservation) -> Decision {
        match self.kind {
            ControllerKind::FixedTime => fixed_time_decide(clock, &self.config),
            ControllerKind::MaxPressure => max_pressure_decide(obs, &self.config),
            ControllerKind::EfficientMp => efficient_mp_decide(obs, &self.config),
            ControllerKind::AdvancedMp => advanced_mp_decide(obs, obs.current_phase, &self.config),
        }
    }
}

/// One decided command, for decision-sequence comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecisionRecord {
    pub clock: u32,
    pub signal: u32,
    pub target: usize,
}

/// A finished episode: metrics plus the full decision log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub metrics: EpisodeMetrics,
    pub decisions: Vec<DecisionRecord>,
    pub final_digest: u64,
}

/// Runs one controller over a full episode. Every `t_duration` seconds each
/// intersection is queried with a fresh observation; the decision clock is
/// not paused by yellow/all-red transitions. The decision at t = 0 sets the
/// initial phase directly (no transition).
pub fn run_policy(
    net: Arc<TrafficNetwork>,
    flow: &FlowSpec,
    controller: &SignalController,
    sim_cfg: &SimConfig,
) -> Result<EpisodeRun, SimError> {
    run_policy_traced(net, flow, controller, sim_cfg, |_| {})
}

/// [`run_policy`] with a per-tick hook over the world state, for trace and
/// observation dumps.
pub fn run_policy_traced(
    net: Arc<TrafficNetwork>,
    flow: &FlowSpec,
    controller: &SignalController,
    sim_cfg: &SimConfig,
    mut on_tick: impl FnMut(&World),
) -> Result<EpisodeRun, SimError> {
    let mut world = World::new(net, flow, *sim_cfg)?;
    let n = world.signal_count();
    let t_duration = controller.config.t_duration.max(1);
    let horizon = sim_cfg.horizon;
    let mut decisions = Vec::new();
    let mut queue_series = Vec::with_capacity(horizon as usize);

    for t in 0..horizon {
        let commands: Vec<Option<usize>> = if t % t_duration == 0 {
            let mut cmds = Vec::with_capacity(n);
            for si in 0..n {
                let node = world.signal_node(si);
                let obs = observe(&world, node, t_duration, ObservationMode::Default);
                let d = controller.decide(t, &obs);
                decisions.push(DecisionRecord { clock: t, signal: si as u32, target: d.target });
                cmds.push(Some(d.target));
            }
            cmds
        } else {
            Vec::new()
        };
        if t == 0 {
            for (si, cmd) in commands.iter().enumerate() {
                if let Some(p) = *cmd {
                    world.set_initial_phase(si, p)?;
                }
            }
            world.step(&[])?;
        } else {
            world.step(&commands)?;
        }
        queue_series.push(world.total_queue());
        on_tick(&world);
    }

    let mut metrics = compute_metrics(world.departed(), &world.unfinished_entry_times(), horizon);
    metrics.injected = world.counts().injected;
    metrics.queue_series = queue_series;
    metrics.seed = sim_cfg.seed;
    metrics.config_hash = crate::hash::fingerprint(&format!(
        "{}|{}|{}",
        controller.kind.name(),
        serde_json::to_string(&controller.config).unwrap(),
        serde_json::to_string(sim_cfg).unwrap()
    ));
    Ok(EpisodeRun { metrics, decisions, final_digest: world.state_digest() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_grid, generate_poisson_flow, GridSpec, PoissonFlowConfig};

    fn obs_with(pressures: [f64; 4], classic: [i64; 4], demand: [u32; 4], current: usize) -> IntersectionObservation {
        IntersectionObservation {
            node: 0,
            current_phase: current,
            phase_elapsed: 0,
            movements: Vec::new(),
            phase_pressure: pressures.to_vec(),
            classic_phase_pressure: classic.to_vec(),
            phase_demand: demand.to_vec(),
            intersection_pressure: 0,
            incoming_queue: 0,
        }
    }

    #[test]
    fn fixed_time_walks_the_split() {
        let cfg = ControllerConfig { fixed_split: [30, 30, 30, 30], ..Default::default() };
        assert_eq!(fixed_time_decide(0, &cfg).target, 0);
        assert_eq!(fixed_time_decide(95, &cfg).target, 3);
        assert_eq!(fixed_time_decide(120, &cfg).target, 0);
    }

    #[test]
    fn max_pressure_takes_argmax() {
        let cfg = ControllerConfig::default();
        let obs = obs_with([0.0; 4], [0, 0, 0, 0], [0; 4], 0);
        assert_eq!(max_pressure_decide(&obs, &cfg).target, 0);
        let obs = obs_with([0.0; 4], [1, 5, 2, 0], [0; 4], 0);
        assert_eq!(max_pressure_decide(&obs, &cfg).target, 1);
        let obs = obs_with([0.0; 4], [10, 50, 20, 0], [0; 4], 0);
        assert_eq!(max_pressure_decide(&obs, &cfg).target, 1, "argmax is scale invariant");
    }

    #[test]
    fn efficient_mp_tie_breaks_low() {
        let cfg = ControllerConfig::default();
        let obs = obs_with([1.5, 1.5, 0.0, 0.0], [0; 4], [0; 4], 2);
        assert_eq!(efficient_mp_decide(&obs, &cfg).target, 0);
        let obs = obs_with([-1.0, 0.5, 0.0, 0.0], [0; 4], [0; 4], 0);
        assert_eq!(efficient_mp_decide(&obs, &cfg).target, 1);
        let obs = obs_with([0.0; 4], [0; 4], [0; 4], 0);
        assert_eq!(efficient_mp_decide(&obs, &cfg).target, 0);
    }

    #[test]
    fn advanced_mp_keep_condition_is_strict() {
        let cfg = ControllerConfig { w1: 1.0, ..Default::default() };
        // No demand: greedy step to the max-pressure phase.
        let obs = obs_with([0.0, 3.0, 1.0, 0.0], [0; 4], [0, 0, 0, 0], 0);
        let d = advanced_mp_decide(&obs, 0, &cfg);
        assert_eq!(d.target, 1);
        assert!(!d.diag.kept_by_demand);
        // 4 * 1.0 > 3.0: maintained.
        let obs = obs_with([0.0, 3.0, 1.0, 0.0], [0; 4], [4, 0, 0, 0], 0);
        let d = advanced_mp_decide(&obs, 0, &cfg);
        assert_eq!(d.target, 0);
        assert!(d.keep_current);
        assert!(d.diag.kept_by_demand);
        // 3 * 1.0 == 3.0: strict comparison, must switch to the argmax.
        let obs = obs_with([0.0, 3.0, 1.0, 0.0], [0; 4], [3, 0, 0, 0], 0);
        let d = advanced_mp_decide(&obs, 0, &cfg);
        assert_eq!(d.target, 1);
        assert!(!d.diag.kept_by_demand);
    }

    #[test]
    fn advanced_mp_prefers_current_among_tied_maxima() {
        let cfg = ControllerConfig { w1: 1.0, ..Default::default() };
        let obs = obs_with([2.0, 2.0, 0.0, 0.0], [0; 4], [0; 4], 1);
        assert_eq!(advanced_mp_decide(&obs, 1, &cfg).target, 1);
        let obs = obs_with([2.0, 2.0, 0.0, 0.0], [0; 4], [0; 4], 3);
        assert_eq!(advanced_mp_decide(&obs, 3, &cfg).target, 0);
    }

    #[test]
    fn decisions_are_pure() {
        let cfg = ControllerConfig::default();
        let obs = obs_with([0.5, 3.0, -1.0, 0.0], [1, 4, 0, 2], [2, 0, 1, 0], 2);
        let ctrl = SignalController::new(ControllerKind::AdvancedMp, cfg);
        assert_eq!(ctrl.decide(30, &obs), ctrl.decide(30, &obs));
    }

    #[test]
    fn empty_episode_has_empty_metrics() {
        let net = Arc::new(
            generate_grid(&GridSpec {
                rows: 1,
                cols: 1,
                ew_length: 200.0,
                ns_length: 200.0,
                lanes_per_road: 3,
                max_speed: 11.11,
            })
            .unwrap(),
        );
        let ctrl = SignalController::new(ControllerKind::EfficientMp, ControllerConfig::default());
        let cfg = SimConfig { horizon: 120, ..Default::default() };
        let run = run_policy(net, &FlowSpec::default(), &ctrl, &cfg).unwrap();
        assert!(run.metrics.empty);
        assert_eq!(run.metrics.throughput, 0);
    }

    #[test]
    fn same_seed_same_metrics() {
        let net = Arc::new(
            generate_grid(&GridSpec {
                rows: 1,
                cols: 1,
                ew_length: 250.0,
                ns_length: 250.0,
                lanes_per_road: 3,
                max_speed: 11.11,
            })
            .unwrap(),
        );
        let flow = generate_poisson_flow(&net, &PoissonFlowConfig::new(0.08, 400.0, 9)).unwrap();
        let ctrl = SignalController::new(ControllerKind::AdvancedMp, ControllerConfig::default());
        let cfg = SimConfig { horizon: 400, seed: 9, ..Default::default() };
        let a = run_policy(net.clone(), &flow, &ctrl, &cfg).unwrap();
        let b = run_policy(net, &flow, &ctrl, &cfg).unwrap();
        assert_eq!(a.final_digest, b.final_digest);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.decisions, b.decisions);
    }
}
