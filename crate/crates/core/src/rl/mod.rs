//! Parameter-shared deep-Q signal control over the advanced traffic state.
//!
//! One Q-network serves every intersection. Each agent observes its current
//! phase (one-hot) plus the per-movement pair (efficient pressure, effective
//! running vehicles) and picks a phase every `t_duration` seconds. Training
//! is episode-wise: roll out with epsilon-greedy exploration, then take a
//! fixed number of replay-sampled gradient steps on the Bellman residual,
//! with a double-buffered target network.

mod qnet;

pub use qnet::{AdamState, QNetwork};

use crate::control::{DecisionRecord, EpisodeRun};
use crate::hash::fingerprint;
use crate::metrics::compute_metrics;
use crate::network::{FlowSpec, TrafficNetwork, MOVEMENTS_PER_INTERSECTION, PHASE_COUNT};
use crate::observer::{observe, IntersectionObservation, ObservationMode};
use crate::sim::{SimConfig, SimError, World};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Current phase one-hot (4) plus (pressure, running) per movement (24).
pub const FEATURE_LEN: usize = PHASE_COUNT + 2 * MOVEMENTS_PER_INTERSECTION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub features: Vec<f64>,
}

/// Builds the feature vector from an observation. ATS features are divided
/// by `normalization` (vehicles) before the forward pass; the one-hot part
/// is left as is.
pub fn build_agent_state(obs: &IntersectionObservation, normalization: f64) -> AgentState {
    let mut features = vec![0.0; FEATURE_LEN];
    features[obs.current_phase] = 1.0;
    for (mi, m) in obs.movements.iter().enumerate() {
        features[PHASE_COUNT + 2 * mi] = m.efficient_pressure / normalization;
        features[PHASE_COUNT + 2 * mi + 1] = m.effective_running as f64 / normalization;
    }
    AgentState { features }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AgentState,
    pub action: usize,
    pub reward: f64,
    pub next_state: AgentState,
    pub terminal: bool,
}

/// FIFO replay memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer { buf: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.buf[idx]
    }

    /// Uniform sample with replacement.
    pub fn sample_indices(&self, rng: &mut impl Rng, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.buf.len())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// r = -|P_i|, the intersection-pressure reward.
    #[default]
    Pressure,
    /// r = -sum of incoming queue lengths.
    Queue,
}

impl RewardMode {
    pub fn reward(self, obs: &IntersectionObservation) -> f64 {
        match self {
            RewardMode::Pressure => -(obs.intersection_pressure.abs() as f64),
            RewardMode::Queue => -(obs.incoming_queue as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative epsilon decay per episode.
    pub epsilon_decay: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub episodes: u32,
    /// Gradient steps per episode.
    pub train_steps_per_episode: u32,
    /// Sync the target network every this many gradient steps.
    pub target_sync: u64,
    pub reward_mode: RewardMode,
    /// ATS feature scale in vehicles.
    pub normalization: f64,
    pub hidden: [usize; 2],
    pub t_duration: u32,
    pub obs_mode: ObservationMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.8,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.9,
            replay_capacity: 10_000,
            batch_size: 32,
            episodes: 50,
            train_steps_per_episode: 60,
            target_sync: 100,
            reward_mode: RewardMode::Pressure,
            normalization: 20.0,
            hidden: [64, 64],
            t_duration: 15,
            obs_mode: ObservationMode::Default,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        vec![FEATURE_LEN, self.hidden[0], self.hidden[1], PHASE_COUNT]
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&serde_json::to_string(self).expect("config serializes"))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at train step {step}: {loss}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

/// Bellman target: r + gamma * max_a Q_target(s', a), or r alone on terminal
/// transitions.
pub fn bellman_target(t: &Transition, target_net: &QNetwork, gamma: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&gamma));
    if t.terminal {
        return t.reward;
    }
    let q = target_net.forward(&t.next_state.features);
    let max_q = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    t.reward + gamma * max_q
}

/// Epsilon-greedy action: uniform with probability epsilon, otherwise the
/// greedy phase (ties to the lowest index).
pub fn act(net: &QNetwork, state: &AgentState, epsilon: f64, rng: &mut impl Rng) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if epsilon > 0.0 && rng.gen_range(0.0..1.0) < epsilon {
        return rng.gen_range(0..PHASE_COUNT);
    }
    greedy(net, state)
}

pub fn greedy(net: &QNetwork, state: &AgentState) -> usize {
    let q = net.forward(&state.features);
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// One mean-squared-error gradient step on the sampled batch. The loss is
/// mean((Q(s,a) - y)^2) with y from the target network.
pub fn train_step(
    net: &mut QNetwork,
    target_net: &QNetwork,
    replay: &ReplayBuffer,
    batch_indices: &[usize],
    adam: &mut AdamState,
    cfg: &TrainConfig,
    step: u64,
) -> Result<f64, TrainError> {
    assert!(!batch_indices.is_empty(), "batch must be non-empty");
    let b = batch_indices.len() as f64;
    let mut grads = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    for &idx in batch_indices {
        let t = replay.get(idx);
        let y = bellman_target(t, target_net, cfg.gamma);
        let q = net.forward(&t.state.features);
        let err = q[t.action] - y;
        loss += err * err;
        let mut grad_out = vec![0.0; PHASE_COUNT];
        grad_out[t.action] = 2.0 * err / b;
        net.backward_into(&t.state.features, &grad_out, &mut grads);
    }
    loss /= b;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { step, loss });
    }
    adam.apply(&mut net.params, &grads, cfg.learning_rate);
    Ok(loss)
}

/// Per-episode training curve row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: u32,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub mean_loss: f64,
    pub eval_travel_time: f64,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct XLightOutcome {
    pub net: QNetwork,
    pub curve: Vec<CurvePoint>,
    /// Greedy evaluation with the final network.
    pub eval: EpisodeRun,
    /// Mean eval travel time over the last (up to) ten episodes, the
    /// reporting protocol for RL cells.
    pub last10_mean_travel_time: f64,
}

struct RolloutResult {
    run: EpisodeRun,
    mean_reward: f64,
}

/// Rolls one episode. Actions are epsilon-greedy from `rng`; transitions are
/// recorded when `replay` is given; `on_tick` sees the world after each step.
fn rollout(
    qnet: &QNetwork,
    net: &Arc<TrafficNetwork>,
    flow: &FlowSpec,
    cfg: &TrainConfig,
    sim_cfg: &SimConfig,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
    mut replay: Option<&mut ReplayBuffer>,
    mut on_tick: impl FnMut(&World),
) -> Result<RolloutResult, SimError> {
    let mut world = World::new(net.clone(), flow, *sim_cfg)?;
    let n = world.signal_count();
    let t_duration = cfg.t_duration.max(1);
    let mut decisions = Vec::new();
    let mut queue_series = Vec::with_capacity(sim_cfg.horizon as usize);
    let mut prev: Vec<Option<(AgentState, usize)>> = vec![None; n];
    let mut reward_sum = 0.0;
    let mut reward_count = 0u32;

    for t in 0..sim_cfg.horizon {
        let commands: Vec<Option<usize>> = if t % t_duration == 0 {
            let mut cmds = Vec::with_capacity(n);
            for si in 0..n {
                let node = world.signal_node(si);
                let obs = observe(&world, node, t_duration, cfg.obs_mode);
                let state = build_agent_state(&obs, cfg.normalization);
                if let (Some(replay), Some((ps, pa))) = (replay.as_deref_mut(), prev[si].take()) {
                    let reward = cfg.reward_mode.reward(&obs);
                    reward_sum += reward;
                    reward_count += 1;
                    replay.push(Transition {
                        state: ps,
                        action: pa,
                        reward,
                        next_state: state.clone(),
                        terminal: false,
                    });
                }
                let action = act(qnet, &state, epsilon, rng);
                decisions.push(DecisionRecord { clock: t, signal: si as u32, target: action });
                prev[si] = Some((state, action));
                cmds.push(Some(action));
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

    // Terminal transitions close each intersection's trajectory.
    if let Some(replay) = replay.as_deref_mut() {
        for si in 0..n {
            if let Some((ps, pa)) = prev[si].take() {
                let node = world.signal_node(si);
                let obs = observe(&world, node, t_duration, cfg.obs_mode);
                let reward = cfg.reward_mode.reward(&obs);
                reward_sum += reward;
                reward_count += 1;
                let state = build_agent_state(&obs, cfg.normalization);
                replay.push(Transition { state: ps, action: pa, reward, next_state: state, terminal: true });
            }
        }
    }

    let mut metrics = compute_metrics(world.departed(), &world.unfinished_entry_times(), sim_cfg.horizon);
    metrics.injected = world.counts().injected;
    metrics.queue_series = queue_series;
    metrics.seed = sim_cfg.seed;
    metrics.config_hash = cfg.fingerprint();
    Ok(RolloutResult {
        run: EpisodeRun { metrics, decisions, final_digest: world.state_digest() },
        mean_reward: if reward_count == 0 { 0.0 } else { reward_sum / reward_count as f64 },
    })
}

/// Greedy (epsilon = 0) evaluation of a trained network.
pub fn evaluate_policy(
    qnet: &QNetwork,
    net: &Arc<TrafficNetwork>,
    flow: &FlowSpec,
    cfg: &TrainConfig,
    sim_cfg: &SimConfig,
) -> Result<EpisodeRun, SimError> {
    evaluate_policy_traced(qnet, net, flow, cfg, sim_cfg, |_| {})
}

/// [`evaluate_policy`] with a per-tick hook for trace emission.
pub fn evaluate_policy_traced(
    qnet: &QNetwork,
    net: &Arc<TrafficNetwork>,
    flow: &FlowSpec,
    cfg: &TrainConfig,
    sim_cfg: &SimConfig,
    on_tick: impl FnMut(&World),
) -> Result<EpisodeRun, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim_cfg.seed);
    rollout(qnet, net, flow, cfg, sim_cfg, 0.0, &mut rng, None, on_tick).map(|r| r.run)
}

/// Trains the shared network: one epsilon-greedy rollout per episode, then
/// `train_steps_per_episode` gradient steps, then a greedy evaluation
/// episode feeding the training curve.
pub fn run_xlight(
    net: &Arc<TrafficNetwork>,
    flow: &FlowSpec,
    cfg: &TrainConfig,
    sim_cfg: &SimConfig,
) -> Result<XLightOutcome, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut qnet = QNetwork::new(&cfg.layer_sizes(), &mut rng);
    let mut target = qnet.clone();
    let mut adam = AdamState::new(qnet.params.len());
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut curve = Vec::with_capacity(cfg.episodes as usize);
    let mut steps = 0u64;

    for episode in 0..cfg.episodes {
        let epsilon = (cfg.epsilon_start * cfg.epsilon_decay.powi(episode as i32)).max(cfg.epsilon_end);
        let train_run =
            rollout(&qnet, net, flow, cfg, sim_cfg, epsilon, &mut rng, Some(&mut replay), |_| {})?;

        let mut loss_sum = 0.0;
        let mut loss_count = 0u32;
        for _ in 0..cfg.train_steps_per_episode {
            if replay.len() < cfg.batch_size {
                break;
            }
            let batch = replay.sample_indices(&mut rng, cfg.batch_size);
            loss_sum += train_step(&mut qnet, &target, &replay, &batch, &mut adam, cfg, steps)?;
            loss_count += 1;
            steps += 1;
            if steps % cfg.target_sync == 0 {
                target = qnet.clone();
            }
        }

        let eval = evaluate_policy(&qnet, net, flow, cfg, sim_cfg)?;
        curve.push(CurvePoint {
            episode,
            epsilon,
            mean_reward: train_run.mean_reward,
            mean_loss: if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 },
            eval_travel_time: eval.metrics.average_travel_time,
        });
    }

    let eval = evaluate_policy(&qnet, net, flow, cfg, sim_cfg)?;
    let tail = curve.iter().rev().take(10).map(|c| c.eval_travel_time).collect::<Vec<_>>();
    let last10 = if tail.is_empty() {
        eval.metrics.average_travel_time
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    Ok(XLightOutcome { net: qnet, curve, eval, last10_mean_travel_time: last10 })
}

/// Transfer report: travel-time ratio of a frozen policy on a target
/// scenario over a policy trained directly on that target with the same
/// budget and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferReport {
    pub ratio: f64,
    pub transfer_travel_time: f64,
    pub direct_travel_time: f64,
}

pub fn transfer_eval(
    trained: &QNetwork,
    target_net: &Arc<TrafficNetwork>,
    target_flow: &FlowSpec,
    cfg: &TrainConfig,
    sim_cfg: &SimConfig,
) -> Result<TransferReport, TrainError> {
    let transfer = evaluate_policy(trained, target_net, target_flow, cfg, sim_cfg)?;
    let direct = run_xlight(target_net, target_flow, cfg, sim_cfg)?;
    let direct_tt = direct.eval.metrics.average_travel_time;
    let transfer_tt = transfer.metrics.average_travel_time;
    Ok(TransferReport { ratio: transfer_tt / direct_tt, transfer_travel_time: transfer_tt, direct_travel_time: direct_tt })
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    sizes: Vec<usize>,
    params: Vec<f64>,
    config_hash: String,
}

const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(net: &QNetwork, config_hash: &str, path: &Path) -> Result<(), TrainError> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        sizes: net.sizes.clone(),
        params: net.params.clone(),
        config_hash: config_hash.to_string(),
    };
    std::fs::write(path, serde_json::to_string(&ck).expect("checkpoint serializes"))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(QNetwork, String), TrainError> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| TrainError::CheckpointFormat(e.to_string()))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(TrainError::CheckpointFormat(format!("unsupported version {}", ck.version)));
    }
    if ck.params.len() != QNetwork::param_count_for(&ck.sizes) {
        return Err(TrainError::CheckpointFormat("parameter count does not match sizes".into()));
    }
    Ok((QNetwork { sizes: ck.sizes, params: ck.params }, ck.config_hash))
}
