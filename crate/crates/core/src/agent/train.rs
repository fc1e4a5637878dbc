use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    clip_grad_norm, compute_loss, decay_epsilon, greedy_action, select_action, td_target, AdamW, AgentConfig,
    LossKind, LossSelector, ReplayMode, SwitchEvent,
};
use crate::envs::{preprocess_values, EnvKind, FrameStack, CROP};
use crate::error::{Error, Result};
use crate::models::checkpoint::Checkpoint;
use crate::models::{ModelConfig, QNetwork};
use crate::nn::{ForwardCtx, Module};
use crate::replay::{Observation, SequenceRecord, SequenceReplay, Transition, TransitionBatch, UniformReplay};
use crate::tensor::Tensor;

/// One line of the per-episode log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub total_reward: f64,
    /// Mean loss over the episode's learning steps; `None` before learning starts.
    pub mean_loss: Option<f64>,
    /// ε used during the episode.
    pub epsilon: f64,
    pub steps: usize,
    /// Seconds spent stepping and preprocessing the environment.
    pub env_time_s: f64,
    /// Mean wall time of a learning step, when any ran.
    pub step_time_ms: Option<f64>,
    pub eval_avg_reward: Option<f64>,
    pub loss_mode: LossKind,
}

/// Receives training output as it happens.
pub trait MetricsSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()>;

    fn loss_switch(&mut self, _event: &SwitchEvent) -> Result<()> {
        Ok(())
    }

    /// Called after every evaluation and once at the end (`last = true`).
    fn checkpoint(&mut self, _state: &TrainState, _episode: usize, _last: bool) -> Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory.
#[derive(Default, Debug)]
pub struct CollectSink {
    pub rows: Vec<MetricsRow>,
    pub switches: Vec<SwitchEvent>,
    pub checkpoints: Vec<usize>,
}

impl MetricsSink for CollectSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }

    fn loss_switch(&mut self, event: &SwitchEvent) -> Result<()> {
        self.switches.push(event.clone());
        Ok(())
    }

    fn checkpoint(&mut self, _state: &TrainState, episode: usize, _last: bool) -> Result<()> {
        self.checkpoints.push(episode);
        Ok(())
    }
}

/// Everything the learner mutates.
pub struct TrainState {
    pub policy: QNetwork,
    pub target: QNetwork,
    pub optimizer: AdamW,
    params: Vec<Tensor>,
    pub global_step: u64,
    pub learn_steps: u64,
    pub episode: usize,
    pub epsilon: f64,
    pub selector: LossSelector,
}

/// Result of one learning step.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnOutcome {
    /// `None` when the loss was non-finite and the update was skipped.
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub switch: Option<SwitchEvent>,
}

impl TrainState {
    pub fn new(agent: &AgentConfig, model: &ModelConfig) -> Result<Self> {
        let policy = QNetwork::new(model)?;
        let target = policy.duplicate()?;
        let params = policy.parameters().into_iter().map(|(_, t)| t).collect();
        Ok(TrainState {
            policy,
            target,
            optimizer: AdamW::new(agent.learning_rate, agent.weight_decay).with_betas(
                agent.adam_beta1,
                agent.adam_beta2,
                agent.adam_eps,
            ),
            params,
            global_step: 0,
            learn_steps: 0,
            episode: 0,
            epsilon: agent.epsilon_start,
            selector: LossSelector::new(agent.loss, agent.selector_window, agent.selector_flat, agent.selector_volatile),
        })
    }

    /// Copies every policy parameter and buffer into the target network.
    pub fn sync_target(&self) -> Result<()> {
        self.target.copy_from(&self.policy)
    }

    /// One TD update on `batch`.
    pub fn learn(&mut self, batch: &TransitionBatch, cfg: &AgentConfig) -> Result<LearnOutcome> {
        self.learn_steps += 1;
        let mut ctx = ForwardCtx::train(self.learn_steps);
        let q = self.policy.forward(&batch.states, &mut ctx)?;
        let pred = q.gather_rows(&batch.actions)?;
        let y = td_target(&batch.rewards, &batch.dones, &batch.next_states, &self.target, cfg.gamma)?;
        let loss = match compute_loss(&pred, &y, self.selector.current(), cfg.huber_delta) {
            Ok(l) if l.item()?.is_finite() => l,
            Ok(_) | Err(Error::Numeric(_)) => {
                let switch = self.selector.observe(f64::NAN);
                return Ok(LearnOutcome { loss: None, grad_norm: None, switch });
            }
            Err(e) => return Err(e),
        };
        let value = loss.item()?;
        loss.backward()?;
        let norm = clip_grad_norm(&self.params, cfg.grad_clip);
        if norm.is_finite() {
            self.optimizer.step(&self.params)?;
        }
        self.policy.zero_grad();
        let switch = self.selector.observe(if norm.is_finite() { value } else { f64::NAN });
        Ok(LearnOutcome { loss: Some(value), grad_norm: Some(norm), switch })
    }

    /// Policy weights, running statistics, optimizer moments and counters.
    pub fn checkpoint(&self) -> Checkpoint {
        let (m, v) = self.optimizer.moments();
        let names: Vec<String> = self.policy.parameters().into_iter().map(|(n, _)| n).collect();
        let mut extras = Vec::new();
        for (i, name) in names.iter().enumerate() {
            if let (Some(m), Some(v)) = (m.get(i), v.get(i)) {
                extras.push((format!("adam.m.{name}"), vec![m.len()], m.clone()));
                extras.push((format!("adam.v.{name}"), vec![v.len()], v.clone()));
            }
        }
        Checkpoint::capture(
            &self.policy,
            &extras,
            serde_json::json!({
                "episode": self.episode,
                "global_step": self.global_step,
                "learn_steps": self.learn_steps,
                "adam_step": self.optimizer.steps(),
                "epsilon": self.epsilon,
                "loss_mode": self.selector.current(),
            }),
        )
    }
}

/// Seed for the `index`-th periodic evaluation.
pub fn eval_seed(base: u64, index: u64) -> u64 {
    base ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1)
}

/// Plays `episodes` episodes with `policy` choosing actions from the frame
/// stack; the environment is seeded once with `seed`. Returns the mean
/// episode reward.
pub fn evaluate_with(
    kind: EnvKind,
    frames: usize,
    episodes: usize,
    seed: u64,
    policy: &mut dyn FnMut(&Observation) -> Result<usize>,
) -> Result<f64> {
    let mut env = kind.build(seed);
    let mut stack = FrameStack::new(frames)?;
    let mut total = 0.0;
    for i in 0..episodes {
        let raw = env.reset(if i == 0 { Some(seed) } else { None });
        let mut obs = stack.reset(preprocess_values(&raw)?);
        loop {
            let step = env.step(policy(&obs)?)?;
            total += step.reward;
            if step.done {
                break;
            }
            obs = stack.push(preprocess_values(&step.frame)?)?;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Greedy (ε = 0) average reward of `net`.
pub fn evaluate(net: &QNetwork, kind: EnvKind, episodes: usize, seed: u64) -> Result<f64> {
    evaluate_with(kind, net.config().frames, episodes, seed, &mut |obs| greedy_action(net, obs))
}

/// Outcome of [`train`].
#[derive(Debug)]
pub struct TrainSummary {
    pub state: TrainState,
    pub episodes_run: usize,
    /// `(episode, average reward)` for every periodic evaluation.
    pub evaluations: Vec<(usize, f64)>,
    pub stopped_early: bool,
}

impl std::fmt::Debug for TrainState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainState")
            .field("global_step", &self.global_step)
            .field("learn_steps", &self.learn_steps)
            .field("episode", &self.episode)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

/// Experience store for the configured replay mode.
enum Memory {
    Flat(UniformReplay),
    Sequence { buffer: SequenceReplay, window: Vec<Transition>, seq_len: usize },
}

impl Memory {
    fn new(cfg: &AgentConfig, model: &ModelConfig) -> Result<Self> {
        let frame_len = CROP * CROP;
        Ok(match cfg.replay {
            ReplayMode::Flat => Memory::Flat(UniformReplay::new(cfg.replay_capacity, model.frames, frame_len, model.actions)?),
            ReplayMode::Sequence => {
                let l = cfg.seq_len;
                let batch = (cfg.batch_size / l).max(1);
                let capacity = (cfg.replay_capacity / l).max(batch);
                Memory::Sequence {
                    buffer: SequenceReplay::new(capacity, &[model.frames, CROP, CROP], batch, l)?,
                    window: Vec::with_capacity(l),
                    seq_len: l,
                }
            }
        })
    }

    fn push(&mut self, t: Transition) -> Result<()> {
        match self {
            Memory::Flat(buf) => buf.push(t),
            Memory::Sequence { buffer, window, seq_len } => {
                window.push(t);
                if window.len() == *seq_len {
                    buffer.push(SequenceRecord::from_transitions(window)?)?;
                    window.clear();
                }
                Ok(())
            }
        }
    }

    /// Drops a partial window at an episode boundary.
    fn end_episode(&mut self) {
        if let Memory::Sequence { window, .. } = self {
            window.clear();
        }
    }

    fn transitions(&self) -> usize {
        match self {
            Memory::Flat(buf) => buf.len(),
            Memory::Sequence { buffer, seq_len, .. } => buffer.len() * *seq_len,
        }
    }

    fn ready(&self, cfg: &AgentConfig) -> bool {
        match self {
            Memory::Flat(buf) => buf.len() >= cfg.effective_warmup(),
            Memory::Sequence { buffer, .. } => {
                self.transitions() >= cfg.effective_warmup() && buffer.len() >= buffer.batch_size()
            }
        }
    }

    fn sample(&self, cfg: &AgentConfig, rng: &mut ChaCha8Rng) -> Result<TransitionBatch> {
        match self {
            Memory::Flat(buf) => buf.sample(cfg.batch_size, rng),
            Memory::Sequence { buffer, .. } => {
                let sb = buffer.sample(rng)?;
                let d = sb.states.dims().to_vec();
                let mut flat = vec![d[0] * d[1]];
                flat.extend_from_slice(&d[2..]);
                Ok(TransitionBatch {
                    states: Tensor::new(&flat, sb.states.to_vec())?,
                    actions: sb.actions,
                    rewards: Tensor::new(&[flat[0]], sb.rewards.to_vec())?,
                    next_states: Tensor::new(&flat, sb.next_states.to_vec())?,
                    dones: Tensor::new(&[flat[0]], sb.dones.to_vec())?,
                })
            }
        }
    }
}

/// Runs the full ε-greedy training protocol.
///
/// Acting and replay sampling draw from one RNG seeded with `seed`; the
/// environment is seeded with `seed` on its first reset and then continues
/// its own stream. Evaluation `i` uses a fresh environment seeded with
/// [`eval_seed`]`(seed, i)`.
pub fn train(
    cfg: &AgentConfig,
    model: &ModelConfig,
    env_kind: EnvKind,
    seed: u64,
    sink: &mut dyn MetricsSink,
) -> Result<TrainSummary> {
    cfg.validate()?;
    model.validate()?;
    if model.actions != env_kind.action_count() {
        return Err(Error::Config(format!(
            "model.actions is {} but the {} environment has {} actions",
            model.actions,
            env_kind.name(),
            env_kind.action_count()
        )));
    }
    if model.frame_size != CROP {
        return Err(Error::Config(format!(
            "model.frame_size must be {CROP} to consume preprocessed frames, got {}",
            model.frame_size
        )));
    }

    let mut env = env_kind.build(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = TrainState::new(cfg, model)?;
    let mut memory = Memory::new(cfg, model)?;
    let mut stack = FrameStack::new(model.frames)?;
    let rate = cfg.decay_rate();
    let mut evaluations = Vec::new();
    let mut stopped_early = false;
    let mut episodes_run = 0;

    for episode in 1..=cfg.episodes {
        state.episode = episode;
        let raw = env.reset(if episode == 1 { Some(seed) } else { None });
        let mut obs = stack.reset(preprocess_values(&raw)?);
        let (mut total, mut steps, mut env_time) = (0.0, 0usize, 0.0f64);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let (mut learn_time, mut learn_n) = (0.0f64, 0usize);

        loop {
            let action = select_action(&state.policy, &obs, state.epsilon, &mut rng)?;
            let t0 = Instant::now();
            let step = env.step(action)?;
            let next = stack.push(preprocess_values(&step.frame)?)?;
            env_time += t0.elapsed().as_secs_f64();

            memory.push(Transition {
                state: obs,
                action,
                reward: step.reward,
                next_state: next.clone(),
                done: step.done,
            })?;
            state.global_step += 1;
            total += step.reward;
            steps += 1;

            if memory.ready(cfg) && state.global_step % cfg.update_period as u64 == 0 {
                let t1 = Instant::now();
                let batch = memory.sample(cfg, &mut rng)?;
                let out = state.learn(&batch, cfg)?;
                learn_time += t1.elapsed().as_secs_f64();
                learn_n += 1;
                if let Some(l) = out.loss {
                    loss_sum += l;
                    loss_n += 1;
                }
                if let Some(ev) = out.switch {
                    sink.loss_switch(&ev)?;
                }
            }
            if state.global_step % cfg.target_sync as u64 == 0 {
                state.sync_target()?;
            }
            if step.done {
                break;
            }
            obs = next;
        }
        memory.end_episode();

        let epsilon_used = state.epsilon;
        state.epsilon = decay_epsilon(state.epsilon, cfg.epsilon_end, rate);

        let mut eval_avg = None;
        if episode % cfg.eval_period == 0 {
            let index = (episode / cfg.eval_period - 1) as u64;
            let avg = evaluate(&state.policy, env_kind, cfg.eval_episodes, eval_seed(seed, index))?;
            evaluations.push((episode, avg));
            eval_avg = Some(avg);
        }
        sink.record(&MetricsRow {
            episode,
            total_reward: total,
            mean_loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
            epsilon: epsilon_used,
            steps,
            env_time_s: env_time,
            step_time_ms: (learn_n > 0).then(|| 1e3 * learn_time / learn_n as f64),
            eval_avg_reward: eval_avg,
            loss_mode: state.selector.current(),
        })?;
        episodes_run = episode;
        if let Some(avg) = eval_avg {
            if cfg.stop_at_eval_reward.is_some_and(|target| avg >= target) {
                stopped_early = true;
                break;
            }
            if episode != cfg.episodes {
                sink.checkpoint(&state, episode, false)?;
            }
        }
    }
    sink.checkpoint(&state, episodes_run, true)?;
    Ok(TrainSummary { state, episodes_run, evaluations, stopped_early })
}
