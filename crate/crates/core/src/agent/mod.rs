//! Q-learning engine: ε-greedy control, TD targets, losses, AdamW, target
//! synchronization, the adaptive loss selector and the training loop.

mod optim;
mod selector;
mod train;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::QNetwork;
use crate::nn::ForwardCtx;
use crate::replay::Observation;
use crate::tensor::{no_grad, Tensor};

pub use optim::{clip_grad_norm, AdamW};
pub use selector::{LossSelector, SelectorRule, SwitchEvent};
pub use train::{
    eval_seed, evaluate, evaluate_with, train, CollectSink, LearnOutcome, MetricsRow, MetricsSink, TrainState,
    TrainSummary,
};

/// Requested loss behaviour.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Huber,
    Mse,
    /// Start with Huber and let [`LossSelector`] switch online.
    #[default]
    Auto,
}

/// The loss actually applied at a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Huber,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Huber => "huber",
            LossKind::Mse => "mse",
        })
    }
}

/// Which buffer feeds the learning step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    #[default]
    Flat,
    /// Non-overlapping windows of `seq_len` steps; minibatches are flattened.
    Sequence,
}

fn d_lr() -> f64 {
    1e-4
}
fn d_gamma() -> f64 {
    0.99
}
fn d_batch() -> usize {
    32
}
fn d_capacity() -> usize {
    1_000_000
}
fn d_sync() -> usize {
    500
}
fn d_episodes() -> usize {
    10_000
}
fn d_eps_start() -> f64 {
    1.0
}
fn d_eps_end() -> f64 {
    0.1
}
fn d_wd() -> f64 {
    0.01
}
fn d_delta() -> f64 {
    1.0
}
fn d_eval_period() -> usize {
    500
}
fn d_eval_episodes() -> usize {
    5
}
fn d_window() -> usize {
    500
}
fn d_flat() -> f64 {
    1e-3
}
fn d_volatile() -> f64 {
    5.0
}
fn d_warmup() -> usize {
    1000
}
fn d_clip() -> f64 {
    10.0
}
fn d_seq_len() -> usize {
    8
}
fn d_one() -> usize {
    1
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_adam_eps() -> f64 {
    1e-8
}

/// Learning hyperparameters. Defaults follow the published DCQN setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_capacity")]
    pub replay_capacity: usize,
    /// Environment steps between target-network copies.
    #[serde(default = "d_sync")]
    pub target_sync: usize,
    #[serde(default = "d_episodes")]
    pub episodes: usize,
    #[serde(default = "d_eps_start")]
    pub epsilon_start: f64,
    #[serde(default = "d_eps_end")]
    pub epsilon_end: f64,
    /// Episodes over which ε reaches `epsilon_end`; defaults to `episodes`.
    #[serde(default)]
    pub epsilon_decay_episodes: Option<usize>,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub loss: LossMode,
    #[serde(default = "d_delta")]
    pub huber_delta: f64,
    #[serde(default = "d_eval_period")]
    pub eval_period: usize,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "d_window")]
    pub selector_window: usize,
    #[serde(default = "d_flat")]
    pub selector_flat: f64,
    #[serde(default = "d_volatile")]
    pub selector_volatile: f64,
    /// Stored transitions required before learning starts (at least `batch_size`).
    #[serde(default = "d_warmup")]
    pub warmup: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub replay: ReplayMode,
    #[serde(default = "d_seq_len")]
    pub seq_len: usize,
    /// Environment steps between learning steps.
    #[serde(default = "d_one")]
    pub update_period: usize,
    /// End training once a periodic evaluation reaches this average reward.
    #[serde(default)]
    pub stop_at_eval_reward: Option<f64>,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_adam_eps")]
    pub adam_eps: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl AgentConfig {
    pub fn decay_episodes(&self) -> usize {
        self.epsilon_decay_episodes.unwrap_or(self.episodes)
    }

    pub fn decay_rate(&self) -> f64 {
        decay_rate(self.epsilon_start, self.epsilon_end, self.decay_episodes())
    }

    pub fn effective_warmup(&self) -> usize {
        self.warmup.max(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("agent.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("agent.gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.epsilon_end > 0.0 && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return fail(format!(
                "agent.epsilon_start/epsilon_end need 0 < end ≤ start ≤ 1, got start {} end {}",
                self.epsilon_start, self.epsilon_end
            ));
        }
        let positive = [
            ("agent.batch_size", self.batch_size),
            ("agent.target_sync", self.target_sync),
            ("agent.episodes", self.episodes),
            ("agent.eval_period", self.eval_period),
            ("agent.eval_episodes", self.eval_episodes),
            ("agent.selector_window", self.selector_window),
            ("agent.seq_len", self.seq_len),
            ("agent.update_period", self.update_period),
            ("agent.epsilon_decay_episodes", self.decay_episodes()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.replay_capacity < self.batch_size {
            return fail(format!(
                "agent.replay_capacity ({}) must be at least agent.batch_size ({})",
                self.replay_capacity, self.batch_size
            ));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return fail(format!("agent.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.huber_delta > 0.0) {
            return fail(format!("agent.huber_delta must be positive, got {}", self.huber_delta));
        }
        if !(self.selector_flat > 0.0 && self.selector_volatile > 0.0) {
            return fail("agent.selector_flat and agent.selector_volatile must be positive".into());
        }
        if self.grad_clip < 0.0 {
            return fail(format!("agent.grad_clip must be non-negative, got {}", self.grad_clip));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return fail("agent.adam_beta1/adam_beta2 must lie in [0, 1) and agent.adam_eps be positive".into());
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy action for one observation (running batch-norm statistics, no dropout).
pub fn greedy_action(net: &QNetwork, obs: &Observation) -> Result<usize> {
    let q = no_grad(|| net.forward(&obs.to_tensor()?, &mut ForwardCtx::eval()))?;
    let best = argmax(&q.data());
    Ok(best)
}

/// ε-greedy: one uniform draw decides exploration; exploring draws a uniform action.
pub fn select_action(net: &QNetwork, obs: &Observation, epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..net.actions()))
    } else {
        greedy_action(net, obs)
    }
}

/// Per-episode multiplier taking `start` to `end` in `n` decays.
pub fn decay_rate(start: f64, end: f64, n: usize) -> f64 {
    (end / start).powf(1.0 / n as f64)
}

pub fn decay_epsilon(epsilon: f64, end: f64, rate: f64) -> f64 {
    (epsilon * rate).max(end)
}

/// `r + γ(1 − done)·maxQ'` elementwise.
pub fn td_values(rewards: &[f64], dones: &[f64], max_next: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(max_next)
        .map(|((r, d), m)| r + gamma * (1.0 - d) * m)
        .collect()
}

/// Bellman targets `[k]` from the target network. Runs without recording a
/// graph, so nothing flows back into the target parameters.
pub fn td_target(rewards: &Tensor, dones: &Tensor, next_states: &Tensor, target: &QNetwork, gamma: f64) -> Result<Tensor> {
    no_grad(|| {
        let q = target.forward(next_states, &mut ForwardCtx::target())?;
        let max_next = q.max_rows()?;
        Tensor::new(&[max_next.len()], td_values(&rewards.data(), &dones.data(), &max_next, gamma))
    })
}

pub fn huber_value(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * (e.abs() - 0.5 * delta)
    }
}

/// Mean Huber or squared error between `pred` and `target`.
pub fn compute_loss(pred: &Tensor, target: &Tensor, kind: LossKind, delta: f64) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::shape("loss", format!("prediction {} vs target {}", pred.shape(), target.shape())));
    }
    if pred.data().iter().chain(target.data().iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value reached the loss".into()));
    }
    let err = pred.sub(target)?;
    Ok(match kind {
        LossKind::Huber => err.huber(delta).mean(),
        LossKind::Mse => err.square().mean(),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn defaults_match_published_setup() {
        let c = AgentConfig::default();
        assert_eq!((c.learning_rate, c.gamma, c.batch_size, c.replay_capacity, c.target_sync), (1e-4, 0.99, 32, 1_000_000, 500));
        assert_eq!((c.eval_period, c.eval_episodes, c.episodes), (500, 5, 10_000));
        c.validate().unwrap();
    }

    #[test]
    fn validation_names_fields() {
        let c = AgentConfig { gamma: 0.0, ..AgentConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("agent.gamma"));
        let c = AgentConfig { epsilon_end: 0.0, ..AgentConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("epsilon"));
        let c = AgentConfig { target_sync: 0, ..AgentConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("agent.target_sync"));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }

    #[test]
    fn decay_schedule() {
        let rate = decay_rate(1.0, 0.1, 10_000);
        // 0.1^(1/10000) to 20 digits: 0.99976976799815658635
        assert!((rate - 0.999_769_767_998_156_6).abs() < 1e-15);
        let mut eps = 1.0;
        for _ in 0..10_000 {
            eps = decay_epsilon(eps, 0.1, rate);
        }
        assert!((eps - 0.1).abs() < 1e-9);
        assert_eq!(decay_epsilon(0.1, 0.1, rate), 0.1);
    }

    #[test]
    fn td_arithmetic() {
        assert_eq!(td_values(&[1.0], &[1.0], &[5.0], 0.99), vec![1.0]);
        assert_eq!(td_values(&[1.0], &[0.0], &[5.0], 0.0), vec![1.0]);
        assert!((td_values(&[1.0], &[0.0], &[2.0], 0.99)[0] - 2.98).abs() < 1e-15);
    }

    #[test]
    fn loss_closed_forms() {
        assert_eq!(huber_value(0.5, 1.0), 0.125);
        assert_eq!(huber_value(2.0, 1.0), 1.5);
        let p = Tensor::new(&[2], vec![2.0, 0.0]).unwrap();
        let y = Tensor::zeros(&[2]).unwrap();
        assert_eq!(compute_loss(&p, &y, LossKind::Mse, 1.0).unwrap().item().unwrap(), 2.0);
        assert_eq!(compute_loss(&p, &y, LossKind::Huber, 1.0).unwrap().item().unwrap(), 0.75);
        let bad = Tensor::new(&[2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(compute_loss(&bad, &y, LossKind::Mse, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let cfg = crate::models::ModelConfig {
            frame_size: 8,
            frames: 1,
            conv: vec![crate::models::ConvSpec::new(2, 4, 4)],
            fc: vec![4, 4],
            ..crate::models::ModelConfig::new(crate::models::Variant::Dcqn, 4)
        };
        let net = QNetwork::new(&cfg).unwrap();
        let f: crate::replay::Frame = vec![0.0; 64].into();
        let obs = Observation::new(vec![f]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[select_action(&net, &obs, 1.0, &mut rng).unwrap()] += 1;
        }
        // 3σ of Binomial(10⁴, 1/4) ≈ 130.
        assert!(counts.iter().all(|&c| (c as f64 - 2500.0).abs() <= 3.0 * 1875f64.sqrt()), "{counts:?}");
        let g = greedy_action(&net, &obs).unwrap();
        assert!((0..20).all(|_| select_action(&net, &obs, 0.0, &mut rng).unwrap() == g));
    }
}
