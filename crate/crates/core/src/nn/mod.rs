//! Layers shared by the Q-network architectures.

mod attention;
mod basic;
mod gated;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::tensor::{BatchNormMode, Tensor};

pub use attention::{AttentionPooling, MultiHeadAttention};
pub use basic::{BatchNorm2d, Conv2d, LayerNorm, Linear, PositionalEmbedding};
pub use gated::{GateMode, GatedEncoder, GatedTxlLayer};

/// Whether a visited tensor is trained or only carried along (running stats).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    Buffer,
}

/// Anything holding named tensors.
pub trait Module {
    /// Visits every tensor in a fixed order with its dotted name.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole));

    fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t, role| {
            if role == TensorRole::Param {
                out.push((name, t.clone()));
            }
        });
        out
    }

    /// Parameters followed by buffers, in visit order.
    fn state(&self) -> Vec<(String, Tensor, TensorRole)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t, role| out.push((name, t.clone(), role)));
        out
    }

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Per-forward settings: batch-norm statistics, dropout and its randomness.
pub struct ForwardCtx {
    pub batch_norm: BatchNormMode,
    pub dropout_active: bool,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    /// Learning-step forward: batch statistics, dropout on.
    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            batch_norm: BatchNormMode::Train,
            dropout_active: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Acting and evaluation: running statistics, no dropout.
    pub fn eval() -> Self {
        ForwardCtx {
            batch_norm: BatchNormMode::Eval,
            dropout_active: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Target-network forward: batch statistics without touching running ones.
    pub fn target() -> Self {
        ForwardCtx {
            batch_norm: BatchNormMode::TrainFrozen,
            dropout_active: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// Fan-in scaled uniform initialization, `U(±gain·√(3/fan_in))`.
/// `gain = √2` is the He variant used ahead of ReLUs.
pub fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, count: usize, gain: f64) -> Vec<f64> {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
}

pub(crate) const HE_GAIN: f64 = std::f64::consts::SQRT_2;
