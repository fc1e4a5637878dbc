//! Deep Q-learning with convolutional and gated-transformer Q-networks.
//!
//! The crate is self-contained: a small fp64 tensor engine with reverse-mode
//! differentiation ([`tensor`]), the layers built on it ([`nn`]), four
//! Q-network architectures ([`models`]), experience replay ([`replay`]),
//! pixel environments with Atari-style preprocessing ([`envs`]) and the
//! training/evaluation engine ([`agent`]).

pub mod agent;
pub mod config;
pub mod envs;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod replay;
pub mod tensor;

pub use agent::{AgentConfig, LossMode};
pub use config::RunConfig;
pub use envs::{EnvKind, Environment};
pub use error::{Error, Result};
pub use models::{ModelConfig, QNetwork, Variant};
pub use tensor::{Shape, Tensor};
