//! Shared fixtures for benchmarks.

use qforge::models::QNetwork;
use qforge::tensor::Tensor;
use qforge::{ModelConfig, Result, Variant};

/// A network at its default configuration plus a deterministic input batch.
pub struct Fixture {
    pub net: QNetwork,
    pub input: Tensor,
}

pub fn fixture(variant: Variant, batch: usize, actions: usize) -> Result<Fixture> {
    let cfg = ModelConfig::new(variant, actions);
    let net = QNetwork::new(&cfg)?;
    let s = cfg.frame_size;
    let n = batch * cfg.frames * s * s;
    let input = Tensor::new(&[batch, cfg.frames, s, s], (0..n).map(|i| (i % 251) as f64 / 251.0).collect())?;
    Ok(Fixture { net, input })
}
