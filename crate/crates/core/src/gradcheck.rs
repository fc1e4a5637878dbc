//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward function, so it is an
//! independent check of every backward closure reachable from the loss.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{ModelConfig, QNetwork};
use crate::nn::{ForwardCtx, Module};
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per tensor; `None` checks every coordinate.
    pub coords_per_tensor: Option<usize>,
    /// Gradients smaller than this in magnitude are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            coords_per_tensor: None,
            abs_floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: Option<String>,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward-pass gradients of `loss` against central differences
/// for every named tensor in `params`.
pub fn check_gradients(
    params: &[(String, Tensor)],
    loss: impl Fn() -> Result<Tensor>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    for (_, p) in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eval = || -> Result<f64> { no_grad(|| loss()?.item()) };
    let mut report = GradCheckReport::default();
    for ((name, p), grad) in params.iter().zip(&analytic) {
        let n = p.numel();
        let coords: Vec<usize> = match opts.coords_per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + opts.step;
            let up = eval()?;
            p.data_mut()[i] = orig - opts.step;
            let down = eval()?;
            p.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(grad[i], numeric, opts.abs_floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(format!("{name}[{i}]"));
            }
        }
        p.zero_grad();
    }
    Ok(report)
}

/// Checks a whole network on a random `[batch×F×S×S]` input. The loss is a
/// fixed random projection of the Q-values; batch norm uses batch statistics
/// without touching running ones, and dropout is off.
pub fn check_network(cfg: &ModelConfig, batch: usize, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let net = QNetwork::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let s = cfg.frame_size;
    let n = batch * cfg.frames * s * s;
    let input = Tensor::new(&[batch, cfg.frames, s, s], (0..n).map(|_| rng.random::<f64>()).collect())?;
    let weights = Tensor::new(
        &[batch, cfg.actions],
        (0..batch * cfg.actions).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let loss = || -> Result<Tensor> {
        let q = net.forward(&input, &mut ForwardCtx::target())?;
        Ok(q.mul(&weights)?.sum())
    };
    check_gradients(&net.parameters(), loss, opts)
}
