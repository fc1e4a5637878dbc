//! With zeroed gate weights every gate is σ(0) = 1/2, so in literal mode each
//! sublayer adds exactly 0.5 to the residual stream and the layer reduces to
//! `LN_out(X + 1)` regardless of what attention and the feed-forward produce.

use qforge::nn::{ForwardCtx, GateMode, GatedEncoder, GatedTxlLayer, Linear};
use qforge::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const E: usize = 6;

/// Row-wise layer norm written out longhand.
fn manual_layer_norm(x: &[f64], gain: &[f64], shift: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(E) {
        let mean = row.iter().sum::<f64>() / E as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / E as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for (j, v) in row.iter().enumerate() {
            out.push((v - mean) * inv * gain[j] + shift[j]);
        }
    }
    out
}

fn zeroed_layer(rng: &mut ChaCha8Rng) -> GatedTxlLayer {
    let mut layer = GatedTxlLayer::new(rng, E, 2, 10, 0.0, GateMode::Literal).unwrap();
    layer.gate_attn = Linear::zeros(2 * E, E).unwrap();
    layer.gate_ff = Linear::zeros(2 * E, E).unwrap();
    *layer.norm_out.gain.data_mut() = (0..E).map(|_| rng.random_range(0.5..1.5)).collect();
    *layer.norm_out.shift.data_mut() = (0..E).map(|_| rng.random_range(-0.5..0.5)).collect();
    layer
}

fn step(layer: &GatedTxlLayer, x: &[f64]) -> Vec<f64> {
    let y: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
    let z: Vec<f64> = y.iter().map(|v| v + 0.5).collect();
    manual_layer_norm(&z, &layer.norm_out.gain.to_vec(), &layer.norm_out.shift.to_vec())
}

#[test]
fn two_layer_step_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let layers = vec![zeroed_layer(&mut rng), zeroed_layer(&mut rng)];
    let x0: Vec<f64> = (0..2 * 3 * E).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = Tensor::new(&[2, 3, E], x0.clone()).unwrap();

    let t1 = layers[0].trace(&x, &mut ForwardCtx::eval()).unwrap();
    for (g, expect) in [(&t1.gate_attn, 0.5), (&t1.gate_ff, 0.5)] {
        assert!(g.to_vec().iter().all(|&v| v == expect));
    }
    let x1 = step(&layers[0], &x0);
    let x2 = step(&layers[1], &x1);

    let enc = GatedEncoder::new(layers).unwrap();
    let out = enc.forward(&x, &mut ForwardCtx::eval()).unwrap().to_vec();
    assert_eq!(out.len(), x2.len());
    for (a, b) in out.iter().zip(&x2) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    for (a, b) in t1.output.to_vec().iter().zip(&x1) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn zero_gates_ignore_sublayer_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = zeroed_layer(&mut rng);
    let mut b = a.clone();
    // Different attention and feed-forward weights, same gates and output norm.
    let other = GatedTxlLayer::new(&mut rng, E, 2, 10, 0.0, GateMode::Literal).unwrap();
    b.attention = other.attention;
    b.ff_in = other.ff_in;
    b.ff_out = other.ff_out;
    let x = Tensor::new(&[1, 4, E], (0..4 * E).map(|i| (i as f64).sin()).collect()).unwrap();
    let ya = a.forward(&x, &mut ForwardCtx::eval()).unwrap().to_vec();
    let yb = b.forward(&x, &mut ForwardCtx::eval()).unwrap().to_vec();
    assert_eq!(ya, yb);
}
