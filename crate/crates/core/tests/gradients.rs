//! Finite-difference gradient checks for every layer and architecture.

use proptest::prelude::*;
use qforge::gradcheck::{check_gradients, check_network, GradCheckOptions};
use qforge::models::ConvSpec;
use qforge::nn::{
    AttentionPooling, BatchNorm2d, Conv2d, ForwardCtx, GateMode, GatedEncoder, GatedTxlLayer, LayerNorm, Linear,
    Module, MultiHeadAttention, PositionalEmbedding,
};
use qforge::tensor::{BatchNormMode, Tensor};
use qforge::{ModelConfig, Result, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::param(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar loss `Σ w ⊙ y` with fixed random `w`, so every output coordinate matters.
fn project(y: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(y.mul(w)?.sum())
}

fn named(prefix: &str, m: &impl Module) -> Vec<(String, Tensor)> {
    m.parameters().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

fn assert_checks(params: Vec<(String, Tensor)>, loss: impl Fn() -> Result<Tensor>) {
    let report = check_gradients(&params, loss, &GradCheckOptions::default()).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_error < TOL, "max rel err {} at {:?}", report.max_rel_error, report.worst);
}

#[test]
fn linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Linear::new(&mut rng, 5, 3, 1.0).unwrap();
    let x = random(&mut rng, &[2, 4, 5]);
    let w = random(&mut rng, &[2, 4, 3]);
    let mut params = named("linear", &layer);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&layer.forward(&x)?, &w));
}

#[test]
fn conv2d_strided() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conv = Conv2d::new(&mut rng, 2, 3, 3, 2, 1.0).unwrap();
    let x = random(&mut rng, &[2, 2, 7, 7]);
    let w = random(&mut rng, &[2, 3, 3, 3]);
    let mut params = named("conv", &conv);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&conv.forward(&x)?, &w));
}

#[test]
fn batch_norm_batch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bn = BatchNorm2d::new(3).unwrap();
    *bn.gain.data_mut() = vec![0.7, 1.3, -0.4];
    *bn.shift.data_mut() = vec![0.1, -0.2, 0.3];
    let x = random(&mut rng, &[3, 3, 2, 2]);
    let w = random(&mut rng, &[3, 3, 2, 2]);
    let mut params = named("bn", &bn);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&x.batch_norm(&bn.gain, &bn.shift, &bn.stats, BatchNormMode::TrainFrozen)?, &w));
}

#[test]
fn batch_norm_running_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bn = BatchNorm2d::new(2).unwrap();
    *bn.stats.mean.data_mut() = vec![0.2, -0.1];
    *bn.stats.var.data_mut() = vec![1.5, 0.6];
    let x = random(&mut rng, &[2, 2, 3, 3]);
    let w = random(&mut rng, &[2, 2, 3, 3]);
    let mut params = named("bn", &bn);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&bn.forward(&x, &ForwardCtx::eval())?, &w));
}

#[test]
fn layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ln = LayerNorm::new(6).unwrap();
    *ln.gain.data_mut() = (0..6).map(|i| 0.5 + 0.2 * i as f64).collect();
    let x = random(&mut rng, &[2, 3, 6]);
    let w = random(&mut rng, &[2, 3, 6]);
    let mut params = named("ln", &ln);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&ln.forward(&x)?, &w));
}

#[test]
fn softmax_last_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[2, 3, 4]);
    let w = random(&mut rng, &[2, 3, 4]);
    assert_checks(vec![("x".into(), x.clone())], || project(&x.softmax(2)?, &w));
}

#[test]
fn multi_head_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mha = MultiHeadAttention::new(&mut rng, 8, 2).unwrap();
    let x = random(&mut rng, &[2, 4, 8]);
    let w = random(&mut rng, &[2, 4, 8]);
    let mut params = named("mha", &mha);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&mha.forward(&x)?, &w));
}

#[test]
fn attention_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pool = AttentionPooling::new(&mut rng, 6).unwrap();
    let x = random(&mut rng, &[3, 5, 6]);
    let w = random(&mut rng, &[3, 6]);
    let mut params = named("pool", &pool);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&pool.forward(&x)?, &w));
}

#[test]
fn positional_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pos = PositionalEmbedding::new(&mut rng, 6, 4).unwrap();
    let x = random(&mut rng, &[2, 5, 4]);
    let w = random(&mut rng, &[2, 5, 4]);
    let mut params = named("pos", &pos);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&pos.add_to(&x)?, &w));
}

#[test]
fn patch_unfold() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&mut rng, &[2, 2, 9, 9]);
    let w = random(&mut rng, &[2, 8, 16]);
    assert_checks(vec![("x".into(), x.clone())], || project(&x.unfold_patches(4)?, &w));
}

#[test]
fn gated_layer_both_modes() {
    for mode in [GateMode::Literal, GateMode::Multiplicative] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = GatedTxlLayer::new(&mut rng, 8, 2, 12, 0.0, mode).unwrap();
        let x = random(&mut rng, &[2, 3, 8]);
        let w = random(&mut rng, &[2, 3, 8]);
        let mut params = named("layer", &layer);
        params.push(("x".into(), x.clone()));
        assert_checks(params, || project(&layer.forward(&x, &mut ForwardCtx::eval())?, &w));
    }
}

#[test]
fn gated_encoder_two_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let enc = GatedEncoder::build(&mut rng, 2, 8, 4, 16, 0.0, GateMode::Literal).unwrap();
    let x = random(&mut rng, &[2, 3, 8]);
    let w = random(&mut rng, &[2, 3, 8]);
    let mut params = named("enc", &enc);
    params.push(("x".into(), x.clone()));
    assert_checks(params, || project(&enc.forward(&x, &mut ForwardCtx::eval())?, &w));
}

#[test]
fn huber_and_square() {
    let x = Tensor::param(&[6], vec![-2.5, -0.7, -0.2, 0.3, 0.9, 3.1]).unwrap();
    let w = Tensor::new(&[6], vec![0.3, -1.1, 0.8, 0.5, -0.6, 1.4]).unwrap();
    assert_checks(vec![("x".into(), x.clone())], || project(&x.huber(1.0), &w));
    assert_checks(vec![("x".into(), x.clone())], || project(&x.square(), &w));
}

fn tiny(variant: Variant, embed: usize, depth: usize, heads: usize, frames: usize, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant, 3);
    cfg.frames = frames;
    cfg.frame_size = 12;
    cfg.embed = embed;
    cfg.heads = heads;
    cfg.depth = depth;
    cfg.ff_dim = 2 * embed;
    cfg.patch = 4;
    cfg.init_seed = seed;
    cfg.conv = vec![ConvSpec::new(3, 4, 2), ConvSpec::new(4, 3, 1)];
    cfg.fc = match variant {
        Variant::Dcqn => vec![6, 5],
        Variant::DtqnVit => vec![6, 5, 4],
        _ => vec![],
    };
    cfg
}

#[test]
fn every_architecture_full_check() {
    for variant in Variant::ALL {
        let cfg = tiny(variant, 8, 2, 2, 2, 3);
        let opts = GradCheckOptions { coords_per_tensor: Some(16), seed: 1, ..Default::default() };
        let r = check_network(&cfg, 3, &opts).unwrap();
        assert!(r.max_rel_error < TOL, "{variant}: {} at {:?}", r.max_rel_error, r.worst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn randomized_tiny_architectures(
        v in 0usize..4,
        embed_half in 1usize..=4,
        depth in 1usize..=2,
        two_heads in any::<bool>(),
        frames in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let heads = if two_heads { 2 } else { 1 };
        let embed = 4 * embed_half;
        let cfg = tiny(Variant::ALL[v], embed, depth, heads, frames, seed);
        let opts = GradCheckOptions { coords_per_tensor: Some(8), seed, ..Default::default() };
        let r = check_network(&cfg, 2, &opts).unwrap();
        prop_assert!(r.max_rel_error < TOL, "{}: {} at {:?}", cfg.variant, r.max_rel_error, r.worst);
    }
}
