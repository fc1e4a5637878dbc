use proptest::prelude::*;
use qforge::models::{ConvSpec, QNetwork};
use qforge::nn::{ForwardCtx, Module};
use qforge::tensor::{no_grad, Tensor};
use qforge::{ModelConfig, Variant};

fn input(b: usize, f: usize, s: usize, salt: f64) -> Tensor {
    let n = b * f * s * s;
    Tensor::new(&[b, f, s, s], (0..n).map(|i| ((i as f64 * 0.618 + salt).sin() + 1.0) / 2.0).collect()).unwrap()
}

fn q_values(net: &QNetwork, x: &Tensor) -> Tensor {
    no_grad(|| net.forward(x, &mut ForwardCtx::eval())).unwrap()
}

fn small(variant: Variant, frames: usize, actions: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant, actions);
    cfg.frames = frames;
    cfg.embed = 16;
    cfg.heads = 2;
    cfg.depth = 1;
    cfg.conv = vec![ConvSpec::new(4, 8, 4), ConvSpec::new(8, 4, 2), ConvSpec::new(8, 3, 1)];
    cfg.fc = match variant {
        Variant::Dcqn => vec![32, 16],
        Variant::DtqnVit => vec![32, 16, 8],
        _ => vec![],
    };
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_is_batch_by_actions(v in 0usize..4, b in 1usize..4, f in 1usize..5, a in 2usize..7) {
        let net = QNetwork::new(&small(Variant::ALL[v], f, a)).unwrap();
        let q = q_values(&net, &input(b, f, 84, 0.3));
        prop_assert_eq!(q.dims(), &[b, a]);
        prop_assert!(q.to_vec().iter().all(|x| x.is_finite()));
    }
}

#[test]
fn vit_sequence_length_follows_patch_grid() {
    for (patch, per_frame) in [(16, 25), (12, 49), (10, 64), (21, 16)] {
        for frames in 1..=4 {
            let mut cfg = small(Variant::DtqnVit, frames, 4);
            cfg.patch = patch;
            assert_eq!(cfg.sequence_len().unwrap(), per_frame * frames);
            let QNetwork::DtqnVit(net) = QNetwork::new(&cfg).unwrap() else { unreachable!() };
            let x = input(2, frames, 84, 0.0).reshape(&[2, frames * 84 * 84]).unwrap();
            let tokens = no_grad(|| net.embed(&x)).unwrap();
            assert_eq!(tokens.dims(), &[2, per_frame * frames, 16]);
        }
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let net = QNetwork::new(&small(Variant::Dcqn, 4, 3)).unwrap();
    let err = net.forward(&input(1, 3, 84, 0.0), &mut ForwardCtx::eval()).unwrap_err();
    assert!(err.to_string().contains("q_network"), "{err}");
}

#[test]
fn parameter_counts_match_hand_sums() {
    // conv 32@8/4 + bn, conv 64@4/2 + bn, conv 64@3/1 + bn, fc 3136→512→256→4.
    let dcqn = (32 * 4 * 64 + 32) + 64 + (64 * 32 * 16 + 64) + 128 + (64 * 64 * 9 + 64) + 128
        + (3136 * 512 + 512)
        + (512 * 256 + 256)
        + (256 * 4 + 4);
    assert_eq!(dcqn, 1_816_804);
    assert_eq!(QNetwork::new(&ModelConfig::new(Variant::Dcqn, 4)).unwrap().param_count(), dcqn);

    // One gated layer at E=128, FF=512: three layer norms, attention (4 projections),
    // two gates 2E→E and the feed-forward pair.
    let layer = 3 * 256 + 4 * (128 * 128 + 128) + 2 * (256 * 128 + 128) + (128 * 512 + 512) + (512 * 128 + 128);
    assert_eq!(layer, 264_320);
    // 7056-pixel frame projection, 4 positions, two layers, pooling score, head.
    let proj = (7056 * 128 + 128) + 4 * 128 + 2 * layer + (128 + 1) + (128 * 4 + 4);
    assert_eq!(QNetwork::new(&ModelConfig::new(Variant::DtqnProj, 4)).unwrap().param_count(), proj);

    // 256-pixel patches, 100 positions, two layers, fc 12800→512→256→128→4.
    let vit = (256 * 128 + 128) + 100 * 128 + 2 * layer + (12800 * 512 + 512) + (512 * 256 + 256)
        + (256 * 128 + 128)
        + (128 * 4 + 4);
    assert_eq!(QNetwork::new(&ModelConfig::new(Variant::DtqnVit, 4)).unwrap().param_count(), vit);
}

#[test]
fn batch_permutation_permutes_outputs() {
    for variant in Variant::ALL {
        let net = QNetwork::new(&small(variant, 2, 3)).unwrap();
        let x = input(4, 2, 84, 1.7);
        let q = q_values(&net, &x).to_vec();
        let perm = [2, 0, 3, 1];
        let sample = 2 * 84 * 84;
        let data = x.to_vec();
        let shuffled: Vec<f64> = perm.iter().flat_map(|&i| data[i * sample..(i + 1) * sample].to_vec()).collect();
        let px = Tensor::new(&[4, 2, 84, 84], shuffled).unwrap();
        let pq = q_values(&net, &px).to_vec();
        for (row, &src) in perm.iter().enumerate() {
            for a in 0..3 {
                assert!((pq[row * 3 + a] - q[src * 3 + a]).abs() < 1e-12, "{variant}");
            }
        }
    }
}

#[test]
fn zero_weights_leave_only_the_head_bias() {
    for variant in Variant::ALL {
        let net = QNetwork::new(&small(variant, 2, 3)).unwrap();
        let params = net.parameters();
        for (_, p) in &params {
            p.data_mut().fill(0.0);
        }
        let (_, head_bias) = params.last().unwrap();
        *head_bias.data_mut() = vec![0.5, -1.0, 2.0];
        let q = q_values(&net, &input(3, 2, 84, 0.9)).to_vec();
        assert_eq!(q, [0.5, -1.0, 2.0].repeat(3), "{variant}");
    }
}

#[test]
fn eval_forward_is_deterministic_and_leaves_state_alone() {
    for variant in Variant::ALL {
        let mut cfg = small(variant, 2, 3);
        cfg.dropout = 0.2;
        let net = QNetwork::new(&cfg).unwrap();
        let before: Vec<Vec<f64>> = net.state().iter().map(|(_, t, _)| t.to_vec()).collect();
        let x = input(2, 2, 84, 0.1);
        assert_eq!(q_values(&net, &x).to_vec(), q_values(&net, &x).to_vec());
        let after: Vec<Vec<f64>> = net.state().iter().map(|(_, t, _)| t.to_vec()).collect();
        assert_eq!(before, after);
    }
}
