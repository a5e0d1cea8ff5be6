//! Whole-architecture checks on miniature configurations.

use erpcal_core::models::*;
use erpcal_tensor::{Adam, AdamConfig, Mode, ModelGraph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn loss(graph: &ModelGraph, x: &Tensor, r: &Tensor) -> f64 {
    let mut g = graph.clone();
    let y = g.forward(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Relative L2 error between analytic and central-difference gradients over
/// every parameter and input coordinate, in train mode with dropout replayed.
fn full_gradcheck(graph: &ModelGraph, x: &Tensor, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_tensor(&[x.shape()[0], 2], &mut rng);
    let mut g = graph.clone();
    g.forward(x).unwrap();
    let gx = g.backward_with(&r, true, None).unwrap().input_grad.unwrap();
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    let mut acc = |a: f64, n: f64| {
        diff += (a - n) * (a - n);
        norm_a += a * a;
        norm_n += n * n;
    };
    for (pi, p) in graph.params().iter().enumerate() {
        let grad = g.params()[pi].tensor.grad().unwrap().to_vec();
        for j in 0..p.tensor.numel() {
            let mut plus = graph.clone();
            plus.params_mut()[pi].tensor.data_mut()[j] += H;
            let mut minus = graph.clone();
            minus.params_mut()[pi].tensor.data_mut()[j] -= H;
            acc(grad[j], (loss(&plus, x, &r) - loss(&minus, x, &r)) / (2.0 * H));
        }
    }
    for j in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[j] += H;
        let mut xm = x.clone();
        xm.data_mut()[j] -= H;
        acc(gx.data()[j], (loss(graph, &xp, &r) - loss(graph, &xm, &r)) / (2.0 * H));
    }
    diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt())
}

fn mini_eegnet() -> ArchConfig {
    let mut cfg = ArchConfig::new(Arch::EegNet, 16, 32);
    cfg.eegnet = EegNetConfig { f1: 4, depth: 2, f2: 8, temporal_kernel: 8, separable_kernel: 4, pool1: 2, pool2: 4 };
    cfg
}

fn mini_conformer() -> ArchConfig {
    let mut cfg = ArchConfig::new(Arch::Conformer, 4, 40);
    cfg.conformer = ConformerConfig {
        hidden: 8,
        heads: 2,
        blocks: 4,
        ff_hidden: 16,
        temporal_kernel: 5,
        pool: 10,
        pool_stride: 5,
        classifier: vec![12, 6],
    };
    cfg
}

#[test]
fn eegnet_miniature_gradcheck() {
    let cfg = mini_eegnet();
    let g = build_eegnet(&cfg, 11).unwrap();
    let x = random_tensor(&[4, 1, 16, 32], &mut ChaCha8Rng::seed_from_u64(1));
    let err = full_gradcheck(&g, &x, 2);
    assert!(err < 1e-5, "EEGNet relative error {err:e}");
}

#[test]
fn conformer_miniature_gradcheck() {
    let cfg = mini_conformer();
    let g = build_conformer(&cfg, 12).unwrap();
    let x = random_tensor(&[3, 1, 4, 40], &mut ChaCha8Rng::seed_from_u64(3));
    let err = full_gradcheck(&g, &x, 4);
    assert!(err < 1e-5, "Conformer relative error {err:e}");
}

#[test]
fn default_shapes() {
    let cfg = ArchConfig::new(Arch::EegNet, 16, 200);
    let mut g = build(&cfg, 0).unwrap();
    let x = Tensor::zeros(&[4, 1, 16, 200]);
    assert_eq!(g.forward(&x).unwrap().shape(), &[4, 2]);
    let cfg = ArchConfig::new(Arch::Conformer, 16, 200);
    assert_eq!(cfg.tokens().unwrap(), (200 - 75) / 15 + 1);
    let g = build(&cfg, 0).unwrap();
    assert_eq!(g.infer(&Tensor::zeros(&[2, 1, 16, 200])).unwrap().shape(), &[2, 2]);
    assert_eq!(cfg.conformer.hidden / cfg.conformer.heads, 5);
}

#[test]
fn zeroed_classifier_gives_zero_logits() {
    for arch in [Arch::EegNet, Arch::Conformer] {
        let cfg = ArchConfig::new(arch, 16, 200);
        let mut g = build(&cfg, 5).unwrap();
        let last = g.num_layers() - 1;
        for i in g.layer_param_range(last) {
            g.params_mut()[i].tensor.data_mut().fill(0.0);
        }
        let x = random_tensor(&[3, 1, 16, 200], &mut ChaCha8Rng::seed_from_u64(9));
        assert!(g.infer(&x).unwrap().data().iter().all(|&v| v == 0.0), "{arch}");
    }
}

#[test]
fn frozen_conformer_blocks_survive_a_step() {
    let cfg = mini_conformer();
    let mut g = build(&cfg, 8).unwrap();
    let frozen = cfg.calibration_frozen_layers();
    assert_eq!(frozen.len(), 3);
    g.freeze(frozen.iter().copied()).unwrap();
    let before = g.state();
    let mut opt = Adam::new(&g, AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    let x = random_tensor(&[4, 1, 4, 40], &mut ChaCha8Rng::seed_from_u64(2));
    g.set_mode(Mode::Train);
    let y = g.forward(&x).unwrap();
    g.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
    opt.step(&mut g).unwrap();
    let after = g.state();
    for (i, (b, a)) in before.iter().zip(&after).enumerate().take(g.params().len()) {
        let layer = g.param_layer(i);
        if frozen.contains(&layer) {
            assert!(b.tensor.data().iter().zip(a.tensor.data()).all(|(p, q)| p.to_bits() == q.to_bits()), "{}", b.name);
        }
    }
    let last_encoder = frozen.last().unwrap() + 1;
    let moved = g.layer_param_range(last_encoder).any(|i| before[i].tensor != after[i].tensor);
    assert!(moved, "unfrozen final block should train");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn builders_valid_over_declared_range(c in 4usize..=64, t in 64usize..=512) {
        let e = build(&ArchConfig::new(Arch::EegNet, c, t), 0).unwrap();
        prop_assert_eq!(e.output_shape(), &[2]);
        let y = e.infer(&Tensor::zeros(&[1, 1, c, t])).unwrap();
        prop_assert_eq!(y.shape(), &[1, 2]);
        let f = build(&ArchConfig::new(Arch::Conformer, c, t), 0).unwrap();
        prop_assert_eq!(f.output_shape(), &[2]);
    }
}
