use std::collections::BTreeMap;

use erpcal_core::attribution::*;
use erpcal_core::dataio::ErpEpoch;
use erpcal_core::models::{build, Arch, ArchConfig, ConformerConfig};
use erpcal_tensor::{Activation, Conv2dSpec, LayerSpec, ModelGraph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trial(c: usize, t: usize, rng: &mut ChaCha8Rng) -> ErpEpoch {
    ErpEpoch {
        subject_id: 1,
        trial_index: 0,
        signal: Tensor::new(vec![c, t], (0..c * t).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap(),
        label: 1,
        symptoms: None,
    }
}

fn linear_model(c: usize, t: usize, seed: u64) -> ModelGraph {
    ModelGraph::new(vec![LayerSpec::Flatten, LayerSpec::Linear { inputs: c * t, outputs: 2 }], &[1, c, t], seed).unwrap()
}

#[test]
fn linear_model_is_exact_at_any_step_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (c, t) = (3, 10);
    let g = linear_model(c, t, 2);
    let w = g.param("01.linear.weight").unwrap().clone();
    let x = trial(c, t, &mut rng);
    for steps in [1, 2, 7, 64, 300] {
        for target in [0u8, 1] {
            let m = integrated_gradients(&g, &x, &Tensor::zeros(&[c, t]), target, steps).unwrap();
            for j in 0..c * t {
                let expected = w.data()[target as usize * c * t + j] * x.signal.data()[j];
                assert!((m.values.data()[j] - expected).abs() < 1e-9, "steps {steps} j {j}");
            }
            assert!(m.completeness.unwrap().gap < 1e-9);
        }
    }
}

#[test]
fn trial_equal_to_baseline_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = build(&ArchConfig::new(Arch::EegNet, 4, 64), 3).unwrap();
    let x = trial(4, 64, &mut rng);
    let m = integrated_gradients(&g, &x, &x.signal, 1, 16).unwrap();
    assert!(m.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn scaling_the_model_scales_attributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = ArchConfig::new(Arch::EegNet, 4, 64);
    let g = build(&arch, 4).unwrap();
    let x = trial(4, 64, &mut rng);
    let base = trial(4, 64, &mut rng).signal;
    let a = integrated_gradients(&g, &x, &base, 1, 24).unwrap();
    for alpha in [2.0, 0.5, -4.0] {
        let mut scaled = g.clone();
        let last = scaled.num_layers() - 1;
        for i in scaled.layer_param_range(last) {
            scaled.params_mut()[i].tensor.data_mut().iter_mut().for_each(|v| *v *= alpha);
        }
        let b = integrated_gradients(&scaled, &x, &base, 1, 24).unwrap();
        for (p, q) in a.values.data().iter().zip(b.values.data()) {
            assert_eq!(alpha * p, *q);
        }
    }
}

#[test]
fn symmetric_inputs_get_equal_attributions() {
    let mut g = ModelGraph::new(
        vec![
            LayerSpec::Flatten,
            LayerSpec::Linear { inputs: 2, outputs: 3 },
            LayerSpec::Activation(Activation::Elu),
            LayerSpec::Linear { inputs: 3, outputs: 2 },
        ],
        &[1, 1, 2],
        5,
    )
    .unwrap();
    let w = g.param_mut("01.linear.weight").unwrap();
    for k in 0..3 {
        let v = w.data()[2 * k];
        w.data_mut()[2 * k + 1] = v;
    }
    let x = ErpEpoch { subject_id: 1, trial_index: 0, signal: Tensor::new(vec![1, 2], vec![1.7, 1.7]).unwrap(), label: 0, symptoms: None };
    let m = integrated_gradients(&g, &x, &Tensor::zeros(&[1, 2]), 0, 32).unwrap();
    assert_eq!(m.values.data()[0], m.values.data()[1]);
    assert_ne!(m.values.data()[0], 0.0);
}

fn small_conformer() -> ArchConfig {
    let mut a = ArchConfig::new(Arch::Conformer, 4, 64);
    a.conformer = ConformerConfig { pool: 16, pool_stride: 8, ..ConformerConfig::default() };
    a
}

#[test]
fn completeness_within_one_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for arch in [ArchConfig::new(Arch::EegNet, 4, 64), small_conformer()] {
        let g = build(&arch, 7).unwrap();
        let base = trial(4, 64, &mut rng).signal.clone();
        let base = Tensor::new(base.shape().to_vec(), base.data().iter().map(|v| v * 0.1).collect()).unwrap();
        for _ in 0..5 {
            let x = trial(4, 64, &mut rng);
            let c = integrated_gradients(&g, &x, &base, 1, 256).unwrap().completeness.unwrap();
            assert!(c.gap <= 0.01 * c.output_delta.abs(), "{:?}: {c:?}", arch.arch);
        }
    }
}

#[test]
fn completeness_gap_shrinks_with_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = build(&ArchConfig::new(Arch::EegNet, 4, 64), 9).unwrap();
    let x = trial(4, 64, &mut rng);
    let base = Tensor::zeros(&[4, 64]);
    let gaps: Vec<f64> =
        [16, 32, 64, 128, 256].iter().map(|&s| integrated_gradients(&g, &x, &base, 0, s).unwrap().completeness.unwrap().gap).collect();
    assert!(gaps[4] < gaps[0], "{gaps:?}");
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0] * 1.1 + 1e-12, "{gaps:?}");
    }
}

#[test]
fn gradcam_single_map_hand_oracle() {
    let t = 12;
    let mut g = ModelGraph::new(
        vec![
            LayerSpec::Conv2d(Conv2dSpec::new(1, 1, (1, 1)).with_bias(false)),
            LayerSpec::Flatten,
            LayerSpec::Linear { inputs: t, outputs: 2 },
        ],
        &[1, 1, t],
        1,
    )
    .unwrap();
    g.param_mut("00.conv2d.weight").unwrap().data_mut()[0] = 1.0;
    let w = g.param_mut("02.linear.weight").unwrap();
    w.data_mut().fill(0.0);
    w.data_mut()[t..].fill(1.0);
    let x: Vec<f64> = (0..t).map(|i| (i as f64 - 5.5) * 0.5).collect();
    let e = ErpEpoch { subject_id: 2, trial_index: 4, signal: Tensor::new(vec![1, t], x.clone()).unwrap(), label: 1, symptoms: None };
    let m = gradcam_at(&g, 0, &e, 1).unwrap();
    let expected: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    assert_eq!(m.values.data(), expected.as_slice());
    let zero = gradcam_at(&g, 0, &e, 0).unwrap();
    assert!(zero.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gradcam_on_eegnet() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let arch = ArchConfig::new(Arch::EegNet, 4, 64);
    let mut g = build(&arch, 11).unwrap();
    for _ in 0..5 {
        let x = trial(4, 64, &mut rng);
        let m = gradcam(&g, &arch, &x, 1).unwrap();
        assert_eq!(m.values.shape(), &[4, 64]);
        assert!(m.values.data().iter().all(|&v| v >= 0.0));
    }
    let last = g.num_layers() - 1;
    for i in g.layer_param_range(last) {
        g.params_mut()[i].tensor.data_mut().fill(0.0);
    }
    let m = gradcam(&g, &arch, &trial(4, 64, &mut rng), 1).unwrap();
    assert!(m.values.data().iter().all(|&v| v == 0.0));
    let conf = small_conformer();
    let err = gradcam(&build(&conf, 0).unwrap(), &conf, &trial(4, 64, &mut rng), 1).unwrap_err();
    assert_eq!(err.code(), "invalid");
}

fn fixture_map() -> (Vec<String>, Tensor) {
    let names = vec!["LLPf".to_string(), "MiPa".into(), "LMFr".into(), "RMFr".into()];
    let values = (0..32).map(|i| (i as f64 - 15.5) / 10.0).collect();
    (names, Tensor::new(vec![4, 8], values).unwrap())
}

#[test]
fn golden_svg() {
    let (names, v) = fixture_map();
    let svg = heatmap_svg(&names, &v).unwrap();
    assert_eq!(svg, include_str!("fixtures/heatmap_4x8.svg"));
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (names, v) = fixture_map();
    let path = dir.path().join("map.csv");
    export_heatmap(&path, &names, &v, HeatmapFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "channel,0,1,2,3,4,5,6,7");
    for (c, line) in lines.enumerate() {
        let mut f = line.split(',');
        assert_eq!(f.next().unwrap(), names[c]);
        for (t, s) in f.enumerate() {
            assert!((s.parse::<f64>().unwrap() - v.data()[c * 8 + t]).abs() < 1e-6);
        }
    }
    for fmt in [HeatmapFormat::Pgm, HeatmapFormat::Svg] {
        let p = dir.path().join(format!("map.{}", fmt.extension()));
        export_heatmap(&p, &names, &v, fmt).unwrap();
        assert!(std::fs::metadata(&p).unwrap().len() > 0);
    }
    assert_eq!(
        export_heatmap(dir.path().join("missing/x.csv"), &names, &v, HeatmapFormat::Csv).unwrap_err().code(),
        "io"
    );
}

#[test]
fn high_accuracy_selection_example() {
    let ba = BTreeMap::from([(1, 0.8), (2, 0.7), (3, 0.9)]);
    let mk = |s: u32| AttributionMap {
        values: Tensor::zeros(&[1, 1]),
        target: 1,
        subject_id: s,
        trial_index: 0,
        label: 1,
        method: Method::IntegratedGradients,
        steps: Some(1),
        completeness: None,
    };
    let maps = vec![mk(1), mk(2), mk(3)];
    assert_eq!(select_high_accuracy_sick(&ba, &maps, 0.75).subjects, vec![1, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn summary_follows_channel_relabelling(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, t) = (5, 9);
        let names: Vec<String> = (0..c).map(|i| format!("ch{i}")).collect();
        let maps: Vec<AttributionMap> = (0..3).map(|_| AttributionMap {
            values: trial(c, t, &mut rng).signal,
            target: 1, subject_id: 1, trial_index: 0, label: 1,
            method: Method::IntegratedGradients, steps: None, completeness: None,
        }).collect();
        let mut perm: Vec<usize> = (0..c).collect();
        let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..c).rev() {
            perm.swap(i, prng.random_range(0..=i));
        }
        let permuted: Vec<AttributionMap> = maps.iter().map(|m| {
            let mut data = Vec::new();
            for &p in &perm {
                data.extend_from_slice(&m.values.data()[p * t..(p + 1) * t]);
            }
            AttributionMap { values: Tensor::new(vec![c, t], data).unwrap(), ..m.clone() }
        }).collect();
        let pnames: Vec<String> = perm.iter().map(|&p| names[p].clone()).collect();
        let a = channel_summary(&maps.iter().collect::<Vec<_>>(), &names).unwrap();
        let b = channel_summary(&permuted.iter().collect::<Vec<_>>(), &pnames).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.values[i], a.values[p]);
            prop_assert_eq!(&b.channel_names[i], &a.channel_names[p]);
        }
    }
}
