use erpcal_core::calibrate::*;
use erpcal_core::checkpoint::Checkpoint;
use erpcal_core::dataio::{generate_synthetic, Dataset, ErpEpoch, SickFraction, SynthSpec};
use erpcal_core::loss::weighted_ce;
use erpcal_core::models::{build, Arch, ArchConfig, ConformerConfig, EegNetConfig};
use erpcal_core::preprocess::pca_fit;
use erpcal_tensor::{Adam, AdamConfig, Mode, ModelGraph};

fn dataset(fractions: Vec<f64>, trials: usize, samples: usize) -> Dataset {
    generate_synthetic(&SynthSpec {
        n_subjects: fractions.len(),
        trials_per_subject: trials,
        channel_names: ["LLPf", "MiPa", "LMFr", "RMFr"].iter().map(|s| s.to_string()).collect(),
        samples,
        peak_sample: samples as f64 / 2.0,
        peak_width: samples as f64 / 12.0,
        sick_fraction: SickFraction::PerSubject(fractions),
        seed: 17,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn split(d: &Dataset, test: u32) -> (Vec<ErpEpoch>, Vec<ErpEpoch>) {
    let t = d.subject(test).unwrap().epochs.clone();
    let o = d.subjects.iter().filter(|s| s.subject_id != test).flat_map(|s| s.epochs.clone()).collect();
    (t, o)
}

#[test]
fn single_label_subject_gets_matching_donors() {
    let d = dataset(vec![0.0, 0.5, 0.4, 0.4], 320, 64);
    let (test, others) = split(&d, 1);
    let set = build_calibration_set(&test, &others, &CalibConfig::default(), 3).unwrap();
    assert!(set.donor_case);
    assert_eq!((set.sampled, set.donors), (40, 40));
    assert_eq!(set.train.len() + set.validation.len(), 80);
    assert_eq!(set.validation.len(), 16);
    assert_eq!(set.holdout.len(), 280);
    for r in set.train.iter().chain(&set.validation) {
        if r.from_test_subject {
            assert_eq!((r.epoch.subject_id, r.weight), (1, 2.0));
        } else {
            assert_ne!(r.epoch.subject_id, 1);
            assert_eq!((r.epoch.label, r.weight), (1, 1.0));
        }
    }
}

#[test]
fn both_label_subject_is_stratified() {
    let d = dataset(vec![0.5, 0.3, 0.0, 0.3], 320, 64);
    let (test, others) = split(&d, 1);
    let [n0, n1] = d.subject(1).unwrap().label_counts();
    let set = build_calibration_set(&test, &others, &CalibConfig::default(), 4).unwrap();
    assert!(!set.donor_case);
    assert_eq!(set.donors, 0);
    let pool: Vec<&CalibRow> = set.train.iter().chain(&set.validation).collect();
    assert_eq!(pool.iter().filter(|r| r.epoch.label == 1).count(), 40.min(n1 / 2));
    assert_eq!(pool.iter().filter(|r| r.epoch.label == 0).count(), 40.min(n0 / 2));
    assert!(pool.iter().all(|r| r.from_test_subject && r.weight == 1.0));
    for label in [0, 1] {
        let v = set.validation.iter().filter(|r| r.epoch.label == label).count();
        let all = pool.iter().filter(|r| r.epoch.label == label).count();
        assert_eq!(v, all / 5);
    }
}

#[test]
fn sampled_trials_never_reach_the_test_split() {
    for (fractions, subject) in [(vec![0.0, 0.5, 0.4], 1), (vec![0.5, 0.5, 0.4], 2), (vec![0.3, 1.0, 0.0], 2)] {
        let d = dataset(fractions, 120, 64);
        let (test, others) = split(&d, subject);
        let set = build_calibration_set(&test, &others, &CalibConfig::default(), 9).unwrap();
        let used: Vec<u32> = set
            .train
            .iter()
            .chain(&set.validation)
            .filter(|r| r.from_test_subject)
            .map(|r| r.epoch.trial_index)
            .collect();
        assert_eq!(used.len(), set.sampled);
        assert!(set.holdout.iter().all(|e| !used.contains(&e.trial_index)));
        assert_eq!(used.len() + set.holdout.len(), test.len());
        assert!(set.train.iter().chain(&set.validation).filter(|r| !r.from_test_subject).all(|r| r.epoch.subject_id != subject));
        let mut bad = others.clone();
        bad.push(test[0].clone());
        assert!(build_calibration_set(&test, &bad, &CalibConfig::default(), 9).is_err());
    }
}

#[test]
fn donors_match_brute_force_scan() {
    let d = dataset(vec![1.0, 0.2, 0.5, 0.3, 0.4], 160, 64);
    let (test, others) = split(&d, 1);
    let cfg = CalibConfig::default();
    let set = build_calibration_set(&test, &others, &cfg, 5).unwrap();
    let own: Vec<&[f64]> =
        set.train.iter().chain(&set.validation).filter(|r| r.from_test_subject).map(|r| r.epoch.signal.data()).collect();
    let cand: Vec<&ErpEpoch> = others.iter().filter(|e| e.label == 0).collect();
    let mut fit = own.clone();
    fit.extend(cand.iter().map(|e| e.signal.data()));
    let basis = pca_fit(&fit, 16).unwrap();
    let mut centroid = vec![0.0; 16];
    for r in &own {
        for (c, v) in centroid.iter_mut().zip(basis.project(r)) {
            *c += v / own.len() as f64;
        }
    }
    let mut scored: Vec<(f64, u32, u32)> = cand
        .iter()
        .map(|e| {
            let p = basis.project(e.signal.data());
            let dist = p.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (dist, e.subject_id, e.trial_index)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut expected: Vec<(u32, u32)> = scored[..set.sampled].iter().map(|s| (s.1, s.2)).collect();
    let mut got: Vec<(u32, u32)> = set
        .train
        .iter()
        .chain(&set.validation)
        .filter(|r| !r.from_test_subject)
        .map(|r| (r.epoch.subject_id, r.epoch.trial_index))
        .collect();
    expected.sort_unstable();
    got.sort_unstable();
    assert_eq!(got, expected);
}

#[test]
fn too_few_donors_is_an_error() {
    let d = dataset(vec![0.0, 0.02, 0.0], 320, 64);
    let (test, others) = split(&d, 1);
    let donors = others.iter().filter(|e| e.label == 1).count();
    assert!(donors < 40, "fixture has {donors} sick donors");
    assert!(build_calibration_set(&test, &others, &CalibConfig::default(), 1).is_err());
    assert!(build_calibration_set(&[], &others, &CalibConfig::default(), 1).is_err());
}

fn tiny_arch() -> ArchConfig {
    let mut cfg = ArchConfig::new(Arch::EegNet, 4, 64);
    cfg.eegnet = EegNetConfig { f1: 4, depth: 2, f2: 8, temporal_kernel: 8, separable_kernel: 4, pool1: 2, pool2: 4 };
    cfg
}

fn rows(d: &Dataset, n: usize) -> Vec<CalibRow> {
    d.subjects
        .iter()
        .flat_map(|s| s.epochs.iter())
        .take(n)
        .enumerate()
        .map(|(i, e)| CalibRow { epoch: e.clone(), weight: 1.0 + (i % 2) as f64, from_test_subject: i % 2 == 1 })
        .collect()
}

fn loss_only(g: &ModelGraph, batch: &[&CalibRow], anchor: &Anchor, beta: f64) -> f64 {
    calibration_loss(&mut g.clone(), batch, anchor, beta).unwrap()
}

#[test]
fn combined_loss_gradient_matches_differences() {
    let d = dataset(vec![0.5, 0.5, 0.5], 20, 64);
    let rows = rows(&d, 12);
    let batch: Vec<&CalibRow> = rows.iter().collect();
    let mut g = build(&tiny_arch(), 4).unwrap();
    g.set_mode(Mode::Train);
    let anchor = Anchor::from_graph(&g);
    for p in g.params_mut() {
        p.tensor.data_mut().iter_mut().enumerate().for_each(|(j, v)| *v += 0.01 * ((j % 5) as f64 - 2.0));
    }
    let beta = 0.5;
    let mut analytic = g.clone();
    calibration_loss(&mut analytic, &batch, &anchor, beta).unwrap();
    let h = 1e-5;
    let mut diff = 0.0f64;
    for pi in 0..g.params().len() {
        let grad = analytic.params()[pi].tensor.grad().unwrap().to_vec();
        for j in 0..g.params()[pi].tensor.numel() {
            let mut plus = g.clone();
            plus.params_mut()[pi].tensor.data_mut()[j] += h;
            let mut minus = g.clone();
            minus.params_mut()[pi].tensor.data_mut()[j] -= h;
            let fd = (loss_only(&plus, &batch, &anchor, beta) - loss_only(&minus, &batch, &anchor, beta)) / (2.0 * h);
            diff += (fd - grad[j]).powi(2);
        }
    }
    let total: f64 = analytic.params().iter().flat_map(|p| p.tensor.grad().unwrap().iter()).map(|v| v * v).sum();
    let rel = diff.sqrt() / total.sqrt();
    assert!(rel < 1e-5, "relative error {rel:e}");
}

#[test]
fn l2_sp_gradient_is_closed_form() {
    let d = dataset(vec![0.5, 0.5, 0.5], 10, 64);
    let rows = rows(&d, 8);
    let batch: Vec<&CalibRow> = rows.iter().collect();
    let mut g = build(&tiny_arch(), 5).unwrap();
    g.set_mode(Mode::Eval);
    let anchor = Anchor::from_graph(&g);
    for p in g.params_mut() {
        p.tensor.data_mut().iter_mut().enumerate().for_each(|(j, v)| *v -= 0.02 * (j % 3) as f64);
    }
    let beta = 2e-3;
    let mut with = g.clone();
    calibration_loss(&mut with, &batch, &anchor, beta).unwrap();
    let mut without = g.clone();
    calibration_loss(&mut without, &batch, &anchor, 0.0).unwrap();
    let w0 = build(&tiny_arch(), 5).unwrap();
    for (pi, p) in g.params().iter().enumerate() {
        let a = with.params()[pi].tensor.grad().unwrap();
        let b = without.params()[pi].tensor.grad().unwrap();
        for j in 0..p.tensor.numel() {
            let expected = beta * (p.tensor.data()[j] - w0.params()[pi].tensor.data()[j]);
            assert!((a[j] - b[j] - expected).abs() <= 1e-15 * (1.0 + a[j].abs()), "{} [{j}]", p.name);
        }
    }
    assert_eq!(l2_sp(&g, &anchor, 0.0).unwrap(), 0.0);
}

#[test]
fn beta_zero_is_plain_weighted_ce_and_perfect_is_zero() {
    let d = dataset(vec![0.5, 0.5, 0.5], 10, 64);
    let rows = rows(&d, 8);
    let batch: Vec<&CalibRow> = rows.iter().collect();
    let mut g = build(&tiny_arch(), 6).unwrap();
    g.set_mode(Mode::Eval);
    let anchor = Anchor::from_graph(&g);
    let logits = g.infer(&erpcal_core::train::batch_tensor(&batch.iter().map(|r| &r.epoch).collect::<Vec<_>>()).unwrap()).unwrap();
    let labels: Vec<u8> = batch.iter().map(|r| r.epoch.label).collect();
    let weights: Vec<f64> = batch.iter().map(|r| r.weight).collect();
    let ce = weighted_ce(&logits, &labels, Some(&weights)).unwrap().loss;
    assert_eq!(calibration_loss(&mut g.clone(), &batch, &anchor, 0.0).unwrap(), ce);
    assert_eq!(calibration_loss(&mut g.clone(), &batch, &anchor, 5.0).unwrap(), ce);

    let last = g.num_layers() - 1;
    let r = g.layer_param_range(last);
    g.params_mut()[r.start].tensor.data_mut().fill(0.0);
    g.params_mut()[r.start + 1].tensor.data_mut().copy_from_slice(&[0.0, 800.0]);
    let anchor = Anchor::from_graph(&g);
    let sick: Vec<CalibRow> = rows.iter().cloned().map(|mut r| {
        r.epoch.label = 1;
        r
    }).collect();
    let sb: Vec<&CalibRow> = sick.iter().collect();
    assert_eq!(calibration_loss(&mut g, &sb, &anchor, 2e-3).unwrap(), 0.0);
}

fn drift(beta: f64) -> f64 {
    let d = dataset(vec![0.5, 0.5, 0.5], 30, 64);
    let rows = rows(&d, 64);
    let batch: Vec<&CalibRow> = rows.iter().collect();
    let mut g = build(&tiny_arch(), 7).unwrap();
    g.set_mode(Mode::Train);
    let w0 = g.clone();
    let anchor = Anchor::from_graph(&g);
    let mut opt = Adam::new(&g, AdamConfig { lr: 1e-3, ..AdamConfig::default() });
    for _ in 0..60 {
        calibration_loss(&mut g, &batch, &anchor, beta).unwrap();
        opt.step(&mut g).unwrap();
    }
    g.params()
        .iter()
        .zip(w0.params())
        .flat_map(|(a, b)| a.tensor.data().iter().zip(b.tensor.data()).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn larger_beta_tightens_drift() {
    let loose = drift(2e-3);
    let tight = drift(1e3);
    assert!(tight < loose, "drift {tight} at beta 1e3 vs {loose} at 2e-3");
}

fn phase1(arch: &ArchConfig) -> Checkpoint {
    let g = build(arch, 21).unwrap();
    Checkpoint::from_graph(arch, &g, 100, 0.6)
}

#[test]
fn zero_steps_return_the_input_weights() {
    let d = dataset(vec![0.0, 0.5, 0.5], 80, 64);
    let (test, others) = split(&d, 1);
    let cfg = CalibConfig { max_steps: 0, ..CalibConfig::default() };
    let set = build_calibration_set(&test, &others, &cfg, 2).unwrap();
    let parent = phase1(&tiny_arch());
    let out = finetune(&parent, &set, &cfg, 2).unwrap();
    assert_eq!(out.checkpoint.state, parent.state);
    for (a, b) in out.checkpoint.state.iter().zip(&parent.state) {
        assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(out.checkpoint.parent, Some(parent.hash().unwrap()));
    assert_eq!(out.record.evals.len(), 1);
}

#[test]
fn frozen_conformer_blocks_are_bit_identical() {
    let mut arch = ArchConfig::new(Arch::Conformer, 4, 64);
    arch.conformer = ConformerConfig { pool: 16, pool_stride: 8, ..ConformerConfig::default() };
    let d = dataset(vec![0.0, 0.5, 0.5], 60, 64);
    let (test, others) = split(&d, 1);
    let cfg = CalibConfig { lr: 1e-3, max_steps: 12, eval_every: 1, patience: 50, ..CalibConfig::default() };
    let set = build_calibration_set(&test, &others, &cfg, 3).unwrap();
    let parent = phase1(&arch);
    let out = finetune(&parent, &set, &cfg, 3).unwrap();
    let g = parent.to_graph().unwrap();
    let frozen = arch.calibration_frozen_layers();
    assert_eq!(frozen, vec![8, 9, 10]);
    let mut moved = false;
    for (i, (a, b)) in parent.state.iter().zip(&out.checkpoint.state).enumerate().take(g.params().len()) {
        let same = a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if frozen.contains(&g.param_layer(i)) {
            assert!(same, "{} moved", a.name);
        } else {
            moved |= !same;
        }
    }
    assert!(out.record.best_step == 0 || moved);
}

#[test]
fn calibration_is_deterministic() {
    let d = dataset(vec![0.0, 0.5, 0.5], 80, 64);
    let (test, others) = split(&d, 1);
    let cfg = CalibConfig { lr: 1e-3, max_steps: 10, eval_every: 5, ..CalibConfig::default() };
    let a = build_calibration_set(&test, &others, &cfg, 8).unwrap();
    let b = build_calibration_set(&test, &others, &cfg, 8).unwrap();
    assert_eq!(a, b);
    let parent = phase1(&tiny_arch());
    let x = finetune(&parent, &a, &cfg, 8).unwrap();
    let y = finetune(&parent, &b, &cfg, 8).unwrap();
    assert_eq!(x.record, y.record);
    assert_eq!(x.checkpoint.encode().unwrap(), y.checkpoint.encode().unwrap());
}
