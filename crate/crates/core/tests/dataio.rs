use erpcal_core::dataio::*;
use erpcal_core::Error;
use erpcal_tensor::Tensor;
use proptest::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

const FIXTURE: &str = include_str!("fixtures/two_subjects.csv");
const EXPECTED: &str = include_str!("fixtures/two_subjects.expected");

#[test]
fn csv_fixture_matches_expectation_file() {
    let d = import_csv(FIXTURE, 250.0).unwrap();
    let mut lines = EXPECTED.lines();
    let channels: Vec<String> =
        lines.next().unwrap().trim_start_matches("# channels:").split_whitespace().map(String::from).collect();
    let samples: usize = lines.next().unwrap().trim_start_matches("# samples:").trim().parse().unwrap();
    assert_eq!(d.channel_names, channels);
    assert_eq!(d.samples, samples);
    let rows: Vec<&str> = lines.filter(|l| !l.starts_with('#')).collect();
    let epochs: Vec<&ErpEpoch> = d.subjects.iter().flat_map(|s| &s.epochs).collect();
    assert_eq!(epochs.len(), rows.len());
    for (e, row) in epochs.iter().zip(rows) {
        let parts: Vec<&str> = row.split('|').collect();
        let ids: Vec<u32> = parts[0].split_whitespace().map(|v| v.parse().unwrap()).collect();
        assert_eq!(ids, vec![e.subject_id, e.trial_index, e.label as u32]);
        for (ch, part) in parts[1..].iter().enumerate() {
            let vals: Vec<f64> = part.split_whitespace().map(|v| v.parse().unwrap()).collect();
            assert_eq!(&e.signal.data()[ch * samples..(ch + 1) * samples], vals.as_slice());
        }
    }
    assert_eq!(d.subject_ids(), vec![3, 7]);
}

#[test]
fn csv_export_reimports() {
    let d = import_csv(FIXTURE, 250.0).unwrap();
    assert_eq!(import_csv(&export_csv(&d), 250.0).unwrap(), d);
}

#[test]
fn file_round_trip_and_wrong_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.erps");
    let d = generate_synthetic(&SynthSpec { n_subjects: 3, trials_per_subject: 5, ..SynthSpec::default() }).unwrap();
    save_dataset(&path, &d).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), d);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(b"NOPE");
    std::fs::write(&path, &bytes).unwrap();
    let err = load_dataset(&path).unwrap_err();
    assert_eq!(err.code(), "format");
    assert!(matches!(load_dataset(dir.path().join("missing.erps")), Err(Error::Io(_))));
}

fn spec(effect: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        n_subjects: 10,
        trials_per_subject: 200,
        effect_amplitude: effect,
        noise_sigma: 2.0,
        sick_fraction: SickFraction::All(0.5),
        seed,
        ..SynthSpec::default()
    }
}

/// Per-trial value of channel `ch` at the peak sample, split by label.
fn peak_values(d: &Dataset, ch: usize) -> (Vec<f64>, Vec<f64>) {
    let t = d.samples;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for e in d.subjects.iter().flat_map(|s| &s.epochs) {
        let v = e.signal.data()[ch * t + 100];
        if e.label == 0 { a.push(v) } else { b.push(v) }
    }
    (a, b)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (va, vb) = (var(a) / a.len() as f64, var(b) / b.len() as f64);
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()))
}

#[test]
fn null_effect_is_indistinguishable() {
    // no subject shift so the pooled channel means are comparable
    let d = generate_synthetic(&SynthSpec { subject_shift_sigma: 0.0, ..spec(0.0, 11) }).unwrap();
    let ch = d.channel_names.iter().position(|c| c == "LLPf").unwrap();
    let (a, b) = peak_values(&d, ch);
    assert!(a.len() + b.len() >= 1000);
    let p = welch_p(&a, &b);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn planted_effect_size_at_peak() {
    let d = generate_synthetic(&SynthSpec { subject_shift_sigma: 0.0, ..spec(5.0, 12) }).unwrap();
    let ch = d.channel_names.iter().position(|c| c == "LLPf").unwrap();
    let (a, b) = peak_values(&d, ch);
    let diff = mean(&a) - mean(&b);
    assert!((diff - 5.0).abs() < 0.5, "difference {diff}");
    // non-discriminative channels carry no label effect
    let other = d.channel_names.iter().position(|c| c == "MiPa").unwrap();
    let (a, b) = peak_values(&d, other);
    assert!((mean(&a) - mean(&b)).abs() < 0.5);
}

#[test]
fn same_seed_same_bytes() {
    let s = SynthSpec { n_subjects: 3, trials_per_subject: 30, ..SynthSpec::default() };
    let h = |s: &SynthSpec| Sha256::digest(encode_dataset(&generate_synthetic(s).unwrap()).unwrap());
    assert_eq!(h(&s), h(&s));
    assert_ne!(h(&s), h(&SynthSpec { seed: 1, ..s.clone() }));
}

#[test]
fn label_balance_within_binomial_noise() {
    let d = generate_synthetic(&SynthSpec {
        n_subjects: 4,
        trials_per_subject: 500,
        sick_fraction: SickFraction::PerSubject(vec![0.0, 0.25, 0.5, 1.0]),
        ..SynthSpec::default()
    })
    .unwrap();
    for (s, p) in d.subjects.iter().zip([0.0, 0.25, 0.5, 1.0]) {
        let frac = s.label_counts()[1] as f64 / 500.0;
        let sd = (p * (1.0 - p) / 500.0f64).sqrt();
        assert!((frac - p).abs() <= 4.0 * sd + 1e-12, "subject {}: {frac} vs {p}", s.subject_id);
    }
    assert!(!d.subjects[0].has_both_labels() && !d.subjects[3].has_both_labels());
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4, 1usize..6, 0usize..4).prop_flat_map(|(c, t, n_sub)| {
        proptest::collection::vec(
            (any::<u32>(), proptest::collection::vec((any::<u32>(), 0u8..2, proptest::collection::vec(any::<f32>(), c * t)), 0..4)),
            n_sub,
        )
        .prop_map(move |subs| {
            let mut d = Dataset::new((0..c).map(|i| format!("ch{i}")).collect(), t, 512.0);
            let mut seen = std::collections::BTreeSet::new();
            for (id, trials) in subs {
                if !seen.insert(id) {
                    continue;
                }
                let epochs = trials
                    .into_iter()
                    .map(|(ti, label, vals)| ErpEpoch {
                        subject_id: id,
                        trial_index: ti,
                        signal: Tensor::new(vec![c, t], vals.into_iter().map(f64::from).collect()).unwrap(),
                        label,
                        symptoms: None,
                    })
                    .collect();
                d.subjects.push(SubjectSet { subject_id: id, epochs });
            }
            d
        })
    })
}

proptest! {
    #[test]
    fn binary_round_trip_is_bit_exact(d in arb_dataset()) {
        let bytes = encode_dataset(&d).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
        for (x, y) in d.subjects.iter().flat_map(|s| &s.epochs).zip(back.subjects.iter().flat_map(|s| &s.epochs)) {
            let xb: Vec<u64> = x.signal.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.signal.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(xb, yb);
        }
    }

    #[test]
    fn folds_partition_subjects(n in 3u32..20, seed in any::<u64>()) {
        let ids: Vec<u32> = (0..n).map(|i| i * 3 + 1).collect();
        for p in plan_loso_folds(&ids, seed).unwrap() {
            let mut all = p.train_subjects.clone();
            all.push(p.test_subject);
            all.push(p.validation_subject);
            all.sort_unstable();
            prop_assert_eq!(&all, &ids);
        }
    }
}
