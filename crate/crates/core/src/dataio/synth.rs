//! Seeded synthetic ERPs with a planted, label-dependent deflection.
//!
//! Each trial is temporally smoothed Gaussian noise plus a Gaussian bump
//! centred on `peak_sample` on every channel. On the discriminative channels
//! the bump of sick (label 1) trials is `effect_amplitude` smaller. Each
//! subject then gets a fixed per-channel gain and offset.

use std::collections::BTreeMap;

use erpcal_tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{default_channel_names, Dataset, ErpEpoch, SubjectSet, DIFFICULTY_FOCUSING, GENERAL_DISCOMFORT};
use crate::config::{ConfigError, KvConfig};
use crate::rng::{derive_seed, stream, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SickFraction {
    All(f64),
    PerSubject(Vec<f64>),
}

impl SickFraction {
    fn get(&self, subject: usize) -> f64 {
        match self {
            SickFraction::All(p) => *p,
            SickFraction::PerSubject(v) => v[subject],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub channel_names: Vec<String>,
    pub samples: usize,
    pub rate_hz: f64,
    pub noise_sigma: f64,
    /// Std-dev, in samples, of the Gaussian kernel that colours the noise.
    pub smoothing: f64,
    pub discriminative: Vec<String>,
    pub effect_amplitude: f64,
    pub base_amplitude: f64,
    pub peak_sample: f64,
    pub peak_width: f64,
    pub sick_fraction: SickFraction,
    pub subject_shift_sigma: f64,
    pub gain_sigma: f64,
    pub first_subject_id: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 8,
            trials_per_subject: 330,
            channel_names: default_channel_names(),
            samples: super::DEFAULT_SAMPLES,
            rate_hz: super::DEFAULT_RATE_HZ,
            noise_sigma: 2.0,
            smoothing: 4.0,
            discriminative: vec!["LLPf".into()],
            effect_amplitude: 5.0,
            base_amplitude: 10.0,
            peak_sample: 100.0,
            peak_width: 15.0,
            sick_fraction: SickFraction::All(0.3),
            subject_shift_sigma: 3.0,
            gain_sigma: 0.1,
            first_subject_id: 1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Reads `synth.*` keys; `synth.subjects` and `synth.seed` are required.
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = SynthSpec::default();
        let mut s = SynthSpec {
            n_subjects: kv.require("synth.subjects")?,
            seed: kv.require("synth.seed")?,
            trials_per_subject: kv.take_or("synth.trials", d.trials_per_subject)?,
            channel_names: kv.take_list("synth.channels")?.unwrap_or(d.channel_names),
            samples: kv.take_or("synth.samples", d.samples)?,
            rate_hz: kv.take_or("synth.rate_hz", d.rate_hz)?,
            noise_sigma: kv.take_or("synth.noise_sigma", d.noise_sigma)?,
            smoothing: kv.take_or("synth.smoothing", d.smoothing)?,
            discriminative: kv.take_list("synth.discriminative")?.unwrap_or(d.discriminative),
            effect_amplitude: kv.take_or("synth.effect", d.effect_amplitude)?,
            base_amplitude: kv.take_or("synth.base", d.base_amplitude)?,
            peak_sample: kv.take_or("synth.peak", d.peak_sample)?,
            peak_width: kv.take_or("synth.width", d.peak_width)?,
            sick_fraction: d.sick_fraction,
            subject_shift_sigma: kv.take_or("synth.shift_sigma", d.subject_shift_sigma)?,
            gain_sigma: kv.take_or("synth.gain_sigma", d.gain_sigma)?,
            first_subject_id: kv.take_or("synth.first_subject", d.first_subject_id)?,
        };
        if let Some(v) = kv.take_list::<f64>("synth.sick_fraction")? {
            s.sick_fraction = match v.len() {
                1 => SickFraction::All(v[0]),
                _ => SickFraction::PerSubject(v),
            };
        }
        s.validate().map_err(|e| ConfigError::invalid("synth", "", e))?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_subjects == 0 || self.trials_per_subject == 0 || self.samples == 0 || self.channel_names.is_empty() {
            return bad("subjects, trials, samples and channels must all be positive".into());
        }
        if !(self.rate_hz > 0.0) || !(self.noise_sigma >= 0.0) || !(self.smoothing >= 0.0) || !(self.peak_width > 0.0) {
            return bad("rate, noise, smoothing and peak width must be non-negative (rate, width positive)".into());
        }
        if !(self.subject_shift_sigma >= 0.0) || !(self.gain_sigma >= 0.0) {
            return bad("shift and gain spreads must be non-negative".into());
        }
        for d in &self.discriminative {
            if !self.channel_names.contains(d) {
                return bad(format!("discriminative channel {d:?} is not among the channels"));
            }
        }
        let fractions: Vec<f64> = match &self.sick_fraction {
            SickFraction::All(p) => vec![*p],
            SickFraction::PerSubject(v) if v.len() == self.n_subjects => v.clone(),
            SickFraction::PerSubject(v) => {
                return bad(format!("{} sick fractions for {} subjects", v.len(), self.n_subjects));
            }
        };
        if fractions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("sick fractions must lie in [0, 1]".into());
        }
        let mut names = self.channel_names.clone();
        names.sort();
        names.dedup();
        if names.len() != self.channel_names.len() {
            return bad("duplicate channel name".into());
        }
        Ok(())
    }
}

/// Unit-variance smoothing kernel.
fn smoothing_kernel(sd: f64) -> Vec<f64> {
    if sd <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sd).ceil() as isize;
    let k: Vec<f64> = (-half..=half).map(|j| (-0.5 * (j as f64 / sd).powi(2)).exp()).collect();
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.into_iter().map(|v| v / norm).collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (c, t) = (spec.channel_names.len(), spec.samples);
    let kernel = smoothing_kernel(spec.smoothing);
    let bump: Vec<f64> =
        (0..t).map(|i| (-0.5 * ((i as f64 - spec.peak_sample) / spec.peak_width).powi(2)).exp()).collect();
    let disc: Vec<bool> = spec.channel_names.iter().map(|n| spec.discriminative.contains(n)).collect();
    let gain_dist = Normal::new(1.0, spec.gain_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let offset_dist = Normal::new(0.0, spec.subject_shift_sigma).map_err(|e| Error::invalid(e.to_string()))?;

    let mut data = Dataset::new(spec.channel_names.clone(), t, spec.rate_hz);
    let mut white = vec![0.0; t + kernel.len() - 1];
    for s in 0..spec.n_subjects {
        let subject_id = spec.first_subject_id + s as u32;
        let mut rng = stream(derive_seed(spec.seed, &[tag::SYNTH, s as u64]));
        let gains: Vec<f64> = (0..c).map(|_| gain_dist.sample(&mut rng)).collect();
        let offsets: Vec<f64> = (0..c).map(|_| offset_dist.sample(&mut rng)).collect();
        let p_sick = spec.sick_fraction.get(s);
        let mut epochs = Vec::with_capacity(spec.trials_per_subject);
        for trial in 0..spec.trials_per_subject {
            let label = u8::from(rng.random::<f64>() < p_sick);
            let mut signal = vec![0.0; c * t];
            for ch in 0..c {
                white.iter_mut().for_each(|w| *w = StandardNormal.sample(&mut rng));
                let amp = if disc[ch] && label == 1 {
                    spec.base_amplitude - spec.effect_amplitude
                } else {
                    spec.base_amplitude
                };
                for (i, out) in signal[ch * t..(ch + 1) * t].iter_mut().enumerate() {
                    let noise: f64 = kernel.iter().zip(&white[i..]).map(|(k, w)| k * w).sum();
                    let v = gains[ch] * (amp * bump[i] + spec.noise_sigma * noise) + offsets[ch];
                    *out = v as f32 as f64;
                }
            }
            let discomfort = if label == 1 { rng.random_range(1..=3u8) } else { 0 };
            let focusing = match (label, rng.random::<f64>()) {
                (1, u) if u < 0.7 => rng.random_range(1..=3u8),
                (0, u) if u < 0.1 => 1,
                _ => 0,
            };
            epochs.push(ErpEpoch {
                subject_id,
                trial_index: trial as u32,
                signal: Tensor::new(vec![c, t], signal)?,
                label,
                symptoms: Some(BTreeMap::from([
                    (GENERAL_DISCOMFORT.to_string(), discomfort),
                    (DIFFICULTY_FOCUSING.to_string(), focusing),
                ])),
            });
        }
        data.subjects.push(SubjectSet { subject_id, epochs });
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_has_unit_energy() {
        for sd in [0.0, 1.0, 4.0] {
            let k = smoothing_kernel(sd);
            assert!((k.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = SynthSpec { discriminative: vec!["Cz".into()], ..SynthSpec::default() };
        assert!(s.validate().is_err());
        s.discriminative = vec!["LLPf".into()];
        s.validate().unwrap();
        s.sick_fraction = SickFraction::PerSubject(vec![0.5; 3]);
        assert!(s.validate().is_err());
        s.sick_fraction = SickFraction::All(1.5);
        assert!(s.validate().is_err());
    }

    #[test]
    fn kv_requires_subjects_and_seed() {
        let mut kv = KvConfig::parse("synth.seed = 1").unwrap();
        assert_eq!(SynthSpec::from_kv(&mut kv), Err(ConfigError::Missing("synth.subjects".into())));
        let mut kv = KvConfig::parse("synth.subjects = 3\nsynth.seed = 9\nsynth.sick_fraction = 0.1, 0.2, 0.9").unwrap();
        let s = SynthSpec::from_kv(&mut kv).unwrap();
        assert_eq!(s.sick_fraction, SickFraction::PerSubject(vec![0.1, 0.2, 0.9]));
        kv.finish().unwrap();
    }

    #[test]
    fn labels_follow_discomfort_and_values_are_f32() {
        let d = generate_synthetic(&SynthSpec { n_subjects: 2, trials_per_subject: 20, ..SynthSpec::default() }).unwrap();
        for e in d.subjects.iter().flat_map(|s| &s.epochs) {
            let score = e.symptoms.as_ref().unwrap()[GENERAL_DISCOMFORT];
            assert_eq!(e.label == 1, score > 0);
            assert!(e.signal.data().iter().all(|&v| v as f32 as f64 == v));
        }
    }
}
