//! ERP trial containers, the `.erps` binary format, CSV import, LOSO fold
//! planning and the synthetic ERP generator.

mod csv;
mod folds;
mod format;
mod synth;

use std::collections::BTreeMap;

use erpcal_tensor::Tensor;

use crate::{Error, Result};

pub use self::csv::{export_csv, import_csv};
pub use folds::{plan_loso_folds, FoldPlan};
pub use format::{decode_dataset, encode_dataset, load_dataset, save_dataset, FORMAT_VERSION, MAGIC};
pub use synth::{generate_synthetic, SickFraction, SynthSpec};

/// Electrode names in the order the analysed montage lists them.
pub const DEFAULT_CHANNELS: [&str; 16] = [
    "LDCe", "LDPa", "LLPf", "LMCe", "LMOc", "LMPf", "MiCe", "MiOc", "MiPa", "MiPf", "RDCe", "RDPa", "RLPf", "RMCe",
    "RMOc", "RMPf",
];
pub const DEFAULT_SAMPLES: usize = 200;
pub const DEFAULT_RATE_HZ: f64 = 250.0;
pub const GENERAL_DISCOMFORT: &str = "general discomfort";
pub const DIFFICULTY_FOCUSING: &str = "difficulty focusing";

pub fn default_channel_names() -> Vec<String> {
    DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect()
}

/// One trial: a `[C, T]` voltage matrix in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpEpoch {
    pub subject_id: u32,
    pub trial_index: u32,
    pub signal: Tensor,
    /// 1 = sick, 0 = non-sick.
    pub label: u8,
    /// Questionnaire item to score 0..=3.
    pub symptoms: Option<BTreeMap<String, u8>>,
}

impl ErpEpoch {
    pub fn is_sick(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSet {
    pub subject_id: u32,
    pub epochs: Vec<ErpEpoch>,
}

impl SubjectSet {
    pub fn label_counts(&self) -> [usize; 2] {
        let sick = self.epochs.iter().filter(|e| e.is_sick()).count();
        [self.epochs.len() - sick, sick]
    }

    pub fn has_both_labels(&self) -> bool {
        let [a, b] = self.label_counts();
        a > 0 && b > 0
    }
}

/// Subjects sharing one montage and epoch geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub samples: usize,
    /// Sampling rate in millihertz, as stored on disk.
    pub rate_mhz: u32,
    pub subjects: Vec<SubjectSet>,
}

impl Dataset {
    pub fn new(channel_names: Vec<String>, samples: usize, rate_hz: f64) -> Self {
        Dataset { channel_names, samples, rate_mhz: (rate_hz * 1000.0).round() as u32, subjects: Vec::new() }
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_mhz as f64 / 1000.0
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.subjects.iter().map(|s| s.subject_id).collect()
    }

    pub fn subject(&self, id: u32) -> Option<&SubjectSet> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn num_epochs(&self) -> usize {
        self.subjects.iter().map(|s| s.epochs.len()).sum()
    }

    /// Checks ids, trial shapes and labels against the header.
    pub fn validate(&self) -> Result<()> {
        let shape = [self.channels(), self.samples];
        if self.channels() == 0 || self.samples == 0 {
            return Err(Error::Shape("dataset needs at least one channel and one sample".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(s.subject_id) {
                return Err(Error::Format(format!("subject {} appears twice", s.subject_id)));
            }
            for e in &s.epochs {
                if e.subject_id != s.subject_id {
                    return Err(Error::Format(format!(
                        "trial {} of subject {} is tagged subject {}",
                        e.trial_index, s.subject_id, e.subject_id
                    )));
                }
                if e.signal.shape() != shape {
                    return Err(Error::Shape(format!(
                        "subject {} trial {}: shape {:?}, dataset is {:?}",
                        s.subject_id,
                        e.trial_index,
                        e.signal.shape(),
                        shape
                    )));
                }
                if e.label > 1 {
                    return Err(Error::Format(format!("label {} is not 0/1", e.label)));
                }
            }
        }
        Ok(())
    }

    /// Reorders channels to `order`, a permutation of the current names.
    pub fn permute_channels(&mut self, order: &[String]) -> Result<()> {
        let idx: Vec<usize> = order
            .iter()
            .map(|n| {
                self.channel_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::invalid(format!("unknown channel {n:?}")))
            })
            .collect::<Result<_>>()?;
        let mut check = idx.clone();
        check.sort_unstable();
        check.dedup();
        if check.len() != self.channels() || idx.len() != self.channels() {
            return Err(Error::invalid("channel order must list every channel exactly once"));
        }
        let t = self.samples;
        for e in self.subjects.iter_mut().flat_map(|s| s.epochs.iter_mut()) {
            let src = e.signal.data().to_vec();
            let dst = e.signal.data_mut();
            for (new, &old) in idx.iter().enumerate() {
                dst[new * t..(new + 1) * t].copy_from_slice(&src[old * t..(old + 1) * t]);
            }
        }
        self.channel_names = order.to_vec();
        Ok(())
    }

    /// Derives every label from a questionnaire item: sick iff its score > 0.
    pub fn relabel(&mut self, symptom: &str) -> Result<()> {
        for e in self.subjects.iter_mut().flat_map(|s| s.epochs.iter_mut()) {
            let Some(scores) = &e.symptoms else { continue };
            let score = scores.get(symptom).ok_or_else(|| {
                Error::invalid(format!(
                    "subject {} trial {} has no score for {symptom:?}",
                    e.subject_id, e.trial_index
                ))
            })?;
            e.label = u8::from(*score > 0);
        }
        Ok(())
    }
}

/// Drops every trial with a sample strictly beyond `threshold_uv` in
/// magnitude. Returns the surviving subjects and the number removed.
pub fn reject_artifacts(subjects: &[SubjectSet], threshold_uv: f64) -> Result<(Vec<SubjectSet>, usize)> {
    if !(threshold_uv > 0.0) {
        return Err(Error::invalid(format!("artifact threshold must be positive, got {threshold_uv}")));
    }
    let mut rejected = 0;
    let kept = subjects
        .iter()
        .map(|s| {
            let epochs: Vec<ErpEpoch> = s
                .epochs
                .iter()
                .filter(|e| {
                    let ok = e.signal.data().iter().all(|v| v.abs() <= threshold_uv);
                    rejected += usize::from(!ok);
                    ok
                })
                .cloned()
                .collect();
            SubjectSet { subject_id: s.subject_id, epochs }
        })
        .collect();
    Ok((kept, rejected))
}


#[cfg(test)]
mod tests {
    use super::testutil::epoch;
    use super::*;

    fn subject(id: u32, peaks: &[f64]) -> SubjectSet {
        SubjectSet {
            subject_id: id,
            epochs: peaks
                .iter()
                .enumerate()
                .map(|(i, &p)| epoch(id, i as u32, 2, 5, 0, |j| if j == 3 { p } else { (j as f64 * 7.0) % 50.0 - 25.0 }))
                .collect(),
        }
    }

    #[test]
    fn quiet_data_keeps_everything() {
        let subs = vec![subject(1, &[40.0, -49.0]), subject(2, &[10.0])];
        let (kept, n) = reject_artifacts(&subs, 100.0).unwrap();
        assert_eq!(n, 0);
        assert_eq!(kept, subs);
    }

    #[test]
    fn planted_spike_removes_exactly_that_trial() {
        let subs = vec![subject(1, &[20.0, 150.0, -30.0]), subject(2, &[-150.0])];
        let (kept, n) = reject_artifacts(&subs, 100.0).unwrap();
        assert_eq!(n, 2);
        assert_eq!(kept[0].epochs.iter().map(|e| e.trial_index).collect::<Vec<_>>(), vec![0, 2]);
        assert!(kept[1].epochs.is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        let subs = vec![subject(1, &[100.0, -100.0])];
        let (kept, n) = reject_artifacts(&subs, 100.0).unwrap();
        assert_eq!((n, kept[0].epochs.len()), (0, 2));
        assert!(reject_artifacts(&subs, 0.0).is_err());
    }

    #[test]
    fn relabel_from_named_item() {
        let mut d = Dataset::new(vec!["a".into()], 2, 250.0);
        let mut e = epoch(1, 0, 1, 2, 0, |_| 0.0);
        e.symptoms = Some(BTreeMap::from([(GENERAL_DISCOMFORT.to_string(), 2), (DIFFICULTY_FOCUSING.to_string(), 0)]));
        d.subjects.push(SubjectSet { subject_id: 1, epochs: vec![e] });
        d.relabel(GENERAL_DISCOMFORT).unwrap();
        assert_eq!(d.subjects[0].epochs[0].label, 1);
        d.relabel(DIFFICULTY_FOCUSING).unwrap();
        assert_eq!(d.subjects[0].epochs[0].label, 0);
        assert!(d.relabel("nausea").is_err());
    }

    #[test]
    fn channel_permutation_moves_rows() {
        let mut d = Dataset::new(vec!["a".into(), "b".into(), "c".into()], 2, 250.0);
        d.subjects.push(SubjectSet { subject_id: 1, epochs: vec![epoch(1, 0, 3, 2, 0, |i| i as f64)] });
        d.permute_channels(&["c".into(), "a".into(), "b".into()]).unwrap();
        assert_eq!(d.subjects[0].epochs[0].signal.data(), &[4.0, 5.0, 0.0, 1.0, 2.0, 3.0]);
        assert!(d.permute_channels(&["c".into(), "c".into(), "b".into()]).is_err());
        assert!(d.permute_channels(&["c".into()]).is_err());
    }
}
