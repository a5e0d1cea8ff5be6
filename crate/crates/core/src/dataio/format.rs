//! `.erps`: little-endian binary container for epoched ERP datasets.
//!
//! ```text
//! "ERPS" | version u16 | C u16 | T u32 | rate u32 (mHz) | subjects u32
//! C x (name_len u16, utf-8 name)
//! per subject:
//!   id u32 | trials u32 | trial_index u32 x trials
//!   f32 x (trials * C * T)         channel-major per trial
//!   label u8 x trials
//!   has_symptoms u8
//!   if 1: items u16 | items x (len u16, utf-8) | u8 x (trials * items)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use erpcal_tensor::Tensor;

use super::{Dataset, ErpEpoch, SubjectSet};
use crate::bytes::{put_str, Reader};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ERPS";
pub const FORMAT_VERSION: u16 = 1;

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(data)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// Signals are stored as `f32`; values not exactly representable are rounded.
pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    data.validate()?;
    let c = u16::try_from(data.channels()).map_err(|_| Error::Format("more than 65535 channels".into()))?;
    let count = |n: usize, what: &str| u32::try_from(n).map_err(|_| Error::Format(format!("too many {what}")));
    let mut out = Vec::with_capacity(64 + data.num_epochs() * (data.channels() * data.samples * 4 + 5));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    out.extend_from_slice(&count(data.samples, "samples")?.to_le_bytes());
    out.extend_from_slice(&data.rate_mhz.to_le_bytes());
    out.extend_from_slice(&count(data.subjects.len(), "subjects")?.to_le_bytes());
    for name in &data.channel_names {
        put_str(&mut out, name)?;
    }
    for s in &data.subjects {
        out.extend_from_slice(&s.subject_id.to_le_bytes());
        out.extend_from_slice(&count(s.epochs.len(), "trials")?.to_le_bytes());
        for e in &s.epochs {
            out.extend_from_slice(&e.trial_index.to_le_bytes());
        }
        for e in &s.epochs {
            for &v in e.signal.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend(s.epochs.iter().map(|e| e.label));
        let with = s.epochs.iter().filter(|e| e.symptoms.is_some()).count();
        if with == 0 {
            out.push(0);
            continue;
        }
        if with != s.epochs.len() {
            return Err(Error::Format(format!("subject {}: symptom scores on some trials only", s.subject_id)));
        }
        let items: Vec<&String> = s.epochs[0].symptoms.as_ref().expect("checked").keys().collect();
        out.push(1);
        let n = u16::try_from(items.len()).map_err(|_| Error::Format("too many symptom items".into()))?;
        out.extend_from_slice(&n.to_le_bytes());
        for item in &items {
            put_str(&mut out, item)?;
        }
        for e in &s.epochs {
            let scores = e.symptoms.as_ref().expect("checked");
            if scores.len() != items.len() || !items.iter().all(|k| scores.contains_key(*k)) {
                return Err(Error::Format(format!(
                    "subject {} trial {}: symptom items differ within the subject",
                    s.subject_id, e.trial_index
                )));
            }
            out.extend(items.iter().map(|k| scores[*k]));
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic").map_err(|_| Error::Format("file too short for magic".into()))? != MAGIC {
        return Err(Error::Format("bad magic, not an .erps file".into()));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let c = r.u16("channel count")? as usize;
    let t = r.u32("sample count")? as usize;
    let rate_mhz = r.u32("sampling rate")?;
    let n_subjects = r.u32("subject count")?;
    if c == 0 || t == 0 {
        return Err(Error::Shape(format!("header declares {c} channels x {t} samples")));
    }
    let channel_names = (0..c).map(|_| r.string("channel name")).collect::<Result<Vec<_>>>()?;
    let mut subjects = Vec::new();
    for _ in 0..n_subjects {
        let subject_id = r.u32("subject id")?;
        let n = r.u32("trial count")? as usize;
        let idx_bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("trial count overflow".into()))?, "trial indices")?;
        let per = c * t;
        let sig_len = n.checked_mul(per).and_then(|v| v.checked_mul(4)).ok_or_else(|| Error::Format("size overflow".into()))?;
        let sig = r.take(sig_len, "signals")?;
        let labels = r.take(n, "labels")?;
        let mut epochs = Vec::with_capacity(n);
        for i in 0..n {
            let data = sig[i * per * 4..(i + 1) * per * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            if labels[i] > 1 {
                return Err(Error::Format(format!("subject {subject_id}: label {} is not 0/1", labels[i])));
            }
            epochs.push(ErpEpoch {
                subject_id,
                trial_index: u32::from_le_bytes(idx_bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes")),
                signal: Tensor::new(vec![c, t], data)?,
                label: labels[i],
                symptoms: None,
            });
        }
        match r.u8("symptom flag")? {
            0 => {}
            1 => {
                let k = r.u16("symptom item count")? as usize;
                let items = (0..k).map(|_| r.string("symptom item")).collect::<Result<Vec<_>>>()?;
                let scores = r.take(n * k, "symptom scores")?;
                for (i, e) in epochs.iter_mut().enumerate() {
                    let row = &scores[i * k..(i + 1) * k];
                    e.symptoms = Some(items.iter().cloned().zip(row.iter().copied()).collect::<BTreeMap<_, _>>());
                }
            }
            f => return Err(Error::Format(format!("subject {subject_id}: symptom flag {f}"))),
        }
        subjects.push(SubjectSet { subject_id, epochs });
    }
    r.finish()?;
    let d = Dataset { channel_names, samples: t, rate_mhz, subjects };
    d.validate()?;
    Ok(d)
}
