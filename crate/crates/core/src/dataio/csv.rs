//! CSV import: a mandatory header `subject_id,trial_index,label,` followed by
//! `C*T` value columns named `<channel>_<t>`, channel-major. One row per trial.

use std::collections::BTreeMap;
use std::fmt::Write;

use erpcal_tensor::Tensor;

use super::{Dataset, ErpEpoch, SubjectSet};
use crate::{Error, Result};

const KEYS: [&str; 3] = ["subject_id", "trial_index", "label"];

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { line, reason: reason.into() }
}

/// Parses the header into channel names and samples per channel.
fn parse_header(header: &str) -> Result<(Vec<String>, usize)> {
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != KEYS {
        return Err(parse_err(1, format!("header must start with {}", KEYS.join(","))));
    }
    let mut names: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for col in &cols[3..] {
        let (name, t) = col
            .rsplit_once('_')
            .and_then(|(n, t)| t.parse::<usize>().ok().map(|t| (n, t)))
            .ok_or_else(|| parse_err(1, format!("column {col:?} is not <channel>_<sample>")))?;
        if names.last().map(String::as_str) != Some(name) {
            if names.iter().any(|n| n == name) {
                return Err(parse_err(1, format!("channel {name:?} columns are not contiguous")));
            }
            names.push(name.to_string());
            counts.push(0);
        }
        let k = counts.last_mut().expect("pushed");
        if t != *k {
            return Err(parse_err(1, format!("column {col:?}: expected sample index {k}")));
        }
        *k += 1;
    }
    let t = counts[0];
    if counts.iter().any(|&c| c != t) {
        return Err(parse_err(1, "channels have different sample counts"));
    }
    Ok((names, t))
}

/// Subjects are returned sorted by id; trials keep file order.
pub fn import_csv(text: &str, rate_hz: f64) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file, header row is mandatory"))?;
    let (names, t) = parse_header(header)?;
    let c = names.len();
    let mut by_subject: BTreeMap<u32, Vec<ErpEpoch>> = BTreeMap::new();
    for (i, line) in lines {
        let ln = i + 1;
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 + c * t {
            return Err(parse_err(ln, format!("{} columns, header has {}", cols.len(), 3 + c * t)));
        }
        let int = |j: usize| cols[j].parse::<u32>().map_err(|e| parse_err(ln, format!("{}: {e}", KEYS[j])));
        let (subject_id, trial_index, label) = (int(0)?, int(1)?, int(2)?);
        if label > 1 {
            return Err(parse_err(ln, format!("label {label} is not 0/1")));
        }
        let values = cols[3..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(ln, format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        by_subject.entry(subject_id).or_default().push(ErpEpoch {
            subject_id,
            trial_index,
            signal: Tensor::new(vec![c, t], values)?,
            label: label as u8,
            symptoms: None,
        });
    }
    let mut d = Dataset::new(names, t, rate_hz);
    d.subjects = by_subject.into_iter().map(|(subject_id, epochs)| SubjectSet { subject_id, epochs }).collect();
    d.validate()?;
    Ok(d)
}

pub fn export_csv(data: &Dataset) -> String {
    let mut out = KEYS.join(",");
    for n in &data.channel_names {
        for t in 0..data.samples {
            write!(out, ",{n}_{t}").expect("string write");
        }
    }
    out.push('\n');
    for e in data.subjects.iter().flat_map(|s| &s.epochs) {
        write!(out, "{},{},{}", e.subject_id, e.trial_index, e.label).expect("string write");
        for v in e.signal.data() {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    out
}
