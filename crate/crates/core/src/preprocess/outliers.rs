use std::fmt;
use std::str::FromStr;

use crate::dataio::ErpEpoch;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierMode {
    /// Any feature beyond the limit flags the trial.
    Aggressive,
    /// More than half of the features must be beyond the limit.
    Mild,
    Off,
}

impl FromStr for OutlierMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "aggressive" => Ok(OutlierMode::Aggressive),
            "mild" => Ok(OutlierMode::Mild),
            "off" => Ok(OutlierMode::Off),
            _ => Err(format!("unknown outlier mode {s:?} (aggressive|mild|off)")),
        }
    }
}

impl fmt::Display for OutlierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutlierMode::Aggressive => "aggressive",
            OutlierMode::Mild => "mild",
            OutlierMode::Off => "off",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierPolicy {
    pub mode: OutlierMode,
    pub k_sigma: f64,
    /// Statistics per label rather than over all trials.
    pub per_label_stats: bool,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        OutlierPolicy { mode: OutlierMode::Aggressive, k_sigma: 3.0, per_label_stats: true }
    }
}

/// Indices (ascending) of the trials to drop from a training split.
/// Feature means and population standard deviations come only from `train`.
pub fn detect_outliers(train: &[&ErpEpoch], policy: &OutlierPolicy) -> Result<Vec<usize>> {
    if !(policy.k_sigma > 0.0) {
        return Err(Error::invalid(format!("k_sigma must be positive, got {}", policy.k_sigma)));
    }
    if train.is_empty() {
        return Err(Error::invalid("outlier detection on an empty split"));
    }
    if policy.mode == OutlierMode::Off {
        return Ok(Vec::new());
    }
    let groups: Vec<Vec<usize>> = if policy.per_label_stats {
        (0..2u8).map(|l| (0..train.len()).filter(|&i| train[i].label == l).collect()).collect()
    } else {
        vec![(0..train.len()).collect()]
    };
    let mut flagged = Vec::new();
    for members in groups.iter().filter(|g| !g.is_empty()) {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "label {} has a single trial; per-label statistics need at least two",
                train[members[0]].label
            )));
        }
        let d = train[members[0]].signal.numel();
        let n = members.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in members {
            mean.iter_mut().zip(train[i].signal.data()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in members {
            var.iter_mut().zip(train[i].signal.data()).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
        }
        let limit: Vec<f64> = var.iter().map(|s| policy.k_sigma * (s / n).sqrt()).collect();
        for &i in members {
            let beyond = train[i]
                .signal
                .data()
                .iter()
                .zip(&mean)
                .zip(&limit)
                .filter(|((v, m), l)| (*v - *m).abs() > **l)
                .count();
            let hit = match policy.mode {
                OutlierMode::Aggressive => beyond > 0,
                OutlierMode::Mild => 2 * beyond > d,
                OutlierMode::Off => false,
            };
            if hit {
                flagged.push(i);
            }
        }
    }
    flagged.sort_unstable();
    Ok(flagged)
}
