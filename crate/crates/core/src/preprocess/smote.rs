//! Safe-level SMOTE: interpolation between a minority seed and one of its
//! minority neighbours, with the position along the segment biased toward
//! whichever endpoint sits in the safer (more minority) neighbourhood.

use rand::seq::SliceRandom;
use rand::Rng;

use super::sq_dist;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig { k_neighbors: 5, seed: 0 }
    }
}

/// Indices of the `k` nearest rows to `pool[i]` in `pool`, excluding `i`;
/// ties by index.
fn knn(pool: &[&[f64]], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> =
        pool.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, r)| (sq_dist(pool[i], r), j)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Returns `target - minority.len()` synthetic minority rows, or
/// `max(0, majority.len() - minority.len())` when `target` is `None`.
pub fn safe_level_smote<R: AsRef<[f64]>>(
    minority: &[R],
    majority: &[R],
    cfg: &SmoteConfig,
    target: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let m = minority.len();
    if m < 2 {
        return Err(Error::invalid(format!("safe-level SMOTE needs at least 2 minority rows, got {m}")));
    }
    let k = cfg.k_neighbors;
    if k == 0 || k >= m {
        return Err(Error::invalid(format!("k_neighbors = {k} must be in 1..{m} (minority population)")));
    }
    let target = target.unwrap_or(majority.len().max(m));
    let need = target.saturating_sub(m);
    if need == 0 {
        return Ok(Vec::new());
    }
    let all: Vec<&[f64]> = minority.iter().chain(majority).map(AsRef::as_ref).collect();
    let mins: Vec<&[f64]> = all[..m].to_vec();
    // safe level: minority count among the k nearest of the whole data
    let safe: Vec<usize> = (0..m).map(|i| knn(&all, i, k).into_iter().filter(|&j| j < m).count()).collect();
    let min_nn: Vec<Vec<usize>> = (0..m).map(|i| knn(&mins, i, k)).collect();

    let mut rng = stream(cfg.seed);
    let mut out = Vec::with_capacity(need);
    let mut order: Vec<usize> = (0..m).collect();
    while out.len() < need {
        order.shuffle(&mut rng);
        let before = out.len();
        for &p in &order {
            if out.len() == need {
                break;
            }
            let n = min_nn[p][rng.random_range(0..k)];
            let (slp, sln) = (safe[p] as f64, safe[n] as f64);
            let gap = if sln == 0.0 {
                if slp == 0.0 {
                    continue;
                }
                0.0
            } else {
                let ratio = slp / sln;
                if ratio == 1.0 {
                    rng.random_range(0.0..=1.0)
                } else if ratio > 1.0 {
                    rng.random_range(0.0..=1.0 / ratio)
                } else {
                    rng.random_range(1.0 - ratio..=1.0)
                }
            };
            out.push(mins[p].iter().zip(mins[n]).map(|(a, b)| a + gap * (b - a)).collect());
        }
        if out.len() == before {
            return Err(Error::invalid("every minority row has safe level 0; nothing to interpolate"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_degenerate_cases() {
        let mins: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let majs: Vec<Vec<f64>> = (0..30).map(|i| vec![100.0 + i as f64, 5.0]).collect();
        let out = safe_level_smote(&mins, &majs, &SmoteConfig::default(), None).unwrap();
        assert_eq!(out.len(), 20);
        let same = vec![vec![2.0, 3.0]; 6];
        let out = safe_level_smote(&same, &majs[..9], &SmoteConfig::default(), None).unwrap();
        assert!(out.iter().all(|r| r == &vec![2.0, 3.0]));
        assert!(safe_level_smote(&mins[..1], &majs, &SmoteConfig::default(), None).is_err());
        assert!(safe_level_smote(&mins[..5], &majs, &SmoteConfig::default(), None).is_err());
    }

    #[test]
    fn isolated_minority_cannot_interpolate() {
        // each minority point is surrounded only by majority points
        let mins = vec![vec![0.0], vec![1000.0]];
        let majs: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 2 == 0 { 0.1 } else { 1000.1 } + i as f64 * 1e-3]).collect();
        let cfg = SmoteConfig { k_neighbors: 1, seed: 0 };
        assert!(safe_level_smote(&mins, &majs, &cfg, None).is_err());
    }
}
