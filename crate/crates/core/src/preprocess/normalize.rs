use erpcal_tensor::Tensor;

use crate::dataio::ErpEpoch;
use crate::{Error, Result};

pub const NORMALIZER_EPS: f64 = 1e-8;

/// Per-feature z-scoring with statistics of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub epsilon: f64,
}

pub fn fit_normalizer(train: &[&ErpEpoch]) -> Result<Normalizer> {
    let first = train.first().ok_or_else(|| Error::invalid("normalizer fit on zero trials"))?;
    let d = first.signal.numel();
    let n = train.len() as f64;
    let mut mu = vec![0.0; d];
    for e in train {
        if e.signal.numel() != d {
            return Err(Error::Shape("trials of different sizes".into()));
        }
        mu.iter_mut().zip(e.signal.data()).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for e in train {
        var.iter_mut().zip(e.signal.data()).zip(&mu).for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    let sigma = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(Normalizer { mu: Tensor::new(vec![d], mu)?, sigma: Tensor::new(vec![d], sigma)?, epsilon: NORMALIZER_EPS })
}

impl Normalizer {
    pub fn apply_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mu.numel() {
            return Err(Error::Shape(format!("normalizer has {} features, trial {}", self.mu.numel(), x.len())));
        }
        Ok(x.iter()
            .zip(self.mu.data())
            .zip(self.sigma.data())
            .map(|((v, m), s)| (v - m) / s.max(self.epsilon))
            .collect())
    }

    pub fn apply(&self, e: &ErpEpoch) -> Result<ErpEpoch> {
        let data = self.apply_slice(e.signal.data())?;
        Ok(ErpEpoch { signal: Tensor::new(e.signal.shape().to_vec(), data)?, ..e.clone() })
    }

    pub fn apply_all(&self, epochs: &[&ErpEpoch]) -> Result<Vec<ErpEpoch>> {
        epochs.iter().map(|e| self.apply(e)).collect()
    }
}
