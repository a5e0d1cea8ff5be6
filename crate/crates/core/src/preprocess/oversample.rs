use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::{Error, Result};

/// Per-trial weights `1 / count(label)`, so each class is drawn equally often.
pub fn oversample_weights(labels: &[u8]) -> Result<Vec<f64>> {
    let sick = labels.iter().filter(|&&l| l == 1).count();
    let counts = [labels.len() - sick, sick];
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::invalid(
            "oversampling needs both labels in the training split; single-label subjects go through calibration donors",
        ));
    }
    Ok(labels.iter().map(|&l| 1.0 / counts[l as usize] as f64).collect())
}

/// Draws trial indices with replacement according to fixed weights.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        WeightedIndex::new(weights).map(|dist| WeightedSampler { dist }).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn draw<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}
