//! Two-class softmax cross-entropy with optional per-sample weights.

use erpcal_tensor::Tensor;

use crate::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Loss value and its gradient with respect to the `[B, 2]` logits.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Tensor,
}

/// `-sum_i (b_i / |b|_1) * log p_i(y_i)` over a `[B, 2]` logit batch, with
/// `p` the softmax and log arguments clamped at [`LOG_CLAMP`]. Without
/// weights every `b_i` is 1, which gives the plain batch mean.
pub fn weighted_ce(logits: &Tensor, labels: &[u8], weights: Option<&[f64]>) -> Result<LossGrad> {
    let s = logits.shape();
    if s.len() != 2 || s[1] != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::Shape(format!("logits {s:?} for {} labels", labels.len())));
    }
    let n = labels.len();
    let norm = match weights {
        Some(w) => {
            if w.len() != n || w.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
                return Err(Error::invalid("sample weights must be positive, one per label"));
            }
            w.iter().sum::<f64>()
        }
        None => n as f64,
    };
    let log_floor = LOG_CLAMP.ln();
    let mut loss = 0.0;
    let mut grad = vec![0.0; 2 * n];
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::invalid(format!("label {y} is not 0/1")));
        }
        let z = &logits.data()[2 * i..2 * i + 2];
        if !z.iter().all(|v| v.is_finite()) {
            loss = f64::NAN;
            continue;
        }
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        let logp = z[y as usize] - lse;
        let c = weights.map_or(1.0, |w| w[i]) / norm;
        if logp > log_floor {
            loss -= c * logp;
            for k in 0..2 {
                let p = (z[k] - lse).exp();
                grad[2 * i + k] = c * (p - f64::from(u8::from(k == y as usize)));
            }
        } else {
            loss -= c * log_floor;
        }
    }
    Ok(LossGrad { loss, grad: Tensor::new(vec![n, 2], grad)? })
}

/// Predicted label per row: 1 only when the sick logit is strictly larger.
pub fn predict(logits: &Tensor) -> Vec<u8> {
    logits.data().chunks_exact(2).map(|z| u8::from(z[1] > z[0])).collect()
}
