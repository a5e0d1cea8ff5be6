use crate::{ModelGraph, Result, TensorError};

/// Learning-rate schedule over optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant,
    /// Multiply by `factor` once each milestone step has been reached.
    MultiStep { milestones: Vec<u64>, factor: f64 },
}

pub fn scheduler_lr(base: f64, schedule: &Schedule, step: u64) -> f64 {
    match schedule {
        Schedule::Constant => base,
        Schedule::MultiStep { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| step >= m).count();
            base * factor.powi(passed as i32)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
        }
    }
}

/// Adam with bias correction and coupled (L2) weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(graph: &ModelGraph, cfg: AdamConfig) -> Self {
        let zeros = || graph.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Adam { cfg, step: 0, m: zeros(), v: zeros() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate the next call to [`Adam::step`] will use.
    pub fn current_lr(&self) -> f64 {
        scheduler_lr(self.cfg.lr, &self.cfg.schedule, self.step)
    }

    /// Applies one update to every unfrozen parameter. Every unfrozen
    /// parameter must carry a gradient.
    pub fn step(&mut self, graph: &mut ModelGraph) -> Result<()> {
        if self.m.len() != graph.params().len() {
            return Err(TensorError::InvalidArgument("optimizer built for a different graph".into()));
        }
        for i in 0..graph.params().len() {
            if !graph.is_param_frozen(i) && graph.params()[i].tensor.grad().is_none() {
                return Err(TensorError::MissingGradient(graph.params()[i].name.clone()));
            }
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..graph.params().len() {
            if graph.is_param_frozen(i) {
                continue;
            }
            let p = &mut graph.params_mut()[i].tensor;
            let grad = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j] + self.cfg.weight_decay * *w;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

/// Rescales all unfrozen gradients so their global L2 norm is at most
/// `max_norm`. Returns the factor applied (1 when unchanged).
pub fn clip_grad_norm(graph: &mut ModelGraph, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(TensorError::InvalidArgument(format!("max_norm must be positive, got {max_norm}")));
    }
    let n = graph.params().len();
    let mut sq = 0.0;
    for i in 0..n {
        if graph.is_param_frozen(i) {
            continue;
        }
        if let Some(g) = graph.params()[i].tensor.grad() {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for i in 0..n {
        if graph.is_param_frozen(i) {
            continue;
        }
        if let Some(g) = graph.params_mut()[i].tensor.grad_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(scale)
}
