use erpcal_tensor::{Mode, ModelGraph, Tensor};

use super::{AttributionMap, Method};
use crate::dataio::ErpEpoch;
use crate::{Error, Result};

pub const DEFAULT_IG_STEPS: usize = 64;

const CHUNK: usize = 64;

/// How far the attributions are from summing to `F(x) - F(baseline)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completeness {
    pub attribution_sum: f64,
    pub output_delta: f64,
    pub gap: f64,
}

impl Completeness {
    /// `gap / |delta|`; 0 when both are 0.
    pub fn relative_gap(&self) -> f64 {
        if self.gap == 0.0 {
            0.0
        } else {
            self.gap / self.output_delta.abs()
        }
    }
}

pub(super) fn frozen_eval_copy(graph: &ModelGraph) -> Result<ModelGraph> {
    let mut g = graph.clone();
    g.set_mode(Mode::Eval);
    g.freeze(0..g.num_layers())?;
    Ok(g)
}

pub(super) fn one_hot(batch: usize, target: u8) -> Result<Tensor> {
    if target > 1 {
        return Err(Error::invalid(format!("target label {target} is not 0/1")));
    }
    let mut seed = Tensor::zeros(&[batch, 2]);
    for b in 0..batch {
        seed.data_mut()[2 * b + target as usize] = 1.0;
    }
    Ok(seed)
}

pub(super) fn single(x: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1, 1];
    shape.extend_from_slice(x.shape());
    Ok(x.clone().reshape(&shape)?)
}

/// Midpoint Riemann approximation of integrated gradients of the target
/// logit along the straight path from `baseline` to the trial.
pub fn integrated_gradients(
    graph: &ModelGraph,
    trial: &ErpEpoch,
    baseline: &Tensor,
    target: u8,
    steps: usize,
) -> Result<AttributionMap> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients need at least one step"));
    }
    let x = &trial.signal;
    if baseline.shape() != x.shape() || graph.input_shape() != [&[1][..], x.shape()].concat() {
        return Err(Error::Shape(format!(
            "trial {:?}, baseline {:?}, model input {:?}",
            x.shape(),
            baseline.shape(),
            graph.input_shape()
        )));
    }
    let mut g = frozen_eval_copy(graph)?;
    let d = x.numel();
    let diff: Vec<f64> = x.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    let mut grad_sum = vec![0.0; d];
    let alphas: Vec<f64> = (0..steps).map(|k| (k as f64 + 0.5) / steps as f64).collect();
    for chunk in alphas.chunks(CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * d);
        for &a in chunk {
            data.extend(baseline.data().iter().zip(&diff).map(|(b, dv)| b + a * dv));
        }
        let mut shape = vec![chunk.len(), 1];
        shape.extend_from_slice(x.shape());
        g.forward(&Tensor::new(shape, data)?)?;
        let gx = g.backward_with(&one_hot(chunk.len(), target)?, true, None)?.input_grad.expect("input gradient");
        for row in gx.data().chunks_exact(d) {
            grad_sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
    }
    let values: Vec<f64> = diff.iter().zip(&grad_sum).map(|(dv, s)| dv * s / steps as f64).collect();
    let fx = g.infer(&single(x)?)?.data()[target as usize];
    let fb = g.infer(&single(baseline)?)?.data()[target as usize];
    let attribution_sum: f64 = values.iter().sum();
    let output_delta = fx - fb;
    Ok(AttributionMap {
        values: Tensor::new(x.shape().to_vec(), values)?,
        target,
        subject_id: trial.subject_id,
        trial_index: trial.trial_index,
        label: trial.label,
        method: Method::IntegratedGradients,
        steps: Some(steps),
        completeness: Some(Completeness { attribution_sum, output_delta, gap: (attribution_sum - output_delta).abs() }),
    })
}
