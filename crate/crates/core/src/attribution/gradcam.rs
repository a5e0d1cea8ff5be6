use erpcal_tensor::{ModelGraph, Tensor};

use super::ig::{frozen_eval_copy, one_hot, single};
use super::{AttributionMap, Method};
use crate::dataio::ErpEpoch;
use crate::models::ArchConfig;
use crate::{Error, Result};

/// Linear interpolation to `len` samples with half-pixel centres; positions
/// beyond the ends repeat the edge values.
pub fn upsample_linear(src: &[f64], len: usize) -> Vec<f64> {
    let n = src.len();
    if n == 0 {
        return vec![0.0; len];
    }
    let scale = n as f64 / len as f64;
    (0..len)
        .map(|t| {
            let pos = ((t as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            src[lo] * (1.0 - w) + src[hi] * w
        })
        .collect()
}

/// GradCAM on the output of layer `layer`, whose per-sample shape must be
/// `[K, H, W]` with `H` either 1 or the trial's channel count.
pub fn gradcam_at(graph: &ModelGraph, layer: usize, trial: &ErpEpoch, target: u8) -> Result<AttributionMap> {
    let x = &trial.signal;
    if graph.input_shape() != [&[1][..], x.shape()].concat() {
        return Err(Error::Shape(format!("trial {:?} for model input {:?}", x.shape(), graph.input_shape())));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    let mut g = frozen_eval_copy(graph)?;
    let (_, feats) = g.forward_capture(&single(x)?, layer)?;
    let grads = g.backward_with(&one_hot(1, target)?, false, Some(layer))?.captured_grad.expect("captured gradient");
    let s = feats.shape();
    if s.len() != 4 || (s[2] != 1 && s[2] != c) {
        return Err(Error::Shape(format!("GradCAM layer {layer} output {s:?} is not a [K, H, W] feature map")));
    }
    let (k, h, w) = (s[1], s[2], s[3]);
    let area = h * w;
    let mut cam = vec![0.0; area];
    for m in 0..k {
        let a = &feats.data()[m * area..(m + 1) * area];
        let weight = grads.data()[m * area..(m + 1) * area].iter().sum::<f64>() / area as f64;
        cam.iter_mut().zip(a).for_each(|(o, v)| *o += weight * v);
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut values = Vec::with_capacity(c * t);
    for ch in 0..c {
        let row = if h == 1 { &cam[..] } else { &cam[ch * w..(ch + 1) * w] };
        values.extend(upsample_linear(row, t));
    }
    Ok(AttributionMap {
        values: Tensor::new(vec![c, t], values)?,
        target,
        subject_id: trial.subject_id,
        trial_index: trial.trial_index,
        label: trial.label,
        method: Method::GradCam,
        steps: None,
        completeness: None,
    })
}

/// GradCAM on the final convolution of an EEGNet.
pub fn gradcam(graph: &ModelGraph, arch: &ArchConfig, trial: &ErpEpoch, target: u8) -> Result<AttributionMap> {
    let layer = arch
        .gradcam_layer()
        .ok_or_else(|| Error::invalid(format!("GradCAM needs an EEGNet checkpoint, got {}", arch.arch)))?;
    gradcam_at(graph, layer, trial, target)
}
