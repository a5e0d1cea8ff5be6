//! Integrated gradients, GradCAM, per-channel aggregation and heatmap export.

mod export;
mod gradcam;
mod ig;

use std::collections::BTreeMap;
use std::fmt;

use erpcal_tensor::Tensor;

use crate::{Error, Result};

pub use export::{export_heatmap, heatmap_csv, heatmap_pgm, heatmap_svg, summary_csv, HeatmapFormat};
pub use gradcam::{gradcam, gradcam_at, upsample_linear};
pub use ig::{integrated_gradients, Completeness, DEFAULT_IG_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    IntegratedGradients,
    GradCam,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::IntegratedGradients => "ig",
            Method::GradCam => "gradcam",
        })
    }
}

/// Signed `[C, T]` importance for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub values: Tensor,
    pub target: u8,
    pub subject_id: u32,
    pub trial_index: u32,
    /// True label of the trial.
    pub label: u8,
    pub method: Method,
    /// Riemann steps (IG only).
    pub steps: Option<usize>,
    pub completeness: Option<Completeness>,
}

/// Per-channel sum over time, averaged over a selection of maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSummary {
    pub channel_names: Vec<String>,
    pub values: Vec<f64>,
    pub maps: usize,
}

impl ChannelSummary {
    /// Channel names ordered by decreasing value; ties keep montage order.
    pub fn ranking(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.channel_names[i].as_str()).collect()
    }

    pub fn top(&self) -> &str {
        self.ranking()[0]
    }
}

pub fn channel_summary(maps: &[&AttributionMap], channel_names: &[String]) -> Result<ChannelSummary> {
    let first = maps.first().ok_or_else(|| Error::invalid("channel summary over zero maps"))?;
    let shape = first.values.shape().to_vec();
    if shape.len() != 2 || shape[0] != channel_names.len() {
        return Err(Error::Shape(format!("map {shape:?} for {} channel names", channel_names.len())));
    }
    let (c, t) = (shape[0], shape[1]);
    let mut values = vec![0.0; c];
    for m in maps {
        if m.values.shape() != shape.as_slice() {
            return Err(Error::Shape(format!("maps of shapes {shape:?} and {:?}", m.values.shape())));
        }
        for (ch, v) in values.iter_mut().enumerate() {
            *v += m.values.data()[ch * t..(ch + 1) * t].iter().sum::<f64>();
        }
    }
    values.iter_mut().for_each(|v| *v /= maps.len() as f64);
    Ok(ChannelSummary { channel_names: channel_names.to_vec(), values, maps: maps.len() })
}

/// Element-wise mean of a selection of maps, as a `[C, T]` tensor.
pub fn mean_map(maps: &[&AttributionMap]) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::invalid("mean of zero maps"))?;
    let mut acc = vec![0.0; first.values.numel()];
    for m in maps {
        if m.values.shape() != first.values.shape() {
            return Err(Error::Shape("maps of different shapes".into()));
        }
        acc.iter_mut().zip(m.values.data()).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= maps.len() as f64);
    Ok(Tensor::new(first.values.shape().to_vec(), acc)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Indices into the input maps.
    pub indices: Vec<usize>,
    pub subjects: Vec<u32>,
    pub warning: Option<String>,
}

/// Sick-labelled trials of subjects whose test BA exceeds `threshold`.
pub fn select_high_accuracy_sick(subject_ba: &BTreeMap<u32, f64>, maps: &[AttributionMap], threshold: f64) -> Selection {
    let subjects: Vec<u32> = subject_ba.iter().filter(|(_, &ba)| ba > threshold).map(|(&s, _)| s).collect();
    let indices: Vec<usize> = maps
        .iter()
        .enumerate()
        .filter(|(_, m)| m.label == 1 && subjects.contains(&m.subject_id))
        .map(|(i, _)| i)
        .collect();
    let warning = indices.is_empty().then(|| {
        format!("no sick trials from subjects with balanced accuracy above {threshold}; selection is empty")
    });
    Selection { indices, subjects, warning }
}
