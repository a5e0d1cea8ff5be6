//! EEGNet and EEG-Conformer layer chains over `[1, C, T]` trials.

use std::fmt;
use std::str::FromStr;

use erpcal_tensor::{Activation, AttentionSpec, Conv2dSpec, LayerSpec, ModelGraph, PoolSpec};

use crate::config::{join_list, ConfigError, KvConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    EegNet,
    Conformer,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::EegNet => "eegnet",
            Arch::Conformer => "conformer",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "eegnet" => Ok(Arch::EegNet),
            "conformer" => Ok(Arch::Conformer),
            _ => Err(format!("unknown architecture {s:?} (eegnet|conformer)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegNetConfig {
    pub f1: usize,
    pub depth: usize,
    pub f2: usize,
    pub temporal_kernel: usize,
    pub separable_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
}

impl Default for EegNetConfig {
    fn default() -> Self {
        EegNetConfig { f1: 8, depth: 2, f2: 16, temporal_kernel: 64, separable_kernel: 16, pool1: 4, pool2: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformerConfig {
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_hidden: usize,
    pub temporal_kernel: usize,
    pub pool: usize,
    pub pool_stride: usize,
    pub classifier: Vec<usize>,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        ConformerConfig {
            hidden: 40,
            heads: 8,
            blocks: 4,
            ff_hidden: 160,
            temporal_kernel: 25,
            pool: 75,
            pool_stride: 15,
            classifier: vec![256, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub arch: Arch,
    pub channels: usize,
    pub samples: usize,
    pub n_classes: usize,
    pub dropout: f64,
    pub eegnet: EegNetConfig,
    pub conformer: ConformerConfig,
}

impl ArchConfig {
    pub fn new(arch: Arch, channels: usize, samples: usize) -> Self {
        ArchConfig {
            arch,
            channels,
            samples,
            n_classes: 2,
            dropout: 0.25,
            eegnet: EegNetConfig::default(),
            conformer: ConformerConfig::default(),
        }
    }

    /// Reads `arch`, `model.*`, `eegnet.*` and `conformer.*` keys.
    pub fn from_kv(kv: &mut KvConfig, channels: usize, samples: usize) -> Result<Self, ConfigError> {
        let arch: Arch = kv.require("arch")?;
        let mut c = ArchConfig::new(arch, channels, samples);
        c.dropout = kv.take_or("model.dropout", c.dropout)?;
        let e = &mut c.eegnet;
        e.f1 = kv.take_or("eegnet.f1", e.f1)?;
        e.depth = kv.take_or("eegnet.depth", e.depth)?;
        e.f2 = kv.take_or("eegnet.f2", e.f1 * e.depth)?;
        e.temporal_kernel = kv.take_or("eegnet.temporal_kernel", e.temporal_kernel)?;
        e.separable_kernel = kv.take_or("eegnet.separable_kernel", e.separable_kernel)?;
        e.pool1 = kv.take_or("eegnet.pool1", e.pool1)?;
        e.pool2 = kv.take_or("eegnet.pool2", e.pool2)?;
        let t = &mut c.conformer;
        t.hidden = kv.take_or("conformer.hidden", t.hidden)?;
        t.heads = kv.take_or("conformer.heads", t.heads)?;
        t.blocks = kv.take_or("conformer.blocks", t.blocks)?;
        t.ff_hidden = kv.take_or("conformer.ff_hidden", t.ff_hidden)?;
        t.temporal_kernel = kv.take_or("conformer.temporal_kernel", t.temporal_kernel)?;
        t.pool = kv.take_or("conformer.pool", t.pool)?;
        t.pool_stride = kv.take_or("conformer.pool_stride", t.pool_stride)?;
        if let Some(widths) = kv.take_list("conformer.classifier")? {
            t.classifier = widths;
        }
        Ok(c)
    }

    /// Canonical text form; its hash identifies the architecture in checkpoints.
    pub fn to_text(&self) -> String {
        let mut kv = KvConfig::default();
        kv.set("arch", self.arch);
        kv.set("channels", self.channels);
        kv.set("samples", self.samples);
        kv.set("n_classes", self.n_classes);
        kv.set("model.dropout", self.dropout);
        match self.arch {
            Arch::EegNet => {
                let e = &self.eegnet;
                kv.set("eegnet.f1", e.f1);
                kv.set("eegnet.depth", e.depth);
                kv.set("eegnet.f2", e.f2);
                kv.set("eegnet.temporal_kernel", e.temporal_kernel);
                kv.set("eegnet.separable_kernel", e.separable_kernel);
                kv.set("eegnet.pool1", e.pool1);
                kv.set("eegnet.pool2", e.pool2);
            }
            Arch::Conformer => {
                let t = &self.conformer;
                kv.set("conformer.hidden", t.hidden);
                kv.set("conformer.heads", t.heads);
                kv.set("conformer.blocks", t.blocks);
                kv.set("conformer.ff_hidden", t.ff_hidden);
                kv.set("conformer.temporal_kernel", t.temporal_kernel);
                kv.set("conformer.pool", t.pool);
                kv.set("conformer.pool_stride", t.pool_stride);
                kv.set("conformer.classifier", join_list(&t.classifier));
            }
        }
        kv.to_text()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KvConfig::parse(text)?;
        let channels = kv.require("channels")?;
        let samples = kv.require("samples")?;
        let mut cfg = ArchConfig::from_kv(&mut kv, channels, samples)?;
        cfg.n_classes = kv.require("n_classes")?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.channels, self.samples]
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        match self.arch {
            Arch::EegNet => eegnet_layers(self),
            Arch::Conformer => conformer_layers(self),
        }
    }

    /// Layers held fixed during calibration.
    pub fn calibration_frozen_layers(&self) -> Vec<usize> {
        match self.arch {
            Arch::EegNet => Vec::new(),
            Arch::Conformer => {
                let first = CONFORMER_FIRST_ENCODER;
                let n = self.conformer.blocks.saturating_sub(1);
                (first..first + n).collect()
            }
        }
    }

    /// Index of the last convolution, the GradCAM feature layer.
    pub fn gradcam_layer(&self) -> Option<usize> {
        match self.arch {
            Arch::EegNet => Some(EEGNET_POINTWISE),
            Arch::Conformer => None,
        }
    }

    /// Conformer only: number of tokens after patch embedding.
    pub fn tokens(&self) -> Result<usize> {
        let t = &self.conformer;
        if t.pool == 0 || t.pool_stride == 0 || self.samples < t.pool {
            return Err(Error::invalid(format!(
                "conformer pooling {} / {} leaves no tokens for T = {}",
                t.pool, t.pool_stride, self.samples
            )));
        }
        Ok((self.samples - t.pool) / t.pool_stride + 1)
    }
}

const EEGNET_POINTWISE: usize = 8;
const CONFORMER_FIRST_ENCODER: usize = 8;

fn eegnet_layers(cfg: &ArchConfig) -> Result<Vec<LayerSpec>> {
    let e = &cfg.eegnet;
    if cfg.samples < e.temporal_kernel {
        return Err(Error::invalid(format!(
            "EEGNet needs T >= temporal kernel {}, got {}",
            e.temporal_kernel, cfg.samples
        )));
    }
    let fd = e.f1 * e.depth;
    let t1 = cfg.samples / e.pool1;
    let t2 = t1 / e.pool2;
    if t2 == 0 {
        return Err(Error::invalid(format!("EEGNet pooling {}x{} leaves no samples of {}", e.pool1, e.pool2, cfg.samples)));
    }
    Ok(vec![
        LayerSpec::Conv2d(Conv2dSpec::new(1, e.f1, (1, e.temporal_kernel)).same_time().with_bias(false)),
        LayerSpec::BatchNorm { channels: e.f1 },
        LayerSpec::Conv2d(Conv2dSpec::new(e.f1, fd, (cfg.channels, 1)).with_groups(e.f1).with_bias(false)),
        LayerSpec::BatchNorm { channels: fd },
        LayerSpec::Activation(Activation::Elu),
        LayerSpec::Pool(PoolSpec::new((1, e.pool1), (1, e.pool1))),
        LayerSpec::Dropout { rate: cfg.dropout },
        LayerSpec::Conv2d(Conv2dSpec::new(fd, fd, (1, e.separable_kernel)).same_time().with_groups(fd).with_bias(false)),
        LayerSpec::Conv2d(Conv2dSpec::new(fd, e.f2, (1, 1)).with_bias(false)),
        LayerSpec::BatchNorm { channels: e.f2 },
        LayerSpec::Activation(Activation::Elu),
        LayerSpec::Pool(PoolSpec::new((1, e.pool2), (1, e.pool2))),
        LayerSpec::Dropout { rate: cfg.dropout },
        LayerSpec::Flatten,
        LayerSpec::Linear { inputs: e.f2 * t2, outputs: cfg.n_classes },
    ])
}

fn conformer_layers(cfg: &ArchConfig) -> Result<Vec<LayerSpec>> {
    let t = &cfg.conformer;
    if cfg.samples < t.temporal_kernel {
        return Err(Error::invalid(format!(
            "Conformer needs T >= temporal kernel {}, got {}",
            t.temporal_kernel, cfg.samples
        )));
    }
    let tokens = cfg.tokens()?;
    let e = t.hidden;
    let mut layers = vec![
        LayerSpec::Conv2d(Conv2dSpec::new(1, e, (1, t.temporal_kernel)).same_time()),
        LayerSpec::Conv2d(Conv2dSpec::new(e, e, (cfg.channels, 1))),
        LayerSpec::BatchNorm { channels: e },
        LayerSpec::Activation(Activation::Elu),
        LayerSpec::Pool(PoolSpec::new((1, t.pool), (1, t.pool_stride))),
        LayerSpec::Dropout { rate: cfg.dropout },
        LayerSpec::Conv2d(Conv2dSpec::new(e, e, (1, 1))),
        LayerSpec::Rearrange,
    ];
    let block = AttentionSpec { dim: e, heads: t.heads, ff_hidden: t.ff_hidden, dropout: cfg.dropout };
    layers.extend((0..t.blocks).map(|_| LayerSpec::AttentionEncoder(block.clone())));
    layers.push(LayerSpec::Flatten);
    let mut width = tokens * e;
    for &w in &t.classifier {
        layers.push(LayerSpec::Linear { inputs: width, outputs: w });
        layers.push(LayerSpec::Activation(Activation::Elu));
        layers.push(LayerSpec::Dropout { rate: cfg.dropout });
        width = w;
    }
    layers.push(LayerSpec::Linear { inputs: width, outputs: cfg.n_classes });
    Ok(layers)
}

pub fn build_eegnet(cfg: &ArchConfig, seed: u64) -> Result<ModelGraph> {
    if cfg.arch != Arch::EegNet {
        return Err(Error::invalid("build_eegnet needs arch = eegnet"));
    }
    build(cfg, seed)
}

pub fn build_conformer(cfg: &ArchConfig, seed: u64) -> Result<ModelGraph> {
    if cfg.arch != Arch::Conformer {
        return Err(Error::invalid("build_conformer needs arch = conformer"));
    }
    build(cfg, seed)
}

pub fn build(cfg: &ArchConfig, seed: u64) -> Result<ModelGraph> {
    if cfg.n_classes != 2 {
        return Err(Error::invalid(format!("binary classifiers only, got {} classes", cfg.n_classes)));
    }
    Ok(ModelGraph::new(cfg.layers()?, &cfg.input_shape(), seed)?)
}
