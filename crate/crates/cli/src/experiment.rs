//! The experiment configuration file.
//!
//! One `key = value` file drives every command. The data comes either from
//! `data = <path>` (`.erps`, or `.csv` with `data.rate_hz`) or from the
//! `synth.*` generator keys, never both. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use erpcal_core::attribution::{HeatmapFormat, DEFAULT_IG_STEPS};
use erpcal_core::calibrate::CalibConfig;
use erpcal_core::config::{ConfigError, KvConfig};
use erpcal_core::dataio::{generate_synthetic, import_csv, load_dataset, Dataset, SynthSpec};
use erpcal_core::models::{Arch, ArchConfig};
use erpcal_core::train::{PreprocessConfig, TrainConfig};

use crate::{io_err, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File { path: PathBuf, rate_hz: f64 },
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeConfig {
    pub steps: usize,
    /// Subjects need a post-calibration BA strictly above this.
    pub threshold: f64,
    /// Cap on sick holdout trials attributed per subject and seed.
    pub max_trials: Option<usize>,
    pub formats: Vec<HeatmapFormat>,
    /// GradCAM maps alongside IG (EEGNet only).
    pub gradcam: bool,
}

impl AttributeConfig {
    fn from_kv(kv: &mut KvConfig, arch: Arch) -> Result<Self, ConfigError> {
        let c = AttributeConfig {
            steps: kv.take_or("attribute.steps", DEFAULT_IG_STEPS)?,
            threshold: kv.take_or("attribute.threshold", 0.75)?,
            max_trials: kv.take_optional("attribute.max_trials", None)?,
            formats: kv.take_list("attribute.formats")?.unwrap_or(vec![HeatmapFormat::Csv, HeatmapFormat::Svg]),
            gradcam: kv.take_or("attribute.gradcam", arch == Arch::EegNet)?,
        };
        if c.steps == 0 {
            return Err(ConfigError::invalid("attribute.steps", "0", "must be positive"));
        }
        if c.gradcam && arch != Arch::EegNet {
            return Err(ConfigError::invalid("attribute.gradcam", "true", "GradCAM is defined for eegnet only"));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Questionnaire item that defines the labels; `None` keeps stored labels.
    pub symptom: Option<String>,
    /// Geometry is filled in from the data by [`ExperimentConfig::load_data`].
    pub arch: ArchConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub calib: CalibConfig,
    pub attribute: AttributeConfig,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Canonical text of the file, written next to the outputs.
    pub canonical: String,
}

impl ExperimentConfig {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut kv = KvConfig::parse(text)?;
        let canonical = kv.to_text();
        let mut synth_kv = kv.split_prefix("synth.");
        let data = kv.take_str("data");
        let rate_hz = kv.take_or("data.rate_hz", erpcal_core::dataio::DEFAULT_RATE_HZ)?;
        let has_synth = synth_kv.keys().next().is_some();
        let source = match (data, has_synth) {
            (Some(_), true) => return Err(CliError::Config("both `data` and `synth.*` keys are set".into())),
            (None, false) => return Err(CliError::Config("missing required key `data` (or `synth.*` keys)".into())),
            (Some(p), false) => DataSource::File { path: base.join(p), rate_hz },
            (None, true) => {
                let spec = SynthSpec::from_kv(&mut synth_kv)?;
                synth_kv.finish()?;
                DataSource::Synth(spec)
            }
        };
        let symptom = kv.take_str("label.symptom");
        let arch = ArchConfig::from_kv(&mut kv, 0, 0)?;
        let preprocess = PreprocessConfig::from_kv(&mut kv)?;
        let train = TrainConfig::from_kv(&mut kv, arch.arch)?;
        let calib = CalibConfig::from_kv(&mut kv)?;
        let attribute = AttributeConfig::from_kv(&mut kv, arch.arch)?;
        let seeds: Vec<u64> = kv.take_list("seeds")?.ok_or_else(|| ConfigError::Missing("seeds".into()))?;
        if seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "", "at least one seed is required").into());
        }
        let out = kv.take_str("out").map(|p| base.join(p));
        kv.finish()?;
        Ok(ExperimentConfig { source, symptom, arch, preprocess, train, calib, attribute, seeds, out, canonical })
    }

    /// Loads or generates the dataset, applies the label and channel-order
    /// options and sets the model geometry to match.
    pub fn load_data(&mut self, channel_order: Option<&[String]>) -> CliResult<Dataset> {
        let mut data = match &self.source {
            DataSource::Synth(spec) => generate_synthetic(spec)?,
            DataSource::File { path, rate_hz } => {
                if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    import_csv(&text, *rate_hz)?
                } else {
                    load_dataset(path)?
                }
            }
        };
        if let Some(symptom) = &self.symptom {
            data.relabel(symptom)?;
        }
        if let Some(order) = channel_order {
            data.permute_channels(order).map_err(|e| CliError::Config(format!("--channel-order: {e}")))?;
        }
        data.validate()?;
        self.arch.channels = data.channels();
        self.arch.samples = data.samples;
        self.arch.layers().map_err(|e| CliError::Config(format!("model does not fit the data: {e}")))?;
        Ok(data)
    }
}

/// Synthetic-generator section of a config file; other keys are ignored.
pub fn synth_spec(text: &str) -> CliResult<SynthSpec> {
    let mut kv = KvConfig::parse(text)?.split_prefix("synth.");
    let spec = SynthSpec::from_kv(&mut kv)?;
    kv.finish()?;
    Ok(spec)
}

pub fn parse_channel_order(s: &str) -> CliResult<Vec<String>> {
    let order: Vec<String> = s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
    if order.is_empty() {
        return Err(CliError::Config("--channel-order is empty".into()));
    }
    Ok(order)
}
