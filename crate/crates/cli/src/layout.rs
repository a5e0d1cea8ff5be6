//! Where each command reads and writes under the output root.
//!
//! ```text
//! <out>/config.txt                      canonical experiment config
//! <out>/run.json                        arch, seeds and subjects of the run
//! <out>/seed-<s>/subject-<id>/phase1.ckpt, train.jsonl
//! <out>/seed-<s>/subject-<id>/calibrated.ckpt, calib.jsonl, calib.json
//! <out>/attribution/                    maps, summaries, heatmaps
//! <out>/report.csv, report.txt
//! ```

use std::path::{Path, PathBuf};

use crate::{io_err, CliResult};

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn fold_dir(&self, seed: u64, subject: u32) -> PathBuf {
        self.root.join(format!("seed-{seed}")).join(format!("subject-{subject:03}"))
    }

    pub fn phase1(&self, seed: u64, subject: u32) -> PathBuf {
        self.fold_dir(seed, subject).join("phase1.ckpt")
    }

    pub fn train_log(&self, seed: u64, subject: u32) -> PathBuf {
        self.fold_dir(seed, subject).join("train.jsonl")
    }

    pub fn calibrated(&self, seed: u64, subject: u32) -> PathBuf {
        self.fold_dir(seed, subject).join("calibrated.ckpt")
    }

    pub fn calib_log(&self, seed: u64, subject: u32) -> PathBuf {
        self.fold_dir(seed, subject).join("calib.jsonl")
    }

    pub fn calib_result(&self, seed: u64, subject: u32) -> PathBuf {
        self.fold_dir(seed, subject).join("calib.json")
    }

    pub fn attribution(&self) -> PathBuf {
        self.root.join("attribution")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub(crate) fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}
