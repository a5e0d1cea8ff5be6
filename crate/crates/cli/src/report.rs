//! Per-subject pre/post-calibration scores aggregated over seeds.
//!
//! `report.csv` has one row per subject and model plus an `AVG` row per
//! model. Scores are percentages with two decimals; `std` is the sample
//! standard deviation over seeds and stays empty with fewer than two.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::commands::read_json;
use crate::layout::{write_file, Layout};
use crate::{CliError, CliResult};

pub const CSV_HEADER: &str = "subject,model,sick_pct,seeds,pre_ba_mean,pre_ba_std,pre_f1_mean,pre_f1_std,\
post_ba_mean,post_ba_std,post_f1_mean,post_f1_std,status";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Subject id, or `AVG`.
    pub subject: String,
    pub model: String,
    pub sick_pct: Option<f64>,
    /// Seeds that contributed scores.
    pub seeds: usize,
    pub expected_seeds: usize,
    /// Fractions in [0, 1]: pre BA, pre F1, post BA, post F1.
    pub stats: [Option<Stat>; 4],
}

impl ReportRow {
    pub fn complete(&self) -> bool {
        self.seeds == self.expected_seeds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{}", r.subject, r.model, pct(r.sick_pct), r.seeds);
            for st in &r.stats {
                let _ = write!(s, ",{},{}", pct(st.map(|x| x.mean)), pct(st.and_then(|x| x.std)));
            }
            let status =
                if r.complete() { "complete".to_string() } else { format!("incomplete {}/{}", r.seeds, r.expected_seeds) };
            let _ = writeln!(s, ",{status}");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let cell = |st: &Option<Stat>| match st {
            None => "-".to_string(),
            Some(x) => match x.std {
                Some(sd) => format!("{:.2} ± {:.2}", 100.0 * x.mean, 100.0 * sd),
                None => format!("{:.2}", 100.0 * x.mean),
            },
        };
        let mut s = format!(
            "{:<8} {:<10} {:>6} {:>16} {:>16} {:>16} {:>16}\n",
            "subject", "model", "sick%", "pre BA", "pre F1", "post BA", "post F1"
        );
        for r in &self.rows {
            let _ = write!(s, "{:<8} {:<10} {:>6}", r.subject, r.model, pct(r.sick_pct));
            for st in &r.stats {
                let _ = write!(s, " {:>16}", cell(st));
            }
            if !r.complete() {
                let _ = write!(s, "  (incomplete {}/{})", r.seeds, r.expected_seeds);
            }
            s.push('\n');
        }
        s
    }
}

struct Manifest {
    model: String,
    seeds: Vec<u64>,
    subjects: Vec<u32>,
}

fn manifest(layout: &Layout) -> CliResult<Manifest> {
    let v = read_json(&layout.manifest())?;
    let bad = || CliError::Runtime(format!("{}: malformed manifest", layout.manifest().display()));
    let ints = |key: &str| -> CliResult<Vec<u64>> {
        v[key].as_array().ok_or_else(bad)?.iter().map(|x| x.as_u64().ok_or_else(bad)).collect()
    };
    Ok(Manifest {
        model: v["arch"].as_str().ok_or_else(bad)?.to_string(),
        seeds: ints("seeds")?,
        subjects: ints("subjects")?.into_iter().map(|s| s as u32).collect(),
    })
}

const KEYS: [(&str, &str); 4] =
    [("pre", "balanced_accuracy"), ("pre", "f1"), ("post", "balanced_accuracy"), ("post", "f1")];

fn run_rows(layout: &Layout) -> CliResult<Vec<ReportRow>> {
    let m = manifest(layout)?;
    let mut rows = Vec::new();
    // per_seed[seed][metric] for subjects complete across seeds, for the AVG spread.
    let mut complete_values: Vec<[Vec<f64>; 4]> = Vec::new();
    for &subject in &m.subjects {
        let mut values: [Vec<f64>; 4] = Default::default();
        let mut sick = None;
        for &seed in &m.seeds {
            let path = layout.calib_result(seed, subject);
            if !path.exists() {
                continue;
            }
            let v = read_json(&path)?;
            let nums: Option<Vec<f64>> = KEYS.iter().map(|(p, k)| v[p][k].as_f64()).collect();
            let nums = nums.ok_or_else(|| CliError::Runtime(format!("{}: missing scores", path.display())))?;
            for (dst, x) in values.iter_mut().zip(nums) {
                dst.push(x);
            }
            sick = sick.or(v["sick_fraction"].as_f64());
        }
        let row = ReportRow {
            subject: subject.to_string(),
            model: m.model.clone(),
            sick_pct: sick,
            seeds: values[0].len(),
            expected_seeds: m.seeds.len(),
            stats: [0, 1, 2, 3].map(|i| Stat::of(&values[i])),
        };
        if row.complete() {
            complete_values.push(values);
        }
        rows.push(row);
    }
    let complete: Vec<&ReportRow> = rows.iter().filter(|r| r.complete()).collect();
    let mean_of = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mut stats = [None; 4];
    if !complete.is_empty() {
        for (i, st) in stats.iter_mut().enumerate() {
            let means: Vec<f64> = complete.iter().map(|r| r.stats[i].expect("complete row").mean).collect();
            let per_seed: Vec<f64> = (0..m.seeds.len())
                .map(|s| complete_values.iter().map(|v| v[i][s]).sum::<f64>() / complete_values.len() as f64)
                .collect();
            *st = Some(Stat { mean: mean_of(&means).expect("nonempty"), std: Stat::of(&per_seed).and_then(|x| x.std) });
        }
    }
    let sick: Vec<f64> = complete.iter().filter_map(|r| r.sick_pct).collect();
    let avg = ReportRow {
        subject: "AVG".into(),
        model: m.model.clone(),
        sick_pct: mean_of(&sick),
        seeds: if complete.len() == rows.len() { m.seeds.len() } else { 0 },
        expected_seeds: m.seeds.len(),
        stats,
    };
    rows.push(avg);
    Ok(rows)
}

/// Builds the report over `runs` (one output directory per model) and
/// writes `report.csv` and `report.txt` into `out`.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> CliResult<Report> {
    let mut rows = Vec::new();
    for run in runs {
        rows.extend(run_rows(&Layout::new(run))?);
    }
    let report = Report { rows };
    let layout = Layout::new(out);
    write_file(&layout.report_csv(), report.to_csv())?;
    write_file(&layout.report_txt(), report.to_text())?;
    Ok(report)
}
