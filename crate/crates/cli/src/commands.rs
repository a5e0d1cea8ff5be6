use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use erpcal_core::attribution::{
    channel_summary, export_heatmap, gradcam, integrated_gradients, mean_map, select_high_accuracy_sick, summary_csv,
    AttributionMap, Method,
};
use erpcal_core::calibrate::calibrate_fold;
use erpcal_core::checkpoint::{hex, Checkpoint};
use erpcal_core::dataio::{plan_loso_folds, save_dataset, Dataset, ErpEpoch, FoldPlan, SynthSpec};
use erpcal_core::dataio::generate_synthetic;
use erpcal_core::metrics::Scores;
use erpcal_core::train::{map_jobs, prepare_fold, train_fold, RunRecord, BASELINE};
use serde_json::{json, Value};

use crate::experiment::ExperimentConfig;
use crate::layout::{read_file, write_file, Layout};
use crate::{CliError, CliResult};

/// Options shared by the pipeline commands.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub force: bool,
    /// Test subjects to run; `None` runs every fold.
    pub folds: Option<Vec<u32>>,
    pub jobs: usize,
    pub channel_order: Option<Vec<String>>,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions { out: out.into(), force: false, folds: None, jobs: 1, channel_order: None }
    }
}

pub fn cmd_gen(spec: &SynthSpec, out: &Path, force: bool) -> CliResult<()> {
    if out.exists() && !force {
        return Err(CliError::Config(format!("{} exists; pass --force to overwrite", out.display())));
    }
    let data = generate_synthetic(spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| crate::io_err(dir, e))?;
    }
    save_dataset(out, &data)?;
    Ok(())
}

fn fold_plans(data: &Dataset, cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Vec<(u64, FoldPlan)>> {
    let ids = data.subject_ids();
    if let Some(sel) = &opts.folds {
        if let Some(bad) = sel.iter().find(|s| !ids.contains(s)) {
            return Err(CliError::Config(format!("--folds: no subject {bad} in the data")));
        }
    }
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for plan in plan_loso_folds(&ids, seed)? {
            if opts.folds.as_ref().is_none_or(|sel| sel.contains(&plan.test_subject)) {
                out.push((seed, plan));
            }
        }
    }
    Ok(out)
}

fn refuse_existing(paths: impl IntoIterator<Item = PathBuf>, force: bool) -> CliResult<()> {
    if force {
        return Ok(());
    }
    let existing: Vec<String> = paths.into_iter().filter(|p| p.exists()).map(|p| p.display().to_string()).collect();
    match existing.first() {
        None => Ok(()),
        Some(first) => Err(CliError::Config(format!(
            "{} output(s) already exist (first: {first}); pass --force to overwrite",
            existing.len()
        ))),
    }
}

/// Collects per-fold failures into one runtime error naming every fold.
fn gather(results: Vec<(u64, u32, CliResult<()>)>) -> CliResult<()> {
    let failed: Vec<String> = results
        .into_iter()
        .filter_map(|(seed, subject, r)| r.err().map(|e| format!("seed {seed} fold {subject}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} fold(s) failed:\n  {}", failed.len(), failed.join("\n  "))))
    }
}

fn jsonl(lines: &[Value]) -> String {
    lines.iter().map(|v| format!("{v}\n")).collect()
}

fn eval_lines(record: &RunRecord) -> Vec<Value> {
    record
        .evals
        .iter()
        .map(|e| json!({ "event": "eval", "step": e.step, "train_loss": e.train_loss, "metric": e.metric }))
        .collect()
}

fn done_line(record: &RunRecord, ck: &Checkpoint) -> CliResult<Value> {
    Ok(json!({
        "event": "done",
        "best_step": record.best_step,
        "best_metric": record.best_metric,
        "stop_step": record.stop_step,
        "early_stopped": record.early_stopped,
        "checkpoint_sha256": hex(&ck.hash()?),
    }))
}

fn prepare_run(cfg: &mut ExperimentConfig, opts: &RunOptions) -> CliResult<(Dataset, Layout)> {
    let data = cfg.load_data(opts.channel_order.as_deref())?;
    Ok((data, Layout::new(&opts.out)))
}

/// Phase 1: one checkpoint per seed and LOSO fold.
pub fn cmd_train(cfg: &mut ExperimentConfig, opts: &RunOptions) -> CliResult<()> {
    let (data, layout) = prepare_run(cfg, opts)?;
    let plans = fold_plans(&data, cfg, opts)?;
    if let Ok(previous) = std::fs::read_to_string(layout.config()) {
        if previous != cfg.canonical && !opts.force {
            return Err(CliError::Config(format!(
                "{} holds a different experiment; pass --force or choose another --out",
                layout.root.display()
            )));
        }
    }
    refuse_existing(plans.iter().map(|(s, p)| layout.phase1(*s, p.test_subject)), opts.force)?;
    write_file(&layout.config(), &cfg.canonical)?;
    let manifest = json!({
        "arch": cfg.arch.arch.name(),
        "seeds": cfg.seeds,
        "subjects": data.subject_ids(),
        "channels": data.channel_names,
    });
    write_file(&layout.manifest(), format!("{}\n", serde_json::to_string_pretty(&manifest).expect("json")))?;
    let cfg = &*cfg;
    let results = map_jobs(opts.jobs, plans, |(seed, plan)| {
        let subject = plan.test_subject;
        let run = || -> CliResult<()> {
            let fold = prepare_fold(&data, &plan, &cfg.preprocess)?;
            let outcome = train_fold(&fold, &cfg.arch, &cfg.train)?;
            let mut lines = vec![json!({
                "event": "fold",
                "seed": seed,
                "test_subject": subject,
                "validation_subject": plan.validation_subject,
                "train_subjects": plan.train_subjects,
                "train_trials": fold.train.len(),
                "artifacts_rejected": fold.artifacts_rejected,
                "outliers_removed": fold.outliers_removed,
            })];
            lines.extend(eval_lines(&outcome.record));
            lines.push(done_line(&outcome.record, &outcome.checkpoint)?);
            write_file(&layout.train_log(seed, subject), jsonl(&lines))?;
            outcome.checkpoint.save(layout.phase1(seed, subject))?;
            eprintln!("train seed {seed} fold {subject}: best validation BA {:.4}", outcome.record.best_metric);
            Ok(())
        };
        (seed, subject, run())
    })?;
    gather(results)
}

fn scores_json(s: &Scores) -> Value {
    let c = &s.confusion;
    json!({
        "balanced_accuracy": s.balanced_accuracy,
        "f1": s.f1,
        "wba": s.wba,
        "class_absent": s.class_absent,
        "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn_,
    })
}

fn load_checkpoint(path: &Path, cfg: &ExperimentConfig) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("missing checkpoint {}", path.display())));
    }
    let ck = Checkpoint::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if ck.arch != cfg.arch {
        return Err(CliError::Runtime(format!("{} was built for a different model", path.display())));
    }
    Ok(ck)
}

/// Phase 2: calibrates every phase-1 checkpoint on its test subject.
pub fn cmd_calibrate(cfg: &mut ExperimentConfig, opts: &RunOptions) -> CliResult<()> {
    let (data, layout) = prepare_run(cfg, opts)?;
    let plans = fold_plans(&data, cfg, opts)?;
    refuse_existing(plans.iter().map(|(s, p)| layout.calibrated(*s, p.test_subject)), opts.force)?;
    let cfg = &*cfg;
    let results = map_jobs(opts.jobs, plans, |(seed, plan)| {
        let subject = plan.test_subject;
        let run = || -> CliResult<()> {
            let parent = load_checkpoint(&layout.phase1(seed, subject), cfg)?;
            let fold = prepare_fold(&data, &plan, &cfg.preprocess)?;
            let r = calibrate_fold(&fold, &parent, &cfg.calib)?;
            let ck = &r.outcome.checkpoint;
            let mut lines = eval_lines(&r.outcome.record);
            lines.push(done_line(&r.outcome.record, ck)?);
            let result = json!({
                "seed": seed,
                "subject": subject,
                "sick_fraction": r.sick_fraction,
                "sampled": r.sampled,
                "donors": r.donors,
                "donor_case": r.donor_case,
                "calibration_trials": r.calibration_trials,
                "holdout_trials": r.holdout_trials,
                "pre": scores_json(&r.pre),
                "post": scores_json(&r.post),
                "best_step": r.outcome.record.best_step,
                "parent_sha256": hex(&parent.hash()?),
                "checkpoint_sha256": hex(&ck.hash()?),
            });
            write_file(&layout.calib_log(seed, subject), jsonl(&lines))?;
            write_file(&layout.calib_result(seed, subject), format!("{}\n", serde_json::to_string_pretty(&result).expect("json")))?;
            ck.save(layout.calibrated(seed, subject))?;
            eprintln!(
                "calibrate seed {seed} fold {subject}: BA {:.4} -> {:.4}",
                r.pre.balanced_accuracy, r.post.balanced_accuracy
            );
            Ok(())
        };
        (seed, subject, run())
    })?;
    gather(results)
}

pub(crate) fn read_json(path: &Path) -> CliResult<Value> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("missing {}", path.display())));
    }
    serde_json::from_str(&read_file(path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

struct SubjectMaps {
    seed: u64,
    subject: u32,
    post_ba: f64,
    ig: Vec<AttributionMap>,
    gradcam: Vec<AttributionMap>,
}

fn attribute_fold(data: &Dataset, cfg: &ExperimentConfig, layout: &Layout, seed: u64, plan: &FoldPlan) -> CliResult<SubjectMaps> {
    let subject = plan.test_subject;
    let ck = load_checkpoint(&layout.calibrated(seed, subject), cfg)?;
    let result = read_json(&layout.calib_result(seed, subject))?;
    let bad = |what: &str| CliError::Runtime(format!("{}: bad {what}", layout.calib_result(seed, subject).display()));
    let post_ba = result["post"]["balanced_accuracy"].as_f64().ok_or_else(|| bad("post.balanced_accuracy"))?;
    let holdout: Vec<u32> = result["holdout_trials"]
        .as_array()
        .ok_or_else(|| bad("holdout_trials"))?
        .iter()
        .map(|v| v.as_u64().map(|t| t as u32).ok_or_else(|| bad("holdout_trials")))
        .collect::<CliResult<_>>()?;
    let fold = prepare_fold(data, plan, &cfg.preprocess)?;
    let mut sick: Vec<&ErpEpoch> =
        fold.test.iter().filter(|e| e.is_sick() && holdout.binary_search(&e.trial_index).is_ok()).collect();
    if let Some(cap) = cfg.attribute.max_trials {
        sick.truncate(cap);
    }
    let baseline =
        ck.extra(BASELINE).ok_or_else(|| CliError::Runtime(format!("checkpoint for fold {subject} has no baseline")))?;
    let graph = ck.to_graph()?;
    let mut ig = Vec::with_capacity(sick.len());
    let mut cams = Vec::new();
    for e in sick {
        ig.push(integrated_gradients(&graph, e, baseline, 1, cfg.attribute.steps)?);
        if cfg.attribute.gradcam {
            cams.push(gradcam(&graph, &cfg.arch, e, 1)?);
        }
    }
    Ok(SubjectMaps { seed, subject, post_ba, ig, gradcam: cams })
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn maps_csv(runs: &[SubjectMaps]) -> String {
    let mut s = String::from("seed,subject,trial,label,method,steps,attribution_sum,output_delta,gap,relative_gap\n");
    for r in runs {
        for m in r.ig.iter().chain(&r.gradcam) {
            let c = m.completeness;
            s += &format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.seed,
                r.subject,
                m.trial_index,
                m.label,
                m.method,
                m.steps.map(|n| n.to_string()).unwrap_or_default(),
                opt_num(c.map(|c| c.attribution_sum)),
                opt_num(c.map(|c| c.output_delta)),
                opt_num(c.map(|c| c.gap)),
                opt_num(c.map(|c| c.relative_gap())),
            );
        }
    }
    s
}

/// Attribution maps of the calibrated models on held-out sick trials, and
/// their average over subjects above the accuracy threshold.
pub fn cmd_attribute(cfg: &mut ExperimentConfig, opts: &RunOptions) -> CliResult<()> {
    let (data, layout) = prepare_run(cfg, opts)?;
    let plans = fold_plans(&data, cfg, opts)?;
    let dir = layout.attribution();
    if dir.exists() {
        if !opts.force {
            return Err(CliError::Config(format!("{} exists; pass --force to overwrite", dir.display())));
        }
        std::fs::remove_dir_all(&dir).map_err(|e| crate::io_err(&dir, e))?;
    }
    let cfg = &*cfg;
    let results = map_jobs(opts.jobs, plans, |(seed, plan)| {
        (seed, plan.test_subject, attribute_fold(&data, cfg, &layout, seed, &plan))
    })?;
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, subject, r) in results {
        match r {
            Ok(m) => runs.push(m),
            Err(e) => failures.push((seed, subject, Err(e))),
        }
    }
    gather(failures)?;
    write_file(&dir.join("maps.csv"), maps_csv(&runs))?;

    let threshold = cfg.attribute.threshold;
    let mut selected_subjects = Vec::new();
    let mut warnings = Vec::new();
    let mut chosen: [Vec<&AttributionMap>; 2] = [Vec::new(), Vec::new()];
    for &seed in &cfg.seeds {
        let here: Vec<&SubjectMaps> = runs.iter().filter(|r| r.seed == seed).collect();
        if here.is_empty() {
            continue;
        }
        let ba: BTreeMap<u32, f64> = here.iter().map(|r| (r.subject, r.post_ba)).collect();
        let ig: Vec<AttributionMap> = here.iter().flat_map(|r| r.ig.iter().cloned()).collect();
        let sel = select_high_accuracy_sick(&ba, &ig, threshold);
        if let Some(w) = &sel.warning {
            warnings.push(format!("seed {seed}: {w}"));
        }
        for &s in &sel.subjects {
            selected_subjects.push(json!({ "seed": seed, "subject": s, "balanced_accuracy": ba[&s] }));
        }
        for r in here.iter().filter(|r| sel.subjects.contains(&r.subject)) {
            chosen[0].extend(r.ig.iter().filter(|m| m.label == 1));
            chosen[1].extend(r.gradcam.iter().filter(|m| m.label == 1));
        }
    }
    let empty = chosen[0].is_empty();
    let selection = json!({
        "threshold": threshold,
        "selected": selected_subjects,
        "ig_maps": chosen[0].len(),
        "gradcam_maps": chosen[1].len(),
        "warnings": warnings,
    });
    write_file(&dir.join("selection.json"), format!("{}\n", serde_json::to_string_pretty(&selection).expect("json")))?;
    if empty {
        eprintln!("warning: no sick trials from subjects with balanced accuracy above {threshold}; no summary written");
        return Ok(());
    }
    for (method, maps) in [(Method::IntegratedGradients, &chosen[0]), (Method::GradCam, &chosen[1])] {
        if maps.is_empty() {
            continue;
        }
        let summary = channel_summary(maps, &data.channel_names)?;
        write_file(&dir.join(format!("summary_{method}.csv")), summary_csv(&summary))?;
        let mean = mean_map(maps)?;
        for &fmt in &cfg.attribute.formats {
            export_heatmap(dir.join(format!("heatmap_{method}.{}", fmt.extension())), &data.channel_names, &mean, fmt)?;
        }
        eprintln!("attribute {method}: {} maps, top channel {}", summary.maps, summary.top());
    }
    Ok(())
}
