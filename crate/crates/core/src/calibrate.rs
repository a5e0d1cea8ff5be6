//! Phase-2 per-subject calibration: calibration-set construction with PCA
//! centroid donors, the weighted-CE plus L2-SP loss, and fine-tuning.

use erpcal_tensor::{Adam, AdamConfig, Mode, ModelGraph, Schedule, Tensor};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, KvConfig};
use crate::dataio::ErpEpoch;
use crate::loss::weighted_ce;
use crate::metrics::{weighted_balanced_accuracy, Scores, DEFAULT_WBA_ALPHA};
use crate::preprocess::{pca_fit, sq_dist};
use crate::rng::{derive_seed, stream, tag};
use crate::train::{batch_tensor, evaluate, evaluate_checkpoint, run_loop, LoopSpec, PreparedFold, RunRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibRow {
    pub epoch: ErpEpoch,
    pub weight: f64,
    pub from_test_subject: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub train: Vec<CalibRow>,
    pub validation: Vec<CalibRow>,
    /// Test-subject trials not used for calibration; the post-calibration test split.
    pub holdout: Vec<ErpEpoch>,
    pub sampled: usize,
    pub donors: usize,
    /// True when the test subject had one label and donors were drawn.
    pub donor_case: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibConfig {
    pub lr: f64,
    pub beta: f64,
    pub alpha: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub patience: usize,
    /// Share of a both-label subject's trials sampled (split evenly by class).
    pub both_fraction: f64,
    /// Share of a single-label subject's trials sampled; donors match the count.
    pub single_fraction: f64,
    pub validation_fraction: f64,
    /// Weight of test-subject rows when donors are present.
    pub subject_weight: f64,
    pub pca_components: usize,
    pub freeze: bool,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            lr: 1e-5,
            beta: 2e-3,
            alpha: DEFAULT_WBA_ALPHA,
            weight_decay: 0.0,
            batch_size: 64,
            max_steps: 2000,
            eval_every: 25,
            patience: 8,
            both_fraction: 0.25,
            single_fraction: 0.125,
            validation_fraction: 0.2,
            subject_weight: 2.0,
            pca_components: 16,
            freeze: true,
        }
    }
}

impl CalibConfig {
    /// Reads `calib.*` keys.
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = CalibConfig::default();
        let c = CalibConfig {
            lr: kv.take_or("calib.lr", d.lr)?,
            beta: kv.take_or("calib.beta", d.beta)?,
            alpha: kv.take_or("calib.alpha", d.alpha)?,
            weight_decay: kv.take_or("calib.weight_decay", d.weight_decay)?,
            batch_size: kv.take_or("calib.batch", d.batch_size)?,
            max_steps: kv.take_or("calib.max_steps", d.max_steps)?,
            eval_every: kv.take_or("calib.eval_every", d.eval_every)?,
            patience: kv.take_or("calib.patience", d.patience)?,
            both_fraction: kv.take_or("calib.both_fraction", d.both_fraction)?,
            single_fraction: kv.take_or("calib.single_fraction", d.single_fraction)?,
            validation_fraction: kv.take_or("calib.validation_fraction", d.validation_fraction)?,
            subject_weight: kv.take_or("calib.subject_weight", d.subject_weight)?,
            pca_components: kv.take_or("calib.pca_components", d.pca_components)?,
            freeze: kv.take_or("calib.freeze", d.freeze)?,
        };
        c.validate().map_err(|e| ConfigError::invalid("calib", "", e))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |f: f64| f > 0.0 && f < 1.0;
        let ok = self.lr >= 0.0
            && self.beta >= 0.0
            && (0.0..=1.0).contains(&self.alpha)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.eval_every > 0
            && self.patience >= 1
            && frac(self.both_fraction)
            && frac(self.single_fraction)
            && frac(self.validation_fraction)
            && self.subject_weight > 0.0
            && self.pca_components > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid calibration configuration {self:?}")))
        }
    }
}

fn flat(e: &ErpEpoch) -> &[f64] {
    e.signal.data()
}

/// Indices of the `k` rows nearest to `centroid`, nearest first; equal
/// distances keep the lower index first.
pub fn nearest_to_centroid(rows: &[Vec<f64>], centroid: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > rows.len() {
        return Err(Error::invalid(format!("{k} donors requested, only {} candidates", rows.len())));
    }
    let mut d: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, r)| (sq_dist(r, centroid), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(d.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Per-class sample quotas: `floor(total / 2)` each, the odd remainder to
/// the minority class, and no class giving up more than half of its trials.
fn class_quotas(counts: [usize; 2], total: usize) -> [usize; 2] {
    let half = total / 2;
    let mut q = [half, half];
    if total % 2 == 1 {
        let minority = usize::from(counts[1] < counts[0]);
        q[minority] += 1;
    }
    [q[0].min(counts[0] / 2), q[1].min(counts[1] / 2)]
}

/// Builds the calibration pool for one test subject. `others` are processed
/// trials of every other subject and supply donors in the single-label case.
pub fn build_calibration_set(test: &[ErpEpoch], others: &[ErpEpoch], cfg: &CalibConfig, seed: u64) -> Result<CalibrationSet> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::invalid("test subject has no trials"));
    }
    let subject = test[0].subject_id;
    if test.iter().any(|e| e.subject_id != subject) {
        return Err(Error::invalid("test trials span several subjects"));
    }
    if others.iter().any(|e| e.subject_id == subject) {
        return Err(Error::invalid(format!("donor pool contains the test subject {subject}")));
    }
    let mut rng = stream(derive_seed(seed, &[tag::CALIB]));
    let by_class: [Vec<usize>; 2] = [0u8, 1].map(|l| (0..test.len()).filter(|&i| test[i].label == l).collect());
    let counts = [by_class[0].len(), by_class[1].len()];
    let n = test.len();
    let donor_case = counts[0] == 0 || counts[1] == 0;
    let mut chosen = Vec::new();
    if !donor_case {
        let q = class_quotas(counts, (n as f64 * cfg.both_fraction).floor() as usize);
        for (class, idx) in by_class.iter().enumerate() {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            chosen.extend_from_slice(&idx[..q[class]]);
        }
    } else {
        let k = ((n as f64 * cfg.single_fraction).floor() as usize).clamp(1, n.saturating_sub(1).max(1));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..k]);
    }
    chosen.sort_unstable();
    let own_weight = if donor_case { cfg.subject_weight } else { 1.0 };
    let mut pool: Vec<CalibRow> =
        chosen.iter().map(|&i| CalibRow { epoch: test[i].clone(), weight: own_weight, from_test_subject: true }).collect();
    let holdout: Vec<ErpEpoch> =
        (0..n).filter(|i| chosen.binary_search(i).is_err()).map(|i| test[i].clone()).collect();
    let sampled = pool.len();
    let mut donors = 0;
    if donor_case {
        let missing = u8::from(counts[1] == 0);
        let candidates: Vec<&ErpEpoch> = others.iter().filter(|e| e.label == missing).collect();
        if candidates.len() < sampled {
            return Err(Error::invalid(format!(
                "subject {subject}: {sampled} donors of label {missing} needed, {} available",
                candidates.len()
            )));
        }
        let own: Vec<&[f64]> = pool.iter().map(|r| flat(&r.epoch)).collect();
        let cand: Vec<&[f64]> = candidates.iter().map(|e| flat(e)).collect();
        let mut fit_rows = own.clone();
        fit_rows.extend_from_slice(&cand);
        let k = cfg.pca_components.min(fit_rows.len()).min(own[0].len());
        let basis = pca_fit(&fit_rows, k)?;
        let projected_own: Vec<Vec<f64>> = own.iter().map(|r| basis.project(r)).collect();
        let mut centroid = vec![0.0; k];
        for p in &projected_own {
            centroid.iter_mut().zip(p).for_each(|(c, v)| *c += v);
        }
        centroid.iter_mut().for_each(|c| *c /= projected_own.len() as f64);
        let projected: Vec<Vec<f64>> = cand.iter().map(|r| basis.project(r)).collect();
        for i in nearest_to_centroid(&projected, &centroid, sampled)? {
            pool.push(CalibRow { epoch: candidates[i].clone(), weight: 1.0, from_test_subject: false });
            donors += 1;
        }
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for label in [0u8, 1] {
        let mut rows: Vec<CalibRow> = pool.iter().filter(|r| r.epoch.label == label).cloned().collect();
        rows.shuffle(&mut rng);
        let mut v = (rows.len() as f64 * cfg.validation_fraction).floor() as usize;
        if v == 0 && rows.len() >= 2 {
            v = 1;
        }
        let rest = rows.split_off(v);
        validation.extend(rows);
        train.extend(rest);
    }
    if validation.is_empty() || train.is_empty() {
        return Err(Error::invalid(format!("subject {subject}: calibration pool of {} rows is too small", pool.len())));
    }
    Ok(CalibrationSet { train, validation, holdout, sampled, donors, donor_case })
}

/// Snapshot `w0` of the unfrozen parameters of a graph.
#[derive(Debug, Clone)]
pub struct Anchor {
    entries: Vec<(usize, Tensor)>,
}

impl Anchor {
    pub fn from_graph(graph: &ModelGraph) -> Self {
        let entries = graph
            .params()
            .iter()
            .enumerate()
            .filter(|(i, _)| !graph.is_param_frozen(*i))
            .map(|(i, p)| (i, p.tensor.detached()))
            .collect();
        Anchor { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check(&self, graph: &ModelGraph) -> Result<()> {
        for (i, w0) in &self.entries {
            let p = graph.params().get(*i).ok_or_else(|| Error::Shape(format!("anchor parameter {i} missing")))?;
            if p.tensor.shape() != w0.shape() {
                return Err(Error::Shape(format!("{}: anchor {:?} vs {:?}", p.name, w0.shape(), p.tensor.shape())));
            }
        }
        Ok(())
    }
}

/// `(beta / 2) * |w - w0|^2` over equally long slices.
pub fn l2_sp_slices(w: &[f64], w0: &[f64], beta: f64) -> Result<f64> {
    if w.len() != w0.len() {
        return Err(Error::Shape(format!("{} weights vs {} anchor values", w.len(), w0.len())));
    }
    Ok(0.5 * beta * w.iter().zip(w0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// L2-SP penalty over the anchored (unfrozen) parameters of `graph`.
pub fn l2_sp(graph: &ModelGraph, anchor: &Anchor, beta: f64) -> Result<f64> {
    anchor.check(graph)?;
    let mut total = 0.0;
    for (i, w0) in &anchor.entries {
        total += l2_sp_slices(graph.params()[*i].tensor.data(), w0.data(), beta)?;
    }
    Ok(total)
}

fn add_l2_sp_grad(graph: &mut ModelGraph, anchor: &Anchor, beta: f64) -> Result<()> {
    anchor.check(graph)?;
    for (i, w0) in &anchor.entries {
        let p = &mut graph.params_mut()[*i].tensor;
        let g: Vec<f64> = p.data().iter().zip(w0.data()).map(|(w, a)| beta * (w - a)).collect();
        p.accumulate_grad(&g);
    }
    Ok(())
}

/// Forward and backward of the calibration loss on one batch, leaving the
/// gradient of `weighted_ce + l2_sp` on every unfrozen parameter.
pub fn calibration_loss(graph: &mut ModelGraph, rows: &[&CalibRow], anchor: &Anchor, beta: f64) -> Result<f64> {
    let epochs: Vec<&ErpEpoch> = rows.iter().map(|r| &r.epoch).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.epoch.label).collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    graph.zero_grad();
    let logits = graph.forward(&batch_tensor(&epochs)?)?;
    let ce = weighted_ce(&logits, &labels, Some(&weights))?;
    if !ce.loss.is_finite() {
        return Ok(ce.loss);
    }
    graph.backward(&ce.grad)?;
    add_l2_sp_grad(graph, anchor, beta)?;
    Ok(ce.loss + l2_sp(graph, anchor, beta)?)
}

#[derive(Debug, Clone)]
pub struct CalibOutcome {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// Fine-tunes a phase-1 checkpoint on a calibration set, stopping early on
/// validation WBA. The anchor is the input checkpoint throughout.
pub fn finetune(parent: &Checkpoint, set: &CalibrationSet, cfg: &CalibConfig, seed: u64) -> Result<CalibOutcome> {
    cfg.validate()?;
    if set.validation.is_empty() {
        return Err(Error::invalid("calibration validation split is empty"));
    }
    if set.train.is_empty() {
        return Err(Error::invalid("calibration training split is empty"));
    }
    let mut graph = parent.to_graph()?;
    if cfg.freeze {
        graph.freeze(parent.arch.calibration_frozen_layers())?;
    }
    graph.reseed_dropout(derive_seed(seed, &[tag::CALIB, tag::DROPOUT]));
    let anchor = Anchor::from_graph(&graph);
    let mut opt = Adam::new(
        &graph,
        AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, schedule: Schedule::Constant, ..AdamConfig::default() },
    );
    let mut rng = stream(derive_seed(seed, &[tag::CALIB, tag::BATCH]));
    let mut order: Vec<usize> = Vec::new();
    let validation: Vec<ErpEpoch> = set.validation.iter().map(|r| r.epoch.clone()).collect();
    let spec = LoopSpec { max_steps: cfg.max_steps, eval_every: cfg.eval_every, patience: cfg.patience };
    let step_fn = |g: &mut ModelGraph, _step: u64| -> Result<f64> {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(set.train.len()) {
            if order.is_empty() {
                order = (0..set.train.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(&set.train[order.pop().expect("refilled")]);
        }
        g.set_mode(Mode::Train);
        let loss = calibration_loss(g, &batch, &anchor, cfg.beta)?;
        if loss.is_finite() {
            opt.step(g)?;
        }
        Ok(loss)
    };
    let eval_fn = |g: &ModelGraph| weighted_balanced_accuracy(&evaluate(g, &validation)?, cfg.alpha);
    let (record, best) = run_loop(&mut graph, &spec, step_fn, eval_fn)?;
    graph.load_state(&best)?;
    let mut checkpoint = Checkpoint::from_graph(&parent.arch, &graph, record.best_step, record.best_metric);
    checkpoint.extras = parent.extras.clone();
    checkpoint.parent = Some(parent.hash()?);
    Ok(CalibOutcome { record, checkpoint })
}

/// Phase-2 result for the test subject of one fold.
#[derive(Debug, Clone)]
pub struct SubjectCalibration {
    pub subject_id: u32,
    pub sampled: usize,
    pub donors: usize,
    pub donor_case: bool,
    /// Trial indices of the test subject used for calibration (train and validation).
    pub calibration_trials: Vec<u32>,
    /// Trial indices of the post-calibration test split.
    pub holdout_trials: Vec<u32>,
    /// Sick share of the test subject's trials after artifact rejection.
    pub sick_fraction: f64,
    /// Phase-1 checkpoint scored on the holdout.
    pub pre: Scores,
    /// Calibrated checkpoint scored on the same holdout.
    pub post: Scores,
    pub outcome: CalibOutcome,
}

/// Calibrates the phase-1 checkpoint of `fold` on its test subject. Donors
/// come from the fold's training and validation subjects.
pub fn calibrate_fold(fold: &PreparedFold, parent: &Checkpoint, cfg: &CalibConfig) -> Result<SubjectCalibration> {
    let subject_id = fold.plan.test_subject;
    let same = parent.normalizer()?.is_some_and(|n| {
        n.mu.data() == fold.normalizer.mu.data() && n.sigma.data() == fold.normalizer.sigma.data()
    });
    if !same {
        return Err(Error::invalid(format!("checkpoint for subject {subject_id} was not trained on this fold")));
    }
    let others: Vec<ErpEpoch> = fold.train.iter().chain(&fold.validation).cloned().collect();
    let set = build_calibration_set(&fold.test, &others, cfg, fold.plan.seed)?;
    let outcome = finetune(parent, &set, cfg, fold.plan.seed)?;
    let pre = evaluate_checkpoint(parent, &set.holdout, cfg.alpha)?;
    let post = evaluate_checkpoint(&outcome.checkpoint, &set.holdout, cfg.alpha)?;
    let mut calibration_trials: Vec<u32> = set
        .train
        .iter()
        .chain(&set.validation)
        .filter(|r| r.from_test_subject)
        .map(|r| r.epoch.trial_index)
        .collect();
    calibration_trials.sort_unstable();
    let sick = fold.test.iter().filter(|e| e.is_sick()).count();
    Ok(SubjectCalibration {
        subject_id,
        sampled: set.sampled,
        donors: set.donors,
        donor_case: set.donor_case,
        calibration_trials,
        holdout_trials: set.holdout.iter().map(|e| e.trial_index).collect(),
        sick_fraction: sick as f64 / fold.test.len() as f64,
        pre,
        post,
        outcome,
    })
}
