//! Phase-1 training: fold preparation, the per-fold optimisation loop with
//! validation early stopping, and evaluation.

use erpcal_tensor::{clip_grad_norm, Adam, AdamConfig, Mode, ModelGraph, NamedTensor, Schedule, Tensor};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, KvConfig};
use crate::dataio::{reject_artifacts, Dataset, ErpEpoch, FoldPlan};
use crate::loss::{predict, weighted_ce};
use crate::metrics::{Confusion, Scores};
use crate::models::{build, Arch, ArchConfig};
use crate::preprocess::{detect_outliers, fit_normalizer, oversample_weights, Normalizer, OutlierMode, OutlierPolicy, WeightedSampler};
use crate::rng::{derive_seed, stream, tag};
use crate::{Error, Result};

/// Extra tensor holding the grand average of the processed training split.
pub const BASELINE: &str = "baseline";

const EVAL_CHUNK: usize = 64;

/// Steps applied to every fold before training.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Amplitude bound in microvolts; trials exceeding it are dropped.
    pub artifact_uv: Option<f64>,
    pub outliers: OutlierPolicy,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { artifact_uv: Some(100.0), outliers: OutlierPolicy::default() }
    }
}

impl PreprocessConfig {
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = PreprocessConfig::default();
        Ok(PreprocessConfig {
            artifact_uv: kv.take_optional("preprocess.artifact_uv", d.artifact_uv)?,
            outliers: OutlierPolicy {
                mode: kv.take_or("preprocess.outliers", d.outliers.mode)?,
                k_sigma: kv.take_or("preprocess.k_sigma", d.outliers.k_sigma)?,
                per_label_stats: kv.take_or("preprocess.per_label", d.outliers.per_label_stats)?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    /// Consecutive evaluations without improvement before stopping.
    pub patience: usize,
    pub clip: Option<f64>,
    pub schedule: Schedule,
}

impl TrainConfig {
    pub fn for_arch(arch: Arch) -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 64,
            max_steps: 30_000,
            eval_every: 250,
            patience: 10,
            clip: (arch == Arch::Conformer).then_some(1.0),
            schedule: Schedule::MultiStep { milestones: vec![10_000, 20_000], factor: 0.1 },
        }
    }

    /// Reads `train.*` keys over the defaults for `arch`.
    pub fn from_kv(kv: &mut KvConfig, arch: Arch) -> Result<Self, ConfigError> {
        let d = TrainConfig::for_arch(arch);
        let (milestones, factor) = match &d.schedule {
            Schedule::MultiStep { milestones, factor } => (milestones.clone(), *factor),
            Schedule::Constant => (Vec::new(), 1.0),
        };
        let milestones = kv.take_list("train.milestones")?.unwrap_or(milestones);
        let factor = kv.take_or("train.gamma", factor)?;
        let cfg = TrainConfig {
            lr: kv.take_or("train.lr", d.lr)?,
            weight_decay: kv.take_or("train.weight_decay", d.weight_decay)?,
            batch_size: kv.take_or("train.batch", d.batch_size)?,
            max_steps: kv.take_or("train.max_steps", d.max_steps)?,
            eval_every: kv.take_or("train.eval_every", d.eval_every)?,
            patience: kv.take_or("train.patience", d.patience)?,
            clip: kv.take_optional("train.clip", d.clip)?,
            schedule: if milestones.is_empty() { Schedule::Constant } else { Schedule::MultiStep { milestones, factor } },
        };
        cfg.validate().map_err(|e| ConfigError::invalid("train", "", e))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.eval_every > 0
            && self.patience >= 1
            && self.clip.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid training configuration {self:?}")))
        }
    }
}

/// A fold after artifact rejection, outlier removal and normalisation.
/// All three splits are normalised with statistics of `train` alone.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub plan: FoldPlan,
    pub train: Vec<ErpEpoch>,
    pub validation: Vec<ErpEpoch>,
    pub test: Vec<ErpEpoch>,
    pub normalizer: Normalizer,
    /// Grand average of the processed training trials, shaped `[C, T]`.
    pub baseline: Tensor,
    pub artifacts_rejected: usize,
    pub outliers_removed: usize,
}

pub fn prepare_fold(data: &Dataset, plan: &FoldPlan, pre: &PreprocessConfig) -> Result<PreparedFold> {
    let pick = |id: u32| {
        data.subject(id).cloned().ok_or_else(|| Error::invalid(format!("fold refers to unknown subject {id}")))
    };
    let mut subjects = vec![pick(plan.test_subject)?, pick(plan.validation_subject)?];
    for &id in &plan.train_subjects {
        subjects.push(pick(id)?);
    }
    let mut artifacts_rejected = 0;
    if let Some(thr) = pre.artifact_uv {
        let (kept, n) = reject_artifacts(&subjects, thr)?;
        subjects = kept;
        artifacts_rejected = n;
    }
    let mut iter = subjects.into_iter();
    let test = iter.next().expect("test subject").epochs;
    let validation = iter.next().expect("validation subject").epochs;
    let raw_train: Vec<ErpEpoch> = iter.flat_map(|s| s.epochs).collect();
    let refs: Vec<&ErpEpoch> = raw_train.iter().collect();
    let drop = if pre.outliers.mode == OutlierMode::Off { Vec::new() } else { detect_outliers(&refs, &pre.outliers)? };
    let kept: Vec<&ErpEpoch> =
        refs.iter().enumerate().filter(|(i, _)| drop.binary_search(i).is_err()).map(|(_, e)| *e).collect();
    let normalizer = fit_normalizer(&kept)?;
    let train = normalizer.apply_all(&kept)?;
    let validation = normalizer.apply_all(&validation.iter().collect::<Vec<_>>())?;
    let test = normalizer.apply_all(&test.iter().collect::<Vec<_>>())?;
    let baseline = grand_average(&train)?;
    Ok(PreparedFold {
        plan: plan.clone(),
        train,
        validation,
        test,
        normalizer,
        baseline,
        artifacts_rejected,
        outliers_removed: drop.len(),
    })
}

pub fn grand_average(epochs: &[ErpEpoch]) -> Result<Tensor> {
    let first = epochs.first().ok_or_else(|| Error::invalid("average of zero trials"))?;
    let mut acc = vec![0.0; first.signal.numel()];
    for e in epochs {
        acc.iter_mut().zip(e.signal.data()).for_each(|(a, v)| *a += v);
    }
    let n = epochs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Tensor::new(first.signal.shape().to_vec(), acc)?)
}

/// Stacks trials into a `[B, 1, C, T]` batch.
pub fn batch_tensor(epochs: &[&ErpEpoch]) -> Result<Tensor> {
    let first = epochs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let shape = first.signal.shape().to_vec();
    let mut data = Vec::with_capacity(epochs.len() * first.signal.numel());
    for e in epochs {
        if e.signal.shape() != shape.as_slice() {
            return Err(Error::Shape(format!("trial shape {:?} in a batch of {shape:?}", e.signal.shape())));
        }
        data.extend_from_slice(e.signal.data());
    }
    Ok(Tensor::new(vec![epochs.len(), 1, shape[0], shape[1]], data)?)
}

/// Eval-mode predictions, ties resolved to label 0.
pub fn predict_epochs(graph: &ModelGraph, epochs: &[ErpEpoch]) -> Result<Vec<u8>> {
    let expected = graph.input_shape();
    let mut out = Vec::with_capacity(epochs.len());
    for chunk in epochs.chunks(EVAL_CHUNK) {
        if let Some(e) = chunk.iter().find(|e| e.signal.shape() != &expected[1..]) {
            return Err(Error::Shape(format!("trial {:?} does not fit model input {expected:?}", e.signal.shape())));
        }
        let x = batch_tensor(&chunk.iter().collect::<Vec<_>>())?;
        out.extend(predict(&graph.infer(&x)?));
    }
    Ok(out)
}

pub fn evaluate(graph: &ModelGraph, epochs: &[ErpEpoch]) -> Result<Confusion> {
    let labels: Vec<u8> = epochs.iter().map(|e| e.label).collect();
    Confusion::from_predictions(&labels, &predict_epochs(graph, epochs)?)
}

pub fn evaluate_checkpoint(ck: &Checkpoint, epochs: &[ErpEpoch], alpha: f64) -> Result<Scores> {
    Scores::new(evaluate(&ck.to_graph()?, epochs)?, alpha)
}

/// Early stopping on a metric where larger is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, stale: 0 }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, value: f64) -> Verdict {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean training loss since the previous evaluation.
    pub train_loss: Option<f64>,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub evals: Vec<EvalRecord>,
    pub best_step: u64,
    pub best_metric: f64,
    pub stop_step: u64,
    pub early_stopped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// Shared loop of both phases. `step_fn` runs one optimisation step and
/// returns the batch loss; `eval_fn` scores the current graph.
pub(crate) struct LoopSpec {
    pub max_steps: u64,
    pub eval_every: u64,
    pub patience: usize,
}

pub(crate) fn run_loop(
    graph: &mut ModelGraph,
    spec: &LoopSpec,
    mut step_fn: impl FnMut(&mut ModelGraph, u64) -> Result<f64>,
    mut eval_fn: impl FnMut(&ModelGraph) -> Result<f64>,
) -> Result<(RunRecord, Vec<NamedTensor>)> {
    let mut stopper = EarlyStopping::new(spec.patience);
    let mut evals = Vec::new();
    let initial = eval_fn(graph)?;
    stopper.observe(initial);
    evals.push(EvalRecord { step: 0, train_loss: None, metric: initial });
    let mut best_state = graph.state();
    let mut best_step = 0;
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    let mut stop_step = 0;
    let mut early_stopped = false;
    for step in 1..=spec.max_steps {
        let loss = step_fn(graph, step)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss {loss} at step {step}")));
        }
        loss_sum += loss;
        loss_n += 1;
        stop_step = step;
        if step % spec.eval_every == 0 || step == spec.max_steps {
            let metric = eval_fn(graph)?;
            evals.push(EvalRecord { step, train_loss: Some(loss_sum / loss_n as f64), metric });
            loss_sum = 0.0;
            loss_n = 0;
            match stopper.observe(metric) {
                Verdict::Improved => {
                    best_state = graph.state();
                    best_step = step;
                }
                Verdict::Continue => {}
                Verdict::Stop => {
                    early_stopped = true;
                    break;
                }
            }
        }
    }
    let record = RunRecord {
        evals,
        best_step,
        best_metric: stopper.best().expect("at least one evaluation"),
        stop_step,
        early_stopped,
    };
    Ok((record, best_state))
}

/// Trains one fold from scratch and returns the best-validation-BA weights.
pub fn train_fold(fold: &PreparedFold, arch: &ArchConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if fold.validation.is_empty() {
        return Err(Error::invalid(format!("fold {}: validation subject has no trials", fold.plan.test_subject)));
    }
    let labels: Vec<u8> = fold.train.iter().map(|e| e.label).collect();
    let sampler = WeightedSampler::new(&oversample_weights(&labels)?)?;
    let seed = fold.plan.seed;
    let mut graph = build(arch, derive_seed(seed, &[tag::INIT]))?;
    graph.reseed_dropout(derive_seed(seed, &[tag::DROPOUT]));
    let mut rng = stream(derive_seed(seed, &[tag::BATCH]));
    let mut opt = Adam::new(
        &graph,
        AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, schedule: cfg.schedule.clone(), ..AdamConfig::default() },
    );
    let spec = LoopSpec { max_steps: cfg.max_steps, eval_every: cfg.eval_every, patience: cfg.patience };
    let step_fn = |g: &mut ModelGraph, _step: u64| -> Result<f64> {
        let idx = sampler.draw(&mut rng, cfg.batch_size);
        let batch: Vec<&ErpEpoch> = idx.iter().map(|&i| &fold.train[i]).collect();
        let y: Vec<u8> = batch.iter().map(|e| e.label).collect();
        g.set_mode(Mode::Train);
        g.zero_grad();
        let logits = g.forward(&batch_tensor(&batch)?)?;
        let lg = weighted_ce(&logits, &y, None)?;
        if !lg.loss.is_finite() {
            return Ok(lg.loss);
        }
        g.backward(&lg.grad)?;
        if let Some(max) = cfg.clip {
            clip_grad_norm(g, max)?;
        }
        opt.step(g)?;
        Ok(lg.loss)
    };
    let eval_fn = |g: &ModelGraph| -> Result<f64> { Ok(crate::metrics::balanced_accuracy(&evaluate(g, &fold.validation)?)) };
    let (record, best) = run_loop(&mut graph, &spec, step_fn, eval_fn)
        .map_err(|e| match e {
            Error::Diverged(m) => Error::Diverged(format!("fold {}: {m}", fold.plan.test_subject)),
            other => other,
        })?;
    graph.load_state(&best)?;
    let mut checkpoint = Checkpoint::from_graph(arch, &graph, record.best_step, record.best_metric);
    checkpoint.set_normalizer(&fold.normalizer);
    checkpoint.set_extra(BASELINE, fold.baseline.clone());
    Ok(TrainOutcome { record, checkpoint })
}

/// Maps `f` over `items` on at most `jobs` threads, preserving order.
pub fn map_jobs<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}
