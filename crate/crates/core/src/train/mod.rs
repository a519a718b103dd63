//! Pretraining and fine-tuning loops.

mod early_stop;
mod optim;
mod schedule;

use std::collections::HashMap;

use rand::seq::SliceRandom;

pub use early_stop::{early_stop_update, EarlyStopState};
pub use optim::{adamw_step, adamw_update, clip_grad_norm, grad_norm, zero_state, AdamWConfig};
pub use schedule::{peak_lr, LrSchedule};

use crate::config::{Config, Monitor, Task, TrainMode};
use crate::data::{Dataset, SamplingConfig, StartPolicy};
use crate::error::{Error, Result};
use crate::eval::{label_from_ef, MetricsReport};
use crate::masking::MaskPlan;
use crate::model::{Checkpoint, Model, ModelParams, OptimizerState, Target, TrainingState, HEAD_PREFIX};
use crate::real::Real;
use crate::rng::{derive_seed, stream_rng, Stream};

/// Epoch index used for the deterministic evaluation windows.
const EVAL_EPOCH: u64 = u64::MAX - 1;

/// One row of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_contrast: f64,
    pub l_total: f64,
    pub lr: f64,
    pub early_stop_counter: usize,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,l_rec,l_contrast,l_total,lr,early_stop_counter";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{}",
            self.epoch, self.l_rec, self.l_contrast, self.l_total, self.lr, self.early_stop_counter
        )
    }
}

pub fn curve_csv(curve: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::CSV_HEADER);
    out.push('\n');
    for row in curve {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Clips processed concurrently within a batch.
    pub workers: usize,
    /// Stop after this many completed epochs (the schedule is unaffected).
    pub stop_after: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            stop_after: None,
        }
    }
}

pub struct PretrainOutcome {
    /// Final state, including optimizer moments for `--resume`.
    pub last: Checkpoint<f32>,
    /// Lowest monitored loss seen in this invocation, if any epoch improved.
    pub best: Option<Checkpoint<f32>>,
    /// Rows for the epochs run in this invocation.
    pub curve: Vec<EpochLog>,
    pub clipped_steps: usize,
    pub skipped_steps: usize,
}

pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub curve: Vec<EpochLog>,
}

pub fn sampling(config: &Config) -> SamplingConfig {
    SamplingConfig {
        frames: config.data.frames,
        height: config.data.height,
        width: config.data.width,
        window_s: config.data.window_s,
    }
}

/// Fails unless `run` resolves to the model stored in `ckpt`.
pub fn check_compatible(run: &Config, ckpt: &Checkpoint<f32>) -> Result<()> {
    let want = run.model_config()?;
    if want != ckpt.model.config {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint model {:?} differs from configured {:?}",
            ckpt.model.config, want
        )));
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
    order
}

/// Runs `step` for each item with its own zeroed gradient buffer, `workers`
/// at a time, then sums the buffers into `sum` in item order. The result is
/// independent of `workers`.
fn accumulate<T, S>(items: &[usize], workers: usize, bufs: &mut Vec<ModelParams<f32>>, sum: &mut ModelParams<f32>, step: S) -> Result<Vec<T>>
where
    T: Send,
    S: Fn(usize, &mut ModelParams<f32>) -> Result<T> + Sync,
{
    let workers = workers.max(1);
    while bufs.len() < workers.min(items.len()) {
        bufs.push(sum.zeros_like());
    }
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(workers) {
        let bufs = &mut bufs[..chunk.len()];
        bufs.iter_mut().for_each(|b| b.fill_zero());
        let results: Vec<Result<T>> = if chunk.len() == 1 {
            vec![step(chunk[0], &mut bufs[0])]
        } else {
            let step = &step;
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .zip(bufs.iter_mut())
                    .map(|(&i, b)| s.spawn(move || step(i, b)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };
        for (r, b) in results.into_iter().zip(bufs.iter()) {
            out.push(r?);
            sum.add_scaled(b, 1.0);
        }
    }
    Ok(out)
}

/// Masked-autoencoder pretraining with the optional temporal contrastive
/// term. `on_epoch` sees every curve row as it is produced.
pub fn pretrain(
    config: &Config,
    data: &Dataset,
    resume: Option<Checkpoint<f32>>,
    opts: RunOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<PretrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let t = &config.train;
    let seed = t.seed;
    let (mut model, mut optim, mut state) = match resume {
        Some(ck) => {
            check_compatible(config, &ck)?;
            if ck.state.root_seed != seed || ck.state.phase != "pretrain" {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "resume needs a pretrain checkpoint with seed {seed}, got phase {} seed {}",
                    ck.state.phase, ck.state.root_seed
                )));
            }
            let optim = ck.optimizer.unwrap_or_else(|| zero_state(&ck.model.params));
            (ck.model, optim, ck.state)
        }
        None => {
            let model = Model::<f32>::new(config.model_config()?, derive_seed(seed, Stream::Init, &[]))?;
            let optim = zero_state(&model.params);
            let state = TrainingState {
                phase: "pretrain".into(),
                root_seed: seed,
                ..Default::default()
            };
            (model, optim, state)
        }
    };

    let cfg = model.config.clone();
    let samp = sampling(config);
    let sched = LrSchedule::new(t.base_lr, t.batch_size, t.warmup_epochs as f64, t.max_epochs as f64, t.min_lr);
    let hp = AdamWConfig {
        beta1: t.beta1,
        beta2: t.beta2,
        eps: t.adam_eps,
        weight_decay: t.weight_decay,
    };
    let mut contrastive = config.contrastive();
    if !t.use_contrastive {
        contrastive.lambda = 0.0;
    }
    let all = |_: &str| true;
    let mut stop = EarlyStopState {
        best_loss: state.best_loss,
        epochs_since_improve: state.epochs_since_improve,
        stopped: state.stopped,
    };
    let mut grads = model.params.zeros_like();
    let mut bufs = Vec::new();
    let mut curve = Vec::new();
    let mut best = None;
    let (mut clipped, mut skipped) = (0, 0);
    let n = data.len();
    let steps = n.div_ceil(t.batch_size);

    while state.epoch < t.max_epochs && !stop.stopped && opts.stop_after.map_or(true, |s| state.epoch < s) {
        let epoch = state.epoch;
        let order = epoch_order(n, seed, epoch);
        let (mut rec, mut con, mut tot) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(t.batch_size).enumerate() {
            let lr = sched.lr_at(epoch as f64 + b as f64 / steps as f64);
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f32;
            let model_ref = &model;
            let losses = accumulate(batch, opts.workers, &mut bufs, &mut grads, |i, g| {
                let policy = if t.oracle {
                    StartPolicy::Oracle
                } else {
                    StartPolicy::Random {
                        seed,
                        epoch: epoch as u64,
                    }
                };
                let clip = data.clip(i, &samp, policy)?;
                let plan = MaskPlan::new(
                    cfg.patch.frames,
                    cfg.patch.num_patches(),
                    config.mask.ratio,
                    derive_seed(seed, Stream::Mask, &[epoch as u64, i as u64]),
                )?;
                model_ref.pretrain_step(&clip.frames, &plan, Some(&contrastive), scale, g)
            });
            let losses = match losses {
                Err(Error::NonFiniteActivation(what)) => {
                    eprintln!("epoch {epoch}: non-finite activation in {what}");
                    return Err(Error::DivergenceDetected { epoch, loss: f64::NAN });
                }
                other => other?,
            };
            for l in &losses {
                rec += l.rec;
                con += l.contrast;
                tot += l.total;
            }
            if clip_grad_norm(&mut grads, t.clip_norm, &all) > t.clip_norm && t.clip_norm > 0.0 {
                clipped += 1;
            }
            match adamw_step(&mut model.params, &grads, &mut optim, lr, &hp, &all) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient(name)) => {
                    eprintln!("epoch {epoch} step {b}: non-finite gradient in {name}, step skipped");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let (rec, con, tot) = (rec / n as f64, con / n as f64, tot / n as f64);
        if !(rec.is_finite() && tot.is_finite()) {
            return Err(Error::DivergenceDetected { epoch, loss: tot });
        }
        let monitored = match t.monitor {
            Monitor::Reconstruction => rec,
            Monitor::Total => tot,
        };
        let improved = stop.update(monitored, t.patience, t.min_delta);
        state.epoch = epoch + 1;
        state.best_loss = stop.best_loss;
        state.epochs_since_improve = stop.epochs_since_improve;
        state.stopped = stop.stopped;
        if improved {
            state.best_epoch = epoch;
            best = Some(Checkpoint {
                config: config.clone(),
                model: model.clone(),
                optimizer: None,
                state: state.clone(),
            });
        }
        let row = EpochLog {
            epoch,
            l_rec: rec,
            l_contrast: con,
            l_total: tot,
            lr: sched.lr_at(epoch as f64),
            early_stop_counter: stop.epochs_since_improve,
        };
        on_epoch(&row);
        curve.push(row);
    }

    Ok(PretrainOutcome {
        last: Checkpoint {
            config: config.clone(),
            model,
            optimizer: Some(optim),
            state,
        },
        best,
        curve,
        clipped_steps: clipped,
        skipped_steps: skipped,
    })
}

fn target_for(task: Task, ef_percent: f64) -> Result<Target> {
    Ok(match task {
        Task::Classify => Target::Binary(label_from_ef(ef_percent)?.is_positive()),
        Task::Regress => Target::Value(ef_percent / 100.0),
    })
}

fn start_policy(oracle: bool, seed: u64, epoch: u64) -> StartPolicy {
    if oracle {
        StartPolicy::Oracle
    } else {
        StartPolicy::Random { seed, epoch }
    }
}

/// Encoded CLS vectors memoized by `(clip, start frame)` for a frozen encoder.
struct ClsCache {
    map: HashMap<(usize, usize), Vec<f32>>,
}

impl ClsCache {
    fn get(&mut self, model: &Model<f32>, data: &Dataset, i: usize, samp: &SamplingConfig, policy: StartPolicy) -> Result<Vec<f32>> {
        let start = data.start_frame(i, samp, policy)?;
        if let Some(v) = self.map.get(&(i, start)) {
            return Ok(v.clone());
        }
        let clip = data.clip(i, samp, policy)?;
        let v = model.cls_embedding(&clip.frames)?;
        self.map.insert((i, start), v.clone());
        Ok(v)
    }
}

/// Mean head loss over a dataset with deterministic windows.
fn mean_loss(model: &Model<f32>, data: &Dataset, config: &Config, cache: Option<&mut ClsCache>) -> Result<f64> {
    let samp = sampling(config);
    let policy = start_policy(config.train.oracle, config.train.seed, EVAL_EPOCH);
    let mut scratch = model.params.zeros_like();
    let mut total = 0.0;
    let mut cache = cache;
    for i in 0..data.len() {
        let cls = match cache.as_deref_mut() {
            Some(c) => c.get(model, data, i, &samp, policy)?,
            None => model.cls_embedding(&data.clip(i, &samp, policy)?.frames)?,
        };
        let out = model.head_step(&cls, target_for(config.model.task, data.records[i].ef_percent)?, 0.0, &mut scratch);
        total += out.loss;
    }
    Ok(total / data.len() as f64)
}

/// Supervised fine-tuning from a pretrained checkpoint. In base mode only
/// `head.*` is updated and the encoder runs once per distinct window.
pub fn finetune(
    config: &Config,
    pretrained: &Checkpoint<f32>,
    train: &Dataset,
    val: Option<&Dataset>,
    opts: RunOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FinetuneOutcome> {
    config.validate()?;
    check_compatible(config, pretrained)?;
    if train.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let t = &config.train;
    let seed = t.seed;
    let base = t.mode == TrainMode::Base;
    let mut model = pretrained.model.clone();
    let samp = sampling(config);
    let epochs = t.finetune_epochs;
    let warmup = (t.finetune_warmup_fraction * epochs as f64).round();
    let sched = LrSchedule::new(t.finetune_base_lr, t.finetune_batch_size, warmup, epochs as f64, None);
    let hp = AdamWConfig {
        beta1: t.beta1,
        beta2: t.beta2,
        eps: t.adam_eps,
        weight_decay: t.finetune_weight_decay,
    };
    let head_only = |n: &str| n.starts_with(HEAD_PREFIX);
    let everything = |_: &str| true;
    let trainable: &(dyn Fn(&str) -> bool + Sync) = if base { &head_only } else { &everything };
    let mut optim: OptimizerState<f32> = zero_state(&model.params);
    let mut grads = model.params.zeros_like();
    let mut bufs = Vec::new();
    let mut train_cache = ClsCache { map: HashMap::new() };
    let mut val_cache = ClsCache { map: HashMap::new() };
    let mut stop = EarlyStopState::default();
    let mut best_params = model.params.clone();
    let mut state = TrainingState {
        phase: "finetune".into(),
        root_seed: seed,
        ..Default::default()
    };
    let mut curve = Vec::new();
    let n = train.len();
    let steps = n.div_ceil(t.finetune_batch_size);

    for epoch in 0..epochs {
        if opts.stop_after.is_some_and(|s| epoch >= s) {
            break;
        }
        let order = epoch_order(n, derive_seed(seed, Stream::Shuffle, &[1]), epoch);
        let policy = start_policy(t.oracle, derive_seed(seed, Stream::Sample, &[1]), epoch as u64);
        let mut train_loss = 0.0;
        for (b, batch) in order.chunks(t.finetune_batch_size).enumerate() {
            let lr = sched.lr_at(epoch as f64 + b as f64 / steps as f64);
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f32;
            if base {
                let mut cls = Vec::with_capacity(batch.len());
                for &i in batch {
                    cls.push((i, train_cache.get(&model, train, i, &samp, policy)?));
                }
                for (i, c) in cls {
                    let target = target_for(config.model.task, train.records[i].ef_percent)?;
                    train_loss += model.head_step(&c, target, scale, &mut grads).loss;
                }
            } else {
                let model_ref = &model;
                let outs = accumulate(batch, opts.workers, &mut bufs, &mut grads, |i, g| {
                    let clip = train.clip(i, &samp, policy)?;
                    let target = target_for(config.model.task, train.records[i].ef_percent)?;
                    model_ref.finetune_step(&clip.frames, target, true, scale, g)
                })?;
                train_loss += outs.iter().map(|o| o.loss).sum::<f64>();
            }
            clip_grad_norm(&mut grads, t.clip_norm, trainable);
            match adamw_step(&mut model.params, &grads, &mut optim, lr, &hp, trainable) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient(name)) => {
                    eprintln!("finetune epoch {epoch} step {b}: non-finite gradient in {name}, step skipped");
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = train_loss / n as f64;
        if !train_loss.is_finite() {
            return Err(Error::DivergenceDetected { epoch, loss: train_loss });
        }
        let monitored = match val {
            Some(v) if !v.is_empty() => mean_loss(&model, v, config, if base { Some(&mut val_cache) } else { None })?,
            _ => train_loss,
        };
        if stop.update(monitored, t.finetune_patience, t.min_delta) {
            best_params = model.params.clone();
            state.best_epoch = epoch;
        }
        state.epoch = epoch + 1;
        state.best_loss = stop.best_loss;
        state.epochs_since_improve = stop.epochs_since_improve;
        state.stopped = stop.stopped;
        let row = EpochLog {
            epoch,
            l_rec: train_loss,
            l_contrast: 0.0,
            l_total: monitored,
            lr: sched.lr_at(epoch as f64),
            early_stop_counter: stop.epochs_since_improve,
        };
        on_epoch(&row);
        curve.push(row);
        if stop.stopped {
            break;
        }
    }
    model.params = best_params;
    Ok(FinetuneOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            model,
            optimizer: None,
            state,
        },
        curve,
    })
}

/// Probability of reduced EF for one clip. Regression heads predict EF/100,
/// mapped to `1 − prediction` clamped to `[0, 1]`.
pub fn score(model: &Model<f32>, task: Task, video: &crate::data::Video) -> Result<f64> {
    let out = model.logit(video)?.f64();
    let s = match task {
        Task::Classify => 1.0 / (1.0 + (-out).exp()),
        Task::Regress => (1.0 - out).clamp(0.0, 1.0),
    };
    if !s.is_finite() {
        return Err(Error::NonFiniteActivation("score".into()));
    }
    Ok(s)
}

/// Scores every clip of `data` with unmasked, deterministic windows.
pub fn predict_scores(model: &Model<f32>, config: &Config, data: &Dataset) -> Result<Vec<f64>> {
    let samp = sampling(config);
    let policy = start_policy(config.train.oracle, config.train.seed, EVAL_EPOCH);
    (0..data.len())
        .map(|i| score(model, config.model.task, &data.clip(i, &samp, policy)?.frames))
        .collect()
}

pub fn evaluate(model: &Model<f32>, config: &Config, data: &Dataset) -> Result<MetricsReport> {
    let scores = predict_scores(model, config, data)?;
    let labels = data.labels()?;
    let mut report = MetricsReport::from_scores(&scores, &labels, config.eval.threshold)?;
    report.meta.push(("split".into(), config.eval.split.to_string()));
    report.meta.push(("mode".into(), config.train.mode.to_string()));
    report.meta.push(("oracle".into(), config.train.oracle.to_string()));
    report.meta.push(("seed".into(), config.train.seed.to_string()));
    Ok(report)
}
