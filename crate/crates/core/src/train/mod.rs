//! Optimisation loop: Adam updates, reduce-on-plateau learning rate,
//! per-epoch validation, metrics CSV and checkpoints.
//!
//! Shuffles and flips are pure functions of `(seed, epoch, position)`, so a
//! run resumed from an epoch-end checkpoint replays the same batches as an
//! uninterrupted run.

mod adam;
mod checkpoint;
mod metrics_log;
mod scheduler;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, BFCK_MAGIC, BFCK_VERSION, DEFAULT_INPUT_SIZE,
};
pub use metrics_log::{read_metrics, render_metrics, write_metrics, MetricsRow, METRICS_HEADER};
pub use scheduler::{plateau_update, PlateauConfig, SchedulerState, IMPROVEMENT_TOL};

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loss::{binarize, confusion_slices, ConfusionCounts, LossConfig, LossSums};
use crate::model::{ModelConfig, ModelParams, Network};
use crate::preprocess::{condition_tile, flip_augment, ClipSpec, FlipMode, Sample};
use crate::raster::{split_order, DatasetManifest, Split, TilePair};
use crate::seed;
use crate::tensor::{BnMode, Tape, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.bfck";
pub const LAST_CHECKPOINT: &str = "last.bfck";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f32,
    pub lr_floor: f32,
    pub plateau_factor: f32,
    pub plateau_patience: u32,
    pub max_epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub clip: ClipSpec,
    /// Random flips of training samples.
    pub augment: bool,
    /// Probability at or above which a pixel counts as water.
    pub threshold: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 1e-3,
            lr_floor: 1e-5,
            plateau_factor: 0.1,
            plateau_patience: 5,
            max_epochs: 50,
            batch_size: 4,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            clip: ClipSpec::default(),
            augment: true,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_init && self.lr_init.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < lr_floor <= lr_init, got lr_floor {} and lr_init {}",
                self.lr_floor, self.lr_init
            )));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau_factor {} outside (0, 1)",
                self.plateau_factor
            )));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        self.loss.validate()?;
        self.model.validate()?;
        self.clip.validate()
    }
}

/// Stacked network inputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub pre: Tensor,
    pub post: Tensor,
    pub target: Tensor,
    pub mask: Tensor,
}

pub fn make_batch(samples: &[&Sample]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let (h, w) = first.size();
    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut target = Vec::new();
    let mut mask = Vec::new();
    for s in samples {
        if s.size() != (h, w) || s.pre.channels() != 3 || s.post.channels() != 3 {
            return Err(Error::dim(format!(
                "sample {} does not match the {h}x{w} three-channel batch layout",
                s.id
            )));
        }
        pre.extend_from_slice(s.pre.data());
        post.extend_from_slice(s.post.data());
        target.extend_from_slice(s.target.data());
        mask.extend_from_slice(s.mask.data());
    }
    let n = samples.len();
    Ok(Batch {
        pre: Tensor::new(&[n, 3, h, w], pre)?,
        post: Tensor::new(&[n, 3, h, w], post)?,
        target: Tensor::new(&[n, 1, h, w], target)?,
        mask: Tensor::new(&[n, 1, h, w], mask)?,
    })
}

/// Loads and conditions one split in manifest order.
pub fn load_samples(manifest: &DatasetManifest, split: Split, clip: &ClipSpec) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .map(|e| condition_tile(&TilePair::load(e)?, clip))
        .collect()
}

/// Flip applied to the sample at `position` of the shuffled epoch order.
pub fn flip_mode(seed: u64, epoch: u64, position: usize) -> FlipMode {
    FlipMode::draw(&mut seed::rng(seed, seed::STREAM_FLIP, (epoch << 32) ^ position as u64))
}

/// Probabilities N×1×H×W in eval mode.
pub fn predict(params: &mut ModelParams, pre: &Tensor, post: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let pre = tape.constant(pre.clone());
    let post = tape.constant(post.clone());
    let probs = Network::new(params, BnMode::Eval).forward(&mut tape, &vars, pre, post)?;
    Ok(tape.value(probs).clone())
}

/// Dataset-level loss sums and confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub sums: LossSums,
    pub counts: ConfusionCounts,
}

impl EvalReport {
    pub fn loss(&self, cfg: &LossConfig) -> f64 {
        self.sums.combined(cfg)
    }

    pub fn iou(&self) -> f64 {
        self.counts.iou()
    }

    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }
}

/// Eval-mode pass over `samples` without augmentation.
pub fn evaluate(
    params: &mut ModelParams,
    samples: &[Sample],
    batch_size: usize,
    loss: &LossConfig,
    threshold: f32,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Usage("nothing to evaluate: the split is empty".into()));
    }
    let mut report = EvalReport::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(&refs)?;
        let probs = predict(params, &batch.pre, &batch.post)?;
        let (p, t, m) = (probs.data(), batch.target.data(), batch.mask.data());
        report.sums.add(p, t, m, loss.gamma);
        report.counts += confusion_slices(&binarize(p, threshold), t, m)?;
    }
    Ok(report)
}

/// Result of [`train`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub last: Checkpoint,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub metrics_path: PathBuf,
}

fn with_context(e: Error, epoch: u64, batch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

/// One forward/backward pass and Adam update; returns the batch loss.
fn train_step(ck: &mut Checkpoint, batch: &Batch, loss_cfg: &LossConfig) -> Result<f32> {
    let mut tape = Tape::new();
    let vars = ck.params.bind(&mut tape, true);
    let pre = tape.constant(batch.pre.clone());
    let post = tape.constant(batch.post.clone());
    let probs = Network::new(&mut ck.params, BnMode::Train).forward(&mut tape, &vars, pre, post)?;
    let loss = tape.combined_loss(probs, &batch.target, &batch.mask, loss_cfg)?;
    let value = tape.value(loss.value).item()?;
    tape.backward(loss.value)?;
    let mut grads = Vec::new();
    for (name, v) in vars.iter(&ck.params) {
        let g = tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
        grads.push(g);
    }
    ck.step += 1;
    ck.adam.step(&mut ck.params, &grads, ck.scheduler.lr, ck.step, &AdamConfig::default())?;
    Ok(value)
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    train: Vec<Sample>,
    val: Vec<Sample>,
    /// Manifest entry index → position in `train`.
    train_pos: HashMap<usize, usize>,
    manifest: &'a DatasetManifest,
}

impl Run<'_> {
    fn steps_per_epoch(&self) -> u64 {
        self.train.len().div_ceil(self.cfg.batch_size) as u64
    }

    fn train_epoch(&self, ck: &mut Checkpoint, epoch: u64) -> Result<f64> {
        let cfg = self.cfg;
        let order = split_order(self.manifest, Split::Train, cfg.seed, epoch)?;
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<Sample> = chunk
                .iter()
                .enumerate()
                .map(|(j, idx)| {
                    let s = &self.train[self.train_pos[idx]];
                    if cfg.augment {
                        flip_augment(s, flip_mode(cfg.seed, epoch, b * cfg.batch_size + j))
                    } else {
                        Ok(s.clone())
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = samples.iter().collect();
            let batch = make_batch(&refs)?;

            let value = train_step(ck, &batch, &cfg.loss).map_err(|e| with_context(e, epoch, b))?;
            total += value as f64;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    fn validate(&self, params: &mut ModelParams) -> Result<EvalReport> {
        evaluate(params, &self.val, self.cfg.batch_size, &self.cfg.loss, self.cfg.threshold)
    }
}

/// Trains on the manifest's train split and validates on its val split.
///
/// Writes `metrics.csv`, `best.bfck` (lowest validation loss) and
/// `last.bfck` into `out_dir`. Epoch 0 is an evaluation of the initial
/// weights, with the train loss measured in eval mode. With `resume`, the
/// run continues from that epoch-end checkpoint and keeps the metrics rows
/// already logged up to its epoch.
pub fn train(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_idx: Vec<usize> = (0..manifest.entries.len())
        .filter(|&i| manifest.entries[i].split == Split::Train)
        .collect();
    if train_idx.is_empty() {
        return Err(Error::Usage("the train split is empty".into()));
    }
    if manifest.split(Split::Val).next().is_none() {
        return Err(Error::Usage("the val split is empty".into()));
    }
    let run = Run {
        cfg,
        train: load_samples(manifest, Split::Train, &cfg.clip)?,
        val: load_samples(manifest, Split::Val, &cfg.clip)?,
        train_pos: train_idx.iter().enumerate().map(|(pos, &i)| (i, pos)).collect(),
        manifest,
    };
    if let Some(s) = run.train.iter().chain(&run.val).find(|s| s.size() != (cfg.model.input_size, cfg.model.input_size)) {
        return Err(Error::dim(format!(
            "tile {} is {}x{}, the model expects {}x{}",
            s.id,
            s.size().0,
            s.size().1,
            cfg.model.input_size,
            cfg.model.input_size
        )));
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let last_path = out_dir.join(LAST_CHECKPOINT);
    let plateau = PlateauConfig::from(cfg);

    let (mut ck, mut rows, start_epoch) = match resume {
        Some(mut ck) => {
            if ck.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "checkpoint was trained with seed {}, config says {}",
                    ck.seed, cfg.seed
                )));
            }
            ck.params.set_input_size(cfg.model.input_size)?;
            if ck.params.config() != &cfg.model {
                return Err(Error::Config(format!(
                    "checkpoint model {:?} differs from the configured {:?}",
                    ck.params.config(),
                    cfg.model
                )));
            }
            let spe = run.steps_per_epoch();
            if ck.step % spe != 0 {
                return Err(Error::Validation(format!(
                    "checkpoint step {} is not at an epoch boundary ({spe} steps per epoch)",
                    ck.step
                )));
            }
            let epoch = ck.step / spe;
            let rows = if metrics_path.exists() {
                read_metrics(&metrics_path)?
                    .into_iter()
                    .filter(|r| r.epoch <= epoch)
                    .collect()
            } else {
                Vec::new()
            };
            (ck, rows, epoch)
        }
        None => {
            let params = ModelParams::init(&cfg.model, cfg.seed)?;
            let mut ck = Checkpoint {
                adam: AdamState::zeros(&params),
                params,
                step: 0,
                scheduler: SchedulerState::new(cfg.lr_init),
                seed: cfg.seed,
            };
            let train_eval = evaluate(&mut ck.params, &run.train, cfg.batch_size, &cfg.loss, cfg.threshold)?;
            let val = run.validate(&mut ck.params)?;
            let row = MetricsRow {
                epoch: 0,
                train_loss: train_eval.loss(&cfg.loss),
                val_loss: val.loss(&cfg.loss),
                val_iou: val.iou(),
                val_f1: val.f1(),
                lr: ck.scheduler.lr as f64,
            };
            let (next, improved) = plateau_update(ck.scheduler, row.val_loss as f32, &plateau);
            ck.scheduler = next;
            if improved {
                save_checkpoint(&ck, &best_path)?;
            }
            save_checkpoint(&ck, &last_path)?;
            write_metrics(&[row], &metrics_path)?;
            on_epoch(&row);
            (ck, vec![row], 0)
        }
    };

    for epoch in start_epoch + 1..=cfg.max_epochs {
        let lr = ck.scheduler.lr;
        let train_loss = run.train_epoch(&mut ck, epoch)?;
        let val = run.validate(&mut ck.params)?;
        let row = MetricsRow {
            epoch,
            train_loss,
            val_loss: val.loss(&cfg.loss),
            val_iou: val.iou(),
            val_f1: val.f1(),
            lr: lr as f64,
        };
        if !row.val_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: validation loss is not finite")));
        }
        let (next, improved) = plateau_update(ck.scheduler, row.val_loss as f32, &plateau);
        ck.scheduler = next;
        if improved {
            save_checkpoint(&ck, &best_path)?;
        }
        save_checkpoint(&ck, &last_path)?;
        rows.push(row);
        write_metrics(&rows, &metrics_path)?;
        on_epoch(&row);
    }

    Ok(TrainOutcome {
        rows,
        last: ck,
        best_path,
        last_path,
        metrics_path,
    })
}
