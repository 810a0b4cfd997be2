//! Optimization: Adam, the warm-up + cosine learning-rate schedule, the
//! epoch loop with seeded shuffling and fresh random crops, tab-separated
//! logging, and final/best checkpointing.
//!
//! Everything here is single-threaded and deterministic: two runs with
//! the same seed produce bitwise-identical logs and checkpoints. Batch
//! assembly could run ahead on worker threads as long as batch order and
//! per-record crop streams stay equal to this single-threaded order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::data::{label_vector, DataError, EcgRecord, LabelMap};
use crate::metrics::{macro_report, MetricsError};
use crate::model::{bce_loss, Model, ModelError};
use crate::preprocess::{prepare, PreprocessError, TARGET_FS};
use crate::rng::rng_for;
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    Config(String),
    #[error("{0} fold is empty")]
    EmptySplit(&'static str),
    #[error("record {0:?} is not in the corpus")]
    UnknownRecord(String),
    #[error("non-finite gradient in parameter {0:?}")]
    BadGradient(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type TrainResult<T> = Result<T, TrainError>;

/// Optimizer and schedule settings. The schedule rises linearly from
/// `warmup_start_lr` to `peak_lr` over the warm-up epochs, then follows a
/// half cosine down to `min_lr` over the remaining epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_start_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub cosine_epochs: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 6e-4,
            warmup_start_lr: 1e-5,
            min_lr: 1e-6,
            warmup_epochs: 5,
            cosine_epochs: 13,
            betas: (0.9, 0.98),
            eps: 1e-9,
            batch_size: 32,
            total_epochs: 18,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.warmup_epochs + self.cosine_epochs != self.total_epochs {
            return bad(format!(
                "warmup_epochs ({}) + cosine_epochs ({}) must equal total_epochs ({})",
                self.warmup_epochs, self.cosine_epochs, self.total_epochs
            ));
        }
        if self.cosine_epochs == 0 {
            return bad("cosine_epochs must be at least 1".into());
        }
        if !(self.min_lr > 0.0 && self.min_lr < self.peak_lr) {
            return bad(format!(
                "need 0 < min_lr < peak_lr, got {} and {}",
                self.min_lr, self.peak_lr
            ));
        }
        if self.warmup_start_lr <= 0.0 {
            return bad(format!("warmup_start_lr must be positive, got {}", self.warmup_start_lr));
        }
        for (name, b) in [("beta1", self.betas.0), ("beta2", self.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Learning rate at a fractional epoch position. Linear warm-up on
/// `[0, warmup)`, half-cosine decay on `[warmup, total]`, clamped at
/// `min_lr` beyond. Continuous at the joints and exact at them:
/// `lr_at(0) = warmup_start_lr`, `lr_at(warmup) = peak_lr`,
/// `lr_at(total) = min_lr`.
pub fn lr_at(epoch_frac: f64, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs as f64;
    let total = cfg.total_epochs as f64;
    if epoch_frac < warm {
        cfg.warmup_start_lr + (cfg.peak_lr - cfg.warmup_start_lr) * (epoch_frac / warm)
    } else if epoch_frac <= total {
        let angle = PI * (epoch_frac - warm) / cfg.cosine_epochs as f64;
        cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + angle.cos())
    } else {
        cfg.min_lr
    }
}

/// One bias-corrected Adam update on a flat parameter slice.
pub fn adam_update(
    theta: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        theta[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with per-parameter moment slots keyed by parameter name.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Adam {
        Adam {
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            eps: cfg.eps,
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one step to every named parameter of `model`, returning the
    /// updated model. Parameters without a gradient entry are carried
    /// over unchanged (a zero gradient). Any non-finite gradient aborts
    /// before anything is touched, naming the offending parameter.
    pub fn step(
        &mut self,
        model: &Model,
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
    ) -> TrainResult<Model> {
        for (name, g) in grads {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::BadGradient(name.clone()));
            }
        }
        self.t += 1;
        let t = self.t;
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let slots = &mut self.slots;
        Ok(model.map(&mut |name, tensor| {
            let Some(g) = grads.get(&name) else {
                return tensor.clone();
            };
            assert_eq!(g.len(), tensor.numel(), "gradient shape drifted for {name}");
            let slot = slots.entry(name).or_insert_with(|| Slot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            let mut theta = tensor.to_vec();
            adam_update(&mut theta, g, &mut slot.m, &mut slot.v, t, lr, beta1, beta2, eps);
            Tensor::from_vec(theta, tensor.shape()).expect("parameter shape is unchanged")
        }))
    }
}

/// Pull the accumulated gradient of every bound parameter, by name.
fn collect_grads(bound: &Model) -> BTreeMap<String, Vec<f64>> {
    let mut grads = BTreeMap::new();
    bound.visit(&mut |name, t| {
        if let Some(g) = t.grad() {
            grads.insert(name, g.to_vec());
        }
    });
    grads
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Schedule value at the epoch's first optimizer step.
    pub lr: f64,
    pub train_loss: f64,
    pub val_auprc: f64,
    pub val_auroc: f64,
}

impl EpochRow {
    /// Tab-separated row; floats in shortest-round-trip form.
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch, self.lr, self.train_loss, self.val_auprc, self.val_auroc
        )
    }
}

/// Everything `train_loop` leaves behind.
pub struct TrainOutcome {
    pub model: Model,
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub optimizer_steps: u64,
    pub log_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

// Derivation tags for the per-purpose RNG streams; see `stream`.
const TAG_SHUFFLE: u8 = 1;
const TAG_CROP: u8 = 2;

/// Stream id for (purpose, epoch, item): independent of batch layout, so
/// a record's crop depends only on where the shuffle placed it.
fn stream(kind: u8, epoch: usize, item: usize) -> u64 {
    ((kind as u64) << 56) | (((epoch as u64) & 0xFFF_FFFF) << 28) | ((item as u64) & 0xFFF_FFFF)
}

fn corpus_index<'a>(
    corpus: &'a [EcgRecord],
    ids: &[String],
) -> TrainResult<BTreeMap<&'a str, &'a EcgRecord>> {
    let index: BTreeMap<&str, &EcgRecord> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();
    for id in ids {
        if !index.contains_key(id.as_str()) {
            return Err(TrainError::UnknownRecord(id.clone()));
        }
    }
    Ok(index)
}

/// Deterministic evaluation pass over `ids`: resample, crop from sample 0,
/// untracked forward, sigmoid. Returns `[n, n_classes]` score and label
/// matrices in id order.
pub fn evaluate(
    model: &Model,
    corpus: &[EcgRecord],
    ids: &[String],
    map: &LabelMap,
) -> TrainResult<(Tensor, Tensor)> {
    if ids.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    if model.config.n_classes != map.n_classes() {
        return Err(TrainError::Config(format!(
            "model has {} classes but the label map has {}",
            model.config.n_classes,
            map.n_classes()
        )));
    }
    let index = corpus_index(corpus, ids)?;
    let c = map.n_classes();
    let mut scores = Vec::with_capacity(ids.len() * c);
    let mut labels = Vec::with_capacity(ids.len() * c);
    for id in ids {
        let rec = index[id.as_str()];
        let x = prepare(&rec.signal, TARGET_FS, model.config.seq_len, None)?;
        let logits = model.forward(&x)?;
        scores.extend_from_slice(logits.sigmoid().data());
        labels.extend(label_vector(rec.dx_codes.iter().map(|s| s.as_str()), map));
    }
    Ok((
        Tensor::from_vec(scores, &[ids.len(), c])?,
        Tensor::from_vec(labels, &[ids.len(), c])?,
    ))
}

/// Run the full optimization: per epoch, shuffle the fit fold with a
/// seeded stream, walk minibatches with fresh random crops, take one Adam
/// step per batch at `lr_at(epoch + batch/batches)`, then evaluate the
/// validation fold in eval mode. Appends one tab-separated row per epoch
/// to `train.log` in `out_dir` and writes `best.ckpt` (highest validation
/// macro AUPRC) and `final.ckpt`.
pub fn train_loop(
    model: Model,
    corpus: &[EcgRecord],
    map: &LabelMap,
    fit_ids: &[String],
    val_ids: &[String],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> TrainResult<TrainOutcome> {
    cfg.validate()?;
    if fit_ids.is_empty() {
        return Err(TrainError::EmptySplit("fit"));
    }
    if val_ids.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if model.config.n_classes != map.n_classes() {
        return Err(TrainError::Config(format!(
            "model has {} classes but the label map has {}",
            model.config.n_classes, map.n_classes()
        )));
    }
    let index = corpus_index(corpus, fit_ids)?;
    corpus_index(corpus, val_ids)?;

    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("train.log");
    let final_checkpoint = out_dir.join("final.ckpt");
    let best_checkpoint = out_dir.join("best.ckpt");
    let mut log = BufWriter::new(File::create(&log_path)?);

    let mut current = model;
    let mut adam = Adam::new(cfg);
    let mut rows: Vec<EpochRow> = Vec::with_capacity(cfg.total_epochs);
    let mut best: Option<(usize, f64)> = None;

    for epoch in 0..cfg.total_epochs {
        let mut order: Vec<&str> = fit_ids.iter().map(|s| s.as_str()).collect();
        order.shuffle(&mut rng_for(cfg.seed, stream(TAG_SHUFFLE, epoch, 0)));

        let n_batches = order.len().div_ceil(cfg.batch_size);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lr = lr_at(epoch as f64 + bi as f64 / n_batches as f64, cfg);
            let graph = Graph::new();
            let bound = current.bind(&graph);
            let mut batch_loss: Option<Tensor> = None;
            for (ri, id) in chunk.iter().enumerate() {
                let rec = index[id];
                let mut crop_rng =
                    rng_for(cfg.seed, stream(TAG_CROP, epoch, bi * cfg.batch_size + ri));
                let x = prepare(&rec.signal, TARGET_FS, current.config.seq_len, Some(&mut crop_rng))?;
                let logits = bound.forward(&x)?;
                let y = Tensor::from_vec(
                    label_vector(rec.dx_codes.iter().map(|s| s.as_str()), map),
                    &[map.n_classes()],
                )?;
                let loss = bce_loss(&logits, &y)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => acc.add(&loss)?,
                    None => loss,
                });
            }
            let loss = batch_loss.expect("chunks are never empty").scale(1.0 / chunk.len() as f64);
            loss.backward()?;
            loss_sum += loss.item()? * chunk.len() as f64;
            current = adam.step(&current, &collect_grads(&bound), lr)?;
        }

        let (scores, labels) = evaluate(&current, corpus, val_ids, map)?;
        let report = macro_report(&scores, &labels)?;
        let row = EpochRow {
            epoch,
            lr: lr_at(epoch as f64, cfg),
            train_loss: loss_sum / order.len() as f64,
            val_auprc: report.macro_auprc,
            val_auroc: report.macro_auroc,
        };
        writeln!(log, "{}", row.tsv())?;
        log.flush()?;
        if best.is_none_or(|(_, b)| report.macro_auprc > b) {
            best = Some((epoch, report.macro_auprc));
            checkpoint::save(&current, &best_checkpoint)?;
        }
        rows.push(row);
    }
    checkpoint::save(&current, &final_checkpoint)?;

    Ok(TrainOutcome {
        model: current,
        rows,
        best_epoch: best.expect("at least one epoch ran").0,
        optimizer_steps: adam.steps(),
        log_path,
        final_checkpoint,
        best_checkpoint,
    })
}
