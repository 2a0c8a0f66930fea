//! Epoch loop, per-epoch checkpoints, metrics file and evaluation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::{stream_batches, DatasetError, Manifest, Split};
use crate::nn::{
    bce_loss, load_checkpoint, load_optimizer, save_checkpoint, save_optimizer, AdamConfig, AdamState, DropoutKey, Model,
    NnError,
};

/// First line of every metrics file.
pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

const DROPOUT_STREAM: u64 = 0x64726f70;
const SHUFFLE_STREAM: u64 = 0x73687566;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: u32, batch: usize },
    #[error("empty split `{0}`")]
    EmptySplit(Split),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Metrics { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Epochs to run in this call (on resume: additional epochs).
    pub epochs: u32,
    pub batch_size: usize,
    /// Drives shuffling and dropout.
    pub seed: u64,
    pub adam: AdamConfig,
    /// Where `epoch_<n>.knck` / `epoch_<n>.opt` go; `None` skips checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// When false the `seconds` column is written as 0 so metrics files are
    /// byte-comparable across runs.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_dir: None,
            metrics_path: None,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        let a = self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(TrainError::Config(format!("invalid Adam parameters {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: u32,
    /// Sample-weighted mean over the epoch's batches, dropout active.
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc, self.seconds
        )
    }

    pub fn parse_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            epoch: f[0].parse().ok()?,
            train_loss: num(1)?,
            train_acc: num(2)?,
            val_loss: num(3)?,
            val_acc: num(4)?,
            seconds: num(5)?,
        })
    }
}

/// Parse a metrics file written by the trainer.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let err = |message: String| TrainError::Metrics {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(err(format!("expected header `{METRICS_HEADER}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        out.push(EpochRecord::parse_csv(&line).ok_or_else(|| err(format!("malformed record `{line}`")))?);
    }
    Ok(out)
}

/// One inference-mode prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Position in `Manifest::samples`.
    pub index: usize,
    pub path: PathBuf,
    pub label: u8,
    pub probability: f64,
    pub predicted: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// In manifest order.
    pub predictions: Vec<Prediction>,
}

/// Inference-mode pass over every sample of `split`, in manifest order.
pub fn evaluate(model: &Model<f32>, manifest: &Manifest, split: Split, batch_size: usize) -> Result<Evaluation, TrainError> {
    if manifest.count(split) == 0 {
        return Err(TrainError::EmptySplit(split));
    }
    let mut predictions = Vec::with_capacity(manifest.count(split));
    for batch in stream_batches(manifest, split, batch_size, None)? {
        let batch = batch?;
        let probs = model.predict(&batch.images)?;
        for (&index, p) in batch.indices.iter().zip(probs) {
            let sample = &manifest.samples[index];
            predictions.push(Prediction {
                index,
                path: sample.path.clone(),
                label: sample.label,
                probability: p,
                predicted: crate::nn::predicted_class(p),
            });
        }
    }
    let labels: Vec<f64> = predictions.iter().map(|p| f64::from(p.label)).collect();
    let probs: Vec<f64> = predictions.iter().map(|p| p.probability).collect();
    let (loss, accuracy) = bce_loss(&labels, &probs);
    Ok(Evaluation {
        loss,
        accuracy,
        predictions,
    })
}

/// Checkpoint file name for epoch `n`.
pub fn checkpoint_name(epoch: u32) -> String {
    format!("epoch_{epoch}.knck")
}

/// Optimizer-state file paired with a checkpoint.
pub fn optimizer_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("opt")
}

/// Drives training one epoch at a time.
#[derive(Debug)]
pub struct Trainer<'a> {
    model: Model<f32>,
    adam: AdamState<f32>,
    manifest: &'a Manifest,
    cfg: TrainConfig,
    completed: u32,
    records: Vec<EpochRecord>,
    exact_resume: bool,
}

impl<'a> Trainer<'a> {
    /// Fresh run: zeroed optimizer, metrics file truncated to its header.
    pub fn new(model: Model<f32>, manifest: &'a Manifest, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let adam = AdamState::new(cfg.adam, model.param_count());
        let t = Self {
            model,
            adam,
            manifest,
            cfg,
            completed: 0,
            records: Vec::new(),
            exact_resume: true,
        };
        t.prepare_outputs(false)?;
        Ok(t)
    }

    /// Continue from a checkpoint. The optimizer state is restored from the
    /// sibling `.opt` file when present, otherwise re-initialized (and
    /// `is_exact_resume` reports false). Metrics are appended.
    pub fn resume(checkpoint: &Path, manifest: &'a Manifest, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let (model, meta) = load_checkpoint::<f32>(checkpoint)?;
        let want = Model::<f32>::table1(0);
        if model.architecture() != want.architecture() {
            return Err(TrainError::Nn(NnError::Checkpoint {
                path: checkpoint.to_path_buf(),
                message: "layer table differs from the image classifier".into(),
            }));
        }
        let opt = optimizer_path(checkpoint);
        let (adam, exact) = if opt.exists() {
            let mut st = load_optimizer::<f32>(&opt, model.param_count())?;
            st.config = cfg.adam;
            (st, true)
        } else {
            (AdamState::new(cfg.adam, model.param_count()), false)
        };
        let t = Self {
            model,
            adam,
            manifest,
            cfg,
            completed: meta.epoch,
            records: Vec::new(),
            exact_resume: exact,
        };
        t.prepare_outputs(true)?;
        Ok(t)
    }

    fn prepare_outputs(&self, append: bool) -> Result<(), TrainError> {
        if self.manifest.count(Split::Train) == 0 {
            return Err(TrainError::EmptySplit(Split::Train));
        }
        if self.manifest.count(Split::Val) == 0 {
            return Err(TrainError::EmptySplit(Split::Val));
        }
        if let Some(dir) = &self.cfg.checkpoint_dir {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        if let Some(path) = &self.cfg.metrics_path {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            if !(append && path.exists()) {
                fs::write(path, format!("{METRICS_HEADER}\n")).map_err(io_err(path))?;
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn optimizer(&self) -> &AdamState<f32> {
        &self.adam
    }

    /// Epochs completed, counting those before a resume.
    pub fn epochs_completed(&self) -> u32 {
        self.completed
    }

    /// Records of epochs run by this trainer.
    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn is_exact_resume(&self) -> bool {
        self.exact_resume
    }

    /// One shuffled pass over Train with dropout, then a full Val evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let start = Instant::now();
        let epoch = self.completed + 1;
        let shuffle = crate::nn::mix_seed(&[self.cfg.seed, SHUFFLE_STREAM, u64::from(epoch)]);
        let dropout_seed = crate::nn::mix_seed(&[self.cfg.seed, DROPOUT_STREAM]);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, batch) in stream_batches(self.manifest, Split::Train, self.cfg.batch_size, Some(shuffle))?.enumerate() {
            let batch = batch?;
            let key = DropoutKey {
                seed: dropout_seed,
                epoch: u64::from(epoch),
                batch: b as u64,
                item: 0,
            };
            let (out, grads) = self.model.loss_and_gradients(&batch.images, &batch.labels, Some(key))?;
            if !out.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite { epoch, batch: b });
            }
            self.adam.step(self.model.params_mut(), &grads)?;
            let n = batch.labels.len();
            loss_sum += out.loss * n as f64;
            correct += out.correct;
            seen += n;
        }
        let val = evaluate(&self.model, self.manifest, Split::Val, self.cfg.batch_size)?;
        if !val.loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, batch: 0 });
        }
        self.completed = epoch;
        if let Some(dir) = &self.cfg.checkpoint_dir {
            let path = dir.join(checkpoint_name(epoch));
            save_checkpoint(&path, &self.model, epoch)?;
            save_optimizer(&optimizer_path(&path), &self.adam)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            seconds: if self.cfg.record_timing {
                (start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
            } else {
                0.0
            },
        };
        if let Some(path) = &self.cfg.metrics_path {
            let mut f = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
            writeln!(f, "{}", record.to_csv()).map_err(io_err(path))?;
        }
        self.records.push(record);
        Ok(record)
    }

    /// Run `cfg.epochs` epochs.
    pub fn run(&mut self) -> Result<&[EpochRecord], TrainError> {
        for _ in 0..self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(&self.records)
    }
}

/// Train `model` for `cfg.epochs` epochs.
pub fn train(model: Model<f32>, manifest: &Manifest, cfg: TrainConfig) -> Result<(Model<f32>, Vec<EpochRecord>), TrainError> {
    let mut t = Trainer::new(model, manifest, cfg)?;
    t.run()?;
    let records = t.records.clone();
    Ok((t.into_model(), records))
}

/// Resume from `checkpoint` and train `cfg.epochs` more epochs.
pub fn resume(checkpoint: &Path, manifest: &Manifest, cfg: TrainConfig) -> Result<(Model<f32>, Vec<EpochRecord>), TrainError> {
    let mut t = Trainer::resume(checkpoint, manifest, cfg)?;
    t.run()?;
    let records = t.records.clone();
    Ok((t.into_model(), records))
}
