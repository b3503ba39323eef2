//! Training loop, evaluation and confusion matrices.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{group_names, group_of, Corpus, ScenarioMap};
use crate::error::{Error, Result};
use crate::layers::softmax_cross_entropy;
use crate::models::{transfer_load, Checkpoint, Model, TrainingMeta, TransferReport};
use crate::tensor::{Adam, AdamConfig, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation accuracy.
    pub patience: usize,
    /// Checkpoint to initialize from before training (any fragment size).
    pub pretrained: Option<PathBuf>,
    /// Stop as soon as validation accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            patience: 5,
            pretrained: None,
            stop_at_accuracy: None,
            eval_batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step in order.
    pub batch_losses: Vec<f32>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
}

impl History {
    /// First epoch (1-based) whose validation accuracy reached `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.epochs.iter().find(|e| e.val_acc >= target).map(|e| e.epoch)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_acc"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_acc.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct TrainOutcome {
    pub history: History,
    /// Best-validation weights, which are also left in the model.
    pub checkpoint: Checkpoint,
    pub transfer: Option<TransferReport>,
}

fn check_compatible(model: &Model<f32>, corpus: &Corpus, what: &str) -> Result<()> {
    let cfg = model.config();
    if corpus.fragment_size != cfg.fragment_size {
        return Err(Error::Config(format!(
            "{what} corpus has {}-byte fragments, the model expects {}",
            corpus.fragment_size, cfg.fragment_size
        )));
    }
    if corpus.num_classes() != cfg.num_classes {
        return Err(Error::Config(format!(
            "{what} corpus has {} classes, the model has {}",
            corpus.num_classes(),
            cfg.num_classes
        )));
    }
    Ok(())
}

pub fn train(model: &mut Model<f32>, train: &Corpus, val: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train, val, config, |_| {})
}

/// Adam on mean softmax cross-entropy with a seeded shuffle per epoch. `on_epoch` sees
/// each finished epoch. A non-finite batch loss aborts with the epoch and step.
pub fn train_with(
    model: &mut Model<f32>,
    train: &Corpus,
    val: &Corpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    check_compatible(model, train, "training")?;
    check_compatible(model, val, "validation")?;
    let uses_batch_norm = !model.config().architecture.is_modified();
    if config.batch_size < 1 || (uses_batch_norm && config.batch_size < 2) {
        return Err(Error::Config(format!(
            "batch size {} is too small for batch normalization",
            config.batch_size
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation corpora must be non-empty".into()));
    }
    let transfer = match &config.pretrained {
        Some(path) => Some(transfer_load(model, &Checkpoint::read(path)?)?),
        None => None,
    };
    model.reseed(config.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(model.store(), AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<ParamStore<f32>> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            if uses_batch_norm && idx.len() < 2 {
                continue;
            }
            let frags: Vec<&[u8]> = idx.iter().map(|&i| train.records[i].bytes.as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.records[i].label as usize).collect();
            let mut pass = model.forward(&frags)?;
            let (loss, _) = softmax_cross_entropy(&mut pass.tape, pass.logits, &labels)?;
            let value = pass.tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {value} at epoch {epoch}, step {}",
                    step + 1
                )));
            }
            pass.tape.backward(loss)?;
            let store = model.store_mut();
            store.zero_grads();
            store.collect_grads(&pass.tape, &pass.bound)?;
            adam.step(store)?;
            history.batch_losses.push(value);
            loss_sum += value as f64;
            steps += 1;
        }
        let val_acc = evaluate(model, val, config.eval_batch_size)?.accuracy;
        let record = EpochRecord { epoch, train_loss: loss_sum / steps.max(1) as f64, val_acc };
        on_epoch(&record);
        history.epochs.push(record);
        if best.is_none() || val_acc > history.best_val_acc {
            history.best_val_acc = val_acc;
            history.best_epoch = epoch;
            best = Some(model.store().clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.stop_at_accuracy.is_some_and(|t| val_acc >= t) {
            break;
        }
        if since_best >= config.patience && epoch < config.epochs {
            history.stopped_early = true;
            break;
        }
    }
    if let Some(best) = best {
        *model.store_mut() = best;
        model.store_mut().zero_grads();
    }
    let meta = TrainingMeta {
        seed: config.seed,
        epochs: history.epochs.len(),
        corpus_digest: train.digest(),
        class_names: train.class_names.clone(),
    };
    let checkpoint = Checkpoint::from_model(model, Some(meta))?;
    Ok(TrainOutcome { history, checkpoint, transfer })
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(k);
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        (0..self.k).map(|j| self.get(class, j)).sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, class)).sum()
    }

    /// One-vs-rest counts `(tp, tn, fp, fn)` for `class`.
    pub fn outcomes(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(class, class);
        let fn_ = self.row_sum(class) - tp;
        let fp = self.col_sum(class) - tp;
        let tn = self.total() - tp - fn_ - fp;
        (tp, tn, fp, fn_)
    }

    /// Correct over total; for several classes this is the micro-averaged
    /// `(TP + TN) / (TP + TN + FP + FN)`.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// CSV with a header row and a leading column of class names.
    pub fn write_csv(&self, path: &Path, class_names: &[String]) -> Result<()> {
        if class_names.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                self.k
            )));
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.k {
            let mut row = vec![class_names[i].clone()];
            row.extend((0..self.k).map(|j| self.get(i, j).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(TP + TN) / (TP + TN + FP + FN)`.
pub fn binary_accuracy(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    (tp + tn) as f64 / (tp + tn + fp + fn_) as f64
}

/// Sums a 75-class (scenario 1) matrix over the 11 superclasses.
pub fn group_confusion(matrix: &ConfusionMatrix) -> Result<ConfusionMatrix> {
    let map = ScenarioMap::new(1)?;
    if matrix.k != map.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "superclass grouping needs a {}-class matrix, got {}",
            map.num_classes(),
            matrix.k
        )));
    }
    let group: Vec<usize> = map.class_names.iter().map(|e| group_of(e)).collect::<Result<_>>()?;
    let mut out = ConfusionMatrix::new(group_names().len());
    for i in 0..matrix.k {
        for j in 0..matrix.k {
            out.counts[group[i] * out.k + group[j]] += matrix.get(i, j);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub matrix: ConfusionMatrix,
}

/// Evaluation-mode predictions for every record, computed over batches in parallel
/// and merged in record order.
pub fn predict(model: &Model<f32>, corpus: &Corpus, batch_size: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let k = model.config().num_classes;
    let per_batch: Vec<Vec<usize>> = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let frags: Vec<&[u8]> = chunk.iter().map(|&i| corpus.records[i].bytes.as_slice()).collect();
            let logits = model.forward_eval(&frags)?;
            Ok(logits.data().chunks(k).map(argmax).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

/// Index of the first maximum.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn evaluate(model: &Model<f32>, corpus: &Corpus, batch_size: usize) -> Result<Evaluation> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty corpus".into()));
    }
    check_compatible(model, corpus, "evaluation")?;
    let preds = predict(model, corpus, batch_size)?;
    let matrix = ConfusionMatrix::from_pairs(
        corpus.num_classes(),
        corpus.records.iter().zip(preds).map(|(r, p)| (r.label as usize, p)),
    );
    Ok(Evaluation { accuracy: matrix.accuracy(), matrix })
}
