//! Per-trial training: Adam over mini-batches, validation after every
//! epoch, early stopping, and a test score from the best-epoch snapshot.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch_indices, EncodedDataset};
use crate::graph::{ConcreteModel, GraphError};
use crate::optim::{adam_update, Adam, AdamState};
use crate::params::ParamStore;
use crate::tape::Tape;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} in epoch {epoch}")]
    NonFinite { epoch: usize, what: &'static str },
    #[error(transparent)]
    Model(#[from] GraphError),
    #[error("cannot evaluate an empty split")]
    EmptySplit,
    #[error("config: {0}")]
    Config(String),
    #[error("metrics file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    /// Rows per forward pass when scoring a split; does not change scores.
    pub eval_batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1024,
            early_stop_patience: 1,
            eval_batch_size: 8192,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(TrainError::Config("batch sizes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation score per epoch.
    pub val_scores: Vec<f64>,
    pub best_val: f64,
    /// Zero-based epoch of `best_val`.
    pub best_epoch: usize,
    /// Parameters after `best_epoch`.
    pub snapshot: ParamStore,
    /// Test score of the snapshot, when a test split was given.
    pub test_score: Option<f64>,
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    train_loss: f64,
    val_score: f64,
}

/// Whether training should stop: true once more than `patience`
/// consecutive trailing epochs fail to strictly improve on the best score
/// before them.
pub fn early_stop_update(history: &[f64], patience: usize) -> bool {
    let Some(&first) = history.first() else {
        return false;
    };
    let mut best = first;
    let mut bad = 0;
    for &s in &history[1..] {
        if s < best {
            best = s;
            bad = 0;
        } else {
            bad += 1;
        }
    }
    bad > patience
}

/// Mean task metric over the whole split: MSE for rating models, clipped
/// log loss for CTR models.
pub fn evaluate_metric(
    model: &ConcreteModel,
    data: &EncodedDataset,
    batch_size: usize,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut total = 0.0;
    for rows in batch_indices(data.len(), batch_size, None) {
        let batch = data.batch(&rows);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch)?;
        let loss = tape.value(out.loss).data()[0];
        total += loss * rows.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains `model` in place. On return the model holds the best-epoch
/// parameters.
pub fn train_trial(
    model: &mut ConcreteModel,
    train: &EncodedDataset,
    val: &EncodedDataset,
    test: Option<&EncodedDataset>,
    cfg: &TrainConfig,
    metrics: Option<&Path>,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut metrics = match metrics {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let adam = Adam::new(model.learning_rate);
    let mut state = AdamState::new();
    let mut train_loss = Vec::new();
    let mut val_scores = Vec::new();
    let mut snapshot = model.store.clone();
    let mut best = (f64::INFINITY, 0);

    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for rows in batch_indices(train.len(), cfg.batch_size, Some((cfg.seed, epoch))) {
            let batch = train.batch(&rows);
            let grads = {
                let mut tape = Tape::new();
                let out = model.forward(&mut tape, &batch)?;
                let loss = tape.value(out.loss).data()[0];
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        what: "loss",
                    });
                }
                sum += loss * rows.len() as f64;
                tape.backprop(out.loss).map_err(|e| GraphError::Block {
                    block: "loss".into(),
                    source: e.into(),
                })?
            };
            adam_update(&mut model.store, &grads, &mut state, &adam);
            if model.store.iter().any(|p| !p.tensor.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    what: "parameter",
                });
            }
        }
        let epoch_loss = sum / train.len() as f64;
        let score = evaluate_metric(model, val, cfg.eval_batch_size)?;
        if !score.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                what: "validation score",
            });
        }
        train_loss.push(epoch_loss);
        val_scores.push(score);
        if let Some(w) = metrics.as_mut() {
            let rec = EpochRecord {
                epoch,
                train_loss: epoch_loss,
                val_score: score,
            };
            serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        if score < best.0 {
            best = (score, epoch);
            snapshot = model.store.clone();
        }
        if early_stop_update(&val_scores, cfg.early_stop_patience) {
            log::debug!("early stop after epoch {epoch}");
            break;
        }
    }
    if let Some(mut w) = metrics {
        w.flush()?;
    }
    model.store = snapshot.clone();
    let test_score = match test {
        Some(t) => Some(evaluate_metric(model, t, cfg.eval_batch_size)?),
        None => None,
    };
    Ok(TrainResult {
        train_loss,
        val_scores,
        best_val: best.0,
        best_epoch: best.1,
        snapshot,
        test_score,
    })
}
