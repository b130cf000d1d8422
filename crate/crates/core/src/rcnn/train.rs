use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::evaluate;
use super::model::{Rcnn, N_HEADS};
use crate::corpus::EncodedVector;
use crate::nn::optim::{clip_global_norm, Adam, AdamConfig};
use crate::nn::{Graph, NnError};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 32,
            learning_rate: 2e-3,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: [f64; N_HEADS],
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    /// Loss of the untrained model on the training set.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
}

/// Mean summed loss over `data` in batches.
pub fn mean_loss(model: &Rcnn, inputs: &[EncodedVector], labels: &[[usize; N_HEADS]], batch: usize) -> Result<f64, NnError> {
    let mut total = 0.0;
    for (xs, ls) in inputs.chunks(batch).zip(labels.chunks(batch)) {
        let refs: Vec<&EncodedVector> = xs.iter().collect();
        let mut g = Graph::new();
        let l = model.loss(&mut g, &refs, ls)?;
        total += g.value(l).data()[0] as f64 * xs.len() as f64;
    }
    Ok(total / inputs.len().max(1) as f64)
}

/// Adam on the summed head cross-entropies; deterministic under `cfg.seed`.
pub fn train(
    model: &mut Rcnn,
    train_x: &[EncodedVector],
    train_y: &[[usize; N_HEADS]],
    test_x: &[EncodedVector],
    test_y: &[[usize; N_HEADS]],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainReport, NnError> {
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(NnError::Invalid("inputs and labels differ in length"));
    }
    if train_x.is_empty() || cfg.batch_size == 0 {
        return Err(NnError::Invalid("empty training set or zero batch size"));
    }
    let sizes = model.config().head_sizes.clone();
    for y in train_y.iter().chain(test_y) {
        for (&label, &classes) in y.iter().zip(&sizes) {
            if label >= classes {
                return Err(NnError::LabelOutOfRange { label, classes });
            }
        }
    }
    let mut report = TrainReport {
        initial_loss: mean_loss(model, train_x, train_y, 256)?,
        epochs: Vec::new(),
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&EncodedVector> = chunk.iter().map(|&i| &train_x[i]).collect();
            let ys: Vec<[usize; N_HEADS]> = chunk.iter().map(|&i| train_y[i]).collect();
            let mut g = Graph::new();
            let loss = model.loss(&mut g, &xs, &ys)?;
            sum += g.value(loss).data()[0] as f64;
            batches += 1;
            let mut grads = g.backward(loss)?;
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm)?;
            }
            adam.step(model.params_mut(), &grads)?;
        }
        let (test_loss, test_accuracy) = if test_x.is_empty() {
            (f64::NAN, [f64::NAN; N_HEADS])
        } else {
            let ev = evaluate(model, test_x, test_y)?;
            (mean_loss(model, test_x, test_y, 256)?, ev.accuracy)
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: sum / batches as f64,
            test_loss,
            test_accuracy,
        };
        progress(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}
