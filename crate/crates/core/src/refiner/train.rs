//! Supervised training and inference for clip classifiers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clip::{patches_to_tensor, ClipConfig, ClipLabel, ClipSample};
use super::model::TemporalClassifier;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax, Layer, Sgd, StepSchedule, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub optimizer: Sgd,
    pub seed: u64,
    /// Random crops of `train_crop` from patches stored at `train_resize`.
    pub augment: bool,
    /// Stop after the first epoch whose training accuracy reaches this.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    /// Ten epochs of SGD at 0.01, divided by ten every four epochs.
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            schedule: StepSchedule::default(),
            optimizer: Sgd::default(),
            seed: 0,
            augment: true,
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// One-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Accuracy on the training clips in inference mode after the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }

    /// First epoch reaching `accuracy`, if any.
    pub fn first_epoch_reaching(&self, accuracy: f64) -> Option<usize> {
        self.epochs.iter().find(|e| e.accuracy >= accuracy).map(|e| e.epoch)
    }
}

fn labels_of(samples: &[ClipSample]) -> Result<Vec<usize>> {
    let labels = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label
                .map(ClipLabel::class_index)
                .ok_or_else(|| Error::Validation(format!("training clip {i} has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::Validation("training clips must include both smoke and non-smoke labels".into()));
    }
    Ok(labels)
}

/// Inference-mode input for a batch of clips at `cfg.eval_size`.
pub fn eval_tensor(samples: &[&ClipSample], cfg: &ClipConfig) -> Result<Tensor> {
    let sets: Vec<_> = samples.iter().map(|s| s.resized(cfg.eval_size)).collect();
    patches_to_tensor(&sets, cfg.eval_size, None)
}

fn train_tensor(samples: &[&ClipSample], cfg: &ClipConfig, augment: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !augment {
        return eval_tensor(samples, cfg);
    }
    let sets: Vec<_> = samples.iter().map(|s| s.resized(cfg.train_resize)).collect();
    let span = cfg.train_resize - cfg.train_crop;
    let offsets: Vec<(u32, u32)> = samples
        .iter()
        .map(|_| (rng.random_range(0..=span), rng.random_range(0..=span)))
        .collect();
    patches_to_tensor(&sets, cfg.train_crop, Some(&offsets))
}

/// Trains `model` in place. Deterministic for a fixed `train.seed`.
pub fn train_head(
    model: &mut TemporalClassifier,
    samples: &[ClipSample],
    clip: &ClipConfig,
    train: &TrainConfig,
) -> Result<TrainHistory> {
    let mut history = TrainHistory::default();
    if train.epochs == 0 {
        return Ok(history);
    }
    clip.validate()?;
    let labels = labels_of(samples)?;
    if let Some(bad) = samples.iter().find(|s| s.k() != model.spec.k) {
        return Err(Error::Config(format!(
            "clip with K={} cannot train a model with K={}",
            bad.k(),
            model.spec.k
        )));
    }
    let batch = train.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..train.epochs {
        let lr = train.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            // Batch normalization needs more than one value per channel.
            if chunk.len() < 2 && samples.len() >= 2 {
                continue;
            }
            let picked: Vec<&ClipSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = train_tensor(&picked, clip, train.augment, &mut rng)?;
            Sgd::zero_grad(model);
            let logits = model.forward(&x, true)?;
            let (loss, grad) = cross_entropy(&logits, &targets);
            model.backward(&grad);
            train.optimizer.step(model, lr as f32);
            loss_sum += loss;
            batches += 1;
        }
        let correct = predict_classes(model, samples, clip)?
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        let stats = EpochStats {
            epoch: epoch + 1,
            lr,
            loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            accuracy: correct as f64 / samples.len() as f64,
        };
        log::debug!(
            "epoch {} lr {:.0e} loss {:.4} accuracy {:.3}",
            stats.epoch,
            stats.lr,
            stats.loss,
            stats.accuracy
        );
        history.epochs.push(stats);
        if train.target_accuracy.is_some_and(|t| stats.accuracy >= t) {
            break;
        }
    }
    Ok(history)
}

fn predict_classes(model: &mut TemporalClassifier, samples: &[ClipSample], clip: &ClipConfig) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(16) {
        let refs: Vec<&ClipSample> = chunk.iter().collect();
        let logits = model.logits(&eval_tensor(&refs, clip)?)?;
        out.extend(softmax(&logits).iter().map(|p| usize::from(p[1] > p[0])));
    }
    Ok(out)
}

/// Smoke probability of a clip and the verdict at `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipVerdict {
    pub probability: f64,
    pub smoke: bool,
}

pub const DEFAULT_REFINE_THRESHOLD: f64 = 0.5;

pub fn classify_clip(model: &mut TemporalClassifier, sample: &ClipSample, clip: &ClipConfig, threshold: f64) -> Result<ClipVerdict> {
    if sample.k() != model.spec.k {
        return Err(Error::Config(format!(
            "clip with K={} given to a model with K={}",
            sample.k(),
            model.spec.k
        )));
    }
    let logits = model.logits(&eval_tensor(&[sample], clip)?)?;
    let probability = softmax(&logits)[0][1];
    Ok(ClipVerdict {
        probability,
        smoke: probability >= threshold,
    })
}

/// Smoke probabilities for many clips in one pass.
pub fn smoke_probabilities(model: &mut TemporalClassifier, samples: &[&ClipSample], clip: &ClipConfig) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let logits = model.logits(&eval_tensor(samples, clip)?)?;
    Ok(softmax(&logits).iter().map(|p| p[1]).collect())
}
