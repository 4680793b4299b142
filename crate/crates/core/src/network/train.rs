use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Batch, Model};
use super::LayerSpec;
use crate::error::{Error, Result};
use crate::linalg::{regularize, SpdMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Added to every input as `X + λI` before training and evaluation.
    pub lambda_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2.5e-3,
            epochs: 50,
            batch_size: 30,
            seed: 0,
            lambda_reg: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lambda_reg >= 0.0) || !self.lambda_reg.is_finite() {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda_reg)));
        }
        Ok(())
    }
}

/// Labeled SPD samples.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<SpdMatrix>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<SpdMatrix>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Precondition(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.len()
            )));
        }
        Ok(Dataset { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            inputs: &self.samples,
            labels: &self.labels,
        }
    }

    /// `X + λI` for every sample.
    pub fn regularized(&self, lambda: f64) -> Result<Dataset> {
        if lambda == 0.0 {
            return Ok(self.clone());
        }
        let samples = self
            .samples
            .iter()
            .map(|x| regularize(x.sym(), lambda))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            samples,
            labels: self.labels.clone(),
        })
    }

    /// Samples picked by index.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over the epoch's training batches, measured before each update.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

/// Minibatch training from a seeded initialization. Epochs are numbered from 1.
pub fn train(spec: &LayerSpec, train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(spec.clone(), &mut rng)?;
    train_model(model, train_set, test_set, cfg, &mut rng)
}

/// Continue training `model`, drawing batch orders from `rng`.
pub fn train_model(
    model: Model,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    train_model_observed(model, train_set, test_set, cfg, rng, |_| {})
}

/// [`train_model`] that also hands each epoch's metrics to `observe` as soon as they are
/// known, so callers keep the completed epochs of a run that later diverges.
pub fn train_model_observed(
    mut model: Model,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs > 0 && (train_set.is_empty() || test_set.is_empty()) {
        return Err(Error::Precondition("training and test sets must be nonempty".into()));
    }
    let train_set = train_set.regularized(cfg.lambda_reg)?;
    let test_set = test_set.regularized(cfg.lambda_reg)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let diverged = |detail: String| Error::Divergence { epoch, detail };
        order.shuffle(rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.subset(chunk);
            let step = model.step_gradients(batch.batch()).map_err(|e| match e {
                e if e.is_numerical() => diverged(e.to_string()),
                e => e,
            })?;
            if !step.loss.is_finite() {
                return Err(diverged(format!("loss {}", step.loss)));
            }
            loss_sum += step.loss * chunk.len() as f64;
            correct += step.correct;
            model.apply_step(&step, cfg.lr).map_err(|e| match e {
                e if e.is_numerical() => diverged(e.to_string()),
                e => e,
            })?;
        }
        let (test_loss, test_acc) = model.evaluate(test_set.batch()).map_err(|e| match e {
            e if e.is_numerical() => diverged(e.to_string()),
            e => e,
        })?;
        if !test_loss.is_finite() {
            return Err(diverged(format!("test loss {test_loss}")));
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_loss,
            test_acc,
        };
        observe(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { model, history })
}
