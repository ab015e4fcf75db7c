//! Minibatch training loop: AdamW, early stopping on dev accuracy, and a
//! per-epoch report.
//!
//! Training is a pure function of its inputs. The architecture config
//! carries the init seed and a separate seed drives batch shuffling, so a
//! rerun with the same data and seeds reproduces every parameter bit for
//! bit.
//!
//! Dev accuracy is always measured on the quantized view of the model
//! (parameters rounded through f32, exactly what a checkpoint stores), and
//! the returned model is the quantized best-epoch snapshot. Reported
//! metrics therefore survive a save/load round trip unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::shuffle;
use crate::error::{Error, Result};
use crate::losses::{total_loss, ClassificationLoss, LossConfig, SimLossVariant};
use crate::numerics::{EmbeddingVector, LabelDistribution};
use crate::scalar::Scalar;
use crate::student::{ForwardTrace, GradientSet, StudentConfig, StudentModel};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 20,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One example as the trainer consumes it: student-space features, the
/// teacher-space vector used by the similarity term, and both label forms.
#[derive(Debug, Clone)]
pub struct TrainExample<T: Scalar> {
    pub id: String,
    pub features: EmbeddingVector<T>,
    pub teacher_repr: EmbeddingVector<T>,
    pub soft_label: Option<LabelDistribution<T>>,
    pub hard_label: usize,
}

/// AdamW with decoupled weight decay.
///
/// Moment state lives in f64 regardless of the model's scalar type, and
/// parameters pass through f64 during the update.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: TrainConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdamW {
    pub fn new(config: &TrainConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step_count: 0,
        })
    }

    /// Applies one update. The gradient set must be shaped like the model;
    /// any non-finite gradient aborts before touching parameters.
    pub fn step<T: Scalar>(
        &mut self,
        model: &mut StudentModel<T>,
        grads: &GradientSet<T>,
    ) -> Result<()> {
        let grad_count = grads.values().count();
        if grad_count != self.m.len() {
            return Err(Error::Dimension { expected: self.m.len(), got: grad_count });
        }
        for (i, g) in grads.values().enumerate() {
            if !g.to_f64_lossy().is_finite() {
                return Err(Error::NonFiniteGradient(format!(
                    "gradient at parameter index {i} is {g} at optimizer step {}",
                    self.step_count + 1
                )));
            }
        }
        self.step_count += 1;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step_count as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step_count as i32);
        let params = model
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut model.head))
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()));
        for ((p, g), i) in params.zip(grads.values()).zip(0..) {
            let g = g.to_f64_lossy();
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            let theta = p.to_f64_lossy();
            *p = T::cast(
                theta - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon)
                    - c.learning_rate * c.weight_decay * theta,
            );
        }
        Ok(())
    }
}

/// Stops training once the watched metric has gone `patience` consecutive
/// epochs without strictly improving. Epochs are 1-indexed.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    epochs_seen: usize,
    best: f64,
    best_epoch: usize,
    since_improvement: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(Self {
            patience,
            epochs_seen: 0,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        })
    }

    /// Feeds one epoch's metric; returns true when training should stop.
    /// Ties with the best so far do not count as improvement.
    pub fn observe(&mut self, metric: f64) -> bool {
        self.epochs_seen += 1;
        if metric > self.best {
            self.best = metric;
            self.best_epoch = self.epochs_seen;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.since_improvement >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> f64 {
        self.best
    }
}

/// Losses and dev accuracy of one epoch. Loss values are means over the
/// examples that formed full batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub dev_accuracy: f64,
}

/// What training did, epoch by epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub per_epoch: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub stopped_early: bool,
    /// Filled in by callers that persist the best model.
    pub checkpoint: Option<String>,
}

/// The trained model together with its report.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub model: StudentModel<T>,
    pub report: TrainReport,
}

fn validate_examples<T: Scalar>(
    examples: &[TrainExample<T>],
    config: &StudentConfig,
    loss_config: &LossConfig,
    is_train: bool,
    what: &str,
) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyInput(format!("{what} set is empty")));
    }
    let teacher_dim = examples[0].teacher_repr.dim();
    for ex in examples {
        let tag = |e: Error| e.for_example(&ex.id);
        if ex.features.dim() != config.input_dim {
            return Err(tag(Error::Dimension { expected: config.input_dim, got: ex.features.dim() }));
        }
        if ex.hard_label >= config.num_classes {
            return Err(tag(Error::Label { label: ex.hard_label, num_classes: config.num_classes }));
        }
        if is_train && loss_config.classification_loss == ClassificationLoss::Kl {
            match &ex.soft_label {
                None => {
                    return Err(tag(Error::Data(
                        "the kl classification loss needs a soft label".into(),
                    )))
                }
                Some(soft) if soft.num_classes() != config.num_classes => {
                    return Err(tag(Error::Dimension {
                        expected: config.num_classes,
                        got: soft.num_classes(),
                    }))
                }
                Some(_) => {}
            }
        }
        if is_train
            && loss_config.sim_loss != SimLossVariant::None
            && ex.teacher_repr.dim() != teacher_dim
        {
            return Err(tag(Error::Dimension { expected: teacher_dim, got: ex.teacher_repr.dim() }));
        }
    }
    Ok(())
}

/// Accuracy of the model's argmax predictions.
fn dev_accuracy<T: Scalar>(model: &StudentModel<T>, dev: &[TrainExample<T>]) -> Result<f64> {
    let mut correct = 0usize;
    for ex in dev {
        let trace = model.forward(&ex.features).map_err(|e| e.for_example(&ex.id))?;
        if trace.predicted.argmax() == ex.hard_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dev.len() as f64)
}

/// Trains a freshly initialized student.
///
/// Batches are drawn in a seeded shuffled order each epoch. A final short
/// batch is dropped only when the active similarity loss cannot digest it.
/// After every epoch the quantized model is scored on the dev set; the
/// best-scoring snapshot (earliest epoch wins ties) is what comes back.
pub fn train<T: Scalar>(
    config: &StudentConfig,
    train_set: &[TrainExample<T>],
    dev_set: &[TrainExample<T>],
    loss_config: &LossConfig,
    train_config: &TrainConfig,
    shuffle_seed: u64,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    loss_config.validate()?;
    train_config.validate()?;
    validate_examples(train_set, config, loss_config, true, "train")?;
    validate_examples(dev_set, config, loss_config, false, "dev")?;
    let min_batch = loss_config.min_batch();
    if train_config.batch_size < min_batch {
        return Err(Error::Config(format!(
            "batch_size {} is below the minimum {min_batch} required by the similarity loss",
            train_config.batch_size
        )));
    }
    if train_set.len() < min_batch {
        return Err(Error::BatchTooSmall { min: min_batch, got: train_set.len() });
    }

    let mut model = StudentModel::<T>::init(config)?;
    let mut optimizer = AdamW::new(train_config, model.num_params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut stopper = EarlyStopper::new(train_config.patience)?;
    let use_soft = loss_config.classification_loss == ClassificationLoss::Kl;
    let use_sim = loss_config.sim_loss != SimLossVariant::None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut per_epoch = Vec::new();
    let mut best_model = model.quantized();
    let mut stopped_early = false;

    for epoch in 1..=train_config.max_epochs {
        shuffle(&mut order, &mut rng);
        let mut weighted = [0f64; 3];
        let mut seen = 0usize;
        for batch in order.chunks(train_config.batch_size) {
            if batch.len() < min_batch {
                continue;
            }
            let mut traces: Vec<ForwardTrace<T>> = Vec::with_capacity(batch.len());
            let mut teacher_soft = Vec::new();
            let mut hard = Vec::with_capacity(batch.len());
            let mut teacher_reprs = Vec::new();
            for &idx in batch {
                let ex = &train_set[idx];
                traces.push(model.forward(&ex.features).map_err(|e| e.for_example(&ex.id))?);
                hard.push(ex.hard_label);
                if use_soft {
                    teacher_soft.push(ex.soft_label.clone().expect("validated above"));
                }
                if use_sim {
                    teacher_reprs.push(ex.teacher_repr.clone());
                }
            }
            let losses = total_loss(&teacher_soft, &hard, &teacher_reprs, &traces, loss_config)?;
            let grads = model.backward(&traces, &losses.grad_logits, &losses.grad_repr)?;
            optimizer.step(&mut model, &grads)?;
            let bs = batch.len() as f64;
            weighted[0] += losses.l1_value.to_f64_lossy() * bs;
            weighted[1] += losses.l2_value.to_f64_lossy() * bs;
            weighted[2] += losses.total.to_f64_lossy() * bs;
            seen += batch.len();
        }

        let quantized = model.quantized();
        let accuracy = dev_accuracy(&quantized, dev_set)?;
        let improved = stopper.best_epoch() == 0 || accuracy > stopper.best_value();
        let stop = stopper.observe(accuracy);
        if improved {
            best_model = quantized;
        }
        per_epoch.push(EpochRecord {
            epoch,
            l1: weighted[0] / seen as f64,
            l2: weighted[1] / seen as f64,
            total: weighted[2] / seen as f64,
            dev_accuracy: accuracy,
        });
        if stop {
            stopped_early = true;
            break;
        }
    }

    let report = TrainReport {
        per_epoch,
        best_epoch: stopper.best_epoch(),
        best_dev_accuracy: stopper.best_value(),
        stopped_early,
        checkpoint: None,
    };
    Ok(TrainOutcome { model: best_model, report })
}
