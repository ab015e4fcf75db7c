//! Training losses and their analytic gradients.
//!
//! Two loss families combine into the training objective. The
//! classification term matches the student's predicted distribution to a
//! teacher distribution (KL) or a hard label (cross-entropy) and produces
//! gradients at the logits. The similarity term compares, anchor by
//! anchor, how each example relates to the rest of its batch in teacher
//! space versus student representation space, and produces gradients at
//! the representations. Every KL here reads teacher-first:
//! KL(teacher ‖ student).
//!
//! Gradient conventions: both terms are batch means, and the returned
//! per-example gradients already include the 1/batch factor, so the model
//! backward pass just sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kl_divergence, softmax, EmbeddingVector, LabelDistribution, SimilarityDistribution, KL_FLOOR};
use crate::scalar::Scalar;
use crate::student::ForwardTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationLoss {
    Kl,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimLossVariant {
    None,
    Kl,
    L1,
    L2,
}

/// Which losses are active and how the similarity term is shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub classification_loss: ClassificationLoss,
    pub sim_loss: SimLossVariant,
    pub sim_temperature: f64,
    pub include_self_similarity: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            classification_loss: ClassificationLoss::Kl,
            sim_loss: SimLossVariant::Kl,
            sim_temperature: 1.0,
            include_self_similarity: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sim_temperature > 0.0) || !self.sim_temperature.is_finite() {
            return Err(Error::Config(format!(
                "sim_temperature must be positive, got {}",
                self.sim_temperature
            )));
        }
        Ok(())
    }

    /// Smallest batch the active losses can digest. Each similarity anchor
    /// needs a distribution over at least two batch slots.
    pub fn min_batch(&self) -> usize {
        match (self.sim_loss, self.include_self_similarity) {
            (SimLossVariant::None, _) => 1,
            (_, true) => 2,
            (_, false) => 3,
        }
    }
}

/// Values and gradient streams of one batch.
#[derive(Debug, Clone)]
pub struct BatchLossResult<T> {
    pub l1_value: T,
    pub l2_value: T,
    pub total: T,
    pub grad_logits: Vec<Vec<T>>,
    pub grad_repr: Vec<Vec<T>>,
}

// ---------------------------------------------------------------------------
// Classification terms
// ---------------------------------------------------------------------------

/// Mean KL(teacher ‖ student) over the batch.
///
/// The gradient at example i's logits is `(student_i - teacher_i) / n`.
pub fn classification_consistency_loss<T: Scalar>(
    teacher: &[LabelDistribution<T>],
    student: &[LabelDistribution<T>],
) -> Result<(T, Vec<Vec<T>>)> {
    if teacher.is_empty() {
        return Err(Error::EmptyInput("classification loss over an empty batch".into()));
    }
    if teacher.len() != student.len() {
        return Err(Error::Dimension { expected: teacher.len(), got: student.len() });
    }
    let n = teacher.len() as f64;
    let mut value = 0f64;
    let mut grads = Vec::with_capacity(teacher.len());
    for (p, p_hat) in teacher.iter().zip(student) {
        if p.num_classes() != p_hat.num_classes() {
            return Err(Error::Dimension { expected: p_hat.num_classes(), got: p.num_classes() });
        }
        value += kl_divergence(&p.to_f64_vec(), &p_hat.to_f64_vec())?;
        let grad: Vec<T> = p_hat
            .probs()
            .iter()
            .zip(p.probs())
            .map(|(q, p)| T::cast((q.to_f64_lossy() - p.to_f64_lossy()) / n))
            .collect();
        grads.push(grad);
    }
    Ok((T::cast(value / n), grads))
}

/// Mean negative log-likelihood of the true labels.
///
/// The gradient at example i's logits is `(student_i - onehot(y_i)) / n`.
pub fn cross_entropy_loss<T: Scalar>(
    hard_labels: &[usize],
    student: &[LabelDistribution<T>],
) -> Result<(T, Vec<Vec<T>>)> {
    if hard_labels.is_empty() {
        return Err(Error::EmptyInput("cross-entropy over an empty batch".into()));
    }
    if hard_labels.len() != student.len() {
        return Err(Error::Dimension { expected: hard_labels.len(), got: student.len() });
    }
    let n = hard_labels.len() as f64;
    let mut value = 0f64;
    let mut grads = Vec::with_capacity(hard_labels.len());
    for (&y, p_hat) in hard_labels.iter().zip(student) {
        if y >= p_hat.num_classes() {
            return Err(Error::Label { label: y, num_classes: p_hat.num_classes() });
        }
        value -= p_hat.probs()[y].to_f64_lossy().max(KL_FLOOR).ln();
        let grad: Vec<T> = p_hat
            .probs()
            .iter()
            .enumerate()
            .map(|(c, q)| {
                let target = if c == y { 1.0 } else { 0.0 };
                T::cast((q.to_f64_lossy() - target) / n)
            })
            .collect();
        grads.push(grad);
    }
    Ok((T::cast(value / n), grads))
}

// ---------------------------------------------------------------------------
// Similarity terms
// ---------------------------------------------------------------------------

/// Representations widened to f64 with cached norms.
struct ReprBatch {
    vecs: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl ReprBatch {
    fn new<T: Scalar>(reprs: &[EmbeddingVector<T>]) -> Result<Self> {
        let dim = reprs[0].dim();
        let mut vecs = Vec::with_capacity(reprs.len());
        let mut norms = Vec::with_capacity(reprs.len());
        for (i, r) in reprs.iter().enumerate() {
            if r.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: r.dim() });
            }
            let v = r.to_f64_vec();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateVector(format!(
                    "zero-norm representation at batch index {i}"
                )));
            }
            vecs.push(v);
            norms.push(norm);
        }
        Ok(Self { vecs, norms })
    }

    fn len(&self) -> usize {
        self.vecs.len()
    }

    fn cos(&self, a: usize, b: usize) -> f64 {
        let dot: f64 = self.vecs[a].iter().zip(&self.vecs[b]).map(|(x, y)| x * y).sum();
        (dot / (self.norms[a] * self.norms[b])).clamp(-1.0, 1.0)
    }

    /// Softmax-normalized similarities of `anchor` against the batch.
    ///
    /// Returns the batch index behind each slot and the probabilities.
    /// The anchor's own slot, when included, holds raw similarity 1 and is
    /// treated as a constant by the gradient.
    fn anchor_distribution(
        &self,
        anchor: usize,
        include_self: bool,
        tau: f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut slots = Vec::with_capacity(self.len());
        let mut raw = Vec::with_capacity(self.len());
        for j in 0..self.len() {
            if j == anchor {
                if include_self {
                    slots.push(j);
                    raw.push(1.0);
                }
            } else {
                slots.push(j);
                raw.push(self.cos(j, anchor));
            }
        }
        let probs = softmax(&raw, tau)?;
        Ok((slots, probs))
    }
}

/// The batch-relative similarity profile of one anchor.
pub fn batch_similarity_distribution<T: Scalar>(
    reprs: &[EmbeddingVector<T>],
    anchor: usize,
    config: &LossConfig,
) -> Result<SimilarityDistribution<T>> {
    config.validate()?;
    let min = if config.include_self_similarity { 2 } else { 3 };
    if reprs.len() < min {
        return Err(Error::BatchTooSmall { min, got: reprs.len() });
    }
    if anchor >= reprs.len() {
        return Err(Error::Config(format!(
            "anchor {anchor} out of range for batch of {}",
            reprs.len()
        )));
    }
    let batch = ReprBatch::new(reprs)?;
    let (_, probs) =
        batch.anchor_distribution(anchor, config.include_self_similarity, config.sim_temperature)?;
    SimilarityDistribution::new(probs.into_iter().map(T::cast).collect())
}

/// Batch-mean similarity-consistency loss with gradients at the student
/// representations.
///
/// Per anchor, the teacher and student similarity profiles are compared by
/// the configured variant: KL(teacher ‖ student), or the L1/L2 norm of
/// their difference. Teacher geometry is fixed; gradients flow only into
/// the student side.
pub fn sim_loss<T: Scalar>(
    teacher_reprs: &[EmbeddingVector<T>],
    student_reprs: &[EmbeddingVector<T>],
    config: &LossConfig,
) -> Result<(T, Vec<Vec<T>>)> {
    config.validate()?;
    if config.sim_loss == SimLossVariant::None {
        return Err(Error::Config("sim_loss called with variant none".into()));
    }
    let n = student_reprs.len();
    let min = config.min_batch();
    if n < min {
        return Err(Error::BatchTooSmall { min, got: n });
    }
    if teacher_reprs.len() != n {
        return Err(Error::Dimension { expected: n, got: teacher_reprs.len() });
    }
    let include_self = config.include_self_similarity;
    let tau = config.sim_temperature;
    let teacher = ReprBatch::new(teacher_reprs)?;
    let student = ReprBatch::new(student_reprs)?;
    let dim = student.vecs[0].len();

    let mut value = 0f64;
    let mut grads = vec![vec![0f64; dim]; n];
    for i in 0..n {
        let (slots, s) = teacher.anchor_distribution(i, include_self, tau)?;
        let (_, s_hat) = student.anchor_distribution(i, include_self, tau)?;

        // Per-slot dLoss/d(student prob), and the anchor's loss value.
        let g_hat: Vec<f64> = match config.sim_loss {
            SimLossVariant::Kl => {
                value += kl_divergence(&s, &s_hat)?;
                s.iter().zip(&s_hat).map(|(p, q)| -p / q.max(KL_FLOOR)).collect()
            }
            SimLossVariant::L1 => {
                value += s.iter().zip(&s_hat).map(|(p, q)| (q - p).abs()).sum::<f64>();
                s.iter()
                    .zip(&s_hat)
                    .map(|(p, q)| if q == p { 0.0 } else { (q - p).signum() })
                    .collect()
            }
            SimLossVariant::L2 => {
                let l2 = s
                    .iter()
                    .zip(&s_hat)
                    .map(|(p, q)| (q - p) * (q - p))
                    .sum::<f64>()
                    .sqrt();
                value += l2;
                if l2 > 0.0 {
                    s.iter().zip(&s_hat).map(|(p, q)| (q - p) / l2).collect()
                } else {
                    vec![0.0; s.len()]
                }
            }
            SimLossVariant::None => unreachable!(),
        };

        // Through the softmax, then through each cosine into both vectors.
        let weighted: f64 = g_hat.iter().zip(&s_hat).map(|(g, q)| g * q).sum();
        for (slot, &j) in slots.iter().enumerate() {
            if j == i {
                continue;
            }
            let w = s_hat[slot] * (g_hat[slot] - weighted) / tau;
            let c = student.cos(j, i);
            let (na, nb) = (student.norms[j], student.norms[i]);
            for d in 0..dim {
                let a_d = student.vecs[j][d];
                let b_d = student.vecs[i][d];
                grads[j][d] += w * (b_d / (na * nb) - c * a_d / (na * na));
                grads[i][d] += w * (a_d / (na * nb) - c * b_d / (nb * nb));
            }
        }
    }

    let scale = 1.0 / n as f64;
    let grads_t = grads
        .into_iter()
        .map(|g| g.into_iter().map(|v| T::cast(v * scale)).collect())
        .collect();
    Ok((T::cast(value * scale), grads_t))
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

/// Assembles the training objective for one batch.
///
/// `teacher_soft` is consulted for the KL classification term,
/// `hard_labels` for cross-entropy, and `teacher_reprs` for the similarity
/// term; streams a config does not use may be empty. With the similarity
/// term off, `l2_value` is zero and `grad_repr` is all zeros.
pub fn total_loss<T: Scalar>(
    teacher_soft: &[LabelDistribution<T>],
    hard_labels: &[usize],
    teacher_reprs: &[EmbeddingVector<T>],
    traces: &[ForwardTrace<T>],
    config: &LossConfig,
) -> Result<BatchLossResult<T>> {
    config.validate()?;
    if traces.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let predicted: Vec<LabelDistribution<T>> = traces.iter().map(|t| t.predicted.clone()).collect();
    let (l1_value, grad_logits) = match config.classification_loss {
        ClassificationLoss::Kl => classification_consistency_loss(teacher_soft, &predicted)?,
        ClassificationLoss::CrossEntropy => cross_entropy_loss(hard_labels, &predicted)?,
    };
    let (l2_value, grad_repr) = match config.sim_loss {
        SimLossVariant::None => {
            let dim = traces[0].representation.dim();
            (T::zero(), vec![vec![T::zero(); dim]; traces.len()])
        }
        _ => {
            let student_reprs: Vec<EmbeddingVector<T>> =
                traces.iter().map(|t| t.representation.clone()).collect();
            sim_loss(teacher_reprs, &student_reprs, config)?
        }
    };
    Ok(BatchLossResult {
        l1_value,
        l2_value,
        total: l1_value + l2_value,
        grad_logits,
        grad_repr,
    })
}
