//! Embedding vectors, probability distributions, and the numeric kernels
//! every later stage is built on.
//!
//! All reductions (dot products, norms, softmax normalizers, KL sums)
//! accumulate in `f64` regardless of the scalar type, so `f32` data gets
//! 64-bit arithmetic and `f64` data is untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest probability fed to a logarithm; keeps KL finite when the
/// student assigns (numerically) zero mass where the teacher has support.
pub const KL_FLOOR: f64 = 1e-12;

/// Absolute tolerance for "this vector of probabilities sums to one".
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Sum tolerance adjusted for scalars coarser than `f64`.
///
/// `f32` cannot land within 1e-9 of 1.0 after a rounded normalization, so
/// the check scales with the type's epsilon and only tightens to
/// [`SUM_TOLERANCE`] when the type can honor it.
fn sum_tolerance_for<T: Scalar>(len: usize) -> f64 {
    let eps = T::epsilon().to_f64_lossy();
    SUM_TOLERANCE.max(eps * 8.0 * len.max(4) as f64)
}

// ---------------------------------------------------------------------------
// Embedding vectors
// ---------------------------------------------------------------------------

/// Dense embedding with finite components and at least one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding vector has no components".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite component at index {i}")));
        }
        Ok(Self { values })
    }

    /// Builds from `f64` components, rounding into `T`.
    pub fn from_f64s(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::cast(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64_lossy()).collect()
    }
}

fn check_same_dim<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}

/// Exact L2 distance between two embeddings of equal dimension.
pub fn euclidean_distance<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    check_same_dim(a, b)?;
    let mut acc = 0f64;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        let d = x.to_f64_lossy() - y.to_f64_lossy();
        acc += d * d;
    }
    Ok(T::cast(acc.sqrt()))
}

/// Cosine similarity, clamped into [-1, 1] to absorb last-ulp rounding.
///
/// Zero-norm inputs have no direction and are rejected.
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    check_same_dim(a, b)?;
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector(
            "cosine similarity undefined for zero-norm vector".into(),
        ));
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    Ok(T::cast(c.clamp(-1.0, 1.0)))
}

/// Temperature-scaled softmax with max-subtraction stabilization.
///
/// Output entries are strictly positive and sum to one up to rounding;
/// the scale of the inputs only enters through `scores / temperature`.
pub fn softmax<T: Scalar>(scores: &[T], temperature: T) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax over no scores".into()));
    }
    let tau = temperature.to_f64_lossy();
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("softmax temperature must be positive, got {tau}")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Data(format!("non-finite score at index {i}")));
    }
    let z: Vec<f64> = scores.iter().map(|s| s.to_f64_lossy() / tau).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| T::cast(e / total)).collect())
}

/// KL divergence sum_i p_i ln(p_i / q_i) in nats.
///
/// Terms with p_i = 0 contribute zero; q_i is floored at [`KL_FLOOR`] before
/// the logarithm. Inputs must be distributions of equal length.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.is_empty() {
        return Err(Error::EmptyInput("KL divergence over no classes".into()));
    }
    if p.len() != q.len() {
        return Err(Error::Dimension { expected: p.len(), got: q.len() });
    }
    debug_assert!(
        (p.iter().map(|v| v.to_f64_lossy()).sum::<f64>() - 1.0).abs() < 1e-6,
        "p must sum to 1"
    );
    debug_assert!(
        (q.iter().map(|v| v.to_f64_lossy()).sum::<f64>() - 1.0).abs() < 1e-6,
        "q must sum to 1"
    );
    let mut acc = 0f64;
    for (pi, qi) in p.iter().zip(q) {
        let pi = pi.to_f64_lossy();
        if pi > 0.0 {
            let qi = qi.to_f64_lossy().max(KL_FLOOR);
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(T::cast(acc))
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// Probability distribution over class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution<T: Scalar> {
    probs: Vec<T>,
}

impl<T: Scalar> LabelDistribution<T> {
    /// Validates length >= 2, entries in [0, 1], and unit sum.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Config(format!(
                "label distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        let tol = sum_tolerance_for::<T>(probs.len());
        let mut total = 0f64;
        for (i, p) in probs.iter().enumerate() {
            let p = p.to_f64_lossy();
            if !p.is_finite() || p < -tol || p > 1.0 + tol {
                return Err(Error::Data(format!("probability {p} at index {i} outside [0, 1]")));
            }
            total += p;
        }
        if (total - 1.0).abs() > tol {
            return Err(Error::Data(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        let p = T::one() / T::cast(num_classes as f64);
        Self::new(vec![p; num_classes])
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::Label { label: class, num_classes });
        }
        let mut probs = vec![T::zero(); num_classes];
        probs[class] = T::one();
        Self::new(probs)
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.to_f64_lossy()).collect()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl<T: Scalar> TryFrom<Vec<f64>> for LabelDistribution<T> {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v.into_iter().map(T::cast).collect())
    }
}

impl<T: Scalar> From<LabelDistribution<T>> for Vec<f64> {
    fn from(d: LabelDistribution<T>) -> Self {
        d.to_f64_vec()
    }
}

/// Softmax-normalized similarity profile of one anchor against a batch.
///
/// Entries are strictly inside (0, 1): a softmax output can only reach the
/// boundary through underflow, which this type rejects.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDistribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> SimilarityDistribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::BatchTooSmall { min: 2, got: probs.len() });
        }
        let tol = sum_tolerance_for::<T>(probs.len());
        let mut total = 0f64;
        for (i, p) in probs.iter().enumerate() {
            let p = p.to_f64_lossy();
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Data(format!(
                    "similarity weight {p} at index {i} outside (0, 1); \
                     temperature may be too small for this batch"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > tol {
            return Err(Error::Data(format!("similarity weights sum to {total}, expected 1")));
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent scalar-loop oracles. These restate the defining formulas
    // directly and are what the production kernels are judged against.

    fn oracle_euclidean(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..a.len() {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        acc.sqrt()
    }

    fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        dot / (na.sqrt() * nb.sqrt())
    }

    fn oracle_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
        let exps: Vec<f64> = scores.iter().map(|s| (s / tau).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..p.len() {
            if p[i] > 0.0 {
                acc += p[i] * (p[i] / q[i].max(KL_FLOOR)).ln();
            }
        }
        acc
    }

    fn ev(values: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn euclidean_matches_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_vec(&mut rng, 16);
            let b = random_vec(&mut rng, 16);
            let got = euclidean_distance(&ev(&a), &ev(&b)).unwrap();
            assert!((got - oracle_euclidean(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_matches_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let a = random_vec(&mut rng, 16);
            let b = random_vec(&mut rng, 16);
            let got = cosine_similarity(&ev(&a), &ev(&b)).unwrap();
            assert!((got - oracle_cosine(&a, &b)).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn softmax_of_ln2_and_zero_is_two_thirds_one_third() {
        let out = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_oracle_and_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let scores = random_vec(&mut rng, 9);
            let tau = rng.random_range(0.25..4.0);
            let got = softmax(&scores, tau).unwrap();
            let want = oracle_softmax(&scores, tau);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
            let total: f64 = got.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_temperature_sharpens_softmax() {
        let scores = [1.0, 0.2, -0.5];
        let sharp = softmax(&scores, 0.5).unwrap();
        let flat = softmax(&scores, 2.0).unwrap();
        assert!(sharp[0] > flat[0]);
    }

    #[test]
    fn kl_of_point_mass_against_uniform_is_ln2() {
        let got = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((got - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_oracle_on_random_five_class_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let p = oracle_softmax(&random_vec(&mut rng, 5), 1.0);
            let q = oracle_softmax(&random_vec(&mut rng, 5), 1.0);
            let got = kl_divergence(&p, &q).unwrap();
            assert!((got - oracle_kl(&p, &q)).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = [0.3, 0.2, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_floors_zero_denominators_instead_of_diverging() {
        let got: f64 = kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(got.is_finite());
        assert!((got - (1.0 / KL_FLOOR).ln()).abs() < 1e-9);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = ev(&[1.0, 2.0]);
        let b = ev(&[1.0, 2.0, 3.0]);
        assert!(matches!(euclidean_distance(&a, &b), Err(Error::Dimension { .. })));
        assert!(matches!(cosine_similarity(&a, &b), Err(Error::Dimension { .. })));
        assert!(matches!(kl_divergence(&[0.5, 0.5], &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_norm_cosine_is_degenerate() {
        let z = ev(&[0.0, 0.0]);
        let a = ev(&[1.0, 0.0]);
        assert!(matches!(cosine_similarity(&z, &a), Err(Error::DegenerateVector(_))));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(EmbeddingVector::<f64>::new(vec![]), Err(Error::EmptyInput(_))));
        assert!(matches!(softmax::<f64>(&[], 1.0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn non_finite_components_are_rejected() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(softmax(&[1.0, f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        assert!(softmax(&[1.0, 2.0], 0.0).is_err());
        assert!(softmax(&[1.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn label_distribution_validates_sum_and_range() {
        assert!(LabelDistribution::new(vec![0.6, 0.4]).is_ok());
        assert!(LabelDistribution::new(vec![0.6, 0.6]).is_err());
        assert!(LabelDistribution::new(vec![1.2, -0.2]).is_err());
        assert!(LabelDistribution::new(vec![1.0]).is_err());
    }

    #[test]
    fn uniform_and_one_hot_have_expected_shape() {
        let u = LabelDistribution::<f64>::uniform(4).unwrap();
        assert!(u.probs().iter().all(|&p| p == 0.25));
        let h = LabelDistribution::<f64>::one_hot(2, 3).unwrap();
        assert_eq!(h.probs(), &[0.0, 0.0, 1.0]);
        assert_eq!(h.argmax(), 2);
        assert!(LabelDistribution::<f64>::one_hot(3, 3).is_err());
    }

    #[test]
    fn argmax_ties_resolve_to_lowest_index() {
        let d = LabelDistribution::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(d.argmax(), 0);
    }

    #[test]
    fn similarity_distribution_rejects_boundary_mass() {
        assert!(SimilarityDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(SimilarityDistribution::new(vec![1.0, 0.0]).is_err());
        assert!(matches!(
            SimilarityDistribution::new(vec![1.0]),
            Err(Error::BatchTooSmall { min: 2, got: 1 })
        ));
    }

    #[test]
    fn kernels_instantiate_at_storage_precision() {
        let a = EmbeddingVector::<f32>::new(vec![1.0, 2.0, 2.0]).unwrap();
        let b = EmbeddingVector::<f32>::new(vec![1.0, 2.0, 0.0]).unwrap();
        assert!((euclidean_distance(&a, &b).unwrap() - 2.0).abs() < 1e-6);
        let probs = softmax(&[1.0f32, 0.5, -0.5], 1.0).unwrap();
        let total: f32 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert!(LabelDistribution::<f32>::new(probs).is_ok());
    }
}
