//! Query-aware user models: mean pooling, softmax attention, zero attention,
//! multi-head attention, denoising attention, and the two ablation variants
//! (filter attention and denoising-softmax).
//!
//! Every variant follows the same three steps: score each profile document
//! against the query with an alignment function, normalize the scores into
//! weights, and aggregate the document vectors under those weights. The
//! variants differ in how the normalization treats low-scoring documents;
//! denoising attention is the only one that can drive the whole model to an
//! exact zero vector.

use crate::alignment;
use crate::types::{
    AttentionConfig, EmbeddingVector, MultiHeadParams, Query, UserProfile, Variant,
};
use crate::{Error, Result};

/// Normalized per-document weights, aligned index-wise with
/// `UserProfile::documents`.
///
/// Entries are finite and nonnegative. Softmax-normalized variants sum to 1
/// (zero attention to at most 1, the remainder sitting on the zero slot);
/// denoising and filter attention sum to 1 or are all exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Count of exactly-zero entries.
    pub fn zero_count(&self) -> usize {
        self.0.iter().filter(|&&w| w == 0.0).count()
    }
}

impl From<Vec<f64>> for AttentionWeights {
    fn from(w: Vec<f64>) -> Self {
        Self(w)
    }
}

/// A user's context vector together with the weights that produced it.
#[derive(Debug, Clone)]
pub struct UserModel {
    pub vector: EmbeddingVector,
    pub is_zero: bool,
    pub weights: AttentionWeights,
    pub filtered_count: usize,
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax_weights(scores: &[f64]) -> Result<AttentionWeights> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax scores"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("softmax score {bad}")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(AttentionWeights(exps.into_iter().map(|e| e / sum).collect()))
}

/// Threshold-filtered weights with safe plain normalization:
/// `w_i = relu(e_i - threshold) / max(sum_j relu(e_j - threshold), epsilon)`.
///
/// `threshold` is the squashed value `sigmoid(t)`, not the logit. When every
/// score falls below the threshold all weights are exactly zero.
pub fn denoising_weights(scores: &[f64], threshold: f64, epsilon: f64) -> Result<AttentionWeights> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("denoising scores"));
    }
    if epsilon <= 0.0 || epsilon.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let filtered: Vec<f64> = scores.iter().map(|&e| (e - threshold).max(0.0)).collect();
    let sum: f64 = filtered.iter().sum();
    let denom = sum.max(epsilon);
    Ok(AttentionWeights(
        filtered.into_iter().map(|f| f / denom).collect(),
    ))
}

/// Softmax over the document scores extended with a zero-slot score; returns
/// only the document weights, so their sum is at most 1.
pub fn zero_attention_weights(scores: &[f64], zero_score: f64) -> Result<AttentionWeights> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("zero-attention scores"));
    }
    let mut extended = scores.to_vec();
    extended.push(zero_score);
    let all = softmax_weights(&extended)?;
    Ok(AttentionWeights(all.0[..scores.len()].to_vec()))
}

/// Weighted sum of the profile's document vectors.
pub fn aggregate(weights: &AttentionWeights, profile: &UserProfile) -> Result<UserModel> {
    if weights.len() != profile.len() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: profile.len(),
            context: "attention weights vs profile documents",
        });
    }
    if profile.is_empty() {
        return Err(Error::EmptyInput("user profile"));
    }
    let dim = profile.documents[0].vector.dim();
    let mut acc = vec![0.0; dim];
    for (w, doc) in weights.as_slice().iter().zip(&profile.documents) {
        if doc.vector.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: doc.vector.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(doc.vector.as_slice()) {
            *a += w * x;
        }
    }
    let is_zero = weights.as_slice().iter().all(|&w| w == 0.0);
    let vector = if is_zero {
        EmbeddingVector::zeros(dim)
    } else {
        EmbeddingVector::new(acc)?
    };
    Ok(UserModel {
        vector,
        is_zero,
        filtered_count: weights.zero_count(),
        weights: weights.clone(),
    })
}

/// Builds the user model for a query under the configured variant.
pub fn build_user_model(
    query: &Query,
    profile: &UserProfile,
    config: &AttentionConfig,
) -> Result<UserModel> {
    if profile.is_empty() {
        return Err(Error::EmptyInput("user profile"));
    }
    config.validate(query.vector.dim())?;

    let doc_scores = |cfg: &AttentionConfig| -> Result<Vec<f64>> {
        profile
            .documents
            .iter()
            .map(|d| alignment::score(cfg, &query.vector, &d.vector))
            .collect()
    };

    let weights = match config.variant {
        Variant::Mean => {
            let k = profile.len() as f64;
            AttentionWeights(vec![1.0 / k; profile.len()])
        }
        Variant::Softmax => softmax_weights(&doc_scores(config)?)?,
        Variant::ZeroAttention => {
            let scores = doc_scores(config)?;
            let zero_key = EmbeddingVector::zeros(query.vector.dim());
            let zero_score = alignment::score(config, &query.vector, &zero_key)?;
            zero_attention_weights(&scores, zero_score)?
        }
        // validate() has pinned the alignment per variant: shifted cosine
        // for the denoising family, scaled dot for filter attention.
        Variant::Denoising => {
            denoising_weights(&doc_scores(config)?, config.threshold(), config.epsilon)?
        }
        Variant::FilterAttention => {
            // ReLU filter with no threshold; the plain normalization keeps
            // its epsilon floor.
            denoising_weights(&doc_scores(config)?, 0.0, config.epsilon)?
        }
        Variant::DenoisingSoftmax => {
            let threshold = config.threshold();
            let filtered: Vec<f64> = doc_scores(config)?
                .iter()
                .map(|&e| (e - threshold).max(0.0))
                .collect();
            softmax_weights(&filtered)?
        }
        Variant::MultiHead => {
            let params = config.multihead_params.as_ref().ok_or_else(|| {
                Error::InvalidConfig("multi_head requires multihead_params".into())
            })?;
            return multi_head_user_model(query, profile, params, config.heads);
        }
    };
    aggregate(&weights, profile)
}

/// Multi-head scaled-dot attention over the profile documents.
///
/// Each head projects the query and documents into an `m / heads` subspace,
/// attends with scaled-dot softmax over projected keys, and aggregates
/// projected values; head outputs are concatenated and mapped back through
/// the output projection. The stored weights are the head-averaged attention
/// distribution, and the model is never zero because softmax weights are
/// strictly positive.
pub fn multi_head_user_model(
    query: &Query,
    profile: &UserProfile,
    params: &MultiHeadParams,
    heads: usize,
) -> Result<UserModel> {
    if profile.is_empty() {
        return Err(Error::EmptyInput("user profile"));
    }
    let dim = query.vector.dim();
    if params.head_count() != heads {
        return Err(Error::InvalidConfig(format!(
            "requested {heads} heads but parameters carry {}",
            params.head_count()
        )));
    }
    params.validate(dim)?;
    let sub = dim / heads;
    let scale = (sub as f64).sqrt();

    let mut concat = Vec::with_capacity(dim);
    let mut mean_weights = vec![0.0; profile.len()];
    for head in &params.heads {
        let q_proj = head.w_query.matvec(query.vector.as_slice())?;
        let scores: Vec<f64> = profile
            .documents
            .iter()
            .map(|d| {
                let key = head.w_key.matvec(d.vector.as_slice())?;
                Ok(q_proj.iter().zip(&key).map(|(a, b)| a * b).sum::<f64>() / scale)
            })
            .collect::<Result<_>>()?;
        let weights = softmax_weights(&scores)?;
        let mut out = vec![0.0; sub];
        for (w, d) in weights.as_slice().iter().zip(&profile.documents) {
            let value = head.w_value.matvec(d.vector.as_slice())?;
            for (o, v) in out.iter_mut().zip(&value) {
                *o += w * v;
            }
        }
        concat.extend(out);
        for (m, w) in mean_weights.iter_mut().zip(weights.as_slice()) {
            *m += w / heads as f64;
        }
    }
    let vector = EmbeddingVector::new(params.w_out.matvec(&concat)?)?;
    Ok(UserModel {
        vector,
        is_zero: false,
        weights: AttentionWeights(mean_weights),
        filtered_count: 0,
    })
}

/// Number of profile documents filtered to zero weight by the denoising or
/// filter-attention variants.
pub fn count_filtered(
    query: &Query,
    profile: &UserProfile,
    config: &AttentionConfig,
) -> Result<usize> {
    match config.variant {
        Variant::Denoising | Variant::FilterAttention => {
            Ok(build_user_model(query, profile, config)?.filtered_count)
        }
        other => Err(Error::InvalidConfig(format!(
            "count_filtered applies to denoising or filter_attention, got {}",
            other.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Alignment, ProfileDoc};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ev(values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::new(values).unwrap()
    }

    fn profile(vectors: Vec<Vec<f64>>) -> UserProfile {
        UserProfile::new(
            "u".to_string(),
            vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| ProfileDoc {
                    doc_id: format!("d{i}"),
                    vector: ev(v),
                })
                .collect(),
        )
        .unwrap()
    }

    fn query(v: Vec<f64>) -> Query {
        Query {
            query_id: "q".to_string(),
            user_id: "u".to_string(),
            vector: ev(v),
        }
    }

    /// Naive softmax without max-subtraction, as an independent oracle.
    fn naive_softmax(scores: &[f64]) -> Vec<f64> {
        let exps: Vec<f64> = scores.iter().map(|&s| s.exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    #[test]
    fn softmax_reproduces_worked_examples() {
        // Printed reference weights are quoted at four decimals, which pins
        // them no tighter than 1e-4; the naive-oracle comparison below pins
        // the implementation itself at 1e-12.
        let cases: [(&[f64], [f64; 4]); 4] = [
            (&[7.0, 3.0, 1.0, -2.0], [0.9796, 0.0179, 0.0024, 0.0001]),
            (&[0.7, 0.3, 0.1, -0.2], [0.3809, 0.2553, 0.2090, 0.1548]),
            (&[0.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]),
            (&[-7.0, -3.0, -1.0, -2.0], [0.0016, 0.0899, 0.6641, 0.2443]),
        ];
        for (scores, printed) in cases {
            let w = softmax_weights(scores).unwrap();
            let oracle = naive_softmax(scores);
            for ((&got, &want), &reference) in
                w.as_slice().iter().zip(&oracle).zip(printed.iter())
            {
                assert!((got - want).abs() < 1e-12, "oracle mismatch for {scores:?}");
                assert!(
                    (got - reference).abs() <= 1e-4,
                    "reference mismatch for {scores:?}: got {got}, reference {reference}"
                );
            }
            assert!((w.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_empty_and_non_finite() {
        assert!(softmax_weights(&[]).is_err());
        assert!(softmax_weights(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_weights_strictly_positive() {
        // Holds for any score spread that exp can resolve after
        // max-subtraction (about 745 in f64).
        let w = softmax_weights(&[-350.0, 0.0, 350.0]).unwrap();
        assert!(w.as_slice().iter().all(|&x| x > 0.0));
        let w = softmax_weights(&[-7.0, -3.0, -1.0, -2.0]).unwrap();
        assert!(w.as_slice().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn denoising_reproduces_worked_example() {
        let w = denoising_weights(&[0.7, 0.3, 0.1, -0.2], 0.1, 1e-9).unwrap();
        let expect = [0.75, 0.25, 0.0, 0.0];
        for (&got, &want) in w.as_slice().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn denoising_filters_everything_below_threshold() {
        let w = denoising_weights(&[0.2, 0.3, 0.15], 0.5, 1e-9).unwrap();
        assert!(w.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(w.zero_count(), 3);
    }

    #[test]
    fn denoising_symmetric_case() {
        let w = denoising_weights(&[0.2, 0.2], 0.0, 1e-9).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn denoising_matches_three_step_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.gen_range(1..10);
            let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.5..1.5)).collect();
            let threshold = rng.gen_range(0.0..1.0);
            let eps = 1e-9;

            // Step-by-step reference: shift, clamp, normalize.
            let shifted: Vec<f64> = scores.iter().map(|e| e - threshold).collect();
            let clamped: Vec<f64> = shifted.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
            let total: f64 = clamped.iter().sum();
            let expect: Vec<f64> = if total > eps {
                clamped.iter().map(|f| f / total).collect()
            } else {
                clamped.iter().map(|f| f / eps).collect()
            };

            let got = denoising_weights(&scores, threshold, eps).unwrap();
            for (&g, &e) in got.as_slice().iter().zip(&expect) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_translationally_invariant_but_denoising_is_not() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let k = rng.gen_range(1..8);
            let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let c = rng.gen_range(-10.0..10.0);
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let a = softmax_weights(&scores).unwrap();
            let b = softmax_weights(&shifted).unwrap();
            for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        // Witness: the same shift changes denoising weights.
        let s = [0.7, 0.3, 0.1, -0.2];
        let shifted: Vec<f64> = s.iter().map(|x| x - 0.3).collect();
        let a = denoising_weights(&s, 0.1, 1e-9).unwrap();
        let b = denoising_weights(&shifted, 0.1, 1e-9).unwrap();
        assert!(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .any(|(&x, &y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn denoising_sum_is_one_or_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..500 {
            let k = rng.gen_range(1..12);
            let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let threshold = rng.gen_range(0.0..1.0);
            let w = denoising_weights(&scores, threshold, 1e-9).unwrap();
            let sum = w.sum();
            assert!(
                (sum - 1.0).abs() < 1e-12 || sum == 0.0,
                "sum = {sum} for scores {scores:?}, threshold {threshold}"
            );
        }
    }

    #[test]
    fn denoising_survivors_shrink_as_threshold_rises() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        for _ in 0..100 {
            let k = rng.gen_range(1..10);
            let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut last_survivors = usize::MAX;
            for step in 0..=10 {
                let threshold = step as f64 / 10.0;
                let w = denoising_weights(&scores, threshold, 1e-9).unwrap();
                let survivors = w.len() - w.zero_count();
                assert!(survivors <= last_survivors);
                last_survivors = survivors;
            }
        }
    }

    #[test]
    fn zero_attention_equal_logit_cases() {
        let w = zero_attention_weights(&[0.0], 0.0).unwrap();
        assert!((w.as_slice()[0] - 0.5).abs() < 1e-12);

        let w = zero_attention_weights(&[1.0, 1.0], 1.0).unwrap();
        for &x in w.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(w.sum() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_attention_reduces_to_softmax_in_the_limit() {
        let scores = [0.4, -0.3, 1.2];
        let plain = softmax_weights(&scores).unwrap();
        let limit = zero_attention_weights(&scores, -1e6).unwrap();
        for (&a, &b) in plain.as_slice().iter().zip(limit.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn aggregate_one_hot_uniform_and_zero() {
        let p = profile(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);

        let one_hot = aggregate(&vec![0.0, 1.0].into(), &p).unwrap();
        assert_eq!(one_hot.vector.as_slice(), &[3.0, 4.0]);
        assert!(!one_hot.is_zero);
        assert_eq!(one_hot.filtered_count, 1);

        let uniform = aggregate(&vec![0.5, 0.5].into(), &p).unwrap();
        assert_eq!(uniform.vector.as_slice(), &[2.0, 3.0]);

        let zero = aggregate(&vec![0.0, 0.0].into(), &p).unwrap();
        assert!(zero.is_zero);
        assert!(zero.vector.is_zero());
        assert_eq!(zero.filtered_count, 2);
    }

    #[test]
    fn aggregate_rejects_length_mismatch() {
        let p = profile(vec![vec![1.0, 2.0]]);
        assert!(aggregate(&vec![0.5, 0.5].into(), &p).is_err());
    }

    #[test]
    fn aggregate_is_linear_in_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let p = profile(vec![
            vec![1.0, -2.0, 0.5],
            vec![0.0, 1.5, 1.0],
            vec![-1.0, 0.25, 2.0],
        ]);
        for _ in 0..50 {
            let w1: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w2: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (alpha, beta) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let mixed: Vec<f64> = w1
                .iter()
                .zip(&w2)
                .map(|(a, b)| alpha * a + beta * b)
                .collect();
            let lhs = aggregate(&mixed.into(), &p).unwrap().vector;
            let u1 = aggregate(&w1.into(), &p).unwrap().vector;
            let u2 = aggregate(&w2.into(), &p).unwrap().vector;
            let rhs = u1.scale(alpha).add(&u2.scale(beta)).unwrap();
            for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_model_averages_two_documents() {
        let q = query(vec![1.0, 0.0]);
        let p = profile(vec![vec![2.0, 0.0], vec![0.0, 4.0]]);
        let config = AttentionConfig::new(Variant::Mean, Alignment::Dot);
        let u = build_user_model(&q, &p, &config).unwrap();
        assert_eq!(u.vector.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn denoising_single_survivor_returns_that_document() {
        let q = query(vec![1.0, 0.0]);
        // First doc aligned with q (shifted cos 1.0), second antipodal (0.0).
        let p = profile(vec![vec![2.0, 0.0], vec![-1.0, 0.0]]);
        let config = AttentionConfig::new(Variant::Denoising, Alignment::ShiftedCosine)
            .with_threshold(0.5)
            .unwrap();
        let u = build_user_model(&q, &p, &config).unwrap();
        assert!((u.weights.as_slice()[0] - 1.0).abs() < 1e-12);
        assert_eq!(u.weights.as_slice()[1], 0.0);
        assert_eq!(u.vector.as_slice(), &[2.0, 0.0]);
        assert_eq!(u.filtered_count, 1);
    }

    #[test]
    fn softmax_scaled_dot_matches_composition_oracle() {
        let q = query(vec![0.3, -0.7, 1.1]);
        let p = profile(vec![
            vec![1.0, 0.2, -0.4],
            vec![-0.3, 0.9, 0.5],
            vec![0.0, -1.0, 0.8],
        ]);
        let config = AttentionConfig::new(Variant::Softmax, Alignment::ScaledDot);
        let u = build_user_model(&q, &p, &config).unwrap();

        let scores: Vec<f64> = p
            .documents
            .iter()
            .map(|d| crate::alignment::scaled_dot(&q.vector, &d.vector).unwrap())
            .collect();
        let expect = aggregate(&softmax_weights(&scores).unwrap(), &p).unwrap();
        for (a, b) in u.vector.as_slice().iter().zip(expect.vector.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn build_user_model_is_permutation_equivariant() {
        let q = query(vec![0.5, 0.5, -0.5]);
        let docs = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.3, -0.3, 0.9],
        ];
        let perm = [2usize, 0, 1];
        let p1 = profile(docs.clone());
        let p2 = profile(perm.iter().map(|&i| docs[i].clone()).collect());
        for variant in [
            Variant::Mean,
            Variant::Softmax,
            Variant::ZeroAttention,
            Variant::Denoising,
        ] {
            let alignment = if variant == Variant::Denoising {
                Alignment::ShiftedCosine
            } else {
                Alignment::ScaledDot
            };
            let config = AttentionConfig::new(variant, alignment)
                .with_threshold(0.4)
                .unwrap();
            let u1 = build_user_model(&q, &p1, &config).unwrap();
            let u2 = build_user_model(&q, &p2, &config).unwrap();
            for (a, b) in u1.vector.as_slice().iter().zip(u2.vector.as_slice()) {
                assert!((a - b).abs() < 1e-12, "variant {variant:?}");
            }
            for (i, &pi) in perm.iter().enumerate() {
                assert!(
                    (u1.weights.as_slice()[pi] - u2.weights.as_slice()[i]).abs() < 1e-12,
                    "variant {variant:?}"
                );
            }
        }
    }

    #[test]
    fn single_head_identity_reduces_to_softmax_scaled_dot() {
        let q = query(vec![0.2, -0.4, 0.9, 1.3]);
        let p = profile(vec![
            vec![1.0, 0.0, -0.5, 0.2],
            vec![0.3, 0.8, 0.1, -1.0],
        ]);
        let params = MultiHeadParams::identity(4, 1).unwrap();
        let mh = multi_head_user_model(&q, &p, &params, 1).unwrap();
        let config = AttentionConfig::new(Variant::Softmax, Alignment::ScaledDot);
        let plain = build_user_model(&q, &p, &config).unwrap();
        for (a, b) in mh.vector.as_slice().iter().zip(plain.vector.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in mh.weights.as_slice().iter().zip(plain.weights.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_document_profile_ignores_query() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        let dim = 4;
        let mut params = MultiHeadParams::identity(dim, 2).unwrap();
        for head in &mut params.heads {
            for m in [&mut head.w_query, &mut head.w_key, &mut head.w_value] {
                for x in &mut m.data {
                    *x = rng.gen_range(-1.0..1.0);
                }
            }
        }
        for x in &mut params.w_out.data {
            *x = rng.gen_range(-1.0..1.0);
        }
        let d = vec![0.7, -0.2, 0.5, 1.0];
        let p = profile(vec![d.clone()]);
        let q1 = query(vec![1.0, 0.0, 0.0, 0.0]);
        let q2 = query(vec![-2.0, 5.0, 0.3, 0.1]);
        let u1 = multi_head_user_model(&q1, &p, &params, 2).unwrap();
        let u2 = multi_head_user_model(&q2, &p, &params, 2).unwrap();

        // Softmax over a single item is 1, so the output is W_O (W_V d).
        let mut concat = Vec::new();
        for head in &params.heads {
            concat.extend(head.w_value.matvec(&d).unwrap());
        }
        let expect = params.w_out.matvec(&concat).unwrap();
        for (a, b) in u1.vector.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(u1.vector.as_slice(), u2.vector.as_slice());
    }

    #[test]
    fn two_head_case_matches_per_head_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(59);
        let dim = 4;
        let heads = 2;
        let sub = dim / heads;
        let mut params = MultiHeadParams::identity(dim, heads).unwrap();
        for head in &mut params.heads {
            for m in [&mut head.w_query, &mut head.w_key, &mut head.w_value] {
                for x in &mut m.data {
                    *x = rng.gen_range(-1.0..1.0);
                }
            }
        }
        for x in &mut params.w_out.data {
            *x = rng.gen_range(-1.0..1.0);
        }
        let docs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let qv: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = query(qv.clone());
        let p = profile(docs.clone());
        let got = multi_head_user_model(&q, &p, &params, heads).unwrap();

        // Direct per-head recomputation with explicit loops.
        let matvec = |m: &crate::types::Matrix, x: &[f64]| -> Vec<f64> {
            (0..m.rows)
                .map(|r| (0..m.cols).map(|c| m.get(r, c) * x[c]).sum())
                .collect()
        };
        let mut concat = Vec::new();
        for head in &params.heads {
            let qp = matvec(&head.w_query, &qv);
            let mut scores = Vec::new();
            for d in &docs {
                let key = matvec(&head.w_key, d);
                let mut s = 0.0;
                for i in 0..sub {
                    s += qp[i] * key[i];
                }
                scores.push(s / (sub as f64).sqrt());
            }
            let w = naive_softmax(&scores);
            let mut out = vec![0.0; sub];
            for (wi, d) in w.iter().zip(&docs) {
                let value = matvec(&head.w_value, d);
                for i in 0..sub {
                    out[i] += wi * value[i];
                }
            }
            concat.extend(out);
        }
        let expect = matvec(&params.w_out, &concat);
        for (a, b) in got.vector.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn count_filtered_boundaries() {
        let q = query(vec![1.0, 0.0]);
        let p = profile(vec![vec![1.0, 0.5], vec![0.5, 1.0], vec![-0.2, 1.0]]);

        // Threshold 0: every shifted-cosine score is positive, nothing filtered.
        let open = AttentionConfig::new(Variant::Denoising, Alignment::ShiftedCosine)
            .with_threshold(0.0)
            .unwrap();
        assert_eq!(count_filtered(&q, &p, &open).unwrap(), 0);

        // Threshold 1: shifted cosine never exceeds 1, everything filtered.
        let closed = AttentionConfig::new(Variant::Denoising, Alignment::ShiftedCosine)
            .with_threshold(1.0)
            .unwrap();
        assert_eq!(count_filtered(&q, &p, &closed).unwrap(), 3);

        // Known scores: cos values 0.894, 0.447, -0.196 give shifted scores
        // 0.947, 0.724, 0.402, so threshold 0.6 filters exactly one.
        let mid = AttentionConfig::new(Variant::Denoising, Alignment::ShiftedCosine)
            .with_threshold(0.6)
            .unwrap();
        assert_eq!(count_filtered(&q, &p, &mid).unwrap(), 1);

        let wrong = AttentionConfig::new(Variant::Softmax, Alignment::Dot);
        assert!(count_filtered(&q, &p, &wrong).is_err());
    }

    #[test]
    fn filter_attention_drops_negative_scaled_dot() {
        let q = query(vec![1.0, 0.0]);
        let p = profile(vec![vec![2.0, 0.0], vec![-1.0, 0.0], vec![0.5, 0.5]]);
        let config = AttentionConfig::new(Variant::FilterAttention, Alignment::ScaledDot);
        let u = build_user_model(&q, &p, &config).unwrap();
        // scaled-dot scores: 2/sqrt(2), -1/sqrt(2), 0.5/sqrt(2); the negative
        // one is filtered and the rest are proportionally normalized.
        assert_eq!(u.weights.as_slice()[1], 0.0);
        assert!((u.weights.as_slice()[0] - 0.8).abs() < 1e-12);
        assert!((u.weights.as_slice()[2] - 0.2).abs() < 1e-12);
        assert_eq!(u.filtered_count, 1);
    }

    #[test]
    fn denoising_softmax_never_zeroes_the_model() {
        let q = query(vec![1.0, 0.0]);
        let p = profile(vec![vec![-1.0, 0.0], vec![-2.0, 0.1]]);
        let config = AttentionConfig::new(Variant::DenoisingSoftmax, Alignment::ShiftedCosine)
            .with_threshold(0.9)
            .unwrap();
        let u = build_user_model(&q, &p, &config).unwrap();
        assert!(!u.is_zero);
        assert!((u.weights.sum() - 1.0).abs() < 1e-12);
        assert!(u.weights.as_slice().iter().all(|&w| w > 0.0));
    }

    proptest! {
        #[test]
        fn softmax_translation_invariance_property(
            scores in proptest::collection::vec(-50f64..50.0, 1..10),
            c in -50f64..50.0,
        ) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let a = softmax_weights(&scores).unwrap();
            let b = softmax_weights(&shifted).unwrap();
            for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
