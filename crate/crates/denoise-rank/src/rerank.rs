//! Personalized results re-ranking: scores each first-stage candidate against
//! the user model and fuses the two scores with a convex combination.

use rayon::prelude::*;

use crate::alignment;
use crate::attention::{build_user_model, UserModel};
use crate::types::{AttentionConfig, CandidateList, Dataset, Query, UserProfile};
use crate::{Error, Result};

/// Fusion settings for combining first-stage and personalized scores.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FusionConfig {
    /// Convex weight of the personalized score, in `[0, 1]`.
    pub lambda: f64,
    /// Min-max normalize first-stage scores to `[0, 1]` per query before
    /// fusing. First-stage magnitudes are retrieval-system specific while the
    /// personalized score is a cosine, so this is on by default.
    pub normalize_first_stage: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            normalize_first_stage: true,
        }
    }
}

impl FusionConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        let config = Self {
            lambda,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One re-ranked result row.
#[derive(Debug, Clone)]
pub struct RankedResult {
    pub doc_id: String,
    pub final_score: f64,
    /// First-stage score as provided (before any normalization).
    pub first_stage_score: f64,
    pub personalized_score: f64,
    /// 1-based rank after re-ranking.
    pub rank: usize,
}

/// Cosine between a candidate vector and the user model; 0 for a zeroed
/// model, which makes fusion degenerate to a pure rescaling of the
/// first-stage score.
pub fn personalized_score(candidate: &crate::types::EmbeddingVector, user_model: &UserModel) -> Result<f64> {
    if user_model.is_zero {
        crate::types::check_dims(candidate.dim(), user_model.vector.dim())?;
        return Ok(0.0);
    }
    alignment::cosine(candidate, &user_model.vector)
}

/// Convex combination `(1 - lambda) * a + lambda * b`.
pub fn fuse_scores(a: f64, b: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok((1.0 - lambda) * a + lambda * b)
}

fn min_max_normalized(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        scores.iter().map(|&s| (s - min) / (max - min)).collect()
    } else {
        // Degenerate list with one distinct score; the midpoint keeps fusion
        // well-defined and the tie-break falls back to raw score / doc id.
        vec![0.5; scores.len()]
    }
}

/// Re-ranks a candidate list for a query.
///
/// Builds the user model once, scores every candidate against it, fuses with
/// the (optionally min-max normalized) first-stage scores, and sorts by
/// descending final score with ties broken by higher first-stage score, then
/// lexicographic doc id.
pub fn rerank(
    candidates: &CandidateList,
    query: &Query,
    profile: &UserProfile,
    attn: &AttentionConfig,
    fusion: &FusionConfig,
) -> Result<Vec<RankedResult>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidate list"));
    }
    fusion.validate()?;
    let user_model = build_user_model(query, profile, attn)?;
    rerank_with_model(candidates, &user_model, fusion)
}

/// Re-ranking against a prebuilt user model (used when sweeping fusion
/// parameters without rebuilding the model).
pub fn rerank_with_model(
    candidates: &CandidateList,
    user_model: &UserModel,
    fusion: &FusionConfig,
) -> Result<Vec<RankedResult>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidate list"));
    }
    fusion.validate()?;

    let raw: Vec<f64> = candidates
        .candidates()
        .iter()
        .map(|c| c.first_stage_score)
        .collect();
    let fused_first_stage = if fusion.normalize_first_stage {
        min_max_normalized(&raw)
    } else {
        raw.clone()
    };

    let mut rows: Vec<RankedResult> = candidates
        .candidates()
        .iter()
        .zip(fused_first_stage)
        .map(|(c, a)| {
            let b = personalized_score(&c.vector, user_model)?;
            Ok(RankedResult {
                doc_id: c.doc_id.clone(),
                final_score: fuse_scores(a, b, fusion.lambda)?,
                first_stage_score: c.first_stage_score,
                personalized_score: b,
                rank: 0,
            })
        })
        .collect::<Result<_>>()?;

    rows.sort_by(|x, y| {
        y.final_score
            .total_cmp(&x.final_score)
            .then_with(|| y.first_stage_score.total_cmp(&x.first_stage_score))
            .then_with(|| x.doc_id.cmp(&y.doc_id))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(rows)
}

/// Re-ranks every query of a dataset in parallel.
///
/// Returns `(query_id, results)` pairs in the dataset's query order. Queries
/// are independent, so parallelism does not affect the output.
pub fn rerank_dataset(
    dataset: &Dataset,
    attn: &AttentionConfig,
    fusion: &FusionConfig,
) -> Result<Vec<(String, Vec<RankedResult>)>> {
    dataset
        .queries
        .par_iter()
        .map(|query| {
            let profile = dataset
                .profiles
                .get(&query.user_id)
                .ok_or_else(|| Error::MissingProfile(query.user_id.clone()))?;
            let candidates = dataset
                .candidates
                .get(&query.query_id)
                .ok_or(Error::EmptyInput("candidate list"))?;
            let rows = rerank(candidates, query, profile, attn, fusion)?;
            Ok((query.query_id.clone(), rows))
        })
        .collect()
}
