//! Alignment (scoring) functions measuring how well a user-document vector
//! matches a query vector.
//!
//! All functions are pure, operate in double precision, and error on
//! dimension mismatches. The zero-vector cosine is defined as 0 so that a
//! degenerate embedding cannot propagate NaN; dataset validation flags such
//! vectors separately.

use crate::types::{check_dims, AdditiveParams, Alignment, AttentionConfig, EmbeddingVector};
use crate::{Error, Result};

/// Plain dot product.
pub fn dot(q: &EmbeddingVector, d: &EmbeddingVector) -> Result<f64> {
    check_dims(q.dim(), d.dim())?;
    Ok(q.as_slice()
        .iter()
        .zip(d.as_slice())
        .map(|(a, b)| a * b)
        .sum())
}

/// Dot product scaled by `1 / sqrt(m)`.
pub fn scaled_dot(q: &EmbeddingVector, d: &EmbeddingVector) -> Result<f64> {
    Ok(dot(q, d)? / (q.dim() as f64).sqrt())
}

/// Cosine similarity, with `cos(q, 0) = 0` by convention.
pub fn cosine(q: &EmbeddingVector, d: &EmbeddingVector) -> Result<f64> {
    let inner = dot(q, d)?;
    let denom = q.norm() * d.norm();
    if denom == 0.0 {
        Ok(0.0)
    } else {
        Ok(inner / denom)
    }
}

/// Cosine similarity shifted into `[0, 1]`: `(cos(q, d) + 1) / 2`.
pub fn shifted_cosine(q: &EmbeddingVector, d: &EmbeddingVector) -> Result<f64> {
    Ok((cosine(q, d)? + 1.0) / 2.0)
}

/// Additive alignment `v . tanh(W_q q + W_d d)`.
pub fn additive(q: &EmbeddingVector, d: &EmbeddingVector, params: &AdditiveParams) -> Result<f64> {
    check_dims(q.dim(), d.dim())?;
    params.validate(q.dim())?;
    let hq = params.w_query.matvec(q.as_slice())?;
    let hd = params.w_doc.matvec(d.as_slice())?;
    Ok(params
        .v
        .iter()
        .zip(hq.iter().zip(&hd))
        .map(|(v, (a, b))| v * (a + b).tanh())
        .sum())
}

/// Dispatches on the configured alignment function.
pub fn score(config: &AttentionConfig, q: &EmbeddingVector, d: &EmbeddingVector) -> Result<f64> {
    match config.alignment {
        Alignment::Dot => dot(q, d),
        Alignment::ScaledDot => scaled_dot(q, d),
        Alignment::Cosine => cosine(q, d),
        Alignment::ShiftedCosine => shifted_cosine(q, d),
        Alignment::Additive => {
            let params = config.additive_params.as_ref().ok_or_else(|| {
                Error::InvalidConfig("additive alignment requires additive_params".into())
            })?;
            additive(q, d, params)
        }
    }
}
