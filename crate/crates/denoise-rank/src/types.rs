//! Shared data model: vectors, profiles, queries, candidates, judgments,
//! and attention configuration.
//!
//! Everything here is immutable after construction and safe to share across
//! worker threads.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense embedding of a query, user document, or candidate document.
///
/// All vectors within one dataset share a single dimension; entries must be
/// finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {bad}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise sum. Errors on dimension mismatch.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub(crate) fn check_dims(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { left, right })
    }
}

/// A search query issued by a known user.
#[derive(Debug, Clone)]
pub struct Query {
    pub query_id: String,
    pub user_id: String,
    pub vector: EmbeddingVector,
}

/// One document attached to a user profile.
#[derive(Debug, Clone)]
pub struct ProfileDoc {
    pub doc_id: String,
    pub vector: EmbeddingVector,
}

/// The set of documents related to one user, used for personalization.
#[derive(Debug, Clone)]
pub struct UserProfile {
    pub user_id: String,
    pub documents: Vec<ProfileDoc>,
}

impl UserProfile {
    /// Builds a profile, rejecting duplicate document ids.
    pub fn new(user_id: String, documents: Vec<ProfileDoc>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for doc in &documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate doc_id '{}' in profile of user '{}'",
                    doc.doc_id, user_id
                )));
            }
        }
        Ok(Self { user_id, documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// A first-stage retrieval result for one query.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub doc_id: String,
    pub first_stage_score: f64,
    pub vector: EmbeddingVector,
}

/// Per-query first-stage results, held in descending score order with
/// doc-id tie-break.
#[derive(Debug, Clone)]
pub struct CandidateList {
    pub query_id: String,
    candidates: Vec<Candidate>,
}

impl CandidateList {
    /// Builds a list, sorting by `(score desc, doc_id asc)` and rejecting
    /// duplicate ids and non-finite scores.
    pub fn new(query_id: String, mut candidates: Vec<Candidate>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &candidates {
            if !c.first_stage_score.is_finite() {
                return Err(Error::NonFinite(format!(
                    "first-stage score of '{}' for query '{}'",
                    c.doc_id, query_id
                )));
            }
            if !seen.insert(c.doc_id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate candidate '{}' for query '{}'",
                    c.doc_id, query_id
                )));
            }
        }
        candidates.sort_by(|a, b| {
            b.first_stage_score
                .total_cmp(&a.first_stage_score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        Ok(Self {
            query_id,
            candidates,
        })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Relevance judgments: `(query_id, doc_id) -> grade`.
///
/// Grades are nonnegative integers; the datasets of interest are binary but
/// larger grades are accepted and used as linear gain.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment; returns `true` if it replaced an earlier one.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, relevance: u32) -> bool {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), relevance)
            .is_some()
    }

    /// Relevance grade, with unjudged documents counting as non-relevant.
    pub fn relevance(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// Number of documents with positive grade for the query.
    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map(|m| m.values().filter(|&&r| r > 0).count())
            .unwrap_or(0)
    }

    /// Positive grades for the query, unsorted.
    pub fn gains(&self, query_id: &str) -> Vec<u32> {
        self.judgments
            .get(query_id)
            .map(|m| m.values().copied().filter(|&r| r > 0).collect())
            .unwrap_or_default()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(|s| s.as_str())
    }

    /// Iterates all `(query_id, doc_id, relevance)` rows in sorted order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments.iter().flat_map(|(q, docs)| {
            docs.iter().map(move |(d, &r)| (q.as_str(), d.as_str(), r))
        })
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// User-model variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mean,
    Softmax,
    ZeroAttention,
    MultiHead,
    Denoising,
    FilterAttention,
    DenoisingSoftmax,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Mean => "mean",
            Variant::Softmax => "softmax",
            Variant::ZeroAttention => "zero_attention",
            Variant::MultiHead => "multi_head",
            Variant::Denoising => "denoising",
            Variant::FilterAttention => "filter_attention",
            Variant::DenoisingSoftmax => "denoising_softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Variant::Mean),
            "softmax" => Ok(Variant::Softmax),
            "zero_attention" => Ok(Variant::ZeroAttention),
            "multi_head" => Ok(Variant::MultiHead),
            "denoising" => Ok(Variant::Denoising),
            "filter_attention" => Ok(Variant::FilterAttention),
            "denoising_softmax" => Ok(Variant::DenoisingSoftmax),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

/// Alignment (scoring) function selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Dot,
    ScaledDot,
    Cosine,
    ShiftedCosine,
    Additive,
}

impl Alignment {
    pub fn name(&self) -> &'static str {
        match self {
            Alignment::Dot => "dot",
            Alignment::ScaledDot => "scaled_dot",
            Alignment::Cosine => "cosine",
            Alignment::ShiftedCosine => "shifted_cosine",
            Alignment::Additive => "additive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Alignment::Dot),
            "scaled_dot" => Ok(Alignment::ScaledDot),
            "cosine" => Ok(Alignment::Cosine),
            "shifted_cosine" => Ok(Alignment::ShiftedCosine),
            "additive" => Ok(Alignment::Additive),
            other => Err(Error::InvalidConfig(format!("unknown alignment '{other}'"))),
        }
    }
}

/// Dense row-major matrix used by the learned alignment and projection
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity-like matrix; rectangular shapes get ones on the diagonal.
    pub fn identity(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `y = M x`. Errors when `x` has the wrong length.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    /// `y = M^T x`. Errors when `x` has the wrong length.
    pub fn matvec_transposed(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.rows, x.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xr;
            }
        }
        Ok(out)
    }
}

/// Parameters of the additive (single hidden layer, tanh) alignment model:
/// `a(q, d) = v . tanh(W_q q + W_d d)` with hidden width `h` and no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveParams {
    pub w_query: Matrix,
    pub w_doc: Matrix,
    pub v: Vec<f64>,
}

impl AdditiveParams {
    /// Random initialization with hidden width equal to the embedding
    /// dimension: Gaussian entries scaled by `1 / sqrt(dim)`.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut sample = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * scale)
                .collect()
        };
        Self {
            w_query: Matrix {
                rows: dim,
                cols: dim,
                data: sample(dim * dim),
            },
            w_doc: Matrix {
                rows: dim,
                cols: dim,
                data: sample(dim * dim),
            },
            v: sample(dim),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let h = self.v.len();
        if self.w_query.rows != h || self.w_doc.rows != h {
            return Err(Error::InvalidParameter(format!(
                "additive projections must have {h} rows to match v"
            )));
        }
        check_dims(self.w_query.cols, dim)?;
        check_dims(self.w_doc.cols, dim)?;
        if let Some(bad) = self.v.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("additive v entry {bad}")));
        }
        Ok(())
    }

    pub fn hidden_width(&self) -> usize {
        self.v.len()
    }
}

/// Per-head query/key/value projections plus the output projection.
///
/// Each head projects into an `m / heads` subspace; the output projection
/// maps the concatenated head outputs back to `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadParams {
    pub heads: Vec<HeadParams>,
    pub w_out: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w_query: Matrix,
    pub w_key: Matrix,
    pub w_value: Matrix,
}

impl MultiHeadParams {
    /// Identity-initialized parameters: head `i` projects onto the `i`-th
    /// block of coordinates and the output projection is the identity.
    /// With one head this reduces multi-head attention to softmax attention
    /// with scaled-dot alignment.
    pub fn identity(dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidParameter(format!(
                "dimension {dim} not divisible by {heads} heads"
            )));
        }
        let sub = dim / heads;
        let head_params = (0..heads)
            .map(|h| {
                let mut block = Matrix::zeros(sub, dim);
                for r in 0..sub {
                    block.data[r * dim + h * sub + r] = 1.0;
                }
                HeadParams {
                    w_query: block.clone(),
                    w_key: block.clone(),
                    w_value: block,
                }
            })
            .collect();
        Ok(Self {
            heads: head_params,
            w_out: Matrix::identity(dim, dim),
        })
    }

    /// Identity-block projections perturbed by seeded Gaussian noise, the
    /// standard starting point for training and for untrained baselines.
    pub fn seeded_near_identity(dim: usize, heads: usize, noise: f64, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut params = Self::identity(dim, heads)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut perturb = |m: &mut Matrix| {
            for x in &mut m.data {
                *x += rng.sample::<f64, _>(rand_distr::StandardNormal) * noise;
            }
        };
        for head in &mut params.heads {
            perturb(&mut head.w_query);
            perturb(&mut head.w_key);
            perturb(&mut head.w_value);
        }
        perturb(&mut params.w_out);
        Ok(params)
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let heads = self.heads.len();
        if heads == 0 {
            return Err(Error::InvalidParameter("zero attention heads".into()));
        }
        if !dim.is_multiple_of(heads) {
            return Err(Error::InvalidParameter(format!(
                "dimension {dim} not divisible by {heads} heads"
            )));
        }
        let sub = dim / heads;
        for head in &self.heads {
            for m in [&head.w_query, &head.w_key, &head.w_value] {
                if m.rows != sub || m.cols != dim {
                    return Err(Error::InvalidParameter(format!(
                        "head projection must be {sub}x{dim}, got {}x{}",
                        m.rows, m.cols
                    )));
                }
            }
        }
        if self.w_out.rows != dim || self.w_out.cols != dim {
            return Err(Error::InvalidParameter(format!(
                "output projection must be {dim}x{dim}, got {}x{}",
                self.w_out.rows, self.w_out.cols
            )));
        }
        Ok(())
    }
}

/// Default floor for the safe normalization denominator.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Variant plus alignment plus every tunable parameter of a user model.
///
/// The filter threshold is stored as the logit `t`; the effective threshold
/// `sigmoid(t)` is always computed, never stored, and `t` may be infinite so
/// the threshold can reach 0 and 1 exactly during grid sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub variant: Variant,
    pub alignment: Alignment,
    pub threshold_logit: f64,
    pub epsilon: f64,
    pub heads: usize,
    pub additive_params: Option<AdditiveParams>,
    pub multihead_params: Option<MultiHeadParams>,
}

impl AttentionConfig {
    pub fn new(variant: Variant, alignment: Alignment) -> Self {
        Self {
            variant,
            alignment,
            threshold_logit: 0.0,
            epsilon: DEFAULT_EPSILON,
            heads: 1,
            additive_params: None,
            multihead_params: None,
        }
    }

    pub fn with_threshold_logit(mut self, t: f64) -> Self {
        self.threshold_logit = t;
        self
    }

    /// Sets the logit so that `sigmoid(t)` equals the given threshold.
    pub fn with_threshold(mut self, sigma_t: f64) -> Result<Self> {
        self.threshold_logit = crate::logit(sigma_t)?;
        Ok(self)
    }

    pub fn with_additive_params(mut self, params: AdditiveParams) -> Self {
        self.additive_params = Some(params);
        self
    }

    pub fn with_multihead_params(mut self, params: MultiHeadParams, heads: usize) -> Self {
        self.multihead_params = Some(params);
        self.heads = heads;
        self
    }

    /// Effective filter threshold `sigmoid(t)`.
    pub fn threshold(&self) -> f64 {
        crate::sigmoid(self.threshold_logit)
    }

    /// Checks the variant/alignment/parameter combination against a vector
    /// dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.threshold_logit.is_nan() {
            return Err(Error::InvalidConfig("threshold logit is NaN".into()));
        }
        match self.variant {
            Variant::Denoising | Variant::DenoisingSoftmax => {
                if self.alignment != Alignment::ShiftedCosine {
                    return Err(Error::InvalidConfig(format!(
                        "{} requires shifted_cosine alignment, got {}",
                        self.variant.name(),
                        self.alignment.name()
                    )));
                }
            }
            Variant::FilterAttention => {
                if self.alignment != Alignment::ScaledDot {
                    return Err(Error::InvalidConfig(format!(
                        "filter_attention requires scaled_dot alignment, got {}",
                        self.alignment.name()
                    )));
                }
            }
            Variant::MultiHead => {
                if self.alignment != Alignment::ScaledDot {
                    return Err(Error::InvalidConfig(format!(
                        "multi_head requires scaled_dot alignment, got {}",
                        self.alignment.name()
                    )));
                }
                if self.heads == 0 {
                    return Err(Error::InvalidConfig("multi_head requires heads >= 1".into()));
                }
                let params = self.multihead_params.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("multi_head requires multihead_params".into())
                })?;
                if params.head_count() != self.heads {
                    return Err(Error::InvalidConfig(format!(
                        "configured {} heads but parameters carry {}",
                        self.heads,
                        params.head_count()
                    )));
                }
                params.validate(dim)?;
            }
            Variant::Mean | Variant::Softmax | Variant::ZeroAttention => {}
        }
        if self.alignment == Alignment::Additive {
            let params = self.additive_params.as_ref().ok_or_else(|| {
                Error::InvalidConfig("additive alignment requires additive_params".into())
            })?;
            params.validate(dim)?;
        }
        Ok(())
    }
}

/// A loaded experiment dataset.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub profiles: HashMap<String, UserProfile>,
    pub queries: Vec<Query>,
    pub candidates: HashMap<String, CandidateList>,
    pub qrels: Qrels,
}

/// One problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    /// A vector whose dimension differs from the dataset-wide one.
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    /// A query whose user has no profile.
    MissingProfile { query_id: String, user_id: String },
    /// A query with no judged-relevant candidate.
    NoJudgedRelevant { query_id: String },
    /// A query with no candidate list at all.
    NoCandidates { query_id: String },
    /// An all-zeros embedding, which signals upstream data problems.
    ZeroVector { id: String },
    /// A profile with no documents.
    EmptyProfile { user_id: String },
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationIssue::DimensionMismatch { id, expected, found } => {
                write!(f, "dimension mismatch for '{id}': expected {expected}, found {found}")
            }
            ValidationIssue::MissingProfile { query_id, user_id } => {
                write!(f, "missing profile: query '{query_id}' references user '{user_id}'")
            }
            ValidationIssue::NoJudgedRelevant { query_id } => {
                write!(f, "query '{query_id}' has no judged-relevant candidate")
            }
            ValidationIssue::NoCandidates { query_id } => {
                write!(f, "query '{query_id}' has no candidate list")
            }
            ValidationIssue::ZeroVector { id } => write!(f, "zero embedding for '{id}'"),
            ValidationIssue::EmptyProfile { user_id } => {
                write!(f, "profile of user '{user_id}' has no documents")
            }
        }
    }
}

/// Outcome of [`validate_dataset`]; empty means the dataset is consistent.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Pure consistency check over a loaded dataset.
///
/// Reports dimension mismatches (against the dimension of the first query
/// vector), queries without profiles, queries with zero judged-relevant
/// candidates, zero embeddings, and empty profiles. Never fails.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut issues = Vec::new();

    let expected_dim = dataset.queries.first().map(|q| q.vector.dim());

    let check_vec = |id: &str, v: &EmbeddingVector, issues: &mut Vec<ValidationIssue>| {
        if let Some(expected) = expected_dim {
            if v.dim() != expected {
                issues.push(ValidationIssue::DimensionMismatch {
                    id: id.to_string(),
                    expected,
                    found: v.dim(),
                });
            }
        }
        if v.is_zero() {
            issues.push(ValidationIssue::ZeroVector { id: id.to_string() });
        }
    };

    for query in &dataset.queries {
        check_vec(&query.query_id, &query.vector, &mut issues);
        if !dataset.profiles.contains_key(&query.user_id) {
            issues.push(ValidationIssue::MissingProfile {
                query_id: query.query_id.clone(),
                user_id: query.user_id.clone(),
            });
        }
        match dataset.candidates.get(&query.query_id) {
            None => issues.push(ValidationIssue::NoCandidates {
                query_id: query.query_id.clone(),
            }),
            Some(list) => {
                let any_relevant = list
                    .candidates()
                    .iter()
                    .any(|c| dataset.qrels.relevance(&query.query_id, &c.doc_id) > 0);
                if !any_relevant {
                    issues.push(ValidationIssue::NoJudgedRelevant {
                        query_id: query.query_id.clone(),
                    });
                }
            }
        }
    }

    let mut user_ids: Vec<&String> = dataset.profiles.keys().collect();
    user_ids.sort();
    for user_id in user_ids {
        let profile = &dataset.profiles[user_id];
        if profile.is_empty() {
            issues.push(ValidationIssue::EmptyProfile {
                user_id: user_id.clone(),
            });
        }
        for doc in &profile.documents {
            check_vec(&doc.doc_id, &doc.vector, &mut issues);
        }
    }

    for list in dataset.candidates.values() {
        for c in list.candidates() {
            if let Some(expected) = expected_dim {
                if c.vector.dim() != expected {
                    issues.push(ValidationIssue::DimensionMismatch {
                        id: c.doc_id.clone(),
                        expected,
                        found: c.vector.dim(),
                    });
                }
            }
        }
    }

    ValidationReport { issues }
}
