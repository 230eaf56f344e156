//! Desk-scale training of the learnable user-model parameters (threshold
//! logit, additive alignment, multi-head projections) with a triplet hinge
//! loss, plus grid search over the fusion weight and filter threshold.
//!
//! The training score sums the user model into the query before the cosine,
//! so the loss keeps a live gradient path through the query term even when
//! the filter zeroes the user model. Gradients are computed analytically and
//! pinned by central-difference checks; embeddings are frozen throughout.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attention::{build_user_model, softmax_weights, UserModel};
use crate::eval::{self, Metric};
use crate::rerank::FusionConfig;
use crate::types::{
    AdditiveParams, Alignment, AttentionConfig, Candidate, CandidateList, Dataset, EmbeddingVector,
    MultiHeadParams, ProfileDoc, Qrels, Query, UserProfile, Variant,
};
use crate::{sigmoid, derive_seed, Error, Result};

/// Hyperparameters of the triplet training loop.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Profile documents re-sampled per query at every epoch.
    pub user_docs_sampled: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            learning_rate: 5e-5,
            batch_size: 32,
            epochs: 20,
            user_docs_sampled: 20,
            weight_decay: 0.01,
            seed: 42,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 || self.margin.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be finite and nonnegative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.user_docs_sampled == 0 {
            return Err(Error::InvalidParameter(
                "batch_size, epochs, and user_docs_sampled must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One training triplet.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub query: Query,
    pub positive: Candidate,
    pub negative: Candidate,
}

impl Triplet {
    pub fn new(query: Query, positive: Candidate, negative: Candidate) -> Result<Self> {
        if positive.doc_id == negative.doc_id {
            return Err(Error::InvalidParameter(format!(
                "triplet positive and negative share doc_id '{}'",
                positive.doc_id
            )));
        }
        Ok(Self {
            query,
            positive,
            negative,
        })
    }
}

/// Training-time relevance score: `cos(q + u, d)`.
pub fn training_score(query: &Query, user_model: &UserModel, doc: &EmbeddingVector) -> Result<f64> {
    let z = query.vector.add(&user_model.vector)?;
    crate::alignment::cosine(&z, doc)
}

/// Triplet hinge loss `max(0, margin - s_pos + s_neg)`.
pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

// ---------------------------------------------------------------------------
// Trainable parameter flattening
// ---------------------------------------------------------------------------

/// The learnable parameters of a variant, in a shape that flattens to a
/// plain coordinate vector for the optimizer and the finite-difference
/// oracle.
#[derive(Debug, Clone)]
pub enum TrainableParams {
    /// Threshold logit of the denoising filter.
    Threshold(f64),
    /// Additive alignment parameters (softmax or zero-attention variants).
    Additive(AdditiveParams),
    /// Multi-head projection matrices.
    MultiHead(MultiHeadParams),
}

impl TrainableParams {
    /// Extracts the trainable parameters of a configuration, or errors when
    /// the variant has none.
    pub fn from_config(config: &AttentionConfig) -> Result<Self> {
        match config.variant {
            Variant::Denoising => {
                if !config.threshold_logit.is_finite() {
                    return Err(Error::InvalidParameter(
                        "training requires a finite threshold logit".into(),
                    ));
                }
                Ok(TrainableParams::Threshold(config.threshold_logit))
            }
            Variant::MultiHead => {
                let params = config.multihead_params.clone().ok_or_else(|| {
                    Error::InvalidConfig("multi_head requires multihead_params".into())
                })?;
                Ok(TrainableParams::MultiHead(params))
            }
            Variant::Softmax | Variant::ZeroAttention if config.alignment == Alignment::Additive => {
                let params = config.additive_params.clone().ok_or_else(|| {
                    Error::InvalidConfig("additive alignment requires additive_params".into())
                })?;
                Ok(TrainableParams::Additive(params))
            }
            _ => Err(Error::InvalidConfig(format!(
                "variant {} with alignment {} has no trainable parameters",
                config.variant.name(),
                config.alignment.name()
            ))),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            TrainableParams::Threshold(t) => vec![*t],
            TrainableParams::Additive(p) => {
                let mut flat = p.w_query.data.clone();
                flat.extend_from_slice(&p.w_doc.data);
                flat.extend_from_slice(&p.v);
                flat
            }
            TrainableParams::MultiHead(p) => {
                let mut flat = Vec::new();
                for head in &p.heads {
                    flat.extend_from_slice(&head.w_query.data);
                    flat.extend_from_slice(&head.w_key.data);
                    flat.extend_from_slice(&head.w_value.data);
                }
                flat.extend_from_slice(&p.w_out.data);
                flat
            }
        }
    }

    /// Rebuilds parameters of this shape from a flat coordinate vector.
    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let expected = self.to_flat().len();
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                left: flat.len(),
                right: expected,
                context: "flattened parameter vector",
            });
        }
        Ok(match self {
            TrainableParams::Threshold(_) => TrainableParams::Threshold(flat[0]),
            TrainableParams::Additive(p) => {
                let nq = p.w_query.data.len();
                let nd = p.w_doc.data.len();
                let mut q = p.w_query.clone();
                q.data.copy_from_slice(&flat[..nq]);
                let mut d = p.w_doc.clone();
                d.data.copy_from_slice(&flat[nq..nq + nd]);
                TrainableParams::Additive(AdditiveParams {
                    w_query: q,
                    w_doc: d,
                    v: flat[nq + nd..].to_vec(),
                })
            }
            TrainableParams::MultiHead(p) => {
                let mut out = p.clone();
                let mut offset = 0;
                for head in &mut out.heads {
                    for m in [&mut head.w_query, &mut head.w_key, &mut head.w_value] {
                        let n = m.data.len();
                        m.data.copy_from_slice(&flat[offset..offset + n]);
                        offset += n;
                    }
                }
                let n = out.w_out.data.len();
                out.w_out.data.copy_from_slice(&flat[offset..offset + n]);
                TrainableParams::MultiHead(out)
            }
        })
    }

    /// Returns the configuration with these parameter values installed.
    pub fn apply_to(&self, config: &AttentionConfig) -> AttentionConfig {
        let mut out = config.clone();
        match self {
            TrainableParams::Threshold(t) => out.threshold_logit = *t,
            TrainableParams::Additive(p) => out.additive_params = Some(p.clone()),
            TrainableParams::MultiHead(p) => out.multihead_params = Some(p.clone()),
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Canonical forward pass of the triplet loss through the attention module.
pub fn triplet_loss(
    config: &AttentionConfig,
    profile: &UserProfile,
    triplet: &Triplet,
    margin: f64,
) -> Result<f64> {
    let user_model = build_user_model(&triplet.query, profile, config)?;
    let s_pos = training_score(&triplet.query, &user_model, &triplet.positive.vector)?;
    let s_neg = training_score(&triplet.query, &user_model, &triplet.negative.vector)?;
    Ok(hinge_loss(s_pos, s_neg, margin))
}

/// Cached forward quantities of one attention head.
struct HeadForward {
    qp: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

/// `cos(z, d)` together with its gradient in `z`.
fn cosine_with_grad(z: &[f64], d: &[f64]) -> (f64, Vec<f64>) {
    let nz = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nd = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nz == 0.0 || nd == 0.0 {
        return (0.0, vec![0.0; z.len()]);
    }
    let inner: f64 = z.iter().zip(d).map(|(a, b)| a * b).sum();
    let s = inner / (nz * nd);
    let grad = z
        .iter()
        .zip(d)
        .map(|(zi, di)| di / (nz * nd) - s * zi / (nz * nz))
        .collect();
    (s, grad)
}

fn outer_acc(acc: &mut [f64], cols: usize, coeff: f64, row: &[f64], col: &[f64]) {
    for (r, &rv) in row.iter().enumerate() {
        let base = r * cols;
        for (c, &cv) in col.iter().enumerate() {
            acc[base + c] += coeff * rv * cv;
        }
    }
}

/// Loss and analytic gradient of the triplet loss with respect to the
/// flattened trainable parameters.
pub fn triplet_loss_grad(
    config: &AttentionConfig,
    profile: &UserProfile,
    triplet: &Triplet,
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    let params = TrainableParams::from_config(config)?;
    let user_model = build_user_model(&triplet.query, profile, config)?;
    let q = triplet.query.vector.as_slice();
    let z = triplet.query.vector.add(&user_model.vector)?;
    let (s_pos, g_pos) = cosine_with_grad(z.as_slice(), triplet.positive.vector.as_slice());
    let (s_neg, g_neg) = cosine_with_grad(z.as_slice(), triplet.negative.vector.as_slice());
    let loss = hinge_loss(s_pos, s_neg, margin);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("triplet loss {loss}")));
    }
    let flat_len = params.to_flat().len();
    if loss == 0.0 {
        // Inactive hinge (subgradient 0 at the kink).
        return Ok((0.0, vec![0.0; flat_len]));
    }
    // d loss / d u; z = q + u shares the gradient in z.
    let g_u: Vec<f64> = g_pos.iter().zip(&g_neg).map(|(p, n)| n - p).collect();
    let docs = &profile.documents;
    // d loss / d w_i for weight-aggregated variants.
    let gamma = |g_u: &[f64]| -> Vec<f64> {
        docs.iter()
            .map(|d| g_u.iter().zip(d.vector.as_slice()).map(|(a, b)| a * b).sum())
            .collect()
    };

    let grad = match &params {
        TrainableParams::Threshold(t) => {
            let sig = sigmoid(*t);
            let sig_prime = sig * (1.0 - sig);
            let scores: Vec<f64> = docs
                .iter()
                .map(|d| crate::alignment::shifted_cosine(&triplet.query.vector, &d.vector))
                .collect::<Result<_>>()?;
            let filtered: Vec<f64> = scores.iter().map(|&e| (e - sig).max(0.0)).collect();
            let active: Vec<bool> = scores.iter().map(|&e| e - sig > 0.0).collect();
            let f_prime: Vec<f64> = active
                .iter()
                .map(|&a| if a { -sig_prime } else { 0.0 })
                .collect();
            let sum: f64 = filtered.iter().sum();
            let gammas = gamma(&g_u);
            let mut dt = 0.0;
            if sum > config.epsilon {
                let sum_prime: f64 = f_prime.iter().sum();
                for i in 0..docs.len() {
                    let dw = (f_prime[i] * sum - filtered[i] * sum_prime) / (sum * sum);
                    dt += gammas[i] * dw;
                }
            } else {
                for i in 0..docs.len() {
                    dt += gammas[i] * f_prime[i] / config.epsilon;
                }
            }
            vec![dt]
        }
        TrainableParams::Additive(p) => {
            let gammas = gamma(&g_u);
            // Forward pieces: hidden activations per document, plus the zero
            // key for the zero-attention variant.
            let hq = p.w_query.matvec(q)?;
            let mut tanhs: Vec<Vec<f64>> = Vec::with_capacity(docs.len());
            let mut logits: Vec<f64> = Vec::with_capacity(docs.len() + 1);
            for d in docs {
                let hd = p.w_doc.matvec(d.vector.as_slice())?;
                let th: Vec<f64> = hq.iter().zip(&hd).map(|(a, b)| (a + b).tanh()).collect();
                logits.push(p.v.iter().zip(&th).map(|(v, t)| v * t).sum());
                tanhs.push(th);
            }
            let zero_slot = config.variant == Variant::ZeroAttention;
            let mut slot_gamma = gammas;
            if zero_slot {
                let th0: Vec<f64> = hq.iter().map(|a| a.tanh()).collect();
                logits.push(p.v.iter().zip(&th0).map(|(v, t)| v * t).sum());
                tanhs.push(th0);
                slot_gamma.push(0.0);
            }
            let weights = softmax_weights(&logits)?;
            let w = weights.as_slice();
            let dot_wg: f64 = w.iter().zip(&slot_gamma).map(|(a, b)| a * b).sum();
            // Softmax backward: d loss / d logit_j.
            let c: Vec<f64> = w
                .iter()
                .zip(&slot_gamma)
                .map(|(wj, gj)| wj * (gj - dot_wg))
                .collect();

            let h = p.hidden_width();
            let m = q.len();
            let mut grad_wq = vec![0.0; h * m];
            let mut grad_wd = vec![0.0; h * m];
            let mut grad_v = vec![0.0; h];
            for (j, th) in tanhs.iter().enumerate() {
                let cj = c[j];
                if cj == 0.0 {
                    continue;
                }
                for (gv, t) in grad_v.iter_mut().zip(th) {
                    *gv += cj * t;
                }
                let r: Vec<f64> = p
                    .v
                    .iter()
                    .zip(th)
                    .map(|(v, t)| v * (1.0 - t * t))
                    .collect();
                outer_acc(&mut grad_wq, m, cj, &r, q);
                if j < docs.len() {
                    outer_acc(&mut grad_wd, m, cj, &r, docs[j].vector.as_slice());
                }
                // The zero slot has a zero document, so no w_doc term.
            }
            let mut flat = grad_wq;
            flat.extend(grad_wd);
            flat.extend(grad_v);
            flat
        }
        TrainableParams::MultiHead(p) => {
            let heads = p.head_count();
            let dim = q.len();
            let sub = dim / heads;
            let scale = (sub as f64).sqrt();

            // Recompute the forward pieces per head.
            let mut concat = Vec::with_capacity(dim);
            let mut per_head: Vec<HeadForward> = Vec::with_capacity(heads);
            for head in &p.heads {
                let qp = head.w_query.matvec(q)?;
                let keys: Vec<Vec<f64>> = docs
                    .iter()
                    .map(|d| head.w_key.matvec(d.vector.as_slice()))
                    .collect::<Result<_>>()?;
                let values: Vec<Vec<f64>> = docs
                    .iter()
                    .map(|d| head.w_value.matvec(d.vector.as_slice()))
                    .collect::<Result<_>>()?;
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|k| qp.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / scale)
                    .collect();
                let alpha = softmax_weights(&scores)?.as_slice().to_vec();
                let mut out = vec![0.0; sub];
                for (a, v) in alpha.iter().zip(&values) {
                    for (o, x) in out.iter_mut().zip(v) {
                        *o += a * x;
                    }
                }
                concat.extend(out);
                per_head.push(HeadForward {
                    qp,
                    keys,
                    values,
                    alpha,
                });
            }

            // Backward through the output projection.
            let mut grad_wo = vec![0.0; dim * dim];
            outer_acc(&mut grad_wo, dim, 1.0, &g_u, &concat);
            let g_concat = p.w_out.matvec_transposed(&g_u)?;

            let per_head_size = 3 * sub * dim;
            let mut flat = vec![0.0; heads * per_head_size + dim * dim];
            for (h_idx, head) in per_head.iter().enumerate() {
                let HeadForward {
                    qp,
                    keys,
                    values,
                    alpha,
                } = head;
                let g_h = &g_concat[h_idx * sub..(h_idx + 1) * sub];

                // grad W_V = outer(g_h, sum_i alpha_i d_i)
                let mut weighted_doc = vec![0.0; dim];
                for (a, d) in alpha.iter().zip(docs) {
                    for (w, x) in weighted_doc.iter_mut().zip(d.vector.as_slice()) {
                        *w += a * x;
                    }
                }

                // Softmax backward within the head.
                let gammas_h: Vec<f64> = values
                    .iter()
                    .map(|v| g_h.iter().zip(v).map(|(a, b)| a * b).sum())
                    .collect();
                let dot_ag: f64 = alpha.iter().zip(&gammas_h).map(|(a, g)| a * g).sum();
                let s_tilde: Vec<f64> = alpha
                    .iter()
                    .zip(&gammas_h)
                    .map(|(a, g)| a * (g - dot_ag))
                    .collect();

                // grad W_Q = outer(sum_i s~_i key_i, q) / scale
                let mut key_mix = vec![0.0; sub];
                for (s, k) in s_tilde.iter().zip(keys) {
                    for (km, x) in key_mix.iter_mut().zip(k) {
                        *km += s * x;
                    }
                }
                // grad W_K = outer(qp, sum_i s~_i d_i) / scale
                let mut doc_mix = vec![0.0; dim];
                for (s, d) in s_tilde.iter().zip(docs) {
                    for (dm, x) in doc_mix.iter_mut().zip(d.vector.as_slice()) {
                        *dm += s * x;
                    }
                }

                let base = h_idx * per_head_size;
                let (gq, rest) = flat[base..base + per_head_size].split_at_mut(sub * dim);
                let (gk, gv) = rest.split_at_mut(sub * dim);
                outer_acc(gq, dim, 1.0 / scale, &key_mix, q);
                outer_acc(gk, dim, 1.0 / scale, qp, &doc_mix);
                outer_acc(gv, dim, 1.0, g_h, &weighted_doc);
            }
            let wo_base = heads * per_head_size;
            flat[wo_base..].copy_from_slice(&grad_wo);
            flat
        }
    };
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central-difference gradient of an arbitrary scalar function.
pub fn central_difference_gradient<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let plus = f(&x);
        x[i] = point[i] - h;
        let minus = f(&x);
        x[i] = point[i];
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}

/// Worst relative error between two gradient vectors, with a floor that
/// treats near-zero pairs as absolute comparisons.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Compares the analytic triplet-loss gradient against central finite
/// differences of the canonical forward pass; returns the worst relative
/// error over all parameter coordinates.
pub fn grad_check(
    config: &AttentionConfig,
    profile: &UserProfile,
    triplet: &Triplet,
    margin: f64,
    h: f64,
) -> Result<f64> {
    let params = TrainableParams::from_config(config)?;
    let (loss, analytic) = triplet_loss_grad(config, profile, triplet, margin)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    let flat = params.to_flat();
    let numeric = central_difference_gradient(
        |x| {
            let candidate = params
                .from_flat(x)
                .expect("shape preserved")
                .apply_to(config);
            triplet_loss(&candidate, profile, triplet, margin).expect("forward pass")
        },
        &flat,
        h,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

/// True when the triplet sits close to a non-differentiable point of the
/// loss (hinge boundary, filter boundary, or normalization floor crossing).
pub fn near_kink(
    config: &AttentionConfig,
    profile: &UserProfile,
    triplet: &Triplet,
    margin: f64,
    tol: f64,
) -> Result<bool> {
    let user_model = build_user_model(&triplet.query, profile, config)?;
    let s_pos = training_score(&triplet.query, &user_model, &triplet.positive.vector)?;
    let s_neg = training_score(&triplet.query, &user_model, &triplet.negative.vector)?;
    if (margin - s_pos + s_neg).abs() < tol {
        return Ok(true);
    }
    if config.variant == Variant::Denoising {
        let threshold = config.threshold();
        let mut sum = 0.0;
        for doc in &profile.documents {
            let e = crate::alignment::shifted_cosine(&triplet.query.vector, &doc.vector)?;
            if (e - threshold).abs() < tol {
                return Ok(true);
            }
            sum += (e - threshold).max(0.0);
        }
        if (sum - config.epsilon).abs() < tol {
            return Ok(true);
        }
    }
    Ok(false)
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

/// How deep into the first-stage ranking hard negatives are drawn from.
const HARD_NEGATIVE_WINDOW: usize = 10;

/// Samples one hard negative (a top-ranked candidate judged non-relevant)
/// and one in-batch negative (another query's positive that is not relevant
/// here). Falls back to whichever pool is nonempty; errors when both are
/// empty.
pub fn sample_negatives(
    query: &Query,
    first_stage: &CandidateList,
    batch_positives: &[Candidate],
    qrels: &Qrels,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hard_pool: Vec<&Candidate> = first_stage
        .candidates()
        .iter()
        .take(HARD_NEGATIVE_WINDOW)
        .filter(|c| qrels.relevance(&query.query_id, &c.doc_id) == 0)
        .collect();
    let in_batch_pool: Vec<&Candidate> = batch_positives
        .iter()
        .filter(|c| qrels.relevance(&query.query_id, &c.doc_id) == 0)
        .collect();

    let mut negatives = Vec::with_capacity(2);
    if !hard_pool.is_empty() {
        negatives.push(hard_pool[rng.gen_range(0..hard_pool.len())].clone());
    }
    if !in_batch_pool.is_empty() {
        negatives.push(in_batch_pool[rng.gen_range(0..in_batch_pool.len())].clone());
    }
    if negatives.is_empty() {
        return Err(Error::NoNegatives(query.query_id.clone()));
    }
    Ok(negatives)
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

/// Adaptive-moment optimizer with decoupled weight decay, canonical betas.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + Self::EPS) + weight_decay * params[i]);
        }
    }
}

/// Trained parameters plus the per-epoch mean loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: AttentionConfig,
    pub loss_trace: Vec<f64>,
}

fn sample_profile_docs(
    profile: &UserProfile,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UserProfile> {
    if profile.len() <= count {
        return Ok(profile.clone());
    }
    let mut indices: Vec<usize> = (0..profile.len()).collect();
    indices.shuffle(rng);
    indices.truncate(count);
    indices.sort_unstable();
    let docs: Vec<ProfileDoc> = indices
        .into_iter()
        .map(|i| profile.documents[i].clone())
        .collect();
    UserProfile::new(profile.user_id.clone(), docs)
}

/// Minibatch triplet training over the dataset's queries.
///
/// Per epoch the queries are reshuffled, each query re-samples its profile
/// documents and one judged-relevant positive, and every positive is paired
/// with one hard and one in-batch negative. Embeddings stay frozen; only the
/// variant's trainable parameters move. Bitwise deterministic in the seed.
pub fn train(
    dataset: &Dataset,
    config: &TrainingConfig,
    attn: &AttentionConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let params = TrainableParams::from_config(attn)?;
    let mut flat = params.to_flat();
    let mut optimizer = AdamW::new(flat.len());
    let mut trace = Vec::with_capacity(config.epochs);

    // Queries usable for training: profile present and at least one judged
    // relevant candidate retrievable from the first stage.
    let eligible: Vec<&Query> = dataset
        .queries
        .iter()
        .filter(|q| {
            dataset.profiles.get(&q.user_id).is_some_and(|p| !p.is_empty())
                && dataset.candidates.get(&q.query_id).is_some_and(|list| {
                    list.candidates()
                        .iter()
                        .any(|c| dataset.qrels.relevance(&q.query_id, &c.doc_id) > 0)
                })
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyInput("no trainable queries in dataset"));
    }

    for epoch in 0..config.epochs {
        let epoch_seed = derive_seed(config.seed, 3, epoch as u64);
        let mut order: Vec<usize> = (0..eligible.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut epoch_loss = 0.0;
        let mut epoch_triplets = 0usize;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            // Positives and sampled profiles for the whole batch first, so
            // in-batch negatives can come from the other queries.
            let mut batch_items = Vec::with_capacity(batch.len());
            for (slot, &query_idx) in batch.iter().enumerate() {
                let query = eligible[query_idx];
                let item_seed =
                    derive_seed(epoch_seed, 4 + batch_idx as u64, slot as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
                let profile = sample_profile_docs(
                    &dataset.profiles[&query.user_id],
                    config.user_docs_sampled,
                    &mut rng,
                )?;
                let list = &dataset.candidates[&query.query_id];
                let relevant: Vec<&Candidate> = list
                    .candidates()
                    .iter()
                    .filter(|c| dataset.qrels.relevance(&query.query_id, &c.doc_id) > 0)
                    .collect();
                let positive = relevant[rng.gen_range(0..relevant.len())].clone();
                batch_items.push((query, profile, positive, rng.gen::<u64>()));
            }
            let positives: Vec<Candidate> =
                batch_items.iter().map(|(_, _, p, _)| p.clone()).collect();

            let mut grad_acc = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            let mut batch_triplets = 0usize;
            let current = params.from_flat(&flat)?.apply_to(attn);
            for (slot, (query, profile, positive, neg_seed)) in batch_items.iter().enumerate() {
                let others: Vec<Candidate> = positives
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != slot)
                    .map(|(_, c)| c.clone())
                    .collect();
                let negatives = match sample_negatives(
                    query,
                    &dataset.candidates[&query.query_id],
                    &others,
                    &dataset.qrels,
                    *neg_seed,
                ) {
                    Ok(n) => n,
                    Err(Error::NoNegatives(_)) => continue,
                    Err(e) => return Err(e),
                };
                for negative in negatives {
                    if negative.doc_id == positive.doc_id {
                        continue;
                    }
                    let triplet =
                        Triplet::new((*query).clone(), positive.clone(), negative)?;
                    let (loss, grad) =
                        triplet_loss_grad(&current, profile, &triplet, config.margin)?;
                    if !loss.is_finite() {
                        return Err(Error::TrainingDiverged {
                            epoch,
                            loss,
                            trace,
                        });
                    }
                    batch_loss += loss;
                    batch_triplets += 1;
                    for (a, g) in grad_acc.iter_mut().zip(&grad) {
                        *a += g;
                    }
                }
            }
            if batch_triplets == 0 {
                continue;
            }
            for g in &mut grad_acc {
                *g /= batch_triplets as f64;
            }
            optimizer.update(&mut flat, &grad_acc, config.learning_rate, config.weight_decay);
            epoch_loss += batch_loss;
            epoch_triplets += batch_triplets;
        }

        let mean_loss = if epoch_triplets > 0 {
            epoch_loss / epoch_triplets as f64
        } else {
            0.0
        };
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                loss: mean_loss,
                trace,
            });
        }
        trace.push(mean_loss);
    }

    Ok(TrainOutcome {
        config: params.from_flat(&flat)?.apply_to(attn),
        loss_trace: trace,
    })
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// The grid used throughout: 0.0 to 1.0 in steps of 0.1.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// One evaluated grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    /// Filter threshold `sigmoid(t)`; `None` for variants without one.
    pub threshold: Option<f64>,
    pub score: f64,
}

/// Grid-search outcome: the best cell under the tie-break (smaller lambda,
/// then smaller threshold) plus the full table.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_lambda: f64,
    pub best_threshold: Option<f64>,
    pub best_score: f64,
    pub table: Vec<GridPoint>,
}

fn variant_uses_threshold(variant: Variant) -> bool {
    matches!(variant, Variant::Denoising | Variant::DenoisingSoftmax)
}

/// Exhaustive sweep of the fusion weight (and, for thresholded variants, the
/// filter threshold) against a validation dataset.
///
/// User models are built once per threshold; the fusion weight sweep reuses
/// the cached personalized scores. The result does not depend on grid
/// enumeration order.
pub fn grid_search(
    dataset: &Dataset,
    lambda_grid: &[f64],
    threshold_grid: &[f64],
    attn: &AttentionConfig,
    normalize_first_stage: bool,
    metric: Metric,
) -> Result<GridSearchResult> {
    if dataset.queries.is_empty() {
        return Err(Error::EmptyInput("validation queries"));
    }
    if lambda_grid.is_empty() {
        return Err(Error::EmptyInput("lambda grid"));
    }
    let thresholds: Vec<Option<f64>> = if variant_uses_threshold(attn.variant) {
        if threshold_grid.is_empty() {
            return Err(Error::EmptyInput("threshold grid"));
        }
        threshold_grid.iter().map(|&t| Some(t)).collect()
    } else {
        vec![None]
    };

    let mut table = Vec::with_capacity(thresholds.len() * lambda_grid.len());
    for &threshold in &thresholds {
        let config = match threshold {
            Some(s) => attn.clone().with_threshold(s)?,
            None => attn.clone(),
        };
        // Cache per-query rankings ingredients once per threshold.
        let cached: Vec<(String, Vec<RankRow>)> = dataset
            .queries
            .par_iter()
            .map(|query| {
                let profile = dataset
                    .profiles
                    .get(&query.user_id)
                    .ok_or_else(|| Error::MissingProfile(query.user_id.clone()))?;
                let list = dataset
                    .candidates
                    .get(&query.query_id)
                    .ok_or(Error::EmptyInput("candidate list"))?;
                let model = build_user_model(query, profile, &config)?;
                let rows = crate::rerank::rerank_with_model(
                    list,
                    &model,
                    &FusionConfig {
                        lambda: 0.0,
                        normalize_first_stage,
                    },
                )?;
                // Keep normalized first-stage (final score at lambda 0) and
                // the personalized score per candidate.
                Ok((
                    query.query_id.clone(),
                    rows.into_iter()
                        .map(|r| RankRow {
                            doc_id: r.doc_id,
                            first_stage: r.final_score,
                            raw_first_stage: r.first_stage_score,
                            personalized: r.personalized_score,
                        })
                        .collect(),
                ))
            })
            .collect::<Result<_>>()?;

        for &lambda in lambda_grid {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidParameter(format!(
                    "lambda grid value {lambda} outside [0, 1]"
                )));
            }
            let mut per_query = Vec::with_capacity(cached.len());
            for (query_id, rows) in &cached {
                let mut scored: Vec<(&RankRow, f64)> = rows
                    .iter()
                    .map(|r| (r, (1.0 - lambda) * r.first_stage + lambda * r.personalized))
                    .collect();
                scored.sort_by(|(xr, xs), (yr, ys)| {
                    ys.total_cmp(xs)
                        .then_with(|| yr.raw_first_stage.total_cmp(&xr.raw_first_stage))
                        .then_with(|| xr.doc_id.cmp(&yr.doc_id))
                });
                let ranked: Vec<String> =
                    scored.into_iter().map(|(r, _)| r.doc_id.clone()).collect();
                let value = match metric {
                    Metric::Map100 => eval::average_precision_at(
                        &ranked,
                        query_id,
                        &dataset.qrels,
                        eval::AP_CUTOFF,
                    ),
                    Metric::Mrr10 => eval::reciprocal_rank_at(
                        &ranked,
                        query_id,
                        &dataset.qrels,
                        eval::RR_CUTOFF,
                    ),
                    Metric::Ndcg10 => {
                        eval::ndcg_at(&ranked, query_id, &dataset.qrels, eval::NDCG_CUTOFF)
                    }
                };
                if let Some(v) = value {
                    per_query.push(v);
                }
            }
            if per_query.is_empty() {
                return Err(Error::EmptyInput("no judged validation queries"));
            }
            let score = per_query.iter().sum::<f64>() / per_query.len() as f64;
            table.push(GridPoint {
                lambda,
                threshold,
                score,
            });
        }
    }

    // Canonical scan order: ascending lambda, then ascending threshold, so
    // score ties resolve toward the smaller values.
    let mut scan = table.clone();
    scan.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then_with(|| match (a.threshold, b.threshold) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => std::cmp::Ordering::Equal,
            })
    });
    let mut best = scan[0].clone();
    for point in &scan[1..] {
        if point.score > best.score {
            best = point.clone();
        }
    }

    Ok(GridSearchResult {
        best_lambda: best.lambda,
        best_threshold: best.threshold,
        best_score: best.score,
        table,
    })
}

struct RankRow {
    doc_id: String,
    first_stage: f64,
    raw_first_stage: f64,
    personalized: f64,
}
