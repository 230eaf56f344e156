//! Synthetic topic-clustered benchmark generator.
//!
//! Builds desk-scale datasets with the geometry the attention variants
//! discriminate on: near-orthogonal unit topic anchors, users whose profile
//! documents split into query-related topics (fraction `on_topic_fraction`)
//! and unrelated noise topics, candidates clustered around topics, and
//! fabricated first-stage scores equal to the true query--candidate cosine
//! plus Gaussian noise. Everything derives from a single seed, per user, so
//! generation order never matters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;

use crate::types::{
    Candidate, CandidateList, Dataset, EmbeddingVector, ProfileDoc, Query, UserProfile,
};
use crate::{derive_seed, Error, Result};

/// Angular spread of generated vectors around their topic anchor.
const TOPIC_JITTER: f64 = 0.6;

/// Range of per-vector magnitudes. Cosine-based scoring ignores them; they
/// give dot-product alignments a realistic dynamic range.
const MAGNITUDE_RANGE: (f64, f64) = (2.0, 6.0);

/// Minimum documents per user profile.
const MIN_USER_DOCS: usize = 2;

/// Generator settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub dimension: usize,
    pub topics: usize,
    pub users: usize,
    pub queries_per_user: usize,
    /// Mean of the per-user document count (exponentially distributed, so
    /// the standard deviation tracks the mean as in real query logs).
    pub user_docs_per_user: usize,
    /// Fraction of profile documents drawn from the user's query topics; the
    /// remainder comes from topics the user's queries never touch.
    pub on_topic_fraction: f64,
    pub candidates_per_query: usize,
    pub relevant_per_query: usize,
    /// Standard deviation of the Gaussian noise added to the true cosine to
    /// fabricate first-stage scores.
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::Infeasible("dimension must be positive".into()));
        }
        if self.topics < 2 {
            return Err(Error::Infeasible("need at least 2 topics".into()));
        }
        if self.topics > self.dimension {
            return Err(Error::Infeasible(format!(
                "{} topics cannot be near-orthogonal in dimension {}",
                self.topics, self.dimension
            )));
        }
        if self.users == 0 || self.queries_per_user == 0 || self.user_docs_per_user == 0 {
            return Err(Error::Infeasible(
                "users, queries_per_user, and user_docs_per_user must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.on_topic_fraction) {
            return Err(Error::Infeasible(format!(
                "on_topic_fraction must lie in [0, 1], got {}",
                self.on_topic_fraction
            )));
        }
        if self.relevant_per_query == 0 || self.relevant_per_query > self.candidates_per_query {
            return Err(Error::Infeasible(format!(
                "need 1 <= relevant_per_query <= candidates_per_query, got {} of {}",
                self.relevant_per_query, self.candidates_per_query
            )));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::Infeasible(format!(
                "noise_std must be finite and nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Number of topics each user's queries draw from; the rest of the topic
    /// pool provides that user's profile noise.
    pub fn query_topics_per_user(&self) -> usize {
        (self.topics.div_ceil(4)).clamp(1, self.topics - 1)
    }

    /// Same dataset shape with per-user document counts divided by 4.
    pub fn desk_scaled(&self) -> Self {
        Self {
            user_docs_per_user: (self.user_docs_per_user / 4).max(MIN_USER_DOCS),
            ..self.clone()
        }
    }
}

/// Web-search-like preset: many topics per user and mostly off-topic
/// profiles, with the document count distribution of a broad query log.
pub fn web_like_preset() -> SynthConfig {
    SynthConfig {
        dimension: 64,
        topics: 16,
        users: 150,
        queries_per_user: 5,
        user_docs_per_user: 137,
        on_topic_fraction: 0.25,
        candidates_per_query: 50,
        relevant_per_query: 1,
        noise_std: 0.4,
        seed: 7,
    }
}

/// Academic-search-like preset: few topics per user, focused profiles,
/// several relevant documents per query.
pub fn academic_like_preset() -> SynthConfig {
    SynthConfig {
        dimension: 64,
        topics: 8,
        users: 150,
        queries_per_user: 5,
        user_docs_per_user: 54,
        on_topic_fraction: 0.8,
        candidates_per_query: 50,
        relevant_per_query: 5,
        noise_std: 0.4,
        seed: 11,
    }
}

/// Summary statistics reported alongside a generated dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub queries: usize,
    pub dimension: usize,
    pub user_doc_mean: f64,
    pub user_doc_std: f64,
}

/// A generated dataset plus its statistics.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub stats: DatasetStats,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Orthonormal topic anchors via Gram-Schmidt over Gaussian draws.
fn topic_anchors(rng: &mut ChaCha8Rng, topics: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(topics);
    let mut attempts = 0;
    while anchors.len() < topics {
        attempts += 1;
        if attempts > topics * 16 {
            return Err(Error::Infeasible(format!(
                "failed to orthonormalize {topics} anchors in dimension {dim}"
            )));
        }
        let mut v = unit_gaussian(rng, dim);
        for a in &anchors {
            let proj: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(a) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            anchors.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Ok(anchors)
}

/// A vector near the given anchor: unit jitter direction scaled by
/// [`TOPIC_JITTER`], renormalized, then stretched by a random magnitude.
fn vector_near(rng: &mut ChaCha8Rng, anchor: &[f64]) -> EmbeddingVector {
    let dir = unit_gaussian(rng, anchor.len());
    let mut v: Vec<f64> = anchor
        .iter()
        .zip(&dir)
        .map(|(a, d)| a + TOPIC_JITTER * d)
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let magnitude = rng.gen_range(MAGNITUDE_RANGE.0..MAGNITUDE_RANGE.1);
    for x in &mut v {
        *x *= magnitude / norm;
    }
    EmbeddingVector::new(v).expect("generated vector is finite")
}

fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

struct UserData {
    profile: UserProfile,
    queries: Vec<Query>,
    candidate_lists: Vec<CandidateList>,
    relevant: Vec<(String, String)>,
}

fn generate_user(
    config: &SynthConfig,
    anchors: &[Vec<f64>],
    user_idx: usize,
) -> Result<UserData> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, user_idx as u64));
    let user_id = format!("u{user_idx:04}");
    let topic_count = config.topics;
    let query_topic_count = config.query_topics_per_user();

    // The user's query topics are a random subset; every other topic is a
    // potential noise source for the profile.
    let mut topic_ids: Vec<usize> = (0..topic_count).collect();
    for i in 0..topic_count {
        let j = rng.gen_range(i..topic_count);
        topic_ids.swap(i, j);
    }
    let query_topics = &topic_ids[..query_topic_count];
    let noise_topics = &topic_ids[query_topic_count..];

    let doc_count = {
        let exp = Exp::new(1.0 / config.user_docs_per_user as f64)
            .map_err(|e| Error::Infeasible(format!("document count distribution: {e}")))?;
        (exp.sample(&mut rng).round() as usize).max(MIN_USER_DOCS)
    };

    let mut documents = Vec::with_capacity(doc_count);
    for d in 0..doc_count {
        let on_topic = rng.gen::<f64>() < config.on_topic_fraction || noise_topics.is_empty();
        let topic = if on_topic {
            query_topics[rng.gen_range(0..query_topics.len())]
        } else {
            noise_topics[rng.gen_range(0..noise_topics.len())]
        };
        documents.push(ProfileDoc {
            doc_id: format!("{user_id}_d{d:04}"),
            vector: vector_near(&mut rng, &anchors[topic]),
        });
    }
    let profile = UserProfile::new(user_id.clone(), documents)?;

    let noise = if config.noise_std > 0.0 {
        Some(Normal::new(0.0, config.noise_std).expect("validated noise_std"))
    } else {
        None
    };

    let mut queries = Vec::with_capacity(config.queries_per_user);
    let mut candidate_lists = Vec::with_capacity(config.queries_per_user);
    let mut relevant = Vec::new();
    for qi in 0..config.queries_per_user {
        let query_id = format!("{user_id}_q{qi:02}");
        let topic = query_topics[rng.gen_range(0..query_topics.len())];
        let query_vector = vector_near(&mut rng, &anchors[topic]);

        let mut candidates = Vec::with_capacity(config.candidates_per_query);
        for ci in 0..config.candidates_per_query {
            let doc_id = format!("{query_id}_c{ci:03}");
            let is_relevant = ci < config.relevant_per_query;
            let cand_topic = if is_relevant {
                topic
            } else {
                // Any topic other than the query's.
                let mut t = rng.gen_range(0..topic_count - 1);
                if t >= topic {
                    t += 1;
                }
                t
            };
            let vector = vector_near(&mut rng, &anchors[cand_topic]);
            let mut score = cosine_slices(query_vector.as_slice(), vector.as_slice());
            if let Some(noise) = &noise {
                score += noise.sample(&mut rng);
            }
            if is_relevant {
                relevant.push((query_id.clone(), doc_id.clone()));
            }
            candidates.push(Candidate {
                doc_id,
                first_stage_score: score,
                vector,
            });
        }
        candidate_lists.push(CandidateList::new(query_id.clone(), candidates)?);
        queries.push(Query {
            query_id,
            user_id: user_id.clone(),
            vector: query_vector,
        });
    }

    Ok(UserData {
        profile,
        queries,
        candidate_lists,
        relevant,
    })
}

/// Generates a full dataset. Deterministic in the config seed.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;

    let mut anchor_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, 0));
    let anchors = topic_anchors(&mut anchor_rng, config.topics, config.dimension)?;

    let users: Vec<UserData> = (0..config.users)
        .into_par_iter()
        .map(|u| generate_user(config, &anchors, u))
        .collect::<Result<_>>()?;

    let mut dataset = Dataset::default();
    let mut doc_counts = Vec::with_capacity(users.len());
    for user in users {
        doc_counts.push(user.profile.len() as f64);
        dataset
            .profiles
            .insert(user.profile.user_id.clone(), user.profile);
        for list in user.candidate_lists {
            dataset.candidates.insert(list.query_id.clone(), list);
        }
        for (query_id, doc_id) in user.relevant {
            dataset.qrels.insert(&query_id, &doc_id, 1);
        }
        dataset.queries.extend(user.queries);
    }

    let n = doc_counts.len() as f64;
    let mean = doc_counts.iter().sum::<f64>() / n;
    let var = doc_counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    let stats = DatasetStats {
        users: config.users,
        queries: dataset.queries.len(),
        dimension: config.dimension,
        user_doc_mean: mean,
        user_doc_std: var.sqrt(),
    };

    Ok(SynthDataset { dataset, stats })
}

/// Splits queries into validation and test: each user's first query goes to
/// validation, the rest to test.
pub fn split_queries(queries: &[Query]) -> (Vec<Query>, Vec<Query>) {
    let mut seen_users = std::collections::HashSet::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for q in queries {
        if seen_users.insert(q.user_id.clone()) {
            validation.push(q.clone());
        } else {
            test.push(q.clone());
        }
    }
    (validation, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::cosine;

    fn small_config() -> SynthConfig {
        SynthConfig {
            dimension: 16,
            topics: 4,
            users: 12,
            queries_per_user: 3,
            user_docs_per_user: 10,
            on_topic_fraction: 0.5,
            candidates_per_query: 10,
            relevant_per_query: 2,
            noise_std: 0.2,
            seed: 99,
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        let mut c = small_config();
        c.topics = 20;
        assert!(generate(&c).is_err(), "more topics than dimensions");
        let mut c = small_config();
        c.relevant_per_query = 11;
        assert!(generate(&c).is_err());
        let mut c = small_config();
        c.on_topic_fraction = 1.5;
        assert!(generate(&c).is_err());
        let mut c = small_config();
        c.topics = 1;
        assert!(generate(&c).is_err());
    }

    #[test]
    fn every_query_has_a_relevant_candidate() {
        let out = generate(&small_config()).unwrap();
        for query in &out.dataset.queries {
            let list = &out.dataset.candidates[&query.query_id];
            let relevant = list
                .candidates()
                .iter()
                .filter(|c| out.dataset.qrels.relevance(&query.query_id, &c.doc_id) > 0)
                .count();
            assert!(relevant >= 1, "query {}", query.query_id);
            assert_eq!(list.len(), 10);
        }
        assert!(crate::types::validate_dataset(&out.dataset).is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config()).unwrap();
        let b = generate(&small_config()).unwrap();
        assert_eq!(a.stats, b.stats);
        for (qa, qb) in a.dataset.queries.iter().zip(&b.dataset.queries) {
            assert_eq!(qa.query_id, qb.query_id);
            assert_eq!(qa.vector.as_slice(), qb.vector.as_slice());
        }
        for (id, list_a) in &a.dataset.candidates {
            let list_b = &b.dataset.candidates[id];
            for (ca, cb) in list_a.candidates().iter().zip(list_b.candidates()) {
                assert_eq!(ca.doc_id, cb.doc_id);
                assert_eq!(ca.first_stage_score, cb.first_stage_score);
            }
        }
    }

    #[test]
    fn on_topic_extremes_shape_profiles() {
        // With rho = 1 and one query topic per user, every profile document
        // sits near the user's single query topic, so the profile documents
        // are mutually similar.
        let mut clean = small_config();
        clean.on_topic_fraction = 1.0;
        let out = generate(&clean).unwrap();
        let ds = &out.dataset;
        let q = &ds.queries[0];
        let profile = &ds.profiles[&q.user_id];
        for doc in &profile.documents {
            let c = cosine(&q.vector, &doc.vector).unwrap();
            assert!(c > 0.4, "rho=1 doc strays from the query topic: cos {c}");
        }

        // With rho = 0 every profile document avoids the user's query
        // topics; individual cosines still scatter with the jitter, so the
        // separation shows in the average.
        let mut noisy = small_config();
        noisy.on_topic_fraction = 0.0;
        let out = generate(&noisy).unwrap();
        let ds = &out.dataset;
        let mut total = 0.0;
        let mut count = 0usize;
        for query in &ds.queries {
            let profile = &ds.profiles[&query.user_id];
            for doc in &profile.documents {
                total += cosine(&query.vector, &doc.vector).unwrap();
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!(mean < 0.25, "rho=0 profiles should be off-topic: mean cos {mean}");
    }

    #[test]
    fn stats_track_configured_mean() {
        let mut config = web_like_preset();
        config.users = 400;
        config.queries_per_user = 1;
        config.candidates_per_query = 2;
        config.relevant_per_query = 1;
        let out = generate(&config).unwrap();
        let mean = out.stats.user_doc_mean;
        assert!(
            (mean - 137.0).abs() / 137.0 < 0.15,
            "mean user docs {mean} strays from configured 137"
        );
        // Exponential counts: standard deviation tracks the mean.
        assert!(out.stats.user_doc_std > 0.5 * mean);
    }

    #[test]
    fn presets_scale_down_for_desk_use() {
        let web = web_like_preset();
        assert_eq!(web.user_docs_per_user, 137);
        assert_eq!(web.desk_scaled().user_docs_per_user, 34);
        let academic = academic_like_preset();
        assert_eq!(academic.user_docs_per_user, 54);
        assert_eq!(academic.desk_scaled().user_docs_per_user, 13);
        assert!(web.query_topics_per_user() > academic.query_topics_per_user());
        assert!(web.on_topic_fraction < academic.on_topic_fraction);
    }

    #[test]
    fn split_sends_first_query_per_user_to_validation() {
        let out = generate(&small_config()).unwrap();
        let (val, test) = split_queries(&out.dataset.queries);
        assert_eq!(val.len(), 12);
        assert_eq!(test.len(), 24);
        for q in &val {
            assert!(q.query_id.ends_with("_q00"));
        }
    }

    #[test]
    fn clean_low_noise_regime_lets_mean_model_rank_ideally() {
        // Sanity anchor: rho = 1, one query topic per user, no first-stage
        // noise. The mean user model matches the query topic and ranking by
        // the personalized score alone puts the relevant candidates on top.
        let config = SynthConfig {
            dimension: 16,
            topics: 4,
            users: 10,
            queries_per_user: 2,
            user_docs_per_user: 12,
            on_topic_fraction: 1.0,
            candidates_per_query: 12,
            relevant_per_query: 2,
            noise_std: 0.0,
            seed: 5,
        };
        let out = generate(&config).unwrap();
        let ds = &out.dataset;
        let attn = crate::types::AttentionConfig::new(
            crate::types::Variant::Mean,
            crate::types::Alignment::Cosine,
        );
        let fusion = crate::rerank::FusionConfig {
            lambda: 1.0,
            normalize_first_stage: true,
        };
        let runs = crate::rerank::rerank_dataset(ds, &attn, &fusion).unwrap();
        let run: std::collections::BTreeMap<String, Vec<String>> = runs
            .into_iter()
            .map(|(qid, rows)| (qid, rows.into_iter().map(|r| r.doc_id).collect()))
            .collect();
        let report = crate::eval::evaluate_run(&run, &ds.qrels);
        assert!(
            report.map100 > 0.99,
            "mean model should be ideal here, map = {}",
            report.map100
        );
    }
}
