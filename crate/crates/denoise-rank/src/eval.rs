//! IR effectiveness metrics (AP@100, RR@10, NDCG@10), paired randomization
//! significance testing with Bonferroni correction, and robustness counting.
//!
//! Metrics treat unjudged documents as non-relevant and depend only on rank
//! order, never on score magnitudes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::types::Qrels;
use crate::{derive_seed, Error, Result};

/// Default cutoffs matching the reporting convention used throughout the
/// crate: average precision at 100, reciprocal rank and NDCG at 10.
pub const AP_CUTOFF: usize = 100;
pub const RR_CUTOFF: usize = 10;
pub const NDCG_CUTOFF: usize = 10;

/// Per-query metric values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMetrics {
    pub ap100: f64,
    pub rr10: f64,
    pub ndcg10: f64,
}

/// Per-query metrics plus arithmetic means over the evaluated queries.
///
/// Queries without any judged-relevant document are excluded from the means
/// and listed in `skipped`.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub map100: f64,
    pub mrr10: f64,
    pub mndcg10: f64,
    pub skipped: Vec<String>,
}

impl MetricReport {
    pub fn mean(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Map100 => self.map100,
            Metric::Mrr10 => self.mrr10,
            Metric::Ndcg10 => self.mndcg10,
        }
    }

    pub fn per_query_values(&self, metric: Metric) -> Vec<f64> {
        self.per_query
            .values()
            .map(|m| match metric {
                Metric::Map100 => m.ap100,
                Metric::Mrr10 => m.rr10,
                Metric::Ndcg10 => m.ndcg10,
            })
            .collect()
    }
}

/// Metric selector for tuning and significance testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Map100,
    Mrr10,
    Ndcg10,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Map100 => "map@100",
            Metric::Mrr10 => "mrr@10",
            Metric::Ndcg10 => "ndcg@10",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "map@100" | "map" => Ok(Metric::Map100),
            "mrr@10" | "mrr" => Ok(Metric::Mrr10),
            "ndcg@10" | "ndcg" => Ok(Metric::Ndcg10),
            other => Err(Error::InvalidConfig(format!("unknown metric '{other}'"))),
        }
    }
}

/// Average precision over the top `k`, with the total relevant count of the
/// query as denominator. `None` when the query has no judged-relevant
/// document.
pub fn average_precision_at(
    ranked_docs: &[String],
    query_id: &str,
    qrels: &Qrels,
    k: usize,
) -> Option<f64> {
    let total_relevant = qrels.relevant_count(query_id);
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc_id) in ranked_docs.iter().take(k).enumerate() {
        if qrels.relevance(query_id, doc_id) > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// Reciprocal rank of the first relevant document within the top `k`; 0 when
/// none appears. `None` when the query has no judged-relevant document.
pub fn reciprocal_rank_at(
    ranked_docs: &[String],
    query_id: &str,
    qrels: &Qrels,
    k: usize,
) -> Option<f64> {
    if qrels.relevant_count(query_id) == 0 {
        return None;
    }
    for (i, doc_id) in ranked_docs.iter().take(k).enumerate() {
        if qrels.relevance(query_id, doc_id) > 0 {
            return Some(1.0 / (i + 1) as f64);
        }
    }
    Some(0.0)
}

/// NDCG over the top `k` with linear gain and `1 / log2(rank + 1)` discount.
/// `None` when the query has no judged-relevant document.
pub fn ndcg_at(ranked_docs: &[String], query_id: &str, qrels: &Qrels, k: usize) -> Option<f64> {
    let mut gains = qrels.gains(query_id);
    if gains.is_empty() {
        return None;
    }
    let dcg: f64 = ranked_docs
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc_id)| {
            qrels.relevance(query_id, doc_id) as f64 / ((i + 2) as f64).log2()
        })
        .sum();
    gains.sort_unstable_by(|a, b| b.cmp(a));
    let ideal: f64 = gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| g as f64 / ((i + 2) as f64).log2())
        .sum();
    Some(dcg / ideal)
}

/// Evaluates a run (query id -> ranked doc ids) against judgments at the
/// standard cutoffs.
pub fn evaluate_run(run: &BTreeMap<String, Vec<String>>, qrels: &Qrels) -> MetricReport {
    let mut report = MetricReport::default();
    for (query_id, ranked) in run {
        match (
            average_precision_at(ranked, query_id, qrels, AP_CUTOFF),
            reciprocal_rank_at(ranked, query_id, qrels, RR_CUTOFF),
            ndcg_at(ranked, query_id, qrels, NDCG_CUTOFF),
        ) {
            (Some(ap100), Some(rr10), Some(ndcg10)) => {
                report
                    .per_query
                    .insert(query_id.clone(), QueryMetrics { ap100, rr10, ndcg10 });
            }
            _ => report.skipped.push(query_id.clone()),
        }
    }
    let n = report.per_query.len() as f64;
    if n > 0.0 {
        report.map100 = report.per_query.values().map(|m| m.ap100).sum::<f64>() / n;
        report.mrr10 = report.per_query.values().map(|m| m.rr10).sum::<f64>() / n;
        report.mndcg10 = report.per_query.values().map(|m| m.ndcg10).sum::<f64>() / n;
    }
    report
}

/// Outcome of a paired randomization test.
#[derive(Debug, Clone)]
pub struct SignificanceResult {
    /// Label of the metric the paired values came from (caller-supplied).
    pub metric: String,
    pub p_value: f64,
    pub corrected_alpha: f64,
    pub significant: bool,
    pub iterations: usize,
}

impl SignificanceResult {
    pub fn with_metric(mut self, name: &str) -> Self {
        self.metric = name.to_string();
        self
    }
}

const FISHER_SHARD: usize = 8192;

/// Two-sided paired Fisher randomization test.
///
/// Estimates the fraction of random sign flips of the per-query differences
/// whose absolute mean reaches the observed absolute mean difference. The
/// Bonferroni-corrected threshold is `alpha / comparisons`. Iterations are
/// sharded with per-shard derived seeds, so the estimate is reproducible
/// regardless of thread count.
pub fn fisher_randomization_test(
    per_query_a: &[f64],
    per_query_b: &[f64],
    iterations: usize,
    alpha: f64,
    comparisons: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if per_query_a.len() != per_query_b.len() {
        return Err(Error::LengthMismatch {
            left: per_query_a.len(),
            right: per_query_b.len(),
            context: "paired per-query metric arrays",
        });
    }
    if per_query_a.is_empty() {
        return Err(Error::EmptyInput("paired per-query metric arrays"));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be positive".into()));
    }
    if comparisons == 0 {
        return Err(Error::InvalidParameter("comparisons must be positive".into()));
    }

    let diffs: Vec<f64> = per_query_a
        .iter()
        .zip(per_query_b)
        .map(|(a, b)| a - b)
        .collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();

    let shards: Vec<(usize, usize)> = (0..iterations)
        .step_by(FISHER_SHARD)
        .enumerate()
        .map(|(shard_idx, start)| (shard_idx, (iterations - start).min(FISHER_SHARD)))
        .collect();

    let hits: usize = shards
        .par_iter()
        .map(|&(shard_idx, count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xf15e4, shard_idx as u64));
            let mut shard_hits = 0usize;
            for _ in 0..count {
                let mut sum = 0.0;
                for &d in &diffs {
                    if rng.gen::<bool>() {
                        sum += d;
                    } else {
                        sum -= d;
                    }
                }
                if (sum / n).abs() >= observed {
                    shard_hits += 1;
                }
            }
            shard_hits
        })
        .sum();

    let p_value = hits as f64 / iterations as f64;
    let corrected_alpha = alpha / comparisons as f64;
    Ok(SignificanceResult {
        metric: String::new(),
        p_value,
        corrected_alpha,
        significant: p_value < corrected_alpha,
        iterations,
    })
}

/// Counts the queries where the system scored strictly below the baseline;
/// returns the count and its ratio over all paired queries.
pub fn degradation_count(
    baseline_per_query: &[f64],
    system_per_query: &[f64],
) -> Result<(usize, f64)> {
    if baseline_per_query.len() != system_per_query.len() {
        return Err(Error::LengthMismatch {
            left: baseline_per_query.len(),
            right: system_per_query.len(),
            context: "paired per-query metric arrays",
        });
    }
    if baseline_per_query.is_empty() {
        return Ok((0, 0.0));
    }
    let count = baseline_per_query
        .iter()
        .zip(system_per_query)
        .filter(|(b, s)| s < b)
        .count();
    Ok((count, count as f64 / baseline_per_query.len() as f64))
}

/// Exhaustive sign-flip enumeration of the two-sided p-value; usable for
/// small `n` as an oracle for the sampled test.
pub fn fisher_exhaustive_p_value(per_query_a: &[f64], per_query_b: &[f64]) -> Result<f64> {
    if per_query_a.len() != per_query_b.len() {
        return Err(Error::LengthMismatch {
            left: per_query_a.len(),
            right: per_query_b.len(),
            context: "paired per-query metric arrays",
        });
    }
    let n = per_query_a.len();
    if n == 0 {
        return Err(Error::EmptyInput("paired per-query metric arrays"));
    }
    if n > 24 {
        return Err(Error::InvalidParameter(format!(
            "exhaustive enumeration limited to n <= 24, got {n}"
        )));
    }
    let diffs: Vec<f64> = per_query_a
        .iter()
        .zip(per_query_b)
        .map(|(a, b)| a - b)
        .collect();
    let observed = (diffs.iter().sum::<f64>() / n as f64).abs();
    let total = 1usize << n;
    let mut hits = 0usize;
    for mask in 0..total {
        let mut sum = 0.0;
        for (i, &d) in diffs.iter().enumerate() {
            if mask & (1 << i) != 0 {
                sum += d;
            } else {
                sum -= d;
            }
        }
        if (sum / n as f64).abs() >= observed {
            hits += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}
