//! File formats: JSONL embeddings, TREC run and qrels tables, TSV query and
//! profile listings, JSON parameter checkpoints, and TSV reports.
//!
//! All writers emit rows in sorted order so that a load/write cycle is
//! byte-stable. Loaders return recoverable oddities (duplicate judgments,
//! score/rank disagreements, empty files) as warning strings next to the
//! parsed value.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rerank::RankedResult;
use crate::synth::{DatasetStats, SynthDataset};
use crate::train::GridSearchResult;
use crate::types::{
    AdditiveParams, Alignment, AttentionConfig, Candidate, CandidateList, Dataset,
    EmbeddingVector, MultiHeadParams, Qrels, Query, UserProfile, Variant,
};
use crate::{Error, Result};

pub type EmbeddingMap = HashMap<String, EmbeddingVector>;

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Embeddings (JSONL)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f64>,
}

/// Loads newline-delimited `{"id": ..., "vector": [...]}` records. All
/// vectors must share one dimension; the error names both offending ids.
pub fn load_embeddings(path: &Path) -> Result<(EmbeddingMap, Vec<String>)> {
    let file = std::fs::File::open(path)?;
    let mut map = EmbeddingMap::new();
    let mut warnings = Vec::new();
    let mut reference: Option<(String, usize)> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| parse_error(path, idx + 1, format!("malformed record: {e}")))?;
        let vector = EmbeddingVector::new(record.vector)
            .map_err(|e| parse_error(path, idx + 1, e.to_string()))?;
        match &reference {
            None => reference = Some((record.id.clone(), vector.dim())),
            Some((ref_id, dim)) => {
                if vector.dim() != *dim {
                    return Err(parse_error(
                        path,
                        idx + 1,
                        format!(
                            "dimension mismatch: '{}' has {} but '{}' has {}",
                            record.id,
                            vector.dim(),
                            ref_id,
                            dim
                        ),
                    ));
                }
            }
        }
        if map.insert(record.id.clone(), vector).is_some() {
            warnings.push(format!("duplicate embedding id '{}' (last wins)", record.id));
        }
    }
    if map.is_empty() {
        warnings.push(format!("{}: no embedding records", path.display()));
    }
    Ok((map, warnings))
}

pub fn write_embeddings(path: &Path, embeddings: &EmbeddingMap) -> Result<()> {
    let mut ids: Vec<&String> = embeddings.keys().collect();
    ids.sort();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for id in ids {
        let record = EmbeddingRecord {
            id: id.clone(),
            vector: embeddings[id].as_slice().to_vec(),
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Run files (TREC)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

/// A ranked-result table: per query, entries in rank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub entries: BTreeMap<String, Vec<RunEntry>>,
    pub tag: String,
}

impl Run {
    /// Ranked document ids per query, for metric computation.
    pub fn ranked_ids(&self) -> BTreeMap<String, Vec<String>> {
        self.entries
            .iter()
            .map(|(q, rows)| (q.clone(), rows.iter().map(|r| r.doc_id.clone()).collect()))
            .collect()
    }
}

/// Parses a six-column `query_id Q0 doc_id rank score run_tag` table. Ranks
/// must be 1-based and contiguous per query; when scores disagree with ranks
/// a warning is emitted and rank wins.
pub fn load_run(path: &Path) -> Result<(Run, Vec<String>)> {
    let file = std::fs::File::open(path)?;
    let mut warnings = Vec::new();
    let mut tag = String::new();
    let mut grouped: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(parse_error(
                path,
                idx + 1,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| parse_error(path, idx + 1, format!("invalid rank '{}'", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| parse_error(path, idx + 1, format!("invalid score '{}'", cols[4])))?;
        if tag.is_empty() {
            tag = cols[5].to_string();
        }
        grouped.entry(cols[0].to_string()).or_default().push(RunEntry {
            doc_id: cols[2].to_string(),
            rank,
            score,
        });
    }
    for (query_id, rows) in &mut grouped {
        rows.sort_by_key(|r| r.rank);
        for (i, row) in rows.iter().enumerate() {
            if row.rank != i + 1 {
                return Err(parse_error(
                    path,
                    0,
                    format!(
                        "query '{query_id}': ranks must be contiguous from 1, found {} at position {}",
                        row.rank,
                        i + 1
                    ),
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for row in rows.iter() {
            if !seen.insert(row.doc_id.as_str()) {
                return Err(parse_error(
                    path,
                    0,
                    format!("query '{query_id}': duplicate document '{}'", row.doc_id),
                ));
            }
        }
        if rows.windows(2).any(|w| w[1].score > w[0].score) {
            warnings.push(format!(
                "query '{query_id}': scores increase along ranks; rank order wins"
            ));
        }
    }
    Ok((Run { entries: grouped, tag }, warnings))
}

pub fn write_run(path: &Path, run: &Run) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let tag = if run.tag.is_empty() { "run" } else { &run.tag };
    for (query_id, rows) in &run.entries {
        for row in rows {
            writeln!(
                out,
                "{} Q0 {} {} {} {}",
                query_id, row.doc_id, row.rank, row.score, tag
            )?;
        }
    }
    Ok(())
}

/// Builds a run table from re-ranked results.
pub fn run_from_results(results: &[(String, Vec<RankedResult>)], tag: &str) -> Run {
    let mut entries = BTreeMap::new();
    for (query_id, rows) in results {
        entries.insert(
            query_id.clone(),
            rows.iter()
                .map(|r| RunEntry {
                    doc_id: r.doc_id.clone(),
                    rank: r.rank,
                    score: r.final_score,
                })
                .collect(),
        );
    }
    Run {
        entries,
        tag: tag.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Qrels
// ---------------------------------------------------------------------------

/// Parses a four-column `query_id 0 doc_id relevance` table. Duplicate
/// `(query, doc)` pairs keep the last value with a warning.
pub fn load_qrels(path: &Path) -> Result<(Qrels, Vec<String>)> {
    let file = std::fs::File::open(path)?;
    let mut qrels = Qrels::new();
    let mut warnings = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(parse_error(
                path,
                idx + 1,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let relevance: u32 = cols[3].parse().map_err(|_| {
            parse_error(path, idx + 1, format!("invalid relevance '{}'", cols[3]))
        })?;
        if qrels.insert(cols[0], cols[2], relevance) {
            warnings.push(format!(
                "duplicate judgment for ('{}', '{}'); last value wins",
                cols[0], cols[2]
            ));
        }
    }
    Ok((qrels, warnings))
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (query_id, doc_id, relevance) in qrels.iter() {
        writeln!(out, "{query_id} 0 {doc_id} {relevance}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Queries and profiles (TSV), resolved against an embedding map
// ---------------------------------------------------------------------------

/// Parses `query_id <TAB> user_id` rows and attaches vectors by query id.
pub fn load_queries(path: &Path, embeddings: &EmbeddingMap) -> Result<Vec<Query>> {
    let file = std::fs::File::open(path)?;
    let mut queries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(parse_error(
                path,
                idx + 1,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let vector = embeddings.get(cols[0]).ok_or_else(|| {
            parse_error(path, idx + 1, format!("no embedding for query '{}'", cols[0]))
        })?;
        queries.push(Query {
            query_id: cols[0].to_string(),
            user_id: cols[1].to_string(),
            vector: vector.clone(),
        });
    }
    Ok(queries)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for q in queries {
        writeln!(out, "{}\t{}", q.query_id, q.user_id)?;
    }
    Ok(())
}

/// Parses `user_id <TAB> doc_id` rows into profiles, attaching vectors by
/// document id.
pub fn load_profiles(
    path: &Path,
    embeddings: &EmbeddingMap,
) -> Result<HashMap<String, UserProfile>> {
    let file = std::fs::File::open(path)?;
    let mut grouped: BTreeMap<String, Vec<crate::types::ProfileDoc>> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(parse_error(
                path,
                idx + 1,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let vector = embeddings.get(cols[1]).ok_or_else(|| {
            parse_error(
                path,
                idx + 1,
                format!("no embedding for profile document '{}'", cols[1]),
            )
        })?;
        grouped
            .entry(cols[0].to_string())
            .or_default()
            .push(crate::types::ProfileDoc {
                doc_id: cols[1].to_string(),
                vector: vector.clone(),
            });
    }
    grouped
        .into_iter()
        .map(|(user_id, docs)| {
            UserProfile::new(user_id.clone(), docs).map(|p| (user_id, p))
        })
        .collect()
}

pub fn write_profiles(path: &Path, profiles: &HashMap<String, UserProfile>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut user_ids: Vec<&String> = profiles.keys().collect();
    user_ids.sort();
    for user_id in user_ids {
        for doc in &profiles[user_id].documents {
            writeln!(out, "{}\t{}", user_id, doc.doc_id)?;
        }
    }
    Ok(())
}

/// Converts a run table into candidate lists by attaching vectors.
pub fn candidates_from_run(run: &Run, embeddings: &EmbeddingMap) -> Result<HashMap<String, CandidateList>> {
    run.entries
        .iter()
        .map(|(query_id, rows)| {
            let candidates: Vec<Candidate> = rows
                .iter()
                .map(|r| {
                    let vector = embeddings.get(&r.doc_id).ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "no embedding for run document '{}'",
                            r.doc_id
                        ))
                    })?;
                    Ok(Candidate {
                        doc_id: r.doc_id.clone(),
                        first_stage_score: r.score,
                        vector: vector.clone(),
                    })
                })
                .collect::<Result<_>>()?;
            Ok((
                query_id.clone(),
                CandidateList::new(query_id.clone(), candidates)?,
            ))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Parameter checkpoints
// ---------------------------------------------------------------------------

/// Serialized model parameters plus an optional training loss trace.
///
/// The filter threshold is stored as `sigma_t` (always finite in `[0, 1]`)
/// with the raw logit alongside when it is finite, so infinite grid-endpoint
/// logits survive a round trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    pub variant: Variant,
    pub alignment: Alignment,
    pub sigma_t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_logit: Option<f64>,
    pub epsilon: f64,
    pub heads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub additive: Option<AdditiveParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multihead: Option<MultiHeadParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
}

impl ParamsFile {
    pub fn from_config(config: &AttentionConfig, loss_trace: Option<Vec<f64>>) -> Self {
        Self {
            variant: config.variant,
            alignment: config.alignment,
            sigma_t: config.threshold(),
            threshold_logit: config.threshold_logit.is_finite().then_some(config.threshold_logit),
            epsilon: config.epsilon,
            heads: config.heads,
            additive: config.additive_params.clone(),
            multihead: config.multihead_params.clone(),
            loss_trace,
        }
    }

    pub fn to_config(&self) -> Result<AttentionConfig> {
        let threshold_logit = match self.threshold_logit {
            Some(t) => t,
            None => crate::logit(self.sigma_t)?,
        };
        Ok(AttentionConfig {
            variant: self.variant,
            alignment: self.alignment,
            threshold_logit,
            epsilon: self.epsilon,
            heads: self.heads,
            additive_params: self.additive.clone(),
            multihead_params: self.multihead.clone(),
        })
    }
}

pub fn save_params(path: &Path, params: &ParamsFile) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(params)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamsFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Dataset bundles
// ---------------------------------------------------------------------------

/// File names used by dataset directories written with [`write_dataset`].
pub mod dataset_files {
    pub const EMBEDDINGS: &str = "embeddings.jsonl";
    pub const QUERIES: &str = "queries.tsv";
    pub const QUERIES_VAL: &str = "queries_val.tsv";
    pub const QUERIES_TEST: &str = "queries_test.tsv";
    pub const PROFILES: &str = "profiles.tsv";
    pub const FIRST_STAGE_RUN: &str = "first_stage.run";
    pub const QRELS: &str = "qrels.txt";
    pub const STATS: &str = "stats.tsv";
}

/// Writes a generated dataset as the standard file bundle, splitting queries
/// into validation (each user's first) and test files.
pub fn write_dataset(dir: &Path, synth: &SynthDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dataset = &synth.dataset;

    let mut embeddings = EmbeddingMap::new();
    for q in &dataset.queries {
        embeddings.insert(q.query_id.clone(), q.vector.clone());
    }
    for profile in dataset.profiles.values() {
        for doc in &profile.documents {
            embeddings.insert(doc.doc_id.clone(), doc.vector.clone());
        }
    }
    for list in dataset.candidates.values() {
        for c in list.candidates() {
            embeddings.insert(c.doc_id.clone(), c.vector.clone());
        }
    }
    write_embeddings(&dir.join(dataset_files::EMBEDDINGS), &embeddings)?;

    write_queries(&dir.join(dataset_files::QUERIES), &dataset.queries)?;
    let (val, test) = crate::synth::split_queries(&dataset.queries);
    write_queries(&dir.join(dataset_files::QUERIES_VAL), &val)?;
    write_queries(&dir.join(dataset_files::QUERIES_TEST), &test)?;
    write_profiles(&dir.join(dataset_files::PROFILES), &dataset.profiles)?;

    let mut entries = BTreeMap::new();
    for (query_id, list) in &dataset.candidates {
        entries.insert(
            query_id.clone(),
            list.candidates()
                .iter()
                .enumerate()
                .map(|(i, c)| RunEntry {
                    doc_id: c.doc_id.clone(),
                    rank: i + 1,
                    score: c.first_stage_score,
                })
                .collect(),
        );
    }
    let run = Run {
        entries,
        tag: "first_stage".to_string(),
    };
    write_run(&dir.join(dataset_files::FIRST_STAGE_RUN), &run)?;
    write_qrels(&dir.join(dataset_files::QRELS), &dataset.qrels)?;
    write_stats(&dir.join(dataset_files::STATS), &synth.stats)?;
    Ok(())
}

pub fn write_stats(path: &Path, stats: &DatasetStats) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "users\t{}", stats.users).unwrap();
    writeln!(out, "queries\t{}", stats.queries).unwrap();
    writeln!(out, "dimension\t{}", stats.dimension).unwrap();
    writeln!(out, "user_doc_mean\t{:.4}", stats.user_doc_mean).unwrap();
    writeln!(out, "user_doc_std\t{:.4}", stats.user_doc_std).unwrap();
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads a dataset from its component files.
pub fn load_dataset(
    embeddings_path: &Path,
    queries_path: &Path,
    profiles_path: &Path,
    run_path: &Path,
    qrels_path: &Path,
) -> Result<(Dataset, Vec<String>)> {
    let (embeddings, mut warnings) = load_embeddings(embeddings_path)?;
    let queries = load_queries(queries_path, &embeddings)?;
    let profiles = load_profiles(profiles_path, &embeddings)?;
    let (run, run_warnings) = load_run(run_path)?;
    warnings.extend(run_warnings);
    let candidates = candidates_from_run(&run, &embeddings)?;
    let (qrels, qrels_warnings) = load_qrels(qrels_path)?;
    warnings.extend(qrels_warnings);
    Ok((
        Dataset {
            profiles,
            queries,
            candidates,
            qrels,
        },
        warnings,
    ))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Writes a grid-search table as TSV (`lambda`, `sigma_t`, `score`).
pub fn write_grid_table(path: &Path, result: &GridSearchResult, metric_name: &str) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "lambda\tsigma_t\t{metric_name}").unwrap();
    for point in &result.table {
        match point.threshold {
            Some(t) => writeln!(out, "{:.2}\t{:.2}\t{:.6}", point.lambda, t, point.score).unwrap(),
            None => writeln!(out, "{:.2}\t-\t{:.6}", point.lambda, point.score).unwrap(),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
