//! Flat key-value experiment configuration binding datasets, model settings,
//! fusion, training, and tuning grids.
//!
//! Format: one `key = value` per line, `#` comments, blank lines ignored.
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::eval::Metric;
use crate::rerank::FusionConfig;
use crate::train::{default_grid, TrainingConfig};
use crate::types::{Alignment, AttentionConfig, Dataset, Variant};
use crate::{Error, Result};

/// A parsed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Directory the config file lives in; resolves relative paths.
    pub base_dir: PathBuf,

    pub embeddings: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub validation_queries: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub params_file: Option<PathBuf>,

    pub variant: Variant,
    pub alignment: Alignment,
    pub sigma_t: Option<f64>,
    pub threshold_logit: Option<f64>,
    pub epsilon: f64,
    pub heads: usize,

    pub lambda: f64,
    pub normalize_first_stage: bool,

    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub user_docs_sampled: usize,
    pub weight_decay: f64,

    pub lambda_grid: Vec<f64>,
    pub sigma_t_grid: Vec<f64>,
    pub tune_metric: Metric,

    pub seed: u64,
    pub run_tag: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base_dir: PathBuf::from("."),
            embeddings: None,
            queries: None,
            validation_queries: None,
            profiles: None,
            run: None,
            qrels: None,
            output_dir: None,
            params_file: None,
            variant: Variant::Denoising,
            alignment: Alignment::ShiftedCosine,
            sigma_t: None,
            threshold_logit: None,
            epsilon: crate::types::DEFAULT_EPSILON,
            heads: 4,
            lambda: 0.5,
            normalize_first_stage: true,
            margin: 0.1,
            learning_rate: 5e-5,
            batch_size: 32,
            epochs: 20,
            user_docs_sampled: 20,
            weight_decay: 0.01,
            lambda_grid: default_grid(),
            sigma_t_grid: default_grid(),
            tune_metric: Metric::Map100,
            seed: 42,
            run_tag: String::new(),
        }
    }
}

fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_grid(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("invalid grid value '{s}'")))
        })
        .collect()
}

fn parse_bool(value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::InvalidConfig(format!("invalid boolean '{other}'"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_text(&text, path, base_dir)
    }

    pub fn from_text(text: &str, path: &Path, base_dir: PathBuf) -> Result<Self> {
        let pairs = parse_key_values(text, path)?;
        let mut config = Self {
            base_dir,
            ..Self::default()
        };
        let resolve = |base: &Path, value: &str| -> PathBuf {
            let p = PathBuf::from(value);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (key, value) in &pairs {
            match key.as_str() {
                "embeddings" => config.embeddings = Some(resolve(&config.base_dir, value)),
                "queries" => config.queries = Some(resolve(&config.base_dir, value)),
                "validation_queries" => {
                    config.validation_queries = Some(resolve(&config.base_dir, value))
                }
                "profiles" => config.profiles = Some(resolve(&config.base_dir, value)),
                "run" => config.run = Some(resolve(&config.base_dir, value)),
                "qrels" => config.qrels = Some(resolve(&config.base_dir, value)),
                "output_dir" => config.output_dir = Some(resolve(&config.base_dir, value)),
                "params_file" => config.params_file = Some(resolve(&config.base_dir, value)),
                "variant" => config.variant = Variant::parse(value)?,
                "alignment" => config.alignment = Alignment::parse(value)?,
                "sigma_t" => config.sigma_t = Some(parse_f64(key, value)?),
                "threshold_logit" => config.threshold_logit = Some(parse_f64(key, value)?),
                "epsilon" => config.epsilon = parse_f64(key, value)?,
                "heads" => config.heads = parse_usize(key, value)?,
                "lambda" => config.lambda = parse_f64(key, value)?,
                "normalize_first_stage" => config.normalize_first_stage = parse_bool(value)?,
                "margin" => config.margin = parse_f64(key, value)?,
                "learning_rate" => config.learning_rate = parse_f64(key, value)?,
                "batch_size" => config.batch_size = parse_usize(key, value)?,
                "epochs" => config.epochs = parse_usize(key, value)?,
                "user_docs_sampled" => config.user_docs_sampled = parse_usize(key, value)?,
                "weight_decay" => config.weight_decay = parse_f64(key, value)?,
                "lambda_grid" => config.lambda_grid = parse_grid(value)?,
                "sigma_t_grid" => config.sigma_t_grid = parse_grid(value)?,
                "tune_metric" => config.tune_metric = Metric::parse(value)?,
                "seed" => config.seed = parse_u64(key, value)?,
                "run_tag" => config.run_tag = value.clone(),
                other => {
                    return Err(Error::InvalidConfig(format!("unknown config key '{other}'")))
                }
            }
        }
        Ok(config)
    }

    /// Builds the attention configuration, loading a parameter checkpoint
    /// when one is referenced and applying any threshold override.
    pub fn attention_config(&self) -> Result<AttentionConfig> {
        let mut attn = match &self.params_file {
            Some(path) if path.exists() => crate::io::load_params(path)?.to_config()?,
            _ => AttentionConfig::new(self.variant, self.alignment),
        };
        attn.variant = self.variant;
        attn.alignment = self.alignment;
        attn.epsilon = self.epsilon;
        attn.heads = self.heads;
        if let Some(t) = self.threshold_logit {
            attn.threshold_logit = t;
        }
        if let Some(s) = self.sigma_t {
            attn.threshold_logit = crate::logit(s)?;
        }
        Ok(attn)
    }

    pub fn fusion_config(&self) -> Result<FusionConfig> {
        let fusion = FusionConfig {
            lambda: self.lambda,
            normalize_first_stage: self.normalize_first_stage,
        };
        fusion.validate()?;
        Ok(fusion)
    }

    pub fn training_config(&self) -> Result<TrainingConfig> {
        let config = TrainingConfig {
            margin: self.margin,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            user_docs_sampled: self.user_docs_sampled,
            weight_decay: self.weight_decay,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    fn require(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value
            .clone()
            .ok_or_else(|| Error::InvalidConfig(format!("config key '{field}' is required")))
    }

    /// Loads the dataset named by the config, using the main query file.
    pub fn load_dataset(&self) -> Result<(Dataset, Vec<String>)> {
        self.load_dataset_with_queries(&self.require("queries", &self.queries)?)
    }

    /// Loads the dataset with the validation query file in place of the main
    /// one (falls back to the main file when none is configured).
    pub fn load_validation_dataset(&self) -> Result<(Dataset, Vec<String>)> {
        let queries = match &self.validation_queries {
            Some(p) => p.clone(),
            None => self.require("queries", &self.queries)?,
        };
        self.load_dataset_with_queries(&queries)
    }

    fn load_dataset_with_queries(&self, queries: &Path) -> Result<(Dataset, Vec<String>)> {
        crate::io::load_dataset(
            &self.require("embeddings", &self.embeddings)?,
            queries,
            &self.require("profiles", &self.profiles)?,
            &self.require("run", &self.run)?,
            &self.require("qrels", &self.qrels)?,
        )
    }
}

/// Parses a generator config file: optional `preset = web_like|academic_like`
/// and `desk_scale = true`, then field-by-field overrides.
pub fn synth_config_from_text(text: &str, path: &Path) -> Result<crate::synth::SynthConfig> {
    let pairs = parse_key_values(text, path)?;
    let mut config = match pairs.get("preset").map(String::as_str) {
        None => crate::synth::web_like_preset(),
        Some("web_like") => crate::synth::web_like_preset(),
        Some("academic_like") => crate::synth::academic_like_preset(),
        Some(other) => {
            return Err(Error::InvalidConfig(format!("unknown preset '{other}'")))
        }
    };
    if let Some(v) = pairs.get("desk_scale") {
        if parse_bool(v)? {
            config = config.desk_scaled();
        }
    }
    for (key, value) in &pairs {
        match key.as_str() {
            "preset" | "desk_scale" => {}
            "dimension" => config.dimension = parse_usize(key, value)?,
            "topics" => config.topics = parse_usize(key, value)?,
            "users" => config.users = parse_usize(key, value)?,
            "queries_per_user" => config.queries_per_user = parse_usize(key, value)?,
            "user_docs_per_user" => config.user_docs_per_user = parse_usize(key, value)?,
            "on_topic_fraction" => config.on_topic_fraction = parse_f64(key, value)?,
            "candidates_per_query" => config.candidates_per_query = parse_usize(key, value)?,
            "relevant_per_query" => config.relevant_per_query = parse_usize(key, value)?,
            "noise_std" => config.noise_std = parse_f64(key, value)?,
            "seed" => config.seed = parse_u64(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown generator config key '{other}'"
                )))
            }
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn load_synth_config(path: &Path) -> Result<crate::synth::SynthConfig> {
    let text = std::fs::read_to_string(path)?;
    synth_config_from_text(&text, path)
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid number for '{key}': '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid integer for '{key}': '{value}'")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid integer for '{key}': '{value}'")))
}
