//! Query-aware user modeling and personalized results re-ranking.
//!
//! The crate builds user models from profile documents with a family of
//! attention variants (mean pooling, softmax attention over several alignment
//! functions, zero attention, multi-head attention, and denoising attention
//! with threshold filtering), fuses personalized scores with first-stage
//! retrieval scores, and evaluates the resulting rankings with standard IR
//! metrics and paired randomization tests.
//!
//! Embeddings are inputs: the crate never computes text representations.
//! A synthetic topic-cluster generator ([`synth`]) produces desk-scale
//! datasets with controllable profile noise so the whole pipeline can be
//! exercised end to end.
//!
//! All randomness flows from a single `u64` seed through
//! [`derive_seed`], so every pipeline stage is reproducible bit for bit.

pub mod alignment;
pub mod attention;
pub mod config;
pub mod eval;
pub mod io;
pub mod rerank;
pub mod synth;
pub mod train;
pub mod types;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Environment variable capping worker-thread parallelism (`0` = auto).
pub const THREADS_ENV_VAR: &str = "DENOISE_RANK_THREADS";

/// Reads the thread cap from [`THREADS_ENV_VAR`]. `None` means "auto".
pub fn thread_limit() -> Option<usize> {
    match std::env::var(THREADS_ENV_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => None,
            Ok(n) => Some(n),
        },
        Err(_) => None,
    }
}

/// Installs a global rayon pool honoring [`THREADS_ENV_VAR`].
///
/// Silently keeps the existing pool if one was already installed.
pub fn init_thread_pool() {
    if let Some(n) = thread_limit() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Derives a child seed from a master seed and a stream/index pair.
///
/// SplitMix64 finalizer over the mixed inputs. Child generators seeded this
/// way are independent of iteration order, which lets per-user and per-shard
/// work run in parallel without changing results.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Logistic sigmoid, the squashing function for the filter threshold.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; maps 0 and 1 to the infinite logits.
pub fn logit(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "logit argument must lie in [0, 1], got {p}"
        )));
    }
    if p == 0.0 {
        Ok(f64::NEG_INFINITY)
    } else if p == 1.0 {
        Ok(f64::INFINITY)
    } else {
        Ok((p / (1.0 - p)).ln())
    }
}
