//! Two-stage place recognition.
//!
//! Raw descriptors are compressed by PCA, hashed to short binary codes with
//! seeded random hyperplanes, and matched in two passes: a Hamming-distance
//! prefilter over the codes followed by an L2 re-rank of the compressed
//! vectors. Frames too close in time to the query are never candidates.

mod hashing;
mod index;
mod model_file;
mod pca;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hashing::{encode_binary, hamming, BinaryCode, ProjectionModel};
pub use index::{RetrievalIndex, RetrievalMatch};
pub use model_file::{read_models, write_models};
pub use pca::{compress, fit_pca, CompressedDescriptor, PcaModel, RawDescriptor};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("need at least {need} descriptors to fit PCA, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("output dimension {k} exceeds input dimension {d}")]
    DimensionTooLarge { k: usize, d: usize },
    #[error("descriptor for frame {frame} has dimension {got}, expected {expected}")]
    DimensionMismatch { frame: usize, expected: usize, got: usize },
    #[error("descriptors have zero variance")]
    ZeroVariance,
    #[error("descriptor for frame {0} has a non-finite entry")]
    NonFinite(usize),
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Matches kept per query.
    pub n_r: usize,
    /// Largest Hamming distance that passes the prefilter.
    pub t_b: u32,
    /// Frames with `|t − t'| ≤ delta_t` are never matched.
    pub delta_t: usize,
    /// Binary code length in bits.
    pub n_b: u32,
    /// PCA output dimension.
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_r: 10,
            t_b: 3,
            delta_t: 200,
            n_b: 20,
            k: 128,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: &str| Err(RetrievalError::InvalidConfig(m.to_string()));
        if self.n_r == 0 || self.t_b == 0 || self.delta_t == 0 || self.n_b == 0 || self.k == 0 {
            return bad("all parameters must be positive");
        }
        if self.t_b > self.n_b {
            return bad("t_b must not exceed n_b");
        }
        if self.n_b > 64 {
            return bad("n_b is limited to 64 bits");
        }
        Ok(())
    }
}
