use serde::{Deserialize, Serialize};

use super::hashing::BinaryCode;
use super::pca::CompressedDescriptor;
use super::{RetrievalConfig, RetrievalError};

/// One retrieved frame for a query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMatch {
    pub query: usize,
    pub matched: usize,
    pub distance: f64,
    /// Negated L2 distance; larger is more similar.
    pub score: f64,
}

/// Append-only store of codes and compressed descriptors.
///
/// Lookup is a linear scan with XOR/popcount, which is fast enough at a few
/// thousand frames.
#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    frames: Vec<usize>,
    codes: Vec<u64>,
    vectors: Vec<f64>,
    dim: usize,
}

impl RetrievalIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn insert(&mut self, code: &BinaryCode, desc: &CompressedDescriptor) -> Result<(), RetrievalError> {
        if desc.values.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                frame: desc.t,
                expected: self.dim,
                got: desc.values.len(),
            });
        }
        self.frames.push(desc.t);
        self.codes.push(code.bits);
        self.vectors.extend_from_slice(&desc.values);
        Ok(())
    }

    /// Top `n_r` indexed frames whose code is within `t_b` of the query code
    /// and whose index differs from the query by more than `delta_t`, sorted
    /// by ascending L2 distance with ties going to the smaller frame.
    pub fn query(
        &self,
        code: &BinaryCode,
        desc: &CompressedDescriptor,
        cfg: &RetrievalConfig,
    ) -> Result<Vec<RetrievalMatch>, RetrievalError> {
        if desc.values.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                frame: desc.t,
                expected: self.dim,
                got: desc.values.len(),
            });
        }
        let q = desc.t;
        let mut hits: Vec<(f64, usize)> = Vec::new();
        for (slot, (&frame, &bits)) in self.frames.iter().zip(&self.codes).enumerate() {
            if frame.abs_diff(q) <= cfg.delta_t {
                continue;
            }
            if (bits ^ code.bits).count_ones() > cfg.t_b {
                continue;
            }
            let v = &self.vectors[slot * self.dim..(slot + 1) * self.dim];
            let d2: f64 = v.iter().zip(&desc.values).map(|(a, b)| (a - b) * (a - b)).sum();
            hits.push((d2.sqrt(), frame));
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits.truncate(cfg.n_r);
        Ok(hits
            .into_iter()
            .map(|(distance, matched)| RetrievalMatch {
                query: q,
                matched,
                distance,
                score: -distance,
            })
            .collect())
    }
}
