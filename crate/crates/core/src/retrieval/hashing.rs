use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::pca::CompressedDescriptor;

/// `N_b` unit-norm hyperplanes through the origin of the compressed space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub seed: u64,
    pub hyperplanes: Vec<Vec<f64>>,
}

impl ProjectionModel {
    /// Draws `n_bits` isotropic directions in `dim` dimensions.
    pub fn random(dim: usize, n_bits: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyperplanes = (0..n_bits)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            })
            .collect();
        Self { seed, hyperplanes }
    }

    pub fn n_bits(&self) -> u32 {
        self.hyperplanes.len() as u32
    }

    pub fn dim(&self) -> usize {
        self.hyperplanes.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryCode {
    pub t: usize,
    /// Bit `b` is the sign test against hyperplane `b`; higher bits are zero.
    pub bits: u64,
    pub n_bits: u32,
}

/// Sign hash: bit `b` is set iff `hyperplane_b · values ≥ 0`.
pub fn encode_binary(projection: &ProjectionModel, c: &CompressedDescriptor) -> BinaryCode {
    let mut bits = 0u64;
    for (b, h) in projection.hyperplanes.iter().enumerate() {
        let dot: f64 = h.iter().zip(&c.values).map(|(a, v)| a * v).sum();
        if dot >= 0.0 {
            bits |= 1 << b;
        }
    }
    BinaryCode {
        t: c.t,
        bits,
        n_bits: projection.n_bits(),
    }
}

pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> u32 {
    debug_assert_eq!(a.n_bits, b.n_bits);
    (a.bits ^ b.bits).count_ones()
}
