//! Structured solves for chain-plus-loops normal equations.
//!
//! The odometry chain contributes a symmetric block-tridiagonal matrix with
//! 3×3 blocks. Loop edges are translation-only, so each one adds a rank-2
//! term `u uᵀ` that touches two blocks. The full system
//! `(A + U Uᵀ) x = b` is solved with the Woodbury identity on top of a block
//! Thomas factorization of `A`, giving `O(n·m)` work for `n` blocks and `m`
//! low-rank columns instead of factoring the filled-in matrix.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Symmetric block-tridiagonal matrix. `upper[b]` couples block `b` with `b + 1`.
#[derive(Debug, Clone)]
pub(crate) struct BlockTridiagonal {
    pub diag: Vec<Matrix3<f64>>,
    pub upper: Vec<Matrix3<f64>>,
}

impl BlockTridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![Matrix3::zeros(); n],
            upper: vec![Matrix3::zeros(); n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    /// Factors `self + damping·I`. Returns `None` when a pivot block is not
    /// positive definite.
    pub fn factor(&self, damping: f64) -> Option<BlockFactor> {
        let n = self.len();
        let mut pivot_inv = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n.saturating_sub(1));
        for b in 0..n {
            let mut d = self.diag[b] + Matrix3::identity() * damping;
            if b > 0 {
                let l: &Matrix3<f64> = &lower[b - 1];
                d -= l * self.upper[b - 1];
            }
            // Symmetrize against round-off before the definiteness test.
            d = (d + d.transpose()) * 0.5;
            let chol = d.cholesky()?;
            let inv = chol.inverse();
            if b + 1 < n {
                lower.push(self.upper[b].transpose() * inv);
            }
            pivot_inv.push(inv);
        }
        Some(BlockFactor {
            pivot_inv,
            lower,
            upper: self.upper.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockFactor {
    pivot_inv: Vec<Matrix3<f64>>,
    lower: Vec<Matrix3<f64>>,
    upper: Vec<Matrix3<f64>>,
}

impl BlockFactor {
    /// Solves in place. Leading zero blocks of the right-hand side are skipped.
    pub fn solve_in_place(&self, rhs: &mut [Vector3<f64>]) {
        let n = self.pivot_inv.len();
        if n == 0 {
            return;
        }
        let first = rhs.iter().position(|v| v != &Vector3::zeros()).unwrap_or(n);
        for b in first.max(1)..n {
            let prev = rhs[b - 1];
            rhs[b] -= self.lower[b - 1] * prev;
        }
        rhs[n - 1] = self.pivot_inv[n - 1] * rhs[n - 1];
        for b in (0..n - 1).rev() {
            let next = rhs[b + 1];
            rhs[b] = self.pivot_inv[b] * (rhs[b] - self.upper[b] * next);
        }
    }
}

/// One low-rank column: `scale` at (`plus` block, `component`) and `-scale`
/// at (`minus` block, `component`). Absent blocks belong to the fixed anchor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LowRankColumn {
    pub plus: Option<usize>,
    pub minus: Option<usize>,
    pub component: usize,
    pub scale: f64,
}

impl LowRankColumn {
    fn dot(&self, v: &[Vector3<f64>]) -> f64 {
        let mut s = 0.0;
        if let Some(p) = self.plus {
            s += v[p][self.component];
        }
        if let Some(m) = self.minus {
            s -= v[m][self.component];
        }
        s * self.scale
    }

    fn dense(&self, n: usize) -> Vec<Vector3<f64>> {
        let mut v = vec![Vector3::zeros(); n];
        if let Some(p) = self.plus {
            v[p][self.component] += self.scale;
        }
        if let Some(m) = self.minus {
            v[m][self.component] -= self.scale;
        }
        v
    }
}

/// Solves `(A + damping·I + U Uᵀ) x = rhs`. `None` if the damped system is
/// not positive definite.
pub(crate) fn solve_low_rank_update(
    a: &BlockTridiagonal,
    damping: f64,
    columns: &[LowRankColumn],
    rhs: &[Vector3<f64>],
) -> Option<Vec<Vector3<f64>>> {
    let n = a.len();
    let factor = a.factor(damping)?;
    let mut y = rhs.to_vec();
    factor.solve_in_place(&mut y);
    if columns.is_empty() {
        return Some(y);
    }

    let m = columns.len();
    let z: Vec<Vec<Vector3<f64>>> = columns
        .iter()
        .map(|c| {
            let mut v = c.dense(n);
            factor.solve_in_place(&mut v);
            v
        })
        .collect();

    let mut cap = DMatrix::<f64>::identity(m, m);
    for (r, col) in columns.iter().enumerate() {
        for (c, zc) in z.iter().enumerate().skip(r) {
            let v = col.dot(zc);
            cap[(r, c)] += v;
            if c != r {
                cap[(c, r)] += v;
            }
        }
    }
    let uty = DVector::from_iterator(m, columns.iter().map(|c| c.dot(&y)));
    let w = cap.cholesky()?.solve(&uty);
    for (zc, wk) in z.iter().zip(w.iter()) {
        for (yb, zb) in y.iter_mut().zip(zc.iter()) {
            *yb -= zb * *wk;
        }
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dense_of(a: &BlockTridiagonal, damping: f64, cols: &[LowRankColumn]) -> DMatrix<f64> {
        let n = a.len();
        let mut m = DMatrix::<f64>::zeros(3 * n, 3 * n);
        for b in 0..n {
            for r in 0..3 {
                for c in 0..3 {
                    m[(3 * b + r, 3 * b + c)] = a.diag[b][(r, c)];
                    if b + 1 < n {
                        m[(3 * b + r, 3 * (b + 1) + c)] = a.upper[b][(r, c)];
                        m[(3 * (b + 1) + c, 3 * b + r)] = a.upper[b][(r, c)];
                    }
                }
            }
            for r in 0..3 {
                m[(3 * b + r, 3 * b + r)] += damping;
            }
        }
        for col in cols {
            let v = col.dense(n);
            let flat = DVector::from_iterator(3 * n, v.iter().flat_map(|x| x.iter().copied()));
            m += &flat * flat.transpose();
        }
        m
    }

    #[test]
    fn woodbury_matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = 2 + trial % 9;
            let mut a = BlockTridiagonal::zeros(n);
            // Diagonally dominant symmetric blocks.
            for b in 0..n {
                let mut d = Matrix3::from_fn(|_, _| rng.random_range(-0.5..0.5));
                d = d + d.transpose() + Matrix3::identity() * 6.0;
                a.diag[b] = d;
            }
            for u in a.upper.iter_mut() {
                *u = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            }
            let cols: Vec<LowRankColumn> = (0..rng.random_range(0..5))
                .map(|_| LowRankColumn {
                    plus: Some(rng.random_range(0..n)),
                    minus: if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..n)) },
                    component: rng.random_range(0..2),
                    scale: rng.random_range(0.5..2.0),
                })
                .collect();
            let rhs: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
                .collect();
            let x = solve_low_rank_update(&a, 1e-3, &cols, &rhs).unwrap();
            let dense = dense_of(&a, 1e-3, &cols);
            let b = DVector::from_iterator(3 * n, rhs.iter().flat_map(|v| v.iter().copied()));
            let expected = dense.lu().solve(&b).unwrap();
            for (i, v) in x.iter().flat_map(|v| v.iter()).enumerate() {
                assert!((v - expected[i]).abs() < 1e-9, "trial {trial}");
            }
        }
    }

    #[test]
    fn indefinite_system_is_reported() {
        let mut a = BlockTridiagonal::zeros(2);
        a.diag[0] = -Matrix3::identity();
        a.diag[1] = Matrix3::identity();
        assert!(a.factor(0.0).is_none());
        assert!(a.factor(2.0).is_some());
    }
}
