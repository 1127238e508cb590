use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::RetrievalError;

/// Raw appearance descriptor of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDescriptor {
    pub t: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedDescriptor {
    pub t: usize,
    pub values: Vec<f64>,
}

/// Mean and orthonormal principal directions (rows of `basis`).
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `k × D`, rows ordered by non-increasing explained variance.
    pub basis: DMatrix<f64>,
    /// Fraction of total variance captured by each row.
    pub explained: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.nrows()
    }
}

/// Fits a `k`-dimensional PCA model.
///
/// Uses the `D × D` covariance when there are at least as many samples as
/// dimensions, otherwise the `N × N` Gram matrix. Rows are sign-normalized so
/// that their largest-magnitude entry is positive, which makes the model a
/// deterministic function of the data.
pub fn fit_pca(descriptors: &[RawDescriptor], k: usize) -> Result<PcaModel, RetrievalError> {
    let n = descriptors.len();
    if n < k + 1 {
        return Err(RetrievalError::TooFewSamples { need: k + 1, got: n });
    }
    let d = descriptors[0].values.len();
    if k > d {
        return Err(RetrievalError::DimensionTooLarge { k, d });
    }
    for desc in descriptors {
        if desc.values.len() != d {
            return Err(RetrievalError::DimensionMismatch {
                frame: desc.t,
                expected: d,
                got: desc.values.len(),
            });
        }
        if desc.values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(desc.t));
        }
    }

    let mut mean = DVector::<f64>::zeros(d);
    for desc in descriptors {
        for (m, v) in mean.iter_mut().zip(&desc.values) {
            *m += v;
        }
    }
    mean /= n as f64;
    // Centered data, one sample per row.
    let x = DMatrix::from_fn(n, d, |r, c| descriptors[r].values[c] - mean[c]);
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if total_variance <= 0.0 {
        return Err(RetrievalError::ZeroVariance);
    }

    let (values, mut basis) = if d <= n {
        let cov = x.transpose() * &x / n as f64;
        let eig = SymmetricEigen::new(cov);
        let order = descending(&eig.eigenvalues);
        let mut basis = DMatrix::zeros(k, d);
        let mut values = Vec::with_capacity(k);
        for (row, &idx) in order.iter().take(k).enumerate() {
            basis.set_row(row, &eig.eigenvectors.column(idx).transpose());
            values.push(eig.eigenvalues[idx].max(0.0));
        }
        (values, basis)
    } else {
        let gram = &x * x.transpose() / n as f64;
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let floor = eig.eigenvalues.amax() * 1e-12;
        let mut basis = DMatrix::zeros(k, d);
        let mut values = Vec::with_capacity(k);
        let mut filled = 0;
        for &idx in order.iter().take(k) {
            let lambda = eig.eigenvalues[idx];
            if lambda <= floor {
                break;
            }
            // Xᵀu / ‖Xᵀu‖ is the matching covariance eigenvector.
            let v = x.transpose() * eig.eigenvectors.column(idx);
            basis.set_row(filled, &(v.normalize()).transpose());
            values.push(lambda);
            filled += 1;
        }
        complete_orthonormal_rows(&mut basis, filled);
        values.resize(k, 0.0);
        (values, basis)
    };

    for mut row in basis.row_iter_mut() {
        let pivot = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            row.neg_mut();
        }
    }

    let explained = values.iter().map(|v| v / total_variance).collect();
    Ok(PcaModel {
        mean,
        basis,
        explained,
    })
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Fills rows `filled..` with unit vectors orthogonal to all earlier rows,
/// by Gram–Schmidt over the canonical basis.
fn complete_orthonormal_rows(basis: &mut DMatrix<f64>, mut filled: usize) {
    let d = basis.ncols();
    let mut axis = 0;
    while filled < basis.nrows() && axis < d {
        let mut v = DVector::<f64>::zeros(d);
        v[axis] = 1.0;
        axis += 1;
        for _ in 0..2 {
            for r in 0..filled {
                let row = basis.row(r).transpose();
                let proj = row.dot(&v);
                v -= row * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            basis.set_row(filled, &(v / norm).transpose());
            filled += 1;
        }
    }
}

/// Projects a descriptor: `basis · (d − mean)`.
pub fn compress(model: &PcaModel, d: &RawDescriptor) -> Result<CompressedDescriptor, RetrievalError> {
    if d.values.len() != model.input_dim() {
        return Err(RetrievalError::DimensionMismatch {
            frame: d.t,
            expected: model.input_dim(),
            got: d.values.len(),
        });
    }
    let centered = DVector::from_iterator(d.values.len(), d.values.iter().zip(model.mean.iter()).map(|(v, m)| v - m));
    let projected = &model.basis * centered;
    Ok(CompressedDescriptor {
        t: d.t,
        values: projected.iter().copied().collect(),
    })
}
