//! Thin wrapper over the dense symmetric eigensolver.

use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Eigenvalues ascending, eigenvectors as the columns of `vectors`.
pub struct DenseEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

pub fn symmetric_eigen(m: &Mat<f64>) -> Result<DenseEigen> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("dense eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values: Vec<f64> = (0..m.nrows()).map(|i| s[i]).collect();
    let vectors = evd.U().to_owned();
    if values.windows(2).all(|w| w[0] <= w[1]) {
        return Ok(DenseEigen { values, vectors });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted = order.iter().map(|&k| values[k]).collect();
    let vectors = Mat::from_fn(m.nrows(), m.ncols(), |i, j| vectors[(i, order[j])]);
    Ok(DenseEigen { values: sorted, vectors })
}

pub fn symmetric_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    let mut v = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("dense eigensolver failed: {e:?}")))?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}
