use faer::Mat;
use nalgebra::DMatrix;

use super::FactorError;

/// `A = U diag(s) Vᵀ` with `s` nonincreasing and `U`, `V` square orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, sj) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*sj);
        }
        us * self.v.transpose()
    }
}

/// Dense SVD of a square matrix with singular values in nonincreasing order.
pub fn svd_dense(a: &DMatrix<f64>) -> Result<SvdTriple, FactorError> {
    let (rows, cols) = a.shape();
    if rows != cols || rows == 0 {
        return Err(FactorError::NotSquare(rows, cols));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(FactorError::NonFinite);
    }
    let m = Mat::from_fn(rows, cols, |i, j| a[(i, j)]);
    let svd = m.svd().map_err(|_| FactorError::SvdNoConvergence)?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    Ok(SvdTriple {
        u: DMatrix::from_fn(rows, rows, |i, j| u[(i, j)]),
        s: (0..rows).map(|k| s[k]).collect(),
        v: DMatrix::from_fn(rows, rows, |i, j| v[(i, j)]),
    })
}
