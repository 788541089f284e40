//! Small dense linear-algebra helpers shared by the spectral and cost code.

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, Schur, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("eigensolver did not converge on a {0}x{0} matrix")]
    NoConvergence(usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenvalues of a general real matrix (balanced, then real Schur form),
/// sorted by decreasing real part with ties broken by imaginary part.
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>, EigenError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut balanced = m.clone();
    balance_parlett_reinsch(&mut balanced);
    let schur = Schur::try_new(balanced, f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(EigenError::NoConvergence(n))?;
    let mut ev: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|c| Complex64::new(c.re, c.im))
        .collect();
    sort_by_real_desc(&mut ev);
    Ok(ev)
}

pub fn sort_by_real_desc(ev: &mut [Complex64]) {
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// `A ⊗ I_m`.
pub fn kron_identity(a: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(r * m, c * m);
    for i in 0..r {
        for j in 0..c {
            let v = a[(i, j)];
            if v != 0.0 {
                for k in 0..m {
                    out[(i * m + k, j * m + k)] = v;
                }
            }
        }
    }
    out
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn sym_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Induced infinity norm: max absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
