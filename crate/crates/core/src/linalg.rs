//! Small dense linear-algebra helpers shared by the filters and the solver.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// `(M + Mᵀ) / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrized(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrized(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve `X · S = rhs` for `X` where `S` is symmetric positive definite.
pub fn solve_right_spd(rhs: &DMatrix<f64>, s: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(symmetrized(s))
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    // X S = R  <=>  S X^T = R^T
    Ok(chol.solve(&rhs.transpose()).transpose())
}

pub fn spd_inverse(s: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::new(symmetrized(s))
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// `vᵀ S⁻¹ v` for symmetric positive definite `S`.
pub fn mahalanobis_sq(v: &DVector<f64>, s: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = Cholesky::new(symmetrized(s))
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    Ok(v.dot(&chol.solve(v)))
}

/// Lower factor `L` with `L Lᵀ = P` for a positive semi-definite `P`.
///
/// Cholesky is tried first; singular or slightly indefinite inputs fall back
/// to a spectral factor with negative eigenvalues clipped to zero.
pub fn psd_factor(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrized(p);
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c.l());
    }
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-9 * scale) {
        return Err(Error::Numerical(format!(
            "matrix is indefinite (min eigenvalue {:.3e})",
            eig.eigenvalues.min()
        )));
    }
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt_diag)
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Builds a matrix from row-major nested vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
