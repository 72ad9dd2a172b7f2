//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};

const MAX_QR_SWEEPS: usize = 10_000;

/// Largest absolute entry of `m - mᵀ` measured in Frobenius norm.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// `true` when `‖M − Mᵀ‖_F ≤ rel_tol·‖M‖_F`.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= rel_tol * m.norm()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let Some(eig) = symmetric_eigen(m) else {
        return vec![f64::NAN; m.nrows()];
    };
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetric_eigenvalues(m)[0]
}

/// Largest real part over the spectrum of a square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    match eigenvalues(m) {
        Some(ev) => ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
        None => f64::NAN,
    }
}

/// Complex spectrum of a square matrix; `None` if the Schur iteration stalls.
pub fn eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Hamiltonian spectra occasionally stall the shifted QR sweep; the
    // transpose and a diagonal similarity have the same spectrum.
    let n = m.nrows();
    let scale = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7 + 3) % 5) as f64);
    let balanced = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * scale[i] / scale[j]);
    [m.clone(), m.transpose(), balanced]
        .into_iter()
        .find_map(|c| Schur::try_new(c, f64::EPSILON, MAX_QR_SWEEPS))
        .map(|schur| schur.complex_eigenvalues().iter().copied().collect())
}

/// SVD with a bounded iteration count.
pub fn svd(m: &DMatrix<f64>, left: bool, right: bool) -> Option<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(m.clone(), left, right, f64::EPSILON, MAX_QR_SWEEPS)
}

/// Symmetric eigendecomposition of the symmetric part of `m`.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Option<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, MAX_QR_SWEEPS)
}

/// Symmetric positive semidefinite factor `F` with `F·Fᵀ = M`.
///
/// Eigenvalues in `[-neg_tol, 0)` are clamped to zero. Anything below
/// `-neg_tol` is returned as `Err(min_eigenvalue)`.
pub fn psd_factor(m: &DMatrix<f64>, neg_tol: f64) -> Result<DMatrix<f64>, f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = symmetric_eigen(m).ok_or(f64::NAN)?;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -neg_tol {
        return Err(min);
    }
    let mut f = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

/// Solves the continuous Lyapunov equation `AᵀX + XA + Q = 0`.
///
/// Uses the Kronecker form `(I⊗Aᵀ + Aᵀ⊗I)·vec(X) = −vec(Q)`; intended for
/// the small state dimensions handled by this crate.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let x = op.lu().solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// Inverse of a symmetric positive definite matrix via Cholesky, falling
/// back to LU for merely nonsingular input.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    match m.clone().cholesky() {
        Some(ch) => Some(symmetrize(&ch.inverse())),
        None => m.clone().try_inverse(),
    }
}

/// Parses `"1,2;3,4"` style row-major matrix literals.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("bad matrix entry {v:?}: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) || ncols == 0 {
        return Err(format!("ragged or empty matrix literal {text:?}"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 2.0);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_residual_2x2() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = solve_lyapunov(&a, &q).unwrap();
        let r = a.transpose() * &x + &x * &a + &q;
        assert!(r.norm() < 1e-13);
    }

    #[test]
    fn psd_factor_clamps_rounding_noise() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let f = psd_factor(&m, 1e-10).unwrap();
        assert!((&f * f.transpose() - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-12);
        assert!(psd_factor(&DMatrix::from_element(1, 1, -1.0), 1e-10).is_err());
    }

    #[test]
    fn parse_matrix_literal() {
        let m = parse_matrix("0,1; 0,0").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(parse_matrix("1,2;3").is_err());
        assert!(parse_matrix("1,x").is_err());
    }
}
