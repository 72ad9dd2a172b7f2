//! Continuous algebraic Riccati equations.
//!
//! Standard form (CARE):
//!
//! ```text
//! AᵀP + PA − P·B·R⁻¹·Bᵀ·P + Q = 0
//! ```
//!
//! Generalized form, as produced by the robust synthesis:
//!
//! ```text
//! P·Acl + Aclᵀ·P + Λ₂ + P·Λ₃·P = 0
//! ```
//!
//! `P` is always symmetric here, so the `P·Λ₃·Pᵀ` variant of the quadratic
//! term is the same thing.
//!
//! The solver forms the 2n×2n Hamiltonian, extracts its stable invariant
//! subspace from the spectrum, then polishes the result with Newton
//! (Kleinman) steps until the residual certificate is met.

use nalgebra::{Complex, DMatrix, SVD};
use thiserror::Error;

use crate::linalg::{
    asymmetry, eigenvalues, is_symmetric, min_symmetric_eigenvalue, psd_factor, solve_lyapunov,
    spectral_abscissa, spd_inverse, symmetrize,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{which} is not symmetric (asymmetry {asymmetry:.3e})")]
    NonSymmetricInput { which: &'static str, asymmetry: f64 },
    #[error("R is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("-Λ₃ is indefinite (min eigenvalue {min_eigenvalue:.3e})")]
    IndefiniteLam3 { min_eigenvalue: f64 },
    #[error("no stabilizing solution: {0}")]
    NoStabilizingSolution(String),
    #[error("residual {residual:.3e} exceeds tolerance {tolerance:.3e} after refinement")]
    IllConditioned { residual: f64, tolerance: f64 },
}

/// Solver tolerances. Defaults follow the documented contract; all are
/// overridable per call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiTolerances {
    /// Relative symmetry tolerance on Q, R, Λ₂, Λ₃.
    pub symmetry: f64,
    /// Hamiltonian eigenvalues with `|Re λ| < imaginary_axis·max(1, ‖A‖)`
    /// are treated as lying on the imaginary axis.
    pub imaginary_axis: f64,
    /// Accept when `‖residual‖_F ≤ residual·(1 + ‖P‖_F + ‖Q‖_F + 2‖A‖_F‖P‖_F + ‖P‖_F²‖G‖_F)`,
    /// i.e. relative to the size of the individual terms.
    pub residual: f64,
    /// Eigenvalues of −Λ₃ below `-lam3_negative·‖Λ₃‖` are an error.
    pub lam3_negative: f64,
    /// Upper bound on Newton refinement steps (at least one is always taken).
    pub max_newton_steps: usize,
}

impl Default for RiccatiTolerances {
    fn default() -> Self {
        Self {
            symmetry: 1e-12,
            imaginary_axis: 1e-9,
            residual: 1e-8,
            lam3_negative: 1e-10,
            max_newton_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CareProblem {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub q_mat: DMatrix<f64>,
    pub r_mat: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedCareProblem {
    /// A + Λ₁
    pub acl_mat: DMatrix<f64>,
    pub lam2_mat: DMatrix<f64>,
    pub lam3_mat: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p_mat: DMatrix<f64>,
    pub residual_norm: f64,
    /// Closed-loop spectrum lies strictly in the open left half plane.
    pub stable: bool,
    /// Largest real part of the closed-loop spectrum.
    pub closed_loop_abscissa: f64,
    pub newton_steps: usize,
}

/// Equations with an independently computable residual.
pub trait RiccatiEquation {
    fn dim(&self) -> usize;
    /// Left-hand side of the defining equation evaluated at `p`.
    fn lhs(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError>;
}

impl CareProblem {
    pub fn new(
        a_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        q_mat: DMatrix<f64>,
        r_mat: DMatrix<f64>,
    ) -> Self {
        Self { a_mat, b_mat, q_mat, r_mat }
    }

    fn check_dims(&self) -> Result<(), RiccatiError> {
        let n = self.a_mat.nrows();
        let m = self.b_mat.ncols();
        if !self.a_mat.is_square() {
            return Err(RiccatiError::DimensionMismatch(format!(
                "A is {}x{}",
                self.a_mat.nrows(),
                self.a_mat.ncols()
            )));
        }
        if self.b_mat.nrows() != n {
            return Err(RiccatiError::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                self.b_mat.nrows()
            )));
        }
        if self.q_mat.shape() != (n, n) {
            return Err(RiccatiError::DimensionMismatch(format!("Q must be {n}x{n}")));
        }
        if self.r_mat.shape() != (m, m) {
            return Err(RiccatiError::DimensionMismatch(format!("R must be {m}x{m}")));
        }
        Ok(())
    }

    /// B·R⁻¹·Bᵀ.
    fn input_gramian(&self) -> Result<DMatrix<f64>, RiccatiError> {
        let r_inv = spd_inverse(&self.r_mat).ok_or(RiccatiError::NotPositiveDefinite {
            min_eigenvalue: min_symmetric_eigenvalue(&self.r_mat),
        })?;
        Ok(symmetrize(&(&self.b_mat * r_inv * self.b_mat.transpose())))
    }

    /// Optimal gain `K = −R⁻¹BᵀP` for a solution of this problem.
    pub fn gain(&self, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let rb = self.r_mat.clone().lu().solve(&(self.b_mat.transpose() * p))?;
        Some(-rb)
    }
}

impl RiccatiEquation for CareProblem {
    fn dim(&self) -> usize {
        self.a_mat.nrows()
    }

    fn lhs(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
        self.check_dims()?;
        let n = self.dim();
        if p.shape() != (n, n) {
            return Err(RiccatiError::DimensionMismatch(format!("P must be {n}x{n}")));
        }
        let g = self.input_gramian()?;
        Ok(self.a_mat.transpose() * p + p * &self.a_mat - p * g * p + &self.q_mat)
    }
}

impl GeneralizedCareProblem {
    pub fn new(acl_mat: DMatrix<f64>, lam2_mat: DMatrix<f64>, lam3_mat: DMatrix<f64>) -> Self {
        Self { acl_mat, lam2_mat, lam3_mat }
    }

    fn check_dims(&self) -> Result<(), RiccatiError> {
        let n = self.acl_mat.nrows();
        if !self.acl_mat.is_square()
            || self.lam2_mat.shape() != (n, n)
            || self.lam3_mat.shape() != (n, n)
        {
            return Err(RiccatiError::DimensionMismatch(
                "Acl, Λ₂ and Λ₃ must all be n×n".into(),
            ));
        }
        Ok(())
    }
}

impl RiccatiEquation for GeneralizedCareProblem {
    fn dim(&self) -> usize {
        self.acl_mat.nrows()
    }

    fn lhs(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
        self.check_dims()?;
        let n = self.dim();
        if p.shape() != (n, n) {
            return Err(RiccatiError::DimensionMismatch(format!("P must be {n}x{n}")));
        }
        Ok(p * &self.acl_mat + self.acl_mat.transpose() * p + &self.lam2_mat
            + p * &self.lam3_mat * p.transpose())
    }
}

/// Frobenius norm of the defining equation's left-hand side.
pub fn care_residual<E: RiccatiEquation + ?Sized>(
    prob: &E,
    p_mat: &DMatrix<f64>,
) -> Result<f64, RiccatiError> {
    Ok(prob.lhs(p_mat)?.norm())
}

pub fn solve_care(prob: &CareProblem) -> Result<RiccatiSolution, RiccatiError> {
    solve_care_with(prob, &RiccatiTolerances::default())
}

pub fn solve_care_with(
    prob: &CareProblem,
    tol: &RiccatiTolerances,
) -> Result<RiccatiSolution, RiccatiError> {
    prob.check_dims()?;
    for (which, m) in [("Q", &prob.q_mat), ("R", &prob.r_mat)] {
        if !is_symmetric(m, tol.symmetry) {
            return Err(RiccatiError::NonSymmetricInput { which, asymmetry: asymmetry(m) });
        }
    }
    let r_min = min_symmetric_eigenvalue(&prob.r_mat);
    if prob.r_mat.nrows() > 0 && r_min <= 0.0 {
        return Err(RiccatiError::NotPositiveDefinite { min_eigenvalue: r_min });
    }
    let g = prob.input_gramian()?;
    let q = symmetrize(&prob.q_mat);
    let sol = solve_core(&prob.a_mat, &g, &q, tol)?;
    let residual_norm = care_residual(prob, &sol.p_mat)?;
    Ok(RiccatiSolution { residual_norm, ..sol })
}

pub fn solve_generalized_care(
    prob: &GeneralizedCareProblem,
) -> Result<RiccatiSolution, RiccatiError> {
    solve_generalized_care_with(prob, &RiccatiTolerances::default())
}

/// Maps the generalized equation onto [`solve_care`] with `Q ← Λ₂` and
/// `B←F, R←I` where `F·Fᵀ = −Λ₃`.
pub fn solve_generalized_care_with(
    prob: &GeneralizedCareProblem,
    tol: &RiccatiTolerances,
) -> Result<RiccatiSolution, RiccatiError> {
    prob.check_dims()?;
    for (which, m) in [("Λ₂", &prob.lam2_mat), ("Λ₃", &prob.lam3_mat)] {
        if !is_symmetric(m, tol.symmetry) {
            return Err(RiccatiError::NonSymmetricInput { which, asymmetry: asymmetry(m) });
        }
    }
    let neg_lam3 = -symmetrize(&prob.lam3_mat);
    // the factor certifies −Λ₃ ⪰ 0; the solve itself uses −Λ₃ = F·Fᵀ directly
    // so that clamped rounding noise does not leak into the residual
    psd_factor(&neg_lam3, tol.lam3_negative * prob.lam3_mat.norm())
        .map_err(|min_eigenvalue| RiccatiError::IndefiniteLam3 { min_eigenvalue })?;
    let sol = solve_core(&prob.acl_mat, &neg_lam3, &symmetrize(&prob.lam2_mat), tol)?;
    // certify against the equation as posed, not the factored image
    let residual_norm = care_residual(prob, &sol.p_mat)?;
    let limit = residual_limit(tol, &prob.acl_mat, &neg_lam3, &prob.lam2_mat, &sol.p_mat);
    if residual_norm > limit {
        return Err(RiccatiError::IllConditioned { residual: residual_norm, tolerance: limit });
    }
    Ok(RiccatiSolution { residual_norm, ..sol })
}

fn residual_limit(
    tol: &RiccatiTolerances,
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let pn = p.norm();
    tol.residual * (1.0 + pn + q.norm() + 2.0 * a.norm() * pn + pn * pn * g.norm())
}

/// Solves `AᵀP + PA − PGP + Q = 0` with `G` symmetric PSD.
fn solve_core(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    tol: &RiccatiTolerances,
) -> Result<RiccatiSolution, RiccatiError> {
    let residual = |p: &DMatrix<f64>| (a.transpose() * p + p * a - p * g * p + q).norm();
    let limit = |p: &DMatrix<f64>| residual_limit(tol, a, g, q, p);

    let mut p = stable_subspace_solution(a, g, q, tol)?;
    let mut res = residual(&p);
    let mut steps = 0;
    // Kleinman iteration: from a stabilizing P, each step solves
    // (A − GP)ᵀX + X(A − GP) + Q + PGP = 0.
    while steps < tol.max_newton_steps.max(1) {
        let acl = a - g * &p;
        let rhs = q + &p * g * &p;
        let Some(next) = solve_lyapunov(&acl, &rhs) else { break };
        steps += 1;
        let next_res = residual(&next);
        if !(next_res < res) {
            break;
        }
        p = next;
        res = next_res;
        if res <= limit(&p) {
            break;
        }
    }
    if res > limit(&p) {
        return Err(RiccatiError::IllConditioned { residual: res, tolerance: limit(&p) });
    }
    let closed_loop_abscissa = spectral_abscissa(&(a - g * &p));
    Ok(RiccatiSolution {
        p_mat: p,
        residual_norm: res,
        stable: closed_loop_abscissa < 0.0,
        closed_loop_abscissa,
        newton_steps: steps,
    })
}

/// Initial solution from the Hamiltonian's stable invariant subspace.
///
/// `H = [[A, −G], [−Q, −Aᵀ]]` has its spectrum split symmetrically about
/// the imaginary axis. The eigenvectors belonging to the n stable
/// eigenvalues span `[X₁; X₂]`, and `P = X₂X₁⁻¹`. Each eigenvector is the
/// right singular vector of `H − λI` with the smallest singular value;
/// clustered eigenvalues take as many vectors as the cluster size.
fn stable_subspace_solution(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    tol: &RiccatiTolerances,
) -> Result<DMatrix<f64>, RiccatiError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let axis_tol = tol.imaginary_axis * a.norm().max(1.0);
    let eigs = eigenvalues(&h).ok_or_else(|| {
        RiccatiError::NoStabilizingSolution("Hamiltonian eigenvalue iteration did not converge".into())
    })?;
    if let Some(z) = eigs.iter().find(|z| z.re.abs() < axis_tol) {
        return Err(RiccatiError::NoStabilizingSolution(format!(
            "Hamiltonian eigenvalue {:.3e}{:+.3e}i on the imaginary axis",
            z.re, z.im
        )));
    }
    let mut stable: Vec<Complex<f64>> = eigs.iter().filter(|z| z.re < 0.0).copied().collect();
    if stable.len() != n {
        return Err(RiccatiError::NoStabilizingSolution(format!(
            "{} stable Hamiltonian eigenvalues, expected {n}",
            stable.len()
        )));
    }
    stable.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

    let h_scale = h.norm().max(1.0);
    let cluster_tol = 1e-8 * h_scale;
    let hc = h.map(|v| Complex::new(v, 0.0));
    let eye = DMatrix::<Complex<f64>>::identity(2 * n, 2 * n);
    let mut basis = DMatrix::<Complex<f64>>::zeros(2 * n, n);
    let mut col = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (stable[j] - stable[i]).norm() <= cluster_tol {
            j += 1;
        }
        let k = j - i;
        let centre = stable[i..j].iter().sum::<Complex<f64>>() / k as f64;
        let shifted = &hc - &eye * centre;
        let svd = SVD::try_new(shifted, false, true, f64::EPSILON, 10_000).ok_or_else(|| {
            RiccatiError::NoStabilizingSolution("eigenvector SVD did not converge".into())
        })?;
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
        for &r in order.iter().take(k) {
            // rows of Vᴴ are conjugated right singular vectors
            for c in 0..2 * n {
                basis[(c, col)] = v_t[(r, c)].conj();
            }
            col += 1;
        }
        i = j;
    }

    let x1 = basis.rows(0, n).clone_owned();
    let x2 = basis.rows(n, n).clone_owned();
    // P = X₂X₁⁻¹  ⇔  X₁ᵀPᵀ = X₂ᵀ
    let pt = x1
        .transpose()
        .lu()
        .solve(&x2.transpose())
        .ok_or_else(|| RiccatiError::NoStabilizingSolution("X₁ is singular".into()))?;
    let p = symmetrize(&pt.transpose().map(|z| z.re));
    if p.iter().any(|v| !v.is_finite()) {
        return Err(RiccatiError::NoStabilizingSolution("non-finite subspace solution".into()));
    }
    Ok(p)
}
