//! Gain synthesis for the SDRE, H2–H∞ and RNQG controllers at one state.
//!
//! The RNQG construction writes the dissipation inequality
//! `ξᵀMξ ≤ 0`, `ξ = (x, w, v)`, eliminates `v` and then `w` by Schur
//! complements, and groups the result as a quadratic in the gain:
//!
//! ```text
//! Γ₁ + Γ₂K + KᵀΓ₂ᵀ + KᵀΓ₃K = 0,   K₀ = −Γ₃⁻¹Γ₂ᵀ
//! ```
//!
//! With the shorthand `M₆ = HᵀSH + γ₂²I`, `S̃ = S − SHM₆⁻¹HᵀS` and
//! `Γ₄ = (GᵀS̃G + γ₁²I)⁻¹` the blocks obtained by expanding the complements
//! term by term are
//!
//! ```text
//! a₃ = PL + CᵀSH          b₂ = PF + CᵀSG − a₃M₆⁻¹HᵀSG
//! Γ₁ = PA + AᵀP + Q + CᵀSC − a₃M₆⁻¹a₃ᵀ − b₂Γ₄b₂ᵀ
//! Γ₂ = PB + CᵀSD − a₃M₆⁻¹HᵀSD − b₂Γ₄GᵀS̃D
//! Γ₃ = R + DᵀS̃D − DᵀS̃GΓ₄GᵀS̃D
//! ```
//!
//! Substituting `K₀` gives `P(A+Λ₁) + (A+Λ₁)ᵀP + Λ₂ + PΛ₃P = 0` with
//!
//! ```text
//! λ₁ = Γ₄GᵀS̃D             λ₂ = Γ₃⁻¹
//! λ₃ = LM₆⁻¹HᵀSG − F       λ₄ = CᵀSHM₆⁻¹HᵀSG − CᵀSG
//! λ₅ = CᵀSD − CᵀSHM₆⁻¹HᵀSD λ₆ = B − LM₆⁻¹HᵀSD
//! β = λ₆ + λ₃λ₁            δ = λ₅ + λ₄λ₁
//! Λ₁ = −LM₆⁻¹HᵀSC − λ₃Γ₄λ₄ᵀ − βλ₂δᵀ
//! Λ₂ = Q + CᵀSC − CᵀSHM₆⁻¹HᵀSC − λ₄Γ₄λ₄ᵀ − δλ₂δᵀ
//! Λ₃ = −(LM₆⁻¹Lᵀ + λ₃Γ₄λ₃ᵀ + βλ₂βᵀ)
//! ```
//!
//! None of the Λ blocks depend on P, so one generalized Riccati solve
//! suffices. The λ signs here differ from the commonly printed grouping;
//! the expansion above is the one that reproduces the nested Schur
//! complement exactly (see the tests).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{asymmetry, spectral_abscissa, symmetrize};
use crate::riccati::{
    solve_care_with, solve_generalized_care_with, CareProblem, GeneralizedCareProblem, RiccatiError,
    RiccatiTolerances,
};
use crate::sdc::{CostWeights, NoiseSpec, SdcError, SdcEvaluation, WeightEvaluation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("M₆ = HᵀSH + γ₂²I is singular")]
    SingularM6,
    #[error("GᵀS̃G + γ₁²I is singular")]
    SingularGamma4Core,
    #[error("Γ₃ is singular")]
    SingularGamma3,
    #[error("P is not symmetric (asymmetry {0:.3e})")]
    NonSymmetricP(f64),
    #[error(transparent)]
    Weights(#[from] SdcError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Sdre,
    H2Hinf,
    Rnqg,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Sdre => "SDRE",
            Scheme::H2Hinf => "H2HINF",
            Scheme::Rnqg => "RNQG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub tolerances: RiccatiTolerances,
    /// Use the printed closed-form H2–H∞ gain (which drops an S in the
    /// Γ₃-like factor) instead of the Γ-block specialization.
    pub eq29_literal: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { tolerances: RiccatiTolerances::default(), eq29_literal: false }
    }
}

/// Blocks of the dissipation matrix M.
#[derive(Debug, Clone, PartialEq)]
pub struct MBlocks {
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub m3: DMatrix<f64>,
    pub m4: DMatrix<f64>,
    pub m5: DMatrix<f64>,
    pub m6: DMatrix<f64>,
}

impl MBlocks {
    pub fn assemble(&self) -> DMatrix<f64> {
        let (n, q, p) = (self.m1.nrows(), self.m4.nrows(), self.m6.nrows());
        let mut m = DMatrix::zeros(n + q + p, n + q + p);
        m.view_mut((0, 0), (n, n)).copy_from(&self.m1);
        m.view_mut((0, n), (n, q)).copy_from(&self.m2);
        m.view_mut((0, n + q), (n, p)).copy_from(&self.m3);
        m.view_mut((n, 0), (q, n)).copy_from(&self.m2.transpose());
        m.view_mut((n, n), (q, q)).copy_from(&self.m4);
        m.view_mut((n, n + q), (q, p)).copy_from(&self.m5);
        m.view_mut((n + q, 0), (p, n)).copy_from(&self.m3.transpose());
        m.view_mut((n + q, n), (p, q)).copy_from(&self.m5.transpose());
        m.view_mut((n + q, n + q), (p, p)).copy_from(&self.m6);
        m
    }

    /// Splits a full (n+q+p) square matrix back into blocks (upper triangle).
    pub fn from_full(m: &DMatrix<f64>, n: usize, q: usize) -> Self {
        let p = m.nrows() - n - q;
        Self {
            m1: m.view((0, 0), (n, n)).into_owned(),
            m2: m.view((0, n), (n, q)).into_owned(),
            m3: m.view((0, n + q), (n, p)).into_owned(),
            m4: m.view((n, n), (q, q)).into_owned(),
            m5: m.view((n, n + q), (q, p)).into_owned(),
            m6: m.view((n + q, n + q), (p, p)).into_owned(),
        }
    }

    /// The n×n matrix left after eliminating v and then w by Schur
    /// complements.
    pub fn nested_schur_complement(&self) -> Option<DMatrix<f64>> {
        let m6_inv = self.m6.clone().try_inverse()?;
        let z1 = &self.m1 - &self.m3 * &m6_inv * self.m3.transpose();
        let z2 = &self.m2 - &self.m3 * &m6_inv * self.m5.transpose();
        let z3 = &self.m4 - &self.m5 * &m6_inv * self.m5.transpose();
        let z3_inv = z3.try_inverse()?;
        Some(&z1 - &z2 * z3_inv * z2.transpose())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSmall {
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    pub l3: DMatrix<f64>,
    pub l4: DMatrix<f64>,
    pub l5: DMatrix<f64>,
    pub l6: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaBig {
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    pub l3: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaBlocks {
    pub gamma1_blk: DMatrix<f64>,
    pub gamma2_blk: DMatrix<f64>,
    pub gamma3_blk: DMatrix<f64>,
    pub gamma4_blk: DMatrix<f64>,
    pub m6_blk: DMatrix<f64>,
    pub lambda_small: LambdaSmall,
    pub lambda_big: LambdaBig,
    /// ‖Γ₃ − Γ₃ᵀ‖_F before symmetrization.
    pub gamma3_defect: f64,
}

impl GammaBlocks {
    /// Γ₁ + Γ₂K + KᵀΓ₂ᵀ + KᵀΓ₃K.
    pub fn quadratic_in_gain(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let g2k = &self.gamma2_blk * k;
        &self.gamma1_blk + &g2k + g2k.transpose() + k.transpose() * &self.gamma3_blk * k
    }

    /// K₀ = −Γ₃⁻¹Γ₂ᵀ.
    pub fn optimal_gain(&self) -> Result<DMatrix<f64>, SynthesisError> {
        let sol = self
            .gamma3_blk
            .clone()
            .lu()
            .solve(&self.gamma2_blk.transpose())
            .ok_or(SynthesisError::SingularGamma3)?;
        Ok(-sol)
    }

    /// Γ₁ − Γ₂Γ₃⁻¹Γ₂ᵀ.
    pub fn riccati_form(&self) -> DMatrix<f64> {
        &self.gamma1_blk - &self.gamma2_blk * self.lambda_small.l2.clone() * self.gamma2_blk.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainDiagnostics {
    /// Frobenius residual of the Riccati equation actually solved.
    pub riccati_residual: f64,
    /// ‖Γ₁ − Γ₂Γ₃⁻¹Γ₂ᵀ‖_F at the returned P (zero for SDRE).
    pub gamma_form_residual: f64,
    /// Spectral abscissa of A + BK.
    pub closed_loop_abscissa: f64,
    pub closed_loop_stable: bool,
    pub gamma3_defect: f64,
    pub newton_steps: usize,
    /// Fixed-point iterations on P-dependent Λ blocks; always 0 because
    /// the assembled Λ blocks do not depend on P.
    pub fixed_point_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSolution {
    pub k_gain: DMatrix<f64>,
    pub p_mat: DMatrix<f64>,
    pub scheme: Scheme,
    pub diagnostics: GainDiagnostics,
}

impl GainSolution {
    pub fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k_gain * x
    }
}

fn check_shapes(sdc: &SdcEvaluation, w: &WeightEvaluation, noise: &NoiseSpec) -> Result<(), SynthesisError> {
    sdc.check_dims()?;
    let (n, m, r) = (sdc.n(), sdc.b_mat.ncols(), sdc.c_mat.nrows());
    let p = noise.l_mat.ncols();
    let bad = |what: &str| Err(SynthesisError::DimensionMismatch(what.into()));
    if w.q.shape() != (n, n) {
        return bad("Q must be n×n");
    }
    if w.r.shape() != (m, m) {
        return bad("R must be m×m");
    }
    if w.s.shape() != (r, r) {
        return bad("S must be r×r");
    }
    if noise.l_mat.shape() != (n, p) || noise.h_mat.shape() != (r, p) {
        return bad("L must be n×p and H r×p");
    }
    Ok(())
}

/// Blocks M₁..M₆ at the given P and K (Ṗ taken as zero).
pub fn build_m_blocks(
    sdc: &SdcEvaluation,
    weights: &CostWeights,
    noise: &NoiseSpec,
    p_mat: &DMatrix<f64>,
    k_gain: &DMatrix<f64>,
) -> Result<MBlocks, SynthesisError> {
    let w = weights.evaluate(&sdc.state)?;
    check_shapes(sdc, &w, noise)?;
    let n = sdc.n();
    if p_mat.shape() != (n, n) || k_gain.shape() != (sdc.b_mat.ncols(), n) {
        return Err(SynthesisError::DimensionMismatch("P must be n×n and K m×n".into()));
    }
    if asymmetry(p_mat) > 1e-10 * p_mat.norm().max(1.0) {
        return Err(SynthesisError::NonSymmetricP(asymmetry(p_mat)));
    }
    let (a, b, c, d, f, g) = (&sdc.a_mat, &sdc.b_mat, &sdc.c_mat, &sdc.d_mat, &sdc.f_dist, &sdc.g_dist);
    let (l, h, s) = (&noise.l_mat, &noise.h_mat, &w.s);
    let acl = a + b * k_gain;
    let ccl = c + d * k_gain;
    let cs = ccl.transpose() * s;
    let q_w = f.ncols();
    let p_v = l.ncols();
    Ok(MBlocks {
        m1: p_mat * &acl + acl.transpose() * p_mat + &w.q + k_gain.transpose() * &w.r * k_gain + &cs * &ccl,
        m2: p_mat * f + &cs * g,
        m3: p_mat * l + &cs * h,
        m4: g.transpose() * s * g + DMatrix::identity(q_w, q_w) * w.gamma1.powi(2),
        m5: g.transpose() * s * h,
        m6: h.transpose() * s * h + DMatrix::identity(p_v, p_v) * w.gamma2.powi(2),
    })
}

/// Γ, λ and Λ blocks at the given P.
pub fn build_gamma_blocks(
    sdc: &SdcEvaluation,
    weights: &CostWeights,
    noise: &NoiseSpec,
    p_mat: &DMatrix<f64>,
) -> Result<GammaBlocks, SynthesisError> {
    let w = weights.evaluate(&sdc.state)?;
    gamma_blocks_at(sdc, &w, noise, p_mat)
}

fn gamma_blocks_at(
    sdc: &SdcEvaluation,
    w: &WeightEvaluation,
    noise: &NoiseSpec,
    p_mat: &DMatrix<f64>,
) -> Result<GammaBlocks, SynthesisError> {
    check_shapes(sdc, w, noise)?;
    let n = sdc.n();
    if p_mat.shape() != (n, n) {
        return Err(SynthesisError::DimensionMismatch("P must be n×n".into()));
    }
    let (a, b, c, d, f, g) = (&sdc.a_mat, &sdc.b_mat, &sdc.c_mat, &sdc.d_mat, &sdc.f_dist, &sdc.g_dist);
    let (l, h, s, q, r) = (&noise.l_mat, &noise.h_mat, &w.s, &w.q, &w.r);
    let (q_w, p_v) = (f.ncols(), l.ncols());

    let m6 = symmetrize(&(h.transpose() * s * h + DMatrix::identity(p_v, p_v) * w.gamma2.powi(2)));
    let m6_inv = m6.clone().try_inverse().ok_or(SynthesisError::SingularM6)?;
    let sh = s * h;
    // S̃ = S − SHM₆⁻¹HᵀS
    let s_t = symmetrize(&(s - &sh * &m6_inv * sh.transpose()));
    let core = symmetrize(&(g.transpose() * &s_t * g + DMatrix::identity(q_w, q_w) * w.gamma1.powi(2)));
    let gamma4 = symmetrize(&core.try_inverse().ok_or(SynthesisError::SingularGamma4Core)?);

    let ct = c.transpose();
    let hts = sh.transpose();
    let a3 = p_mat * l + &ct * &sh;
    let b2 = p_mat * f + &ct * s * g - &a3 * &m6_inv * &hts * g;
    let gts_d = g.transpose() * &s_t * d;
    let gamma1 = symmetrize(
        &(p_mat * a + a.transpose() * p_mat + q + &ct * s * c
            - &a3 * &m6_inv * a3.transpose()
            - &b2 * &gamma4 * b2.transpose()),
    );
    let gamma2 = p_mat * b + &ct * s * d - &a3 * &m6_inv * &hts * d - &b2 * &gamma4 * &gts_d;
    let gamma3_raw = r + d.transpose() * &s_t * d - gts_d.transpose() * &gamma4 * &gts_d;
    let gamma3_defect = asymmetry(&gamma3_raw);
    let gamma3 = symmetrize(&gamma3_raw);
    let lam2_small = symmetrize(&gamma3.clone().try_inverse().ok_or(SynthesisError::SingularGamma3)?);

    let lm6 = l * &m6_inv;
    let lam1_small = &gamma4 * &gts_d;
    let lam3_small = &lm6 * &hts * g - f;
    let lam4_small = &ct * &sh * &m6_inv * &hts * g - &ct * s * g;
    let lam5_small = &ct * s * d - &ct * &sh * &m6_inv * &hts * d;
    let lam6_small = b - &lm6 * &hts * d;
    let beta = &lam6_small + &lam3_small * &lam1_small;
    let delta = &lam5_small + &lam4_small * &lam1_small;

    let big1 = -(&lm6 * &hts * c) - &lam3_small * &gamma4 * lam4_small.transpose()
        - &beta * &lam2_small * delta.transpose();
    let big2 = symmetrize(
        &(q + &ct * s * c - &ct * &sh * &m6_inv * &hts * c
            - &lam4_small * &gamma4 * lam4_small.transpose()
            - &delta * &lam2_small * delta.transpose()),
    );
    let big3 = symmetrize(
        &(-(&lm6 * l.transpose())
            - &lam3_small * &gamma4 * lam3_small.transpose()
            - &beta * &lam2_small * beta.transpose()),
    );

    Ok(GammaBlocks {
        gamma1_blk: gamma1,
        gamma2_blk: gamma2,
        gamma3_blk: gamma3,
        gamma4_blk: gamma4,
        m6_blk: m6,
        lambda_small: LambdaSmall {
            l1: lam1_small,
            l2: lam2_small,
            l3: lam3_small,
            l4: lam4_small,
            l5: lam5_small,
            l6: lam6_small,
        },
        lambda_big: LambdaBig { l1: big1, l2: big2, l3: big3 },
        gamma3_defect,
    })
}

fn closed_loop(sdc: &SdcEvaluation, k: &DMatrix<f64>) -> (f64, bool) {
    let alpha = spectral_abscissa(&(&sdc.a_mat + &sdc.b_mat * k));
    (alpha, alpha < 0.0)
}

/// Classical SDRE gain `K = −R⁻¹BᵀP`.
pub fn sdre_gain(sdc: &SdcEvaluation, weights: &CostWeights) -> Result<GainSolution, SynthesisError> {
    sdre_gain_with(sdc, weights, &SynthesisOptions::default())
}

pub fn sdre_gain_with(
    sdc: &SdcEvaluation,
    weights: &CostWeights,
    opts: &SynthesisOptions,
) -> Result<GainSolution, SynthesisError> {
    sdc.check_dims()?;
    let w = weights.evaluate(&sdc.state)?;
    let prob = CareProblem::new(sdc.a_mat.clone(), sdc.b_mat.clone(), w.q, w.r);
    let sol = solve_care_with(&prob, &opts.tolerances)?;
    let k = prob.gain(&sol.p_mat).ok_or(SynthesisError::SingularGamma3)?;
    let (alpha, stable) = closed_loop(sdc, &k);
    Ok(GainSolution {
        k_gain: k,
        p_mat: sol.p_mat,
        scheme: Scheme::Sdre,
        diagnostics: GainDiagnostics {
            riccati_residual: sol.residual_norm,
            gamma_form_residual: 0.0,
            closed_loop_abscissa: alpha,
            closed_loop_stable: stable,
            gamma3_defect: 0.0,
            newton_steps: sol.newton_steps,
            fixed_point_iterations: 0,
        },
    })
}

fn gamma_synthesis(
    sdc: &SdcEvaluation,
    w: &WeightEvaluation,
    noise: &NoiseSpec,
    scheme: Scheme,
    opts: &SynthesisOptions,
) -> Result<GainSolution, SynthesisError> {
    let n = sdc.n();
    let blocks0 = gamma_blocks_at(sdc, w, noise, &DMatrix::zeros(n, n))?;
    let lam = &blocks0.lambda_big;
    let prob = GeneralizedCareProblem::new(&sdc.a_mat + &lam.l1, lam.l2.clone(), lam.l3.clone());
    let sol = solve_generalized_care_with(&prob, &opts.tolerances)?;
    let blocks = gamma_blocks_at(sdc, w, noise, &sol.p_mat)?;
    let k = if opts.eq29_literal && scheme == Scheme::H2Hinf {
        eq29_literal_gain(sdc, w, &sol.p_mat)?
    } else {
        blocks.optimal_gain()?
    };
    let (alpha, stable) = closed_loop(sdc, &k);
    Ok(GainSolution {
        k_gain: k,
        diagnostics: GainDiagnostics {
            riccati_residual: sol.residual_norm,
            gamma_form_residual: blocks.riccati_form().norm(),
            closed_loop_abscissa: alpha,
            closed_loop_stable: stable,
            gamma3_defect: blocks.gamma3_defect,
            newton_steps: sol.newton_steps,
            fixed_point_iterations: 0,
        },
        p_mat: sol.p_mat,
        scheme,
    })
}

/// The printed closed form `K = −[R − DᵀSGE₁GᵀD + DᵀSD]⁻¹[PB + CᵀSD −
/// (PF + CᵀSG)E₁GᵀSD]ᵀ`, `E₁ = (GᵀSG + γ₁²I)⁻¹`, kept for comparison.
fn eq29_literal_gain(
    sdc: &SdcEvaluation,
    w: &WeightEvaluation,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthesisError> {
    let (b, c, d, f, g, s) = (&sdc.b_mat, &sdc.c_mat, &sdc.d_mat, &sdc.f_dist, &sdc.g_dist, &w.s);
    let q_w = f.ncols();
    let e1 = (g.transpose() * s * g + DMatrix::identity(q_w, q_w) * w.gamma1.powi(2))
        .try_inverse()
        .ok_or(SynthesisError::SingularGamma4Core)?;
    let lhs = &w.r - d.transpose() * s * g * &e1 * g.transpose() * d + d.transpose() * s * d;
    let rhs = p * b + c.transpose() * s * d - (p * f + c.transpose() * s * g) * &e1 * g.transpose() * s * d;
    let k = lhs.lu().solve(&rhs.transpose()).ok_or(SynthesisError::SingularGamma3)?;
    Ok(-k)
}

/// Robust nonlinear quadratic Gaussian gain.
pub fn rnqg_gain(
    sdc: &SdcEvaluation,
    weights: &CostWeights,
    noise: &NoiseSpec,
) -> Result<GainSolution, SynthesisError> {
    rnqg_gain_with(sdc, weights, noise, &SynthesisOptions::default())
}

pub fn rnqg_gain_with(
    sdc: &SdcEvaluation,
    weights: &CostWeights,
    noise: &NoiseSpec,
    opts: &SynthesisOptions,
) -> Result<GainSolution, SynthesisError> {
    sdc.check_dims()?;
    let w = weights.evaluate(&sdc.state)?;
    gamma_synthesis(sdc, &w, noise, Scheme::Rnqg, opts)
}

/// H2–H∞ gain: the Γ-block construction with the noise channels removed.
pub fn h2hinf_gain(sdc: &SdcEvaluation, weights: &CostWeights) -> Result<GainSolution, SynthesisError> {
    h2hinf_gain_with(sdc, weights, &SynthesisOptions::default())
}

pub fn h2hinf_gain_with(
    sdc: &SdcEvaluation,
    weights: &CostWeights,
    opts: &SynthesisOptions,
) -> Result<GainSolution, SynthesisError> {
    sdc.check_dims()?;
    let w = weights.evaluate(&sdc.state)?;
    // Zero-width noise channels: every L and H term vanishes identically and
    // M₆ is empty, so γ₂ plays no role.
    let noise = NoiseSpec::noiseless(sdc.n(), sdc.c_mat.nrows(), 0);
    gamma_synthesis(sdc, &w, &noise, Scheme::H2Hinf, opts)
}
