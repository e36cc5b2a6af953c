//! Hyperelastic energy densities for rubber-like solids.
//!
//! Every density has the isochoric-volumetric form
//!
//! ```text
//! W(F) = W_iso(J^{-1/3} F) + W_vol(J),   J = det F > 0
//! ```
//!
//! and is `+∞` when `J <= 0`. The isochoric parts are evaluated from the
//! displacement gradient `D = F - I` so that densities and stresses keep full
//! relative precision for deformations close to the identity, which is where
//! the small-strain limit lives.
//!
//! Symmetric tensors are mapped to 6-vectors in the Mandel ordering
//! `(11, 22, 33, 23, 13, 12)` with a `√2` factor on the off-diagonal entries,
//! so that `A : B = a · b` for symmetric `A`, `B`.

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix3 = nalgebra::Matrix3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameters: {0}")]
    InvalidParameters(String),
    #[error("deformation gradient has non-positive determinant {0}")]
    NonPositiveDeterminant(f64),
    #[error("argument out of domain: {0}")]
    Domain(String),
}

/// Extended-real energy value. Infeasible states are tagged, never encoded
/// as a floating-point infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Energy {
    Finite(f64),
    Infinite,
}

impl Energy {
    pub fn is_finite(&self) -> bool {
        matches!(self, Energy::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Energy::Finite(v) => Some(v),
            Energy::Infinite => None,
        }
    }

    /// Sum of two extended reals.
    pub fn plus(self, other: Energy) -> Energy {
        match (self, other) {
            (Energy::Finite(a), Energy::Finite(b)) => Energy::Finite(a + b),
            _ => Energy::Infinite,
        }
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> Energy {
        match self {
            Energy::Finite(v) => Energy::Finite(f(v)),
            Energy::Infinite => Energy::Infinite,
        }
    }
}

/// Predicates on 3×3 matrices used throughout the crate.
pub trait Matrix3Ext {
    /// `FᵀF = I` and `det F = 1` within `tol`.
    fn is_rotation(&self, tol: f64) -> bool;
    fn det_positive(&self) -> bool;
}

impl Matrix3Ext for Matrix3 {
    fn is_rotation(&self, tol: f64) -> bool {
        let gram = self.transpose() * self - Matrix3::identity();
        gram.abs().max() <= tol && (self.determinant() - 1.0).abs() <= tol
    }

    fn det_positive(&self) -> bool {
        self.determinant() > 0.0
    }
}

/// One `(μ_p, α_p)` pair of an Ogden expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OgdenTerm {
    pub mu: f64,
    pub alpha: f64,
}

/// Isochoric part of the stored energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MaterialModel {
    /// `μ (Ī₁ - 3)`
    NeoHookean { mu: f64 },
    /// `μ₁/2 (Ī₁ - 3) + μ₂/2 (Ī₂ - 3)`
    MooneyRivlin { mu1: f64, mu2: f64 },
    /// `Σ μ_p/α_p (tr C̄^{α_p/2} - 3)`
    Ogden { terms: Vec<OgdenTerm> },
    /// `Σ_k c_k (Ī₁ - 3)^k`, k = 1..3
    Yeoh { c: [f64; 3] },
}

impl MaterialModel {
    pub fn neo_hookean(mu: f64) -> Result<Self, MaterialError> {
        let m = MaterialModel::NeoHookean { mu };
        m.validate()?;
        Ok(m)
    }

    pub fn mooney_rivlin(mu1: f64, mu2: f64) -> Result<Self, MaterialError> {
        let m = MaterialModel::MooneyRivlin { mu1, mu2 };
        m.validate()?;
        Ok(m)
    }

    pub fn ogden(mu: &[f64], alpha: &[f64]) -> Result<Self, MaterialError> {
        if mu.len() != alpha.len() {
            return Err(MaterialError::InvalidParameters(format!(
                "ogden: {} moduli but {} exponents",
                mu.len(),
                alpha.len()
            )));
        }
        let terms = mu
            .iter()
            .zip(alpha)
            .map(|(&mu, &alpha)| OgdenTerm { mu, alpha })
            .collect();
        let m = MaterialModel::Ogden { terms };
        m.validate()?;
        Ok(m)
    }

    pub fn yeoh(c1: f64, c2: f64, c3: f64) -> Result<Self, MaterialError> {
        let m = MaterialModel::Yeoh { c: [c1, c2, c3] };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let bad = |msg: String| Err(MaterialError::InvalidParameters(msg));
        match self {
            MaterialModel::NeoHookean { mu } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return bad(format!("neo-hookean: mu must be positive, got {mu}"));
                }
            }
            MaterialModel::MooneyRivlin { mu1, mu2 } => {
                if !(mu1.is_finite() && mu2.is_finite() && *mu1 > 0.0 && *mu2 >= 0.0) {
                    return bad(format!(
                        "mooney-rivlin: need mu1 > 0 and mu2 >= 0, got ({mu1}, {mu2})"
                    ));
                }
            }
            MaterialModel::Ogden { terms } => {
                if terms.is_empty() {
                    return bad("ogden: at least one term required".into());
                }
                for t in terms {
                    // μ_p α_p > 0 is the sign condition that keeps every term
                    // nonnegative; it reduces to μ_p > 0 for positive exponents.
                    if !(t.mu.is_finite() && t.alpha.is_finite())
                        || t.alpha == 0.0
                        || t.mu * t.alpha <= 0.0
                    {
                        return bad(format!(
                            "ogden: need mu_p * alpha_p > 0, got ({}, {})",
                            t.mu, t.alpha
                        ));
                    }
                }
            }
            MaterialModel::Yeoh { c } => {
                if !c.iter().all(|v| v.is_finite()) || c[0] <= 0.0 {
                    return bad(format!("yeoh: need c1 > 0, got {:?}", c));
                }
            }
        }
        Ok(())
    }

    /// Twice the small-strain shear modulus: `D²W_iso(I)[B, B] = shear2 |dev sym B|²`.
    pub fn shear_stiffness(&self) -> f64 {
        match self {
            MaterialModel::NeoHookean { mu } => 4.0 * mu,
            MaterialModel::MooneyRivlin { mu1, mu2 } => 2.0 * (mu1 + mu2),
            MaterialModel::Ogden { terms } => terms.iter().map(|t| t.mu * t.alpha).sum(),
            MaterialModel::Yeoh { c } => 4.0 * c[0],
        }
    }

    /// Isochoric energy `W_iso(J^{-1/3} F)` from the displacement gradient `D = F - I`.
    pub fn isochoric_energy_disp(&self, d: &Matrix3) -> Energy {
        let Some(kin) = IsochoricKinematics::new(d) else {
            return Energy::Infinite;
        };
        let tr_k = kin.k.trace();
        let w = match self {
            MaterialModel::NeoHookean { mu } => mu * tr_k,
            MaterialModel::MooneyRivlin { mu1, mu2 } => {
                let i2m3 = 2.0 * tr_k + 0.5 * (tr_k * tr_k - (kin.k * kin.k).trace());
                0.5 * mu1 * tr_k + 0.5 * mu2 * i2m3
            }
            MaterialModel::Ogden { terms } => {
                let (logs, _) = log_principal_stretches(&kin.k);
                terms
                    .iter()
                    .map(|t| {
                        let s: f64 = logs.iter().map(|&l| (0.5 * t.alpha * l).exp_m1()).sum();
                        t.mu / t.alpha * s
                    })
                    .sum()
            }
            MaterialModel::Yeoh { c } => c[0] * tr_k + c[1] * tr_k.powi(2) + c[2] * tr_k.powi(3),
        };
        Energy::Finite(w)
    }

    /// First Piola stress of the isochoric part, from `D = F - I`.
    pub fn isochoric_stress_disp(&self, d: &Matrix3) -> Result<Matrix3, MaterialError> {
        let kin = IsochoricKinematics::new(d)
            .ok_or(MaterialError::NonPositiveDeterminant(det_from_disp(d) + 1.0))?;
        let fbar = kin.fbar;
        let cbar = Matrix3::identity() + kin.k;
        let tr_k = kin.k.trace();
        // P̄ = ∂W_iso/∂F̄ at F̄
        let pbar = match self {
            MaterialModel::NeoHookean { mu } => 2.0 * *mu * fbar,
            MaterialModel::MooneyRivlin { mu1, mu2 } => {
                let i1 = 3.0 + tr_k;
                *mu1 * fbar + *mu2 * (i1 * fbar - fbar * cbar)
            }
            MaterialModel::Ogden { terms } => {
                // C̄^m = I + Q diag((1+e)^m - 1) Qᵀ with e the eigenvalues of C̄ - I
                let (logs, q) = log_principal_stretches(&kin.k);
                let mut p = Matrix3::zeros();
                for t in terms {
                    let m = 0.5 * t.alpha - 1.0;
                    let pw = logs.map(|l| (m * l).exp_m1());
                    let cpow = Matrix3::identity() + q * Matrix3::from_diagonal(&pw) * q.transpose();
                    p += t.mu * fbar * cpow;
                }
                p
            }
            MaterialModel::Yeoh { c } => {
                let dw = c[0] + 2.0 * c[1] * tr_k + 3.0 * c[2] * tr_k * tr_k;
                2.0 * dw * fbar
            }
        };
        let fbar_inv_t = fbar
            .try_inverse()
            .ok_or(MaterialError::NonPositiveDeterminant(0.0))?
            .transpose();
        // P̄ - ⅓(P̄:F̄)F̄^{-T} = dev(P̄F̄ᵀ) F̄^{-T}
        let tau = pbar * fbar.transpose();
        Ok(kin.j_m13 * deviator(&tau) * fbar_inv_t)
    }
}

/// Volumetric penalty `W_vol(t) = c (t² - 1 - 2 ln t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumetricModel {
    pub c: f64,
}

impl VolumetricModel {
    pub fn new(c: f64) -> Result<Self, MaterialError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(MaterialError::InvalidParameters(format!(
                "volumetric coefficient must be positive, got {c}"
            )));
        }
        Ok(Self { c })
    }

    pub fn energy(&self, t: f64) -> Energy {
        if t <= 0.0 {
            return Energy::Infinite;
        }
        Energy::Finite(self.c * log_barrier(t - 1.0))
    }

    /// `W_vol` evaluated from `δ = t - 1`, exact for tiny `δ`.
    pub fn energy_from_excess(&self, delta: f64) -> Energy {
        if delta <= -1.0 {
            return Energy::Infinite;
        }
        Energy::Finite(self.c * log_barrier(delta))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        2.0 * self.c * (t - 1.0 / t)
    }

    pub fn second_derivative_at_one(&self) -> f64 {
        4.0 * self.c
    }
}

/// `t² - 1 - 2 ln t` written in `δ = t - 1`.
pub fn log_barrier(delta: f64) -> f64 {
    delta * delta + 2.0 * x_minus_ln1p(delta)
}

/// `x - ln(1 + x)` without cancellation for small `x`.
fn x_minus_ln1p(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // alternating series x²/2 - x³/3 + x⁴/4 - ...
        let mut term = x * x;
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 2..40 {
            let contrib = sign * term / k as f64;
            sum += contrib;
            if contrib.abs() <= 1e-18 * sum.abs() {
                break;
            }
            term *= x;
            sign = -sign;
        }
        sum
    } else {
        x - x.ln_1p()
    }
}

/// `det(I + D) - 1` expanded in invariants of `D`.
pub fn det_from_disp(d: &Matrix3) -> f64 {
    let tr = d.trace();
    let i2 = 0.5 * (tr * tr - (d * d).trace());
    tr + i2 + d.determinant()
}

/// Deviatoric part with diagonal entries from pairwise differences, so an
/// isotropic input maps to exactly zero.
fn deviator(t: &Matrix3) -> Matrix3 {
    let mut d = *t;
    d[(0, 0)] = ((t[(0, 0)] - t[(1, 1)]) + (t[(0, 0)] - t[(2, 2)])) / 3.0;
    d[(1, 1)] = ((t[(1, 1)] - t[(0, 0)]) + (t[(1, 1)] - t[(2, 2)])) / 3.0;
    d[(2, 2)] = ((t[(2, 2)] - t[(0, 0)]) + (t[(2, 2)] - t[(1, 1)])) / 3.0;
    d
}

/// Logarithms of the eigenvalues of `C̄ = I + K`, with eigenvectors.
///
/// The smallest one is taken from `det C̄ = 1` rather than from the
/// eigensolver, whose absolute error would swamp it under strong compression.
fn log_principal_stretches(k: &Matrix3) -> (Vector3, Matrix3) {
    let eig = SymmetricEigen::new(*k);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let l0 = eig.eigenvalues[order[0]].ln_1p();
    let l1 = eig.eigenvalues[order[1]].ln_1p();
    let mut logs = Vector3::zeros();
    logs[order[0]] = l0;
    logs[order[1]] = l1;
    logs[order[2]] = -(l0 + l1);
    (logs, eig.eigenvectors)
}

struct IsochoricKinematics {
    /// `C̄ - I`
    k: Matrix3,
    fbar: Matrix3,
    /// `J^{-1/3}`
    j_m13: f64,
}

impl IsochoricKinematics {
    fn new(d: &Matrix3) -> Option<Self> {
        let delta = det_from_disp(d);
        if delta <= -1.0 {
            return None;
        }
        let log_j = delta.ln_1p();
        let s = (-2.0 / 3.0 * log_j).exp_m1();
        let m = d + d.transpose() + d.transpose() * d;
        let k = (1.0 + s) * m + s * Matrix3::identity();
        let j_m13 = (-log_j / 3.0).exp();
        let fbar = j_m13 * (Matrix3::identity() + d);
        Some(Self { k, fbar, j_m13 })
    }
}

/// `W(F) = W_iso(J^{-1/3}F) + W_vol(J)`, `+∞` when `det F <= 0`.
pub fn energy(model: &MaterialModel, vol: &VolumetricModel, f: &Matrix3) -> Energy {
    energy_disp(model, vol, &(f - Matrix3::identity()))
}

/// Same as [`energy`] with the displacement gradient `D = F - I` as input.
pub fn energy_disp(model: &MaterialModel, vol: &VolumetricModel, d: &Matrix3) -> Energy {
    let delta = det_from_disp(d);
    if delta <= -1.0 {
        return Energy::Infinite;
    }
    model
        .isochoric_energy_disp(d)
        .plus(vol.energy_from_excess(delta))
}

/// Incompressible density: `W(F)` on `|det F - 1| <= det_tol`, `+∞` elsewhere.
pub fn energy_incompressible(
    model: &MaterialModel,
    vol: &VolumetricModel,
    f: &Matrix3,
    det_tol: f64,
) -> Result<Energy, MaterialError> {
    if !(det_tol >= 0.0) {
        return Err(MaterialError::Domain(format!("det_tol must be >= 0, got {det_tol}")));
    }
    let d = f - Matrix3::identity();
    if det_from_disp(&d).abs() > det_tol {
        return Ok(Energy::Infinite);
    }
    Ok(energy_disp(model, vol, &d))
}

/// First Piola stress `DW(F)`.
///
/// Isochoric part: `J^{-1/3} dev(P̄F̄ᵀ) F̄^{-T}` with `P̄ = ∂W_iso/∂F̄`;
/// `P̄ = 2μF̄` (neo-Hookean), `μ₁F̄ + μ₂(Ī₁F̄ - F̄C̄)` (Mooney-Rivlin),
/// `Σ μ_p F̄ C̄^{α_p/2-1}` (Ogden), `2 W'(Ī₁) F̄` (Yeoh).
/// Volumetric part: `W_vol'(J) J F^{-T} = 2c (J² - 1) F^{-T}`.
pub fn stress(model: &MaterialModel, vol: &VolumetricModel, f: &Matrix3) -> Result<Matrix3, MaterialError> {
    stress_disp(model, vol, &(f - Matrix3::identity()))
}

pub fn stress_disp(model: &MaterialModel, vol: &VolumetricModel, d: &Matrix3) -> Result<Matrix3, MaterialError> {
    let delta = det_from_disp(d);
    if delta <= -1.0 {
        return Err(MaterialError::NonPositiveDeterminant(1.0 + delta));
    }
    let f = Matrix3::identity() + d;
    let f_inv_t = f
        .try_inverse()
        .ok_or(MaterialError::NonPositiveDeterminant(1.0 + delta))?
        .transpose();
    let j = 1.0 + delta;
    let p_vol = 2.0 * vol.c * delta * (j + 1.0) * f_inv_t;
    Ok(model.isochoric_stress_disp(d)? + p_vol)
}

/// The quadratic form `B ↦ sym B : D²W(I) : sym B` as a symmetric 6×6 array
/// in the Mandel basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityTensor {
    matrix: Matrix6<f64>,
}

/// Mandel 6-vector of `sym B`.
pub fn to_mandel(b: &Matrix3) -> Vector6<f64> {
    let s = 0.5 * (b + b.transpose());
    Vector6::new(
        s[(0, 0)],
        s[(1, 1)],
        s[(2, 2)],
        SQRT2 * s[(1, 2)],
        SQRT2 * s[(0, 2)],
        SQRT2 * s[(0, 1)],
    )
}

pub fn from_mandel(v: &Vector6<f64>) -> Matrix3 {
    let a = v[3] / SQRT2;
    let b = v[4] / SQRT2;
    let c = v[5] / SQRT2;
    Matrix3::new(v[0], c, b, c, v[1], a, b, a, v[2])
}

fn volumetric_direction() -> Vector6<f64> {
    Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
}

impl ElasticityTensor {
    /// Wraps a 6×6 Mandel array, symmetrizing it.
    pub fn from_matrix(m: Matrix6<f64>) -> Self {
        Self {
            matrix: 0.5 * (m + m.transpose()),
        }
    }

    /// `shear2 |dev E|² + bulk (tr E)²`.
    pub fn isotropic(shear2: f64, bulk: f64) -> Self {
        let m = volumetric_direction();
        let mmt = m * m.transpose();
        let pdev = Matrix6::identity() - mmt / 3.0;
        Self {
            matrix: shear2 * pdev + bulk * mmt,
        }
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    /// `σ = C : sym B`, so that `quadratic_form(B) = sym B : σ`.
    pub fn contract(&self, b: &Matrix3) -> Matrix3 {
        from_mandel(&(self.matrix * to_mandel(b)))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix).eigenvalues.min()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.matrix.cholesky().is_some()
    }

    /// `(I : C : I) / 9`, the coefficient of `(tr E)²` for an isotropic tensor.
    pub fn bulk_coefficient(&self) -> f64 {
        let m = volumetric_direction();
        (m.transpose() * self.matrix * m)[(0, 0)] / 9.0
    }

    /// Deviatoric projection `P_dev C P_dev`.
    pub fn deviatoric(&self) -> Self {
        let m = volumetric_direction();
        let pdev = Matrix6::identity() - m * m.transpose() / 3.0;
        Self {
            matrix: pdev * self.matrix * pdev,
        }
    }

    /// Mean of the three shear eigen-directions, a stiffness scale for preconditioning.
    pub fn shear_scale(&self) -> f64 {
        (self.matrix[(3, 3)] + self.matrix[(4, 4)] + self.matrix[(5, 5)]) / 3.0
    }
}

/// `sym B : H : sym B` (no ½ factor).
pub fn quadratic_form(h: &ElasticityTensor, b: &Matrix3) -> f64 {
    let v = to_mandel(b);
    (v.transpose() * h.matrix * v)[(0, 0)]
}

/// Analytic `D²W(I)`: every implemented density is isotropic, so the
/// Hessian is `shear2 · P_dev + W_vol''(1) · I⊗I`.
pub fn hessian_at_identity(model: &MaterialModel, vol: &VolumetricModel) -> ElasticityTensor {
    ElasticityTensor::isotropic(model.shear_stiffness(), vol.second_derivative_at_one())
}

/// Finite-difference `D²W(I)`: second central differences of `W(I + sB)` with
/// one Richardson level, polarized over the Mandel basis.
pub fn hessian_at_identity_fd(model: &MaterialModel, vol: &VolumetricModel, step: f64) -> ElasticityTensor {
    let second = |b: &Matrix3| -> f64 {
        let diff = |s: f64| {
            let wp = energy_disp(model, vol, &(s * b)).value().unwrap_or(f64::NAN);
            let wm = energy_disp(model, vol, &(-s * b)).value().unwrap_or(f64::NAN);
            (wp + wm) / (s * s)
        };
        (4.0 * diff(0.5 * step) - diff(step)) / 3.0
    };
    let basis: Vec<Matrix3> = (0..6)
        .map(|k| {
            let mut e = Vector6::zeros();
            e[k] = 1.0;
            from_mandel(&e)
        })
        .collect();
    let mut m = Matrix6::zeros();
    for k in 0..6 {
        for l in k..6 {
            let v = if k == l {
                second(&basis[k])
            } else {
                (second(&(basis[k] + basis[l])) - second(&(basis[k] - basis[l]))) / 4.0
            };
            m[(k, l)] = v;
            m[(l, k)] = v;
        }
    }
    ElasticityTensor { matrix: m }
}

/// Exponent and constant of the coercivity lower bound `C g_p(d(F, SO(3)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityProfile {
    pub p: f64,
    pub c: f64,
}

impl CoercivityProfile {
    pub fn new(p: f64, c: f64) -> Result<Self, MaterialError> {
        if !(p > 1.0 && p <= 2.0) {
            return Err(MaterialError::Domain(format!("p must lie in (1, 2], got {p}")));
        }
        if !(c > 0.0) {
            return Err(MaterialError::Domain(format!("C must be positive, got {c}")));
        }
        Ok(Self { p, c })
    }
}

/// `g_p(t) = t²` for `t <= 1`, `2tᵖ/p - 2/p + 1` for `t >= 1`.
pub fn gp(p: f64, t: f64) -> Result<f64, MaterialError> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(MaterialError::Domain(format!("p must lie in (1, 2], got {p}")));
    }
    if !(t >= 0.0) {
        return Err(MaterialError::Domain(format!("t must be >= 0, got {t}")));
    }
    Ok(if t <= 1.0 {
        t * t
    } else {
        2.0 * t.powf(p) / p - 2.0 / p + 1.0
    })
}

/// Frobenius distance from `F` to `SO(3)`.
///
/// With singular values `σ₁ >= σ₂ >= σ₃`, the nearest rotation attains
/// `tr(RᵀF) = σ₁ + σ₂ + sign(det F) σ₃`, which gives
/// `d² = (σ₁-1)² + (σ₂-1)² + (sign(det F) σ₃ - 1)²`.
pub fn distance_to_so3(f: &Matrix3) -> f64 {
    let mut s: Vec<f64> = f.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if f.determinant() < 0.0 {
        s[2] = -s[2];
    }
    s.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    /// `W(F) - C g_p(d(F, SO(3)))` per sample; `Infinite` when `W` is.
    pub margins: Vec<Energy>,
    pub min_margin: f64,
    pub violations: Vec<usize>,
}

pub fn coercivity_check(
    model: &MaterialModel,
    vol: &VolumetricModel,
    profile: &CoercivityProfile,
    samples: &[Matrix3],
) -> CoercivityReport {
    let mut margins = Vec::with_capacity(samples.len());
    let mut min_margin = f64::MAX;
    let mut violations = Vec::new();
    for (i, f) in samples.iter().enumerate() {
        let bound = profile.c * gp(profile.p, distance_to_so3(f)).expect("profile validated");
        let margin = energy(model, vol, f).map(|w| w - bound);
        if let Energy::Finite(m) = margin {
            min_margin = min_margin.min(m);
            if m < 0.0 {
                violations.push(i);
            }
        }
        margins.push(margin);
    }
    CoercivityReport {
        margins,
        min_margin,
        violations,
    }
}

/// `|W(RF) - W(F)|`.
pub fn frame_indifference_check(
    model: &MaterialModel,
    vol: &VolumetricModel,
    f: &Matrix3,
    r: &Matrix3,
) -> Result<f64, MaterialError> {
    if !f.det_positive() {
        return Err(MaterialError::NonPositiveDeterminant(f.determinant()));
    }
    if !r.is_rotation(1e-12) {
        return Err(MaterialError::Domain("R is not a rotation within 1e-12".into()));
    }
    let w = energy(model, vol, f).value().expect("det F > 0");
    let wr = energy(model, vol, &(r * f))
        .value()
        .ok_or(MaterialError::NonPositiveDeterminant((r * f).determinant()))?;
    Ok((wr - w).abs())
}

/// Parses material definitions from a config table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub model: String,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub mu_p: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha_p: Option<Vec<f64>>,
    #[serde(default)]
    pub c1: Option<f64>,
    #[serde(default)]
    pub c2: Option<f64>,
    #[serde(default)]
    pub c3: Option<f64>,
    #[serde(default = "default_c_vol")]
    pub c_vol: f64,
}

fn default_c_vol() -> f64 {
    1.0
}

impl MaterialSpec {
    pub fn build(&self) -> Result<(MaterialModel, VolumetricModel), MaterialError> {
        let missing = |key: &str| MaterialError::InvalidParameters(format!("{}: missing key `{key}`", self.model));
        let model = match self.model.to_ascii_lowercase().replace('-', "_").as_str() {
            "neo_hookean" | "neohookean" => MaterialModel::neo_hookean(self.mu.ok_or_else(|| missing("mu"))?)?,
            "mooney_rivlin" | "mooneyrivlin" => {
                let mu = self.mu_p.as_ref().ok_or_else(|| missing("mu_p"))?;
                if mu.len() != 2 {
                    return Err(MaterialError::InvalidParameters(
                        "mooney_rivlin: mu_p must hold [mu1, mu2]".into(),
                    ));
                }
                MaterialModel::mooney_rivlin(mu[0], mu[1])?
            }
            "ogden" => MaterialModel::ogden(
                self.mu_p.as_ref().ok_or_else(|| missing("mu_p"))?,
                self.alpha_p.as_ref().ok_or_else(|| missing("alpha_p"))?,
            )?,
            "yeoh" => MaterialModel::yeoh(
                self.c1.ok_or_else(|| missing("c1"))?,
                self.c2.unwrap_or(0.0),
                self.c3.unwrap_or(0.0),
            )?,
            other => {
                return Err(MaterialError::InvalidParameters(format!("unknown model `{other}`")))
            }
        };
        Ok((model, VolumetricModel::new(self.c_vol)?))
    }
}

/// Random rotations and deformation gradients for property sampling.
pub mod sampling {
    use super::*;
    pub use super::rand_distr_free::standard_normal;

    /// Uniformly distributed rotation from a normalized Gaussian quaternion.
    pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3 {
        let q = nalgebra::Quaternion::new(
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
        );
        nalgebra::UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .into_inner()
    }

    /// Random matrix with determinant drawn uniformly from `[det_lo, det_hi]`.
    pub fn random_deformation<R: Rng + ?Sized>(rng: &mut R, det_lo: f64, det_hi: f64) -> Matrix3 {
        loop {
            let mut g = Matrix3::identity() + Matrix3::from_fn(|_, _| 0.5 * standard_normal(rng));
            let mut det = g.determinant();
            if det.abs() < 1e-3 {
                continue;
            }
            if det < 0.0 {
                g.row_mut(0).neg_mut();
                det = -det;
            }
            let target = rng.gen_range(det_lo..=det_hi);
            return (target / det).cbrt() * g;
        }
    }

    /// Random matrix with unit determinant.
    pub fn random_isochoric<R: Rng + ?Sized>(rng: &mut R) -> Matrix3 {
        random_deformation(rng, 1.0, 1.0)
    }
}

/// Box-Muller normal deviates; keeps the dependency set to `rand` alone.
mod rand_distr_free {
    use rand::Rng;

    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn neo() -> (MaterialModel, VolumetricModel) {
        (MaterialModel::neo_hookean(1.0).unwrap(), VolumetricModel::new(1.0).unwrap())
    }

    fn all_models() -> Vec<MaterialModel> {
        vec![
            MaterialModel::neo_hookean(1.0).unwrap(),
            MaterialModel::mooney_rivlin(0.7, 0.3).unwrap(),
            MaterialModel::ogden(&[1.2, 0.4], &[1.5, 4.0]).unwrap(),
            MaterialModel::yeoh(1.0, 0.5, 0.1).unwrap(),
        ]
    }

    #[test]
    fn energy_examples() {
        let (m, v) = neo();
        assert_eq!(energy(&m, &v, &Matrix3::identity()), Energy::Finite(0.0));
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 0.5, 1.0));
        assert_relative_eq!(energy(&m, &v, &f).value().unwrap(), 2.25, epsilon = 1e-14);
        let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        for model in all_models() {
            assert_eq!(energy(&model, &v, &refl), Energy::Infinite);
        }
    }

    #[test]
    fn incompressible_examples() {
        let (m, v) = neo();
        let e = |f: Matrix3, tol| energy_incompressible(&m, &v, &f, tol).unwrap();
        assert_eq!(e(Matrix3::identity(), 0.0), Energy::Finite(0.0));
        assert_eq!(e(Matrix3::identity() * 2.0, 1e-8), Energy::Infinite);
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 0.5, 1.0));
        assert_relative_eq!(e(f, 1e-8).value().unwrap(), 2.25, epsilon = 1e-14);
        assert!(energy_incompressible(&m, &v, &f, -1.0).is_err());
    }

    #[test]
    fn volumetric_model_shape() {
        let v = VolumetricModel::new(3.0).unwrap();
        assert_eq!(v.energy(1.0), Energy::Finite(0.0));
        assert_eq!(v.derivative(1.0), 0.0);
        for t in [0.1, 0.5, 0.999, 1.001, 2.0, 10.0] {
            assert!(v.energy(t).value().unwrap() > 0.0);
        }
        assert_eq!(v.energy(0.0), Energy::Infinite);
        // tiny excess keeps relative precision: 2δ² - (4/3)δ³...
        let d = 1e-9;
        assert_relative_eq!(log_barrier(d), 2.0 * d * d, max_relative = 1e-8);
        assert!(VolumetricModel::new(0.0).is_err());
    }

    #[test]
    fn stress_matches_finite_differences() {
        let (m, v) = neo();
        let mut f = Matrix3::identity();
        f[(0, 1)] = 0.01;
        let p = stress(&m, &v, &f).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let mut fp = f;
                fp[(i, j)] += h;
                let mut fm = f;
                fm[(i, j)] -= h;
                let fd = (energy(&m, &v, &fp).value().unwrap() - energy(&m, &v, &fm).value().unwrap()) / (2.0 * h);
                let scale = p.abs().max().max(1e-12);
                assert!((fd - p[(i, j)]).abs() <= 1e-6 * scale, "({i},{j}) fd {fd} vs {}", p[(i, j)]);
            }
        }
    }

    #[test]
    fn stress_matches_fd_for_every_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = VolumetricModel::new(2.0).unwrap();
        for model in all_models() {
            for _ in 0..5 {
                let f = sampling::random_deformation(&mut rng, 0.6, 1.6);
                let p = stress(&model, &v, &f).unwrap();
                let h = 1e-6;
                for i in 0..3 {
                    for j in 0..3 {
                        let mut fp = f;
                        fp[(i, j)] += h;
                        let mut fm = f;
                        fm[(i, j)] -= h;
                        let fd = (energy(&model, &v, &fp).value().unwrap()
                            - energy(&model, &v, &fm).value().unwrap())
                            / (2.0 * h);
                        assert!(
                            (fd - p[(i, j)]).abs() <= 1e-5 * (1.0 + p.abs().max()),
                            "{model:?} ({i},{j}) fd {fd} vs {}",
                            p[(i, j)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rotations_are_stress_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = VolumetricModel::new(1.0).unwrap();
        for model in all_models() {
            assert_eq!(stress(&model, &v, &Matrix3::identity()).unwrap().abs().max(), 0.0);
            for _ in 0..20 {
                let r = sampling::random_rotation(&mut rng);
                assert!(stress(&model, &v, &r).unwrap().abs().max() <= 1e-10);
            }
        }
        assert!(stress(&all_models()[0], &v, &Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))).is_err());
    }

    #[test]
    fn hessian_examples() {
        let (m, v) = neo();
        let h = hessian_at_identity(&m, &v);
        let mut b = Matrix3::zeros();
        b[(0, 1)] = 1.0;
        // φ(s) = W(I + s e1⊗e2) = μ s², so φ''(0) = 2μ
        let fd = {
            let s = 1e-3;
            let w = |s: f64| energy(&m, &v, &(Matrix3::identity() + s * b)).value().unwrap();
            (w(s) - 2.0 * w(0.0) + w(-s)) / (s * s)
        };
        assert_relative_eq!(quadratic_form(&h, &b), fd, max_relative = 1e-6);
        assert_eq!(quadratic_form(&h, &Matrix3::zeros()), 0.0);
        assert_eq!(h.matrix(), &h.matrix().transpose());
    }

    #[test]
    fn analytic_hessian_agrees_with_fd_route() {
        for vol in [VolumetricModel::new(1.0).unwrap(), VolumetricModel::new(10.0).unwrap()] {
            for model in all_models() {
                let a = hessian_at_identity(&model, &vol);
                let fd = hessian_at_identity_fd(&model, &vol, 1e-4);
                let err = (a.matrix() - fd.matrix()).abs().max();
                assert!(err <= 1e-6 * a.matrix().abs().max(), "{model:?}: {err}");
            }
        }
    }

    #[test]
    fn quadratic_form_examples() {
        let (m, v) = neo();
        let h = hessian_at_identity(&m, &v);
        let skew = Matrix3::new(0.0, 1.0, -2.0, -1.0, 0.0, 3.0, 2.0, -3.0, 0.0);
        assert_eq!(quadratic_form(&h, &skew), 0.0);
        let mut b = Matrix3::zeros();
        b[(0, 1)] = 1.0;
        assert_eq!(quadratic_form(&h, &b), quadratic_form(&h, &b.transpose()));
        // dense contraction oracle: Σ_ijkl B_ij C_ijkl B_kl with C from polarization
        let eye = Matrix3::identity();
        let c = |i: usize, j: usize, k: usize, l: usize| {
            let mut a = Matrix3::zeros();
            a[(i, j)] = 1.0;
            let mut bb = Matrix3::zeros();
            bb[(k, l)] = 1.0;
            (quadratic_form(&h, &(a + bb)) - quadratic_form(&h, &(a - bb))) / 4.0
        };
        let mut dense = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        dense += eye[(i, j)] * c(i, j, k, l) * eye[(k, l)];
                    }
                }
            }
        }
        assert_relative_eq!(quadratic_form(&h, &eye), dense, max_relative = 1e-12);
        // 4μ|dev I|² + 4c (tr I)² = 36c
        assert_relative_eq!(quadratic_form(&h, &eye), 36.0, max_relative = 1e-14);
    }

    #[test]
    fn gp_examples() {
        assert_eq!(gp(1.5, 1.0).unwrap(), 1.0);
        let expected = 2.0 * 2f64.powf(1.5) / 1.5 - 2.0 / 1.5 + 1.0;
        assert_relative_eq!(gp(1.5, 2.0).unwrap(), expected, epsilon = 1e-15);
        assert_relative_eq!(gp(1.5, 2.0).unwrap(), 3.4379, epsilon = 1e-4);
        assert_eq!(gp(2.0, 3.0).unwrap(), 9.0);
        assert!(gp(1.0, 1.0).is_err());
        assert!(gp(2.5, 1.0).is_err());
        assert!(gp(1.5, -0.1).is_err());
    }

    #[test]
    fn gp_midpoint_convexity() {
        for p in [1.1, 1.5, 1.8, 2.0] {
            for i in 0..60 {
                for j in 0..60 {
                    let (s, t) = (0.1 * i as f64, 0.1 * j as f64);
                    let mid = gp(p, 0.5 * (s + t)).unwrap();
                    let avg = 0.5 * (gp(p, s).unwrap() + gp(p, t).unwrap());
                    assert!(mid <= avg + 1e-12, "p={p} s={s} t={t}");
                }
            }
        }
    }

    #[test]
    fn distance_to_so3_closed_form_against_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = sampling::random_rotation(&mut rng);
        assert!(distance_to_so3(&r) < 1e-12);
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 0.5, 1.0));
        assert_relative_eq!(distance_to_so3(&f), (1.0f64 + 0.25).sqrt(), epsilon = 1e-14);
        // det < 0: sampled rotations never beat the closed form
        let g = Matrix3::from_diagonal(&Vector3::new(1.5, 0.8, -0.4));
        let d = distance_to_so3(&g);
        assert_relative_eq!(d, (0.25f64 + 0.04 + 1.96).sqrt(), epsilon = 1e-14);
        let best = (0..20000)
            .map(|_| (g - sampling::random_rotation(&mut rng)).norm())
            .fold(f64::MAX, f64::min);
        assert!(best >= d - 1e-12 && best <= d + 0.1);
    }

    #[test]
    fn coercivity_examples() {
        let (m, v) = neo();
        let prof = CoercivityProfile::new(1.8, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = sampling::random_rotation(&mut rng);
        let rep = coercivity_check(&m, &v, &prof, &[Matrix3::identity(), r]);
        assert_eq!(rep.margins[0], Energy::Finite(0.0));
        assert!(rep.margins[1].value().unwrap().abs() < 1e-12);
        let samples: Vec<_> = (0..1000).map(|_| sampling::random_deformation(&mut rng, 0.5, 2.0)).collect();
        let rep = coercivity_check(&m, &v, &prof, &samples);
        assert!(rep.violations.is_empty(), "min margin {}", rep.min_margin);
        assert!(CoercivityProfile::new(2.1, 1.0).is_err());
    }

    #[test]
    fn frame_indifference_examples() {
        let (m, v) = neo();
        let eye = Matrix3::identity();
        assert_eq!(frame_indifference_check(&m, &v, &eye, &eye).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let f = sampling::random_deformation(&mut rng, 0.2, 5.0);
            let r = sampling::random_rotation(&mut rng);
            assert!(frame_indifference_check(&m, &v, &f, &r).unwrap() <= 1e-10);
        }
        let yeoh = MaterialModel::yeoh(1.0, 1.0, 1.0).unwrap();
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 0.5, 1.0));
        let r = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_3).into_inner();
        assert!(frame_indifference_check(&yeoh, &v, &f, &r).unwrap() <= 1e-10);
        assert!(frame_indifference_check(&m, &v, &f, &(2.0 * r)).is_err());
    }

    #[test]
    fn ogden_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v = VolumetricModel::new(1.0).unwrap();
        let neo = MaterialModel::neo_hookean(0.8).unwrap();
        let og1 = MaterialModel::ogden(&[1.6], &[2.0]).unwrap();
        let mr = MaterialModel::mooney_rivlin(0.6, 0.25).unwrap();
        let og2 = MaterialModel::ogden(&[0.6, -0.25], &[2.0, -2.0]).unwrap();
        for _ in 0..100 {
            let f = sampling::random_isochoric(&mut rng);
            let a = energy(&neo, &v, &f).value().unwrap();
            let b = energy(&og1, &v, &f).value().unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
            let a = energy(&mr, &v, &f).value().unwrap();
            let b = energy(&og2, &v, &f).value().unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn ogden_growth_is_subquadratic() {
        let og = MaterialModel::ogden(&[1.0], &[1.5]).unwrap();
        let v = VolumetricModel::new(1.0).unwrap();
        let pts: Vec<(f64, f64)> = (0..=20)
            .map(|i| {
                let lam = 10f64.powf(1.0 + 2.0 * i as f64 / 20.0);
                let f = Matrix3::from_diagonal(&Vector3::new(lam.powi(-2), lam, lam));
                (distance_to_so3(&f).ln(), energy(&og, &v, &f).value().unwrap().ln())
            })
            .collect();
        let slope = crate::util::least_squares_slope(&pts);
        assert!(slope > 1.0 && slope < 2.0, "slope {slope}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(MaterialModel::neo_hookean(-1.0).is_err());
        assert!(MaterialModel::ogden(&[1.0], &[]).is_err());
        assert!(MaterialModel::ogden(&[], &[]).is_err());
        assert!(MaterialModel::ogden(&[-1.0], &[2.0]).is_err());
        assert!(MaterialModel::yeoh(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn spec_table_parsing() {
        let ms: MaterialSpec = toml::from_str("model = \"ogden\"\nmu_p = [1.0]\nalpha_p = [1.5]\nc_vol = 2.0").unwrap();
        let (m, v) = ms.build().unwrap();
        assert_eq!(m, MaterialModel::ogden(&[1.0], &[1.5]).unwrap());
        assert_eq!(v.c, 2.0);
        let ms: MaterialSpec = toml::from_str("model = \"yeoh\"").unwrap();
        assert!(ms.build().is_err());
    }
}
