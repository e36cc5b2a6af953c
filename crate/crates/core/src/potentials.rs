//! Vector potentials and divergence-free projections on periodic boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{curl, divergence, gradient_scalar, BoxDomain, GammaMarker, ScalarField, VectorField};
use crate::flow_recovery::AnalyticVelocity;
use crate::linalg::{cg, identity_precond, LinalgError, SolveStats};
use crate::materials::{Matrix3, Vector3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("domain must be periodic")]
    NotPeriodic,
    #[error("constant field is not a curl (component means {0:?})")]
    NotACurl([f64; 3]),
    #[error("curl of the potential misses the input by {0:e}")]
    RoundTrip(f64),
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error("unknown potential `{0}`")]
    Unknown(String),
}

/// `Δ_h = div_h ∘ grad_h` applied to nodal data; negative semidefinite.
fn laplacian(domain: &BoxDomain, f: &[f64]) -> Vec<f64> {
    let s = ScalarField {
        domain: *domain,
        values: f.to_vec(),
    };
    divergence(&gradient_scalar(&s)).values
}

/// Solves `-Δ_h u = rhs` by CG to `‖residual‖_{L²} <= tol_l2`.
fn solve_poisson(domain: &BoxDomain, rhs: &[f64], tol_l2: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats), LinalgError> {
    let cell = domain.weight(0);
    let mut u = vec![0.0; rhs.len()];
    let stats = cg(
        |x, y| {
            for (o, v) in y.iter_mut().zip(laplacian(domain, x)) {
                *o = -v;
            }
        },
        identity_precond,
        rhs,
        &mut u,
        tol_l2 / cell.sqrt(),
        max_iter,
    )?;
    Ok((u, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LerayResult {
    pub field: VectorField,
    /// Gradient potential: input = field + ∇_h φ.
    pub phi: ScalarField,
    pub stats: SolveStats,
}

/// Discrete L²-orthogonal projection onto `ker div_h`: returns `v - ∇_h φ`
/// with `Δ_h φ = div_h v`, solved to `‖div_h(output)‖ <= tol ‖v‖`.
pub fn leray_project(v: &VectorField, tol: f64, max_iter: usize) -> Result<LerayResult, PotentialError> {
    let d = v.domain;
    if !d.is_periodic() {
        return Err(PotentialError::NotPeriodic);
    }
    let rhs: Vec<f64> = divergence(v).values.iter().map(|x| -x).collect();
    let scale = v.norm_l2();
    let (phi, stats) = solve_poisson(&d, &rhs, tol * scale, max_iter)?;
    let phi = ScalarField { domain: d, values: phi };
    let g = gradient_scalar(&phi);
    let field = v - &g;
    Ok(LerayResult { field, phi, stats })
}

/// Returns `w` with `curl_h w = v`, from `-Δ_h w = curl_h v` componentwise.
///
/// `v` must be discretely divergence-free and have zero mean per component.
pub fn curl_inverse(v: &VectorField, tol: f64, max_iter: usize) -> Result<VectorField, PotentialError> {
    let d = v.domain;
    if !d.is_periodic() {
        return Err(PotentialError::NotPeriodic);
    }
    let means = [
        v.component(0).mean(),
        v.component(1).mean(),
        v.component(2).mean(),
    ];
    let scale = v.norm_l2();
    if means.iter().any(|m| m.abs() > tol.max(1e-12 * scale)) {
        return Err(PotentialError::NotACurl(means));
    }
    let rhs = curl(v);
    let mut w = VectorField::zeros(&d);
    for c in 0..3 {
        let (u, _) = solve_poisson(&d, &rhs.data[c], 0.1 * tol, max_iter)?;
        w.data[c] = u;
    }
    let miss = (&curl(&w) - v).norm_l2();
    if miss > 10.0 * tol {
        return Err(PotentialError::RoundTrip(miss));
    }
    Ok(w)
}

/// Closed-form vector potential with derivatives up to second order.
pub trait Potential: Send + Sync + std::fmt::Debug {
    fn value(&self, x: &Vector3) -> Vector3;
    /// `(∇w)_{cb} = ∂w_c/∂x_b`
    fn jacobian(&self, x: &Vector3) -> Matrix3;
    /// Hessian of each component.
    fn hessians(&self, x: &Vector3) -> [Matrix3; 3];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn value(&self, _: &Vector3) -> Vector3 {
        Vector3::zeros()
    }
    fn jacobian(&self, _: &Vector3) -> Matrix3 {
        Matrix3::zeros()
    }
    fn hessians(&self, _: &Vector3) -> [Matrix3; 3] {
        [Matrix3::zeros(); 3]
    }
}

/// `amplitude · sin(k · x + phase)` in one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub component: usize,
    pub amplitude: f64,
    pub wavevector: [f64; 3],
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPotential {
    pub terms: Vec<TrigTerm>,
}

impl TrigPotential {
    /// Degree-2 benchmark on the unit torus.
    pub fn benchmark() -> Self {
        use std::f64::consts::TAU;
        let t = |component, amplitude, k: [f64; 3], phase| TrigTerm {
            component,
            amplitude,
            wavevector: [TAU * k[0], TAU * k[1], TAU * k[2]],
            phase,
        };
        Self {
            terms: vec![
                t(0, 1.0, [0.0, 1.0, 1.0], 0.3),
                t(1, 0.5, [2.0, 0.0, 1.0], -0.7),
                t(2, 0.25, [1.0, 2.0, 0.0], 1.1),
                t(2, 0.1, [1.0, 1.0, 1.0], 0.0),
            ],
        }
    }
}

impl Potential for TrigPotential {
    fn value(&self, x: &Vector3) -> Vector3 {
        let mut w = Vector3::zeros();
        for t in &self.terms {
            let k = Vector3::from(t.wavevector);
            w[t.component] += t.amplitude * (k.dot(x) + t.phase).sin();
        }
        w
    }
    fn jacobian(&self, x: &Vector3) -> Matrix3 {
        let mut j = Matrix3::zeros();
        for t in &self.terms {
            let k = Vector3::from(t.wavevector);
            let c = t.amplitude * (k.dot(x) + t.phase).cos();
            for b in 0..3 {
                j[(t.component, b)] += c * k[b];
            }
        }
        j
    }
    fn hessians(&self, x: &Vector3) -> [Matrix3; 3] {
        let mut h = [Matrix3::zeros(); 3];
        for t in &self.terms {
            let k = Vector3::from(t.wavevector);
            let s = -t.amplitude * (k.dot(x) + t.phase).sin();
            h[t.component] += s * k * k.transpose();
        }
        h
    }
}

/// `w_c(x) = b(x) (a_c0 + a_c · x)` with the C² bump `b = (1 - |x - x₀|²/R²)³₊`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpPotential {
    pub center: [f64; 3],
    pub radius: f64,
    /// Per component: constant term then the three linear coefficients.
    pub coeffs: [[f64; 4]; 3],
}

impl BumpPotential {
    /// `w = (0, 0, b(x) x₁)` centred in the unit box.
    pub fn benchmark() -> Self {
        Self {
            center: [0.5; 3],
            radius: 0.4,
            coeffs: [[0.0; 4], [0.0; 4], [0.0, 1.0, 0.0, 0.0]],
        }
    }

    fn bump(&self, x: &Vector3) -> (f64, Vector3, Matrix3) {
        let r = x - Vector3::from(self.center);
        let r2 = self.radius * self.radius;
        let q = 1.0 - r.norm_squared() / r2;
        if q <= 0.0 {
            return (0.0, Vector3::zeros(), Matrix3::zeros());
        }
        let b = q * q * q;
        let db = -6.0 * q * q / r2 * r;
        let hb = 24.0 * q / (r2 * r2) * r * r.transpose() - 6.0 * q * q / r2 * Matrix3::identity();
        (b, db, hb)
    }
}

impl Potential for BumpPotential {
    fn value(&self, x: &Vector3) -> Vector3 {
        let (b, _, _) = self.bump(x);
        Vector3::from_fn(|c, _| {
            let a = self.coeffs[c];
            b * (a[0] + a[1] * x[0] + a[2] * x[1] + a[3] * x[2])
        })
    }
    fn jacobian(&self, x: &Vector3) -> Matrix3 {
        let (b, db, _) = self.bump(x);
        Matrix3::from_fn(|c, j| {
            let a = self.coeffs[c];
            let p = a[0] + a[1] * x[0] + a[2] * x[1] + a[3] * x[2];
            db[j] * p + b * a[j + 1]
        })
    }
    fn hessians(&self, x: &Vector3) -> [Matrix3; 3] {
        let (_, db, hb) = self.bump(x);
        let mut out = [Matrix3::zeros(); 3];
        for (c, h) in out.iter_mut().enumerate() {
            let a = self.coeffs[c];
            let p = a[0] + a[1] * x[0] + a[2] * x[1] + a[3] * x[2];
            let g = Vector3::new(a[1], a[2], a[3]);
            *h = hb * p + db * g.transpose() + g * db.transpose();
        }
        out
    }
}

/// `v = curl w` for a closed-form potential `w`.
#[derive(Debug)]
pub struct CurlVelocity {
    pub potential: Box<dyn Potential>,
    pub zero_set: GammaMarker,
    pub label: String,
}

impl AnalyticVelocity for CurlVelocity {
    fn velocity(&self, x: &Vector3) -> Vector3 {
        let j = self.potential.jacobian(x);
        Vector3::new(j[(2, 1)] - j[(1, 2)], j[(0, 2)] - j[(2, 0)], j[(1, 0)] - j[(0, 1)])
    }
    fn jacobian(&self, x: &Vector3) -> Matrix3 {
        let h = self.potential.hessians(x);
        // ∂_d v_a with v = (∂₂w₃ - ∂₃w₂, ∂₃w₁ - ∂₁w₃, ∂₁w₂ - ∂₂w₁)
        Matrix3::from_fn(|a, d| match a {
            0 => h[2][(1, d)] - h[1][(2, d)],
            1 => h[0][(2, d)] - h[2][(0, d)],
            _ => h[1][(0, d)] - h[0][(1, d)],
        })
    }
    fn divergence_free(&self) -> bool {
        true
    }
    fn zero_set(&self) -> GammaMarker {
        self.zero_set
    }
    fn name(&self) -> String {
        format!("curl_of({})", self.label)
    }
}

/// Divergence-free velocity from a named potential: `zero`, `trig` or `bump`.
pub fn make_analytic_divfree(name: &str) -> Result<CurlVelocity, PotentialError> {
    let (potential, zero_set): (Box<dyn Potential>, GammaMarker) = match name {
        "zero" => (Box::new(ZeroPotential), GammaMarker::FullBoundary),
        "trig" => (Box::new(TrigPotential::benchmark()), GammaMarker::None),
        "bump" => (Box::new(BumpPotential::benchmark()), GammaMarker::FullBoundary),
        other => return Err(PotentialError::Unknown(other.into())),
    };
    Ok(CurlVelocity {
        potential,
        zero_set,
        label: name.into(),
    })
}

/// Divergence-free velocity from an explicit potential.
pub fn curl_of(potential: Box<dyn Potential>, zero_set: GammaMarker, label: &str) -> CurlVelocity {
    CurlVelocity {
        potential,
        zero_set,
        label: label.into(),
    }
}
