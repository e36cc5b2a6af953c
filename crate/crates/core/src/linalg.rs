//! Matrix-free Krylov solvers shared by the potential and saddle-point code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("operator is not positive definite (curvature {0:e})")]
    Indefinite(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Preconditioned conjugate gradients for `A x = b`, `A` symmetric positive
/// (semi)definite. Stops when the Euclidean residual is at most `tol`.
/// `precond` applies an SPD approximation of `A⁻¹`.
pub fn cg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats, LinalgError> {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = vec![norm(&r)];
    for it in 0..max_iter {
        let res = *history.last().unwrap();
        if res <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: res,
                history,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            if pap == 0.0 && rz == 0.0 {
                break;
            }
            return Err(LinalgError::Indefinite(pap));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        history.push(norm(&r));
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = *history.last().unwrap();
    if res <= tol {
        return Ok(SolveStats {
            iterations: max_iter,
            residual: res,
            history,
        });
    }
    Err(LinalgError::NotConverged {
        iterations: max_iter,
        residual: res,
        history,
    })
}

pub fn identity_precond(r: &[f64], z: &mut [f64]) {
    z.copy_from_slice(r);
}

/// Preconditioned MINRES for symmetric (possibly indefinite) `A`, SPD
/// preconditioner `M ≈ |A|⁻¹`. Stops when the preconditioned residual
/// estimate `(rᵀMr)^{1/2}` drops below `rtol` times its initial value or below `atol`.
pub fn minres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    atol: f64,
    max_iter: usize,
) -> Result<SolveStats, LinalgError> {
    let n = b.len();
    let mut r1 = vec![0.0; n];
    apply(x, &mut r1);
    for i in 0..n {
        r1[i] = b[i] - r1[i];
    }
    let mut y = vec![0.0; n];
    precond(&r1, &mut y);
    let beta1_sq = dot(&r1, &y);
    if beta1_sq < 0.0 {
        return Err(LinalgError::Indefinite(beta1_sq));
    }
    let beta1 = beta1_sq.sqrt();
    let mut history = vec![beta1];
    if beta1 <= atol {
        return Ok(SolveStats {
            iterations: 0,
            residual: beta1,
            history,
        });
    }
    let target = (rtol * beta1).max(atol);
    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        apply(&v, &mut y);
        if itn >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond(&r2, &mut y);
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        if beta_sq < 0.0 {
            return Err(LinalgError::Indefinite(beta_sq));
        }
        beta = beta_sq.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
        }
        axpy(phi, &w, x);
        history.push(phibar);
        if phibar <= target || beta == 0.0 {
            return Ok(SolveStats {
                iterations: itn,
                residual: phibar,
                history,
            });
        }
    }
    Err(LinalgError::NotConverged {
        iterations: max_iter,
        residual: phibar,
        history,
    })
}
