//! Manufactured Stokes-type solution on the unit cube:
//! `v* = curl(s e₃)`, `s = sin²(πx₁) sin²(πx₂) sin²(πx₃)`, `q* = sin(2πx₁)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::fields::{BoxDomain, GammaMarker, VectorField};
use crate::materials::ElasticityTensor;

use super::linear::{solve_linearized, LinearizedProblem};
use super::SolverError;

fn s0(t: f64) -> f64 {
    (PI * t).sin().powi(2)
}
fn s1(t: f64) -> f64 {
    PI * (2.0 * PI * t).sin()
}
fn s2(t: f64) -> f64 {
    2.0 * PI * PI * (2.0 * PI * t).cos()
}
fn s3(t: f64) -> f64 {
    -4.0 * PI.powi(3) * (2.0 * PI * t).sin()
}

pub fn velocity(x: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = x;
    [s0(a) * s1(b) * s0(c), -s1(a) * s0(b) * s0(c), 0.0]
}

pub fn pressure(x: [f64; 3]) -> f64 {
    (2.0 * PI * x[0]).sin()
}

/// `Δv*`
pub fn laplacian(x: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = x;
    let l1 = s2(a) * s1(b) * s0(c) + s0(a) * s3(b) * s0(c) + s0(a) * s1(b) * s2(c);
    let l2 = -(s3(a) * s0(b) * s0(c) + s1(a) * s2(b) * s0(c) + s1(a) * s0(b) * s2(c));
    [l1, l2, 0.0]
}

/// Body force `-(shear2/2) Δv* + ∇q*` for `H = shear2 P_dev + bulk I⊗I`.
pub fn load(x: [f64; 3], shear2: f64) -> [f64; 3] {
    let l = laplacian(x);
    let dq = 2.0 * PI * (2.0 * PI * x[0]).cos();
    [-0.5 * shear2 * l[0] + dq, -0.5 * shear2 * l[1], 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedRow {
    pub n: usize,
    pub h: f64,
    pub l2_error: f64,
    pub pressure_l2_error: f64,
    pub divergence_residual: f64,
    pub momentum_residual: f64,
    pub iterations: usize,
}

/// Solves the manufactured problem on `n³` grids of the unit cube.
pub fn study(tensor: &ElasticityTensor, ns: &[usize], beta: f64, tol: f64, max_iter: usize) -> Result<Vec<ManufacturedRow>, SolverError> {
    let shear2 = tensor.shear_scale();
    let mut rows = Vec::new();
    for &n in ns {
        let d = BoxDomain::unit_cube(n, GammaMarker::FullBoundary)?;
        let f = VectorField::from_fn(&d, |x| load(x, shear2));
        let mut p = LinearizedProblem::new(d, tensor.clone(), f);
        p.beta = beta;
        let sol = solve_linearized(&p, tol, max_iter)?;
        let exact = VectorField::from_fn(&d, velocity);
        let err = (&sol.v - &exact).norm_l2();
        let cells = super::q1::Cells::new(&d);
        let perr = (0..cells.len())
            .map(|c| (sol.pressure[c] - pressure(cells.center(c))).powi(2))
            .sum::<f64>()
            * cells.volume;
        rows.push(ManufacturedRow {
            n,
            h: d.spacing(0),
            l2_error: err,
            pressure_l2_error: perr.sqrt(),
            divergence_residual: sol.report.divergence_residual,
            momentum_residual: sol.report.momentum_residual,
            iterations: sol.report.iterations,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_is_divergence_free_and_vanishes_on_the_boundary() {
        let e = 1e-6;
        for x in [[0.3, 0.4, 0.7], [0.11, 0.52, 0.93], [0.5, 0.5, 0.5]] {
            let mut div = 0.0;
            for a in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += e;
                xm[a] -= e;
                div += (velocity(xp)[a] - velocity(xm)[a]) / (2.0 * e);
            }
            assert!(div.abs() < 1e-8);
        }
        for x in [[0.0, 0.4, 0.7], [0.3, 1.0, 0.2], [0.2, 0.6, 0.0]] {
            assert!(velocity(x).iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn laplacian_matches_differences() {
        let e = 1e-4;
        let x = [0.31, 0.47, 0.62];
        let mut fd = [0.0; 3];
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += e;
            xm[a] -= e;
            for c in 0..3 {
                fd[c] += (velocity(xp)[c] - 2.0 * velocity(x)[c] + velocity(xm)[c]) / (e * e);
            }
        }
        let l = laplacian(x);
        for c in 0..3 {
            assert!((fd[c] - l[c]).abs() < 1e-4 * (1.0 + l[c].abs()));
        }
    }

    #[test]
    fn error_drops_at_second_order() {
        let t = crate::materials::ElasticityTensor::isotropic(2.0, 1.0);
        let rows = study(&t, &[9, 17], 0.0, 1e-10, 5000).unwrap();
        let ratio = rows[0].l2_error / rows[1].l2_error;
        assert!(ratio > 3.5, "{ratio}");
        assert!(rows.iter().all(|r| r.divergence_residual <= 1e-8));
    }
}
