//! Functionals shifted by nonzero boundary data `v̄`:
//! `G̃(v₀) = G(v₀) + a(v̄, v₀) + Ḡ(v̄)` with `v₀ = 0` on Γ, where
//! `Ḡ(v) = ½ a(v, v) - L(v)` on the affine set `v = v̄` on Γ.

use serde::{Deserialize, Serialize};

use crate::fields::VectorField;

use super::linear::{linearized_energy_with, mask, quadratic_energy, solve_linearized, LinearizedProblem, SaddleOperator, SaddleSolution};
use super::nonlinear::{nonlinear_energy, EnergyBreakdown, NonlinearProblem};
use super::SolverError;
use crate::materials::Energy;

pub struct ShiftedFunctionals {
    /// Homogeneous problem (`v = 0` on Γ) defining `G`.
    pub base: LinearizedProblem,
    /// Full field whose Γ values are the data.
    pub vbar: VectorField,
    op: SaddleOperator,
    gbar_vbar: f64,
}

impl ShiftedFunctionals {
    /// Requires `‖div v̄‖_{L²} <= problem.feas_tol`.
    pub fn new(problem: &LinearizedProblem, vbar: VectorField) -> Result<Self, SolverError> {
        problem.validate()?;
        if vbar.domain != problem.domain {
            return Err(SolverError::InvalidProblem("v̄ lives on a different grid".into()));
        }
        let mut base = problem.clone();
        base.boundary = None;
        base.extra_force = None;
        base.constraint_rhs = None;
        let op = SaddleOperator::new(&base.domain, &base.tensor, 0.0);
        let div = op.divergence_norm(&vbar.flat());
        if div > base.feas_tol {
            return Err(SolverError::InvalidProblem(format!("div v̄ = {div:e} exceeds the feasibility tolerance")));
        }
        let gbar_vbar = quadratic_energy(&base, &op, &vbar.flat());
        Ok(Self {
            base,
            vbar,
            op,
            gbar_vbar,
        })
    }

    /// `G(v₀) = ½ a(v₀, v₀) - L(v₀)`
    pub fn g(&self, v0: &VectorField) -> f64 {
        quadratic_energy(&self.base, &self.op, &v0.flat())
    }

    /// `a(v̄, v₀)`
    pub fn cross(&self, v0: &VectorField) -> f64 {
        self.op.quadratic(&self.vbar.flat(), &v0.flat())
    }

    /// `G̃(v₀) = G(v₀) + a(v̄, v₀) + Ḡ(v̄)`
    pub fn g_tilde(&self, v0: &VectorField) -> f64 {
        self.g(v0) + self.cross(v0) + self.gbar_vbar
    }

    /// `Ḡ(v) = ½ a(v, v) - L(v)`
    pub fn g_bar(&self, v: &VectorField) -> f64 {
        quadratic_energy(&self.base, &self.op, &v.flat())
    }

    /// `Ḡ` with the feasibility checks of `linearized_energy` (data `v̄` on Γ).
    pub fn g_bar_checked(&self, v: &VectorField) -> Energy {
        let mut p = self.base.clone();
        p.boundary = Some(self.vbar.clone());
        linearized_energy_with(&p, &self.op, v)
    }

    /// Nonlinear shifted energy `G̃_h(v₀)`: the scaled energy of `v₀ + data`
    /// with `data` on Γ, usually `v̄` or its flow-recovered counterpart.
    pub fn g_tilde_h(&self, problem: &NonlinearProblem, data: &VectorField, v0: &VectorField) -> Result<EnergyBreakdown, SolverError> {
        let mut p = problem.clone();
        p.boundary = Some(data.clone());
        nonlinear_energy(&p, &(v0 + data))
    }

    /// Homogeneous problem for `v₀`: load `f - A v̄`, constraint `B v₀ = -B v̄`.
    pub fn shifted_problem(&self) -> LinearizedProblem {
        let x = self.vbar.flat();
        let mut av = vec![0.0; x.len()];
        self.op.apply_a(&x, &mut av);
        mask(&self.op.fixed, &mut av);
        let mut p = self.base.clone();
        p.extra_force = Some(av.iter().map(|v| -v).collect());
        let mut bv = vec![0.0; self.op.cells.len()];
        self.op.apply_b(&x, &mut bv);
        p.constraint_rhs = Some(bv.iter().map(|v| -v).collect());
        p
    }

    /// Minimizer with data `v̄` on Γ, computed directly and through the
    /// shifted homogeneous problem.
    pub fn two_routes(&self, tol: f64, max_iter: usize) -> Result<TwoRoutes, SolverError> {
        let mut direct_problem = self.base.clone();
        direct_problem.boundary = Some(self.vbar.clone());
        let direct = solve_linearized(&direct_problem, tol, max_iter)?;
        let shifted = solve_linearized(&self.shifted_problem(), tol, max_iter)?;
        let v0 = shifted.v.clone();
        let recombined = &v0 + &self.vbar;
        let max_diff = (&recombined - &direct.v).max_abs();
        let g_tilde = self.g_tilde(&v0);
        let g_bar = self.g_bar(&recombined);
        Ok(TwoRoutes {
            report: TwoRouteReport {
                max_diff,
                g_tilde,
                g_bar,
                identity_gap: (g_tilde - g_bar).abs(),
                direct_iterations: direct.report.iterations,
                shifted_iterations: shifted.report.iterations,
            },
            direct,
            shifted,
            recombined,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRouteReport {
    /// `max |(v₀ + v̄) - v_direct|`
    pub max_diff: f64,
    pub g_tilde: f64,
    pub g_bar: f64,
    pub identity_gap: f64,
    pub direct_iterations: usize,
    pub shifted_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct TwoRoutes {
    pub report: TwoRouteReport,
    pub direct: SaddleSolution,
    /// Solution of the shifted problem, `v₀`.
    pub shifted: SaddleSolution,
    pub recombined: VectorField,
}
