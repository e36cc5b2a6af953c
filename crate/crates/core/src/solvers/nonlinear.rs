//! Scaled nonlinear energy `h⁻² ∫ W(I + h∇v) - L(v)` with the volume
//! constraint relaxed by a penalty or an augmented Lagrangian.
//!
//! The isochoric density is integrated at the Gauss points; the volumetric
//! terms act on the cell-centre determinant `J̄_c`, one constraint per cell,
//! matching the pressure space of the linear solver.

use serde::{Deserialize, Serialize};

use crate::fields::{BoxDomain, VectorField};
use crate::linalg::{dot, minres};
use crate::materials::{det_from_disp, log_barrier, ElasticityTensor, Energy, MaterialModel, Matrix3, Vector3, VolumetricModel};

use super::linear::{boundary_lift, mask, nodal_load, validate_domain, BlockPreconditioner, SaddleOperator};
use super::q1::{CellMap, Cells, ElementGeometry};
use super::SolverError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintMode {
    Penalty {
        weight: f64,
    },
    AugmentedLagrangian {
        weight: f64,
        /// One multiplier per cell; `None` starts from zero.
        #[serde(skip)]
        multipliers: Option<Vec<f64>>,
    },
}

impl ConstraintMode {
    pub fn weight(&self) -> f64 {
        match self {
            ConstraintMode::Penalty { weight } | ConstraintMode::AugmentedLagrangian { weight, .. } => *weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    /// Stop when `sqrt(gᵀ H g) <= gtol`, `H` the quasi-Newton inverse Hessian.
    pub gtol: f64,
    pub det_tol: f64,
    /// Multiplier cycles stop once the Lagrangian change of the next
    /// multiplier step is below this fraction of the energy scale.
    pub energy_tol: f64,
    pub max_iter: usize,
    pub max_outer: usize,
    pub memory: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    /// Relative tolerance of the inner saddle solve used as `H₀`.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-10,
            det_tol: 1e-6,
            energy_tol: 1e-13,
            max_iter: 200,
            max_outer: 20,
            memory: 10,
            armijo: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            max_backtracks: 40,
            inner_tol: 1e-4,
            inner_max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearProblem {
    pub domain: BoxDomain,
    pub material: MaterialModel,
    pub volumetric: VolumetricModel,
    pub h: f64,
    pub load: VectorField,
    /// Dirichlet data; only the Γ values are used.
    pub boundary: Option<VectorField>,
    /// Extra nodal forces (flat, component-major).
    pub extra_force: Option<Vec<f64>>,
    pub mode: ConstraintMode,
    pub options: OptimizerOptions,
}

impl NonlinearProblem {
    pub fn new(domain: BoxDomain, material: MaterialModel, volumetric: VolumetricModel, h: f64, load: VectorField, mode: ConstraintMode) -> Self {
        Self {
            domain,
            material,
            volumetric,
            h,
            load,
            boundary: None,
            extra_force: None,
            mode,
            options: OptimizerOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        validate_domain(&self.domain)?;
        self.material.validate()?;
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(SolverError::InvalidProblem(format!("h must be positive, got {}", self.h)));
        }
        let w = self.mode.weight();
        if !(w > 0.0 && w.is_finite()) {
            return Err(SolverError::InvalidProblem(format!("weight must be positive, got {w}")));
        }
        if self.load.domain != self.domain {
            return Err(SolverError::InvalidProblem("load lives on a different grid".into()));
        }
        if let ConstraintMode::AugmentedLagrangian {
            multipliers: Some(m), ..
        } = &self.mode
        {
            if m.len() != Cells::new(&self.domain).len() {
                return Err(SolverError::InvalidProblem("one multiplier per cell expected".into()));
            }
        }
        Ok(())
    }
}

/// Energy value with feasibility diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: Energy,
    /// `h⁻² ∫ W_iso`
    pub isochoric: f64,
    /// Penalty plus multiplier terms.
    pub volumetric: f64,
    /// `L(v)` including extra forces.
    pub load: f64,
    /// `max_c |J̄_c - 1|` at cell centres.
    pub max_det_err: f64,
    /// `max |J - 1|` over Gauss points.
    pub max_det_err_quad: f64,
}

/// `cof(I + D)` accurate for small `D`.
fn cofactor_disp(d: &Matrix3) -> Matrix3 {
    let c0: Vector3 = d.column(0).into();
    let c1: Vector3 = d.column(1).into();
    let c2: Vector3 = d.column(2).into();
    let cof_d = Matrix3::from_columns(&[c1.cross(&c2), c2.cross(&c0), c0.cross(&c1)]);
    Matrix3::identity() * (1.0 + d.trace()) - d.transpose() + cof_d
}

/// Cell-loop evaluator of the constrained energy.
struct Evaluator {
    cells: Cells,
    geo: ElementGeometry,
    material: MaterialModel,
    n: usize,
    h: f64,
    weight: f64,
    multipliers: Vec<f64>,
    force: Vec<f64>,
    fixed: Vec<bool>,
}

struct Eval {
    breakdown: EnergyBreakdown,
    /// Cell-centre `J̄ - 1`.
    delta: Vec<f64>,
    /// Sum of the magnitudes of all terms, for round-off bounds.
    scale: f64,
    /// Size of the terms that cancel inside the energy, for round-off tests.
    noise: f64,
}

impl Evaluator {
    fn new(p: &NonlinearProblem, weight: f64, multipliers: Vec<f64>) -> Self {
        let cells = Cells::new(&p.domain);
        Self {
            geo: ElementGeometry::new(cells.spacing),
            cells,
            material: p.material.clone(),
            n: p.domain.node_count(),
            h: p.h,
            weight,
            multipliers,
            force: nodal_load(&p.domain, &p.load, p.extra_force.as_ref()),
            fixed: (0..p.domain.node_count()).map(|i| p.domain.is_gamma(i)).collect(),
        }
    }

    /// Energy, and the gradient on free rows when `grad` is given.
    fn eval(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> Eval {
        let h = self.h;
        let inv_h2 = 1.0 / (h * h);
        let vol = self.cells.volume;
        let w = self.geo.weight;
        let mut iso = 0.0;
        let mut volumetric = 0.0;
        let mut scale = 0.0;
        let mut noise = 0.0;
        let shear = self.material.shear_stiffness();
        let mut max_det = 0.0f64;
        let mut max_det_q = 0.0f64;
        let mut delta = vec![0.0; self.cells.len()];
        let mut infinite = false;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for c in 0..self.cells.len() {
            let nodes = self.cells.nodes(c);
            let u = super::q1::gather(x, &nodes, self.n);
            let mut ge = [Vector3::zeros(); 8];
            for q in 0..8 {
                let d = h * ElementGeometry::grad(&self.geo.gauss[q], &u);
                max_det_q = max_det_q.max(det_from_disp(&d).abs());
                let dn = d.norm();
                noise += w * shear * (dn + dn * dn);
                match self.material.isochoric_energy_disp(&d) {
                    Energy::Finite(wq) => {
                        iso += w * wq;
                        scale += w * wq.abs();
                    }
                    Energy::Infinite => {
                        infinite = true;
                        continue;
                    }
                }
                if grad.is_some() {
                    if let Ok(p) = self.material.isochoric_stress_disp(&d) {
                        let s = w / h;
                        for a in 0..8 {
                            ge[a] += s * (p * self.geo.gauss[q][a]);
                        }
                    }
                }
            }
            let dc = h * ElementGeometry::grad(&self.geo.center, &u);
            let dl = det_from_disp(&dc);
            delta[c] = dl;
            max_det = max_det.max(dl.abs());
            if 1.0 + dl <= 0.0 {
                infinite = true;
                continue;
            }
            let lam = self.multipliers.get(c).copied().unwrap_or(0.0);
            let term = self.weight * log_barrier(dl) + lam * dl;
            volumetric += vol * term;
            scale += vol * (self.weight * log_barrier(dl)).abs() + vol * (lam * dl).abs();
            noise += vol * (self.weight + lam.abs()) * dc.norm();
            if grad.is_some() {
                // φ'(J) = 2(J - 1/J)
                let dphi = 2.0 * dl * (2.0 + dl) / (1.0 + dl);
                let s = vol / h * (self.weight * dphi + lam);
                let cof = cofactor_disp(&dc);
                for a in 0..8 {
                    ge[a] += s * (cof * self.geo.center[a]);
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                for a in 0..8 {
                    if self.fixed[nodes[a]] {
                        continue;
                    }
                    for k in 0..3 {
                        g[k * self.n + nodes[a]] += ge[a][k];
                    }
                }
            }
        }
        let load = dot(&self.force, x);
        if let Some(g) = grad {
            for (gi, fi) in g.iter_mut().zip(&self.force) {
                *gi -= fi;
            }
            mask(&self.fixed, g);
        }
        let iso = iso * inv_h2;
        let volumetric = volumetric * inv_h2;
        let load_abs = self.force.iter().zip(x).map(|(a, b)| (a * b).abs()).sum::<f64>();
        let scale = scale * inv_h2 + load_abs;
        let noise = noise * inv_h2 + load_abs;
        let total = if infinite {
            Energy::Infinite
        } else {
            Energy::Finite(iso + volumetric - load)
        };
        Eval {
            breakdown: EnergyBreakdown {
                total,
                isochoric: iso,
                volumetric,
                load,
                max_det_err: max_det,
                max_det_err_quad: max_det_q,
            },
            delta,
            scale,
            noise,
        }
    }
}

fn initial_multipliers(p: &NonlinearProblem) -> Vec<f64> {
    let nc = Cells::new(&p.domain).len();
    match &p.mode {
        ConstraintMode::AugmentedLagrangian {
            multipliers: Some(m), ..
        } => m.clone(),
        _ => vec![0.0; nc],
    }
}

/// Constrained scaled energy of `v` with the problem's multipliers.
pub fn nonlinear_energy(problem: &NonlinearProblem, v: &VectorField) -> Result<EnergyBreakdown, SolverError> {
    problem.validate()?;
    let ev = Evaluator::new(problem, problem.mode.weight(), initial_multipliers(problem));
    Ok(ev.eval(&v.flat(), None).breakdown)
}

/// Inverse of the energy Hessian at `v = 0`, applied by an inner saddle solve:
/// `(A_dev + κ Bᵀ M⁻¹ B) z = r` with `κ = 4·weight`.
struct HessianPreconditioner {
    op: SaddleOperator,
    pre: BlockPreconditioner,
    kappa: f64,
    tol: f64,
    max_iter: usize,
    inner_iterations: std::cell::Cell<usize>,
}

impl HessianPreconditioner {
    fn new(p: &NonlinearProblem, weight: f64) -> Self {
        let shear = p.material.shear_stiffness();
        let tensor = CellMap::uniform(ElasticityTensor::isotropic(shear, 0.0));
        let kappa = 4.0 * weight;
        let sigma0 = 2.0 / 3.0 * shear;
        Self {
            op: SaddleOperator::new(&p.domain, &tensor, 0.0),
            pre: BlockPreconditioner::new(&p.domain, shear * (0.5 + 1.0 / 18.0), 1.0 / (1.0 / sigma0 + 1.0 / kappa)),
            kappa,
            tol: p.options.inner_tol,
            max_iter: p.options.inner_max_iter,
            inner_iterations: std::cell::Cell::new(0),
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nv = self.op.velocity_len();
        let nc = self.op.cells.len();
        let mut rhs = vec![0.0; nv + nc];
        rhs[..nv].copy_from_slice(r);
        mask(&self.op.fixed, &mut rhs[..nv]);
        let mut x = vec![0.0; nv + nc];
        let vol = self.op.cells.volume;
        let coupling = 1.0 / self.kappa;
        let res = minres(
            |p, y| self.op.apply(p, y, coupling),
            |q, y| self.pre.apply(q, y, vol),
            &rhs,
            &mut x,
            self.tol,
            0.0,
            self.max_iter,
        );
        let its = match &res {
            Ok(s) => s.iterations,
            Err(_) => self.max_iter,
        };
        self.inner_iterations.set(self.inner_iterations.get() + its);
        z.copy_from_slice(&x[..nv]);
        mask(&self.op.fixed, z);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearReport {
    pub energy: f64,
    pub breakdown: EnergyBreakdown,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub outer_cycles: usize,
    pub gradient_norm: f64,
    pub final_weight: f64,
    pub converged: bool,
    /// Energies after each multiplier cycle.
    pub cycle_energies: Vec<f64>,
    pub cycle_violations: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NonlinearSolution {
    pub v: VectorField,
    pub multipliers: Vec<f64>,
    pub report: NonlinearReport,
}

struct InnerResult {
    iterations: usize,
    gradient_norm: f64,
    eval: Eval,
}

/// Limited-memory BFGS with Armijo backtracking over the free entries of `x`.
fn lbfgs(ev: &Evaluator, pre: &HessianPreconditioner, x: &mut [f64], opts: &OptimizerOptions) -> Result<InnerResult, SolverError> {
    let nv = x.len();
    let mut g = vec![0.0; nv];
    let mut cur = ev.eval(x, Some(&mut g));
    let Energy::Finite(mut e) = cur.breakdown.total else {
        return Err(SolverError::InfeasibleStart);
    };
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut d = vec![0.0; nv];
    let mut gnorm = f64::INFINITY;
    for it in 0..opts.max_iter {
        // two-loop recursion
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
            crate::linalg::axpy(-alpha[i], &y_hist[i], &mut q);
        }
        let mut r = vec![0.0; nv];
        pre.apply(&q, &mut r);
        for i in 0..m {
            let b = rho_hist[i] * dot(&y_hist[i], &r);
            crate::linalg::axpy(alpha[i] - b, &s_hist[i], &mut r);
        }
        for i in 0..nv {
            d[i] = -r[i];
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            pre.apply(&g, &mut r);
            for i in 0..nv {
                d[i] = -r[i];
            }
            slope = dot(&g, &d);
        }
        gnorm = (-slope).max(0.0).sqrt();
        if gnorm <= opts.gtol {
            return Ok(InnerResult {
                iterations: it,
                gradient_norm: gnorm,
                eval: cur,
            });
        }
        let mut step = opts.initial_step;
        let mut accepted = None;
        let mut xn = vec![0.0; nv];
        let mut gn = vec![0.0; nv];
        for _ in 0..=opts.max_backtracks {
            for i in 0..nv {
                xn[i] = x[i] + step * d[i];
            }
            let trial = ev.eval(&xn, Some(&mut gn));
            if let Energy::Finite(en) = trial.breakdown.total {
                if en <= e + opts.armijo * step * slope {
                    accepted = Some((en, trial));
                    break;
                }
            }
            step *= opts.backtrack;
        }
        let Some((en, trial)) = accepted else {
            // a decrease below round-off counts as converged
            if -slope <= 64.0 * f64::EPSILON * cur.scale.max(cur.noise).max(e.abs()) {
                return Ok(InnerResult {
                    iterations: it,
                    gradient_norm: gnorm,
                    eval: cur,
                });
            }
            return Err(SolverError::LineSearch {
                iteration: it,
                energy: e,
                last: Box::new(VectorField::from_flat(&domain_of(ev), x)),
            });
        };
        let s: Vec<f64> = (0..nv).map(|i| xn[i] - x[i]).collect();
        let yv: Vec<f64> = (0..nv).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
            rho_hist.push(1.0 / sy);
        }
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        e = en;
        cur = trial;
    }
    if gnorm <= opts.gtol {
        return Ok(InnerResult {
            iterations: opts.max_iter,
            gradient_norm: gnorm,
            eval: cur,
        });
    }
    Err(SolverError::NotConverged {
        iterations: opts.max_iter,
        residual: gnorm,
        history: vec![e],
    })
}

fn domain_of(ev: &Evaluator) -> BoxDomain {
    ev.cells.domain
}

/// Quasi-Newton minimization of the constrained energy from `init`.
pub fn minimize_nonlinear(problem: &NonlinearProblem, init: &VectorField) -> Result<NonlinearSolution, SolverError> {
    problem.validate()?;
    let opts = &problem.options;
    let zero = VectorField::zeros(&problem.domain);
    let data = problem.boundary.as_ref().unwrap_or(&zero);
    if init.domain != problem.domain || !init.satisfies_dirichlet_data(data, 1e-12 * (1.0 + data.max_abs())) {
        return Err(SolverError::InvalidProblem("init must match the Dirichlet data".into()));
    }
    let mut x = init.flat();
    // make Γ entries exactly the data
    let lift = boundary_lift(&problem.domain, problem.boundary.as_ref());
    let n = problem.domain.node_count();
    for node in problem.domain.gamma_nodes() {
        for k in 0..3 {
            x[k * n + node] = lift[k * n + node];
        }
    }
    let mut weight = problem.mode.weight();
    let mut multipliers = initial_multipliers(problem);
    let al = matches!(problem.mode, ConstraintMode::AugmentedLagrangian { .. });
    let mut total_iters = 0;
    let mut cycle_energies = Vec::new();
    let mut cycle_violations = Vec::new();
    let mut inner_total = 0;
    let mut pre = HessianPreconditioner::new(problem, weight);
    loop {
        let ev = Evaluator::new(problem, weight, multipliers.clone());
        let inner = lbfgs(&ev, &pre, &mut x, opts)?;
        total_iters += inner.iterations;
        let b = inner.eval.breakdown;
        let energy = b.total.value().unwrap_or(f64::INFINITY);
        cycle_energies.push(energy);
        cycle_violations.push(b.max_det_err);
        let cycles = cycle_energies.len();
        let mut done = !al;
        if al {
            // first-order change of the Lagrangian caused by the next multiplier step
            let vol = Cells::new(&problem.domain).volume;
            let steps: Vec<f64> = inner.eval.delta.iter().map(|dl| weight * 2.0 * dl * (2.0 + dl) / (1.0 + dl)).collect();
            let dual_change = vol / (problem.h * problem.h)
                * steps.iter().zip(&inner.eval.delta).map(|(s, d)| (s * d).abs()).sum::<f64>();
            let settled = dual_change <= opts.energy_tol * inner.eval.scale.max(f64::MIN_POSITIVE);
            if b.max_det_err <= opts.det_tol && settled {
                done = true;
            } else if cycles >= opts.max_outer {
                if b.max_det_err <= opts.det_tol {
                    done = true;
                } else {
                    return Err(SolverError::Stagnation {
                        cycles,
                        violation: b.max_det_err,
                    });
                }
            } else {
                if cycles >= 3
                    && b.max_det_err > opts.det_tol
                    && b.max_det_err >= cycle_violations[cycles - 2]
                    && b.max_det_err >= cycle_violations[cycles - 3]
                {
                    return Err(SolverError::Stagnation {
                        cycles,
                        violation: b.max_det_err,
                    });
                }
                for (l, s) in multipliers.iter_mut().zip(&steps) {
                    *l += s;
                }
                if b.max_det_err > opts.det_tol && cycles >= 2 && b.max_det_err > 0.25 * cycle_violations[cycles - 2] {
                    weight *= 10.0;
                    inner_total += pre.inner_iterations.get();
                    pre = HessianPreconditioner::new(problem, weight);
                }
            }
        }
        if done {
            inner_total += pre.inner_iterations.get();
            return Ok(NonlinearSolution {
                v: VectorField::from_flat(&problem.domain, &x),
                multipliers,
                report: NonlinearReport {
                    energy,
                    breakdown: b,
                    iterations: total_iters,
                    inner_iterations: inner_total,
                    outer_cycles: cycles,
                    gradient_norm: inner.gradient_norm,
                    final_weight: weight,
                    converged: true,
                    cycle_energies,
                    cycle_violations,
                },
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GammaMarker;
    use crate::flow_recovery::{recover, RigidVelocity};

    fn neo() -> (MaterialModel, VolumetricModel) {
        (MaterialModel::neo_hookean(1.0).unwrap(), VolumetricModel::new(1.0).unwrap())
    }

    fn problem(n: usize, h: f64, load: impl Fn([f64; 3]) -> [f64; 3], mode: ConstraintMode) -> NonlinearProblem {
        let d = BoxDomain::unit_cube(n, GammaMarker::FullBoundary).unwrap();
        let (m, v) = neo();
        NonlinearProblem::new(d, m, v, h, VectorField::from_fn(&d, load), mode)
    }

    #[test]
    fn cofactor_matches_inverse_transpose() {
        let d = Matrix3::new(0.1, -0.2, 0.05, 0.3, -0.1, 0.2, 0.0, 0.4, 0.15);
        let f = Matrix3::identity() + d;
        let expected = f.determinant() * f.try_inverse().unwrap().transpose();
        assert!((cofactor_disp(&d) - expected).amax() < 1e-14);
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let p = problem(5, 0.1, |_| [1.0, 0.0, 0.0], ConstraintMode::Penalty { weight: 10.0 });
        let e = nonlinear_energy(&p, &VectorField::zeros(&p.domain)).unwrap();
        assert_eq!(e.total, Energy::Finite(0.0));
    }

    #[test]
    fn rigid_rotation_energy_is_small_and_flow_rotation_is_exact() {
        let n = 9;
        let d = BoxDomain::unit_cube(n, GammaMarker::FullBoundary).unwrap();
        let rot = VectorField::from_fn(&d, |x| [-(x[1] - 0.5), x[0] - 0.5, 0.0]);
        let mut p = problem(n, 0.1, |_| [0.0; 3], ConstraintMode::Penalty { weight: 10.0 });
        p.boundary = Some(rot.clone());
        let e = nonlinear_energy(&p, &rot).unwrap();
        assert!(e.isochoric <= 1e-2);
        let v = RigidVelocity {
            omega: Vector3::new(0.0, 0.0, 1.0),
            center: Vector3::new(0.5, 0.5, 0.5),
        };
        for h in [0.2, 0.1, 0.05] {
            p.h = h;
            let r = recover(&v, h, &d, 64, 2.0).unwrap();
            let e = nonlinear_energy(&p, &r.field).unwrap();
            assert!(e.isochoric.abs() <= 1e-10, "{h}: {}", e.isochoric);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let p = problem(
            4,
            0.3,
            |x| [x[1], -x[0], 0.5],
            ConstraintMode::AugmentedLagrangian {
                weight: 3.0,
                multipliers: None,
            },
        );
        let nc = Cells::new(&p.domain).len();
        let lam: Vec<f64> = (0..nc).map(|c| 0.1 * c as f64 - 0.5).collect();
        let ev = Evaluator::new(&p, 3.0, lam);
        let v = VectorField::from_fn(&p.domain, |x| {
            let b = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]) * x[2] * (1.0 - x[2]);
            [b * (1.0 + x[1]), b * (x[2] - 2.0), b * x[0]]
        });
        let x = v.flat();
        let mut g = vec![0.0; x.len()];
        ev.eval(&x, Some(&mut g));
        let eps = 1e-6;
        let mut checked = 0;
        for i in 0..x.len() {
            if g[i] == 0.0 {
                continue;
            }
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (ev.eval(&xp, None).breakdown.total.value().unwrap() - ev.eval(&xm, None).breakdown.total.value().unwrap()) / (2.0 * eps);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn zero_problem_returns_immediately() {
        let p = problem(
            5,
            0.1,
            |_| [0.0; 3],
            ConstraintMode::AugmentedLagrangian {
                weight: 100.0,
                multipliers: None,
            },
        );
        let s = minimize_nonlinear(&p, &VectorField::zeros(&p.domain)).unwrap();
        assert_eq!(s.v.max_abs(), 0.0);
        assert_eq!(s.report.iterations, 0);
    }

    #[test]
    fn infeasible_init_is_rejected() {
        let p = problem(5, 0.1, |_| [0.0; 3], ConstraintMode::Penalty { weight: 1.0 });
        let v = VectorField::from_fn(&p.domain, |_| [1.0, 0.0, 0.0]);
        assert!(matches!(minimize_nonlinear(&p, &v), Err(SolverError::InvalidProblem(_))));
    }

    #[test]
    fn penalty_weight_changes_the_result() {
        let load = |x: [f64; 3]| [0.1 * (6.0 * x[1]).sin(), 0.05, 0.0];
        let run = |w: f64| {
            let mut p = problem(5, 0.5, load, ConstraintMode::Penalty { weight: w });
            p.options.gtol = 1e-12;
            minimize_nonlinear(&p, &VectorField::zeros(&p.domain)).unwrap()
        };
        let a = run(10.0);
        let b = run(100.0);
        assert!((&a.v - &b.v).max_abs() > 1e-12);
        assert!(b.report.breakdown.max_det_err < a.report.breakdown.max_det_err);
    }

    #[test]
    fn small_scale_energy_approaches_the_quadratic_form() {
        use crate::materials::hessian_at_identity;
        use crate::solvers::linear::{linearized_energy, solve_linearized, LinearizedProblem};
        let d = BoxDomain::unit_cube(9, GammaMarker::FullBoundary).unwrap();
        let (m, vol) = neo();
        let t = hessian_at_identity(&m, &vol);
        let f = VectorField::from_fn(&d, |x| [(5.0 * x[1]).sin(), x[0] * x[2], (3.0 * x[0]).cos()]);
        let lin = LinearizedProblem::new(d, t, f);
        let v = solve_linearized(&lin, 1e-12, 5000).unwrap().v;
        let gmax = crate::fields::gradient(&v).values.iter().map(|g| g.amax()).fold(0.0, f64::max);
        let v = v.scaled(1.0 / gmax);
        let mut quiet = lin.clone();
        quiet.load = VectorField::zeros(&d);
        let quad = linearized_energy(&quiet, &v).unwrap().value().unwrap();
        let mut gaps = Vec::new();
        for h in [0.04, 0.02, 0.01] {
            let p = problem(9, h, |_| [0.0; 3], ConstraintMode::Penalty { weight: 1.0 });
            let e = nonlinear_energy(&p, &v).unwrap().total.value().unwrap();
            gaps.push((e - quad).abs());
        }
        for w in gaps.windows(2) {
            assert!(w[0] / w[1] >= 1.8, "{gaps:?}");
        }
    }

    #[test]
    fn rotating_the_deformation_leaves_the_energy_unchanged() {
        let n = 7;
        let h = 0.1;
        let d = BoxDomain::unit_cube(n, GammaMarker::FullBoundary).unwrap();
        let v = VectorField::from_fn(&d, |x| [(3.0 * x[1]).sin(), x[0] * x[2], 0.5 * x[0] - x[1] * x[1]]);
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
        let rv = VectorField::from_fn(&d, |x| {
            let xv = Vector3::from(x);
            let i = d.index(
                (x[0] / d.spacing(0)).round() as usize,
                (x[1] / d.spacing(1)).round() as usize,
                (x[2] / d.spacing(2)).round() as usize,
            );
            let y = xv + h * Vector3::from(v.get(i));
            let ry = r * y;
            let out = (ry - xv) / h;
            [out[0], out[1], out[2]]
        });
        let mut p = problem(n, h, |_| [0.0; 3], ConstraintMode::Penalty { weight: 5.0 });
        p.boundary = Some(v.clone());
        let a = nonlinear_energy(&p, &v).unwrap();
        p.boundary = Some(rv.clone());
        let b = nonlinear_energy(&p, &rv).unwrap();
        assert!((a.isochoric - b.isochoric).abs() <= 1e-10, "{} {}", a.isochoric, b.isochoric);
        assert!((a.volumetric - b.volumetric).abs() <= 1e-10);
    }
}
