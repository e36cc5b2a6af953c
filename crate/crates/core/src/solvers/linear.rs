//! Linearized incompressible problem: Q1 velocity, cellwise pressure,
//! block-preconditioned MINRES on the saddle system
//!
//! ```text
//! [ A  Bᵀ ] [v]   [f]
//! [ B  -C ] [q] = [g]
//! ```
//! with `(Bv)_c = -|c| div_c v` and `C` an optional pressure-jump term.

use serde::{Deserialize, Serialize};

use crate::fields::{BoxDomain, GammaMarker, VectorField};
use crate::linalg::{minres, norm, LinalgError};
use crate::materials::{ElasticityTensor, Energy};

use super::multigrid::Multigrid;
use super::q1::{CellMap, Cells, ElementGeometry, ElementMatrix, ElementVector};
use super::SolverError;

/// Linearized problem data. Velocities are nodal, pressures cellwise.
#[derive(Debug, Clone)]
pub struct LinearizedProblem {
    pub domain: BoxDomain,
    pub tensor: CellMap<ElasticityTensor>,
    pub load: VectorField,
    /// Dirichlet data; only the Γ values are used. `None` means zero.
    pub boundary: Option<VectorField>,
    /// Extra nodal forces (flat, component-major) added to the load.
    pub extra_force: Option<Vec<f64>>,
    /// Right-hand side of the discrete constraint `B v = g`; `None` means 0.
    pub constraint_rhs: Option<Vec<f64>>,
    /// Pressure-jump stabilization coefficient.
    pub beta: f64,
    /// `‖div v‖_{L²}` above which `linearized_energy` returns `Infinite`.
    pub feas_tol: f64,
}

impl LinearizedProblem {
    pub fn new(domain: BoxDomain, tensor: ElasticityTensor, load: VectorField) -> Self {
        Self {
            domain,
            tensor: CellMap::uniform(tensor),
            load,
            boundary: None,
            extra_force: None,
            constraint_rhs: None,
            beta: 0.0,
            feas_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        validate_domain(&self.domain)?;
        if self.load.domain != self.domain {
            return Err(SolverError::InvalidProblem("load lives on a different grid".into()));
        }
        if let Some(b) = &self.boundary {
            if b.domain != self.domain {
                return Err(SolverError::InvalidProblem("boundary data lives on a different grid".into()));
            }
        }
        for t in &self.tensor.table {
            if !t.is_positive_definite() {
                return Err(SolverError::Indefinite(t.min_eigenvalue()));
            }
        }
        let cells = Cells::new(&self.domain);
        if let Some(ids) = &self.tensor.ids {
            if ids.len() != cells.len() || ids.iter().any(|&i| i as usize >= self.tensor.table.len()) {
                return Err(SolverError::InvalidProblem("per-cell tensor map does not match the grid".into()));
            }
        }
        if !(self.beta >= 0.0) {
            return Err(SolverError::InvalidProblem("beta must be nonnegative".into()));
        }
        Ok(())
    }
}

pub(crate) fn validate_domain(d: &BoxDomain) -> Result<(), SolverError> {
    if d.is_periodic() {
        return Err(SolverError::InvalidProblem("solvers need a non-periodic box".into()));
    }
    if d.gamma() == GammaMarker::None {
        return Err(SolverError::InvalidProblem("solvers need a Dirichlet part Γ".into()));
    }
    if d.counts().iter().any(|&n| n < 3) {
        return Err(SolverError::InvalidProblem("at least 3 nodes per axis".into()));
    }
    Ok(())
}

/// Matrix-free A, B, Bᵀ, C on one grid.
pub struct SaddleOperator {
    pub cells: Cells,
    pub geo: ElementGeometry,
    elements: CellMap<ElementMatrix>,
    div: ElementVector,
    /// Γ flag per node.
    pub fixed: Vec<bool>,
    /// Jump penalty per interior face, already scaled.
    stab: f64,
    n: usize,
}

impl SaddleOperator {
    pub fn new(domain: &BoxDomain, tensor: &CellMap<ElasticityTensor>, stab: f64) -> Self {
        let cells = Cells::new(domain);
        let geo = ElementGeometry::new(cells.spacing);
        let elements = tensor.map(|t| geo.stiffness(t));
        let div = geo.div_row();
        let fixed = (0..domain.node_count()).map(|i| domain.is_gamma(i)).collect();
        Self {
            cells,
            geo,
            elements,
            div,
            fixed,
            stab,
            n: domain.node_count(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn velocity_len(&self) -> usize {
        3 * self.n
    }

    fn gather(&self, x: &[f64], nodes: &[usize; 8]) -> ElementVector {
        let mut u = ElementVector::zeros();
        for a in 0..8 {
            for k in 0..3 {
                u[3 * a + k] = x[k * self.n + nodes[a]];
            }
        }
        u
    }

    /// `y = A x` on free rows; Γ rows are zero. `x` is used unmasked.
    pub fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.apply_a_add(x, y);
    }

    fn apply_a_add(&self, x: &[f64], y: &mut [f64]) {
        for c in 0..self.cells.len() {
            let nodes = self.cells.nodes(c);
            let u = self.gather(x, &nodes);
            let r = self.elements.get(c) * u;
            for a in 0..8 {
                if self.fixed[nodes[a]] {
                    continue;
                }
                for k in 0..3 {
                    y[k * self.n + nodes[a]] += r[3 * a + k];
                }
            }
        }
    }

    /// `xᵀ A_full x` including Γ rows.
    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in 0..self.cells.len() {
            let nodes = self.cells.nodes(c);
            let u = self.gather(x, &nodes);
            let w = self.gather(y, &nodes);
            s += (w.transpose() * self.elements.get(c) * u)[(0, 0)];
        }
        s
    }

    /// Cellwise B-bar divergence.
    pub fn divergence(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cells.len())
            .map(|c| self.div.dot(&self.gather(x, &self.cells.nodes(c))))
            .collect()
    }

    /// `sqrt(Σ |c| div_c²)`
    pub fn divergence_norm(&self, x: &[f64]) -> f64 {
        let d = self.divergence(x);
        (self.cells.volume * d.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn apply_b(&self, x: &[f64], out: &mut [f64]) {
        let vol = self.cells.volume;
        for c in 0..self.cells.len() {
            out[c] = -vol * self.div.dot(&self.gather(x, &self.cells.nodes(c)));
        }
    }

    /// `y += Bᵀ p` on free rows.
    pub fn apply_bt_add(&self, p: &[f64], y: &mut [f64]) {
        let vol = self.cells.volume;
        for c in 0..self.cells.len() {
            let nodes = self.cells.nodes(c);
            let s = -vol * p[c];
            for a in 0..8 {
                if self.fixed[nodes[a]] {
                    continue;
                }
                for k in 0..3 {
                    y[k * self.n + nodes[a]] += s * self.div[3 * a + k];
                }
            }
        }
    }

    /// `out += C p` for the face-jump term `stab Σ_faces (p_c - p_d)²`.
    fn apply_c_add(&self, p: &[f64], out: &mut [f64]) {
        if self.stab == 0.0 {
            return;
        }
        let n = self.cells.counts;
        let stride = [1, n[0], n[0] * n[1]];
        for c in 0..self.cells.len() {
            let ijk = self.cells.ijk(c);
            for ax in 0..3 {
                if ijk[ax] + 1 < n[ax] {
                    let d = c + stride[ax];
                    let j = self.stab * (p[c] - p[d]);
                    out[c] += j;
                    out[d] -= j;
                }
            }
        }
    }

    /// Full saddle operator on `[v; q]`.
    pub fn apply(&self, x: &[f64], y: &mut [f64], mass_coupling: f64) {
        let nv = self.velocity_len();
        let (xv, xp) = x.split_at(nv);
        let (yv, yp) = y.split_at_mut(nv);
        self.apply_a(xv, yv);
        self.apply_bt_add(xp, yv);
        self.apply_b(xv, yp);
        // -C q
        let mut cp = vec![0.0; xp.len()];
        self.apply_c_add(xp, &mut cp);
        for c in 0..yp.len() {
            yp[c] -= cp[c] + mass_coupling * self.cells.volume * xp[c];
        }
    }
}

/// Block-diagonal preconditioner: scaled V-cycles on each velocity
/// component and a scaled cell mass inverse on the pressure.
pub struct BlockPreconditioner {
    mg: Multigrid,
    alpha: f64,
    sigma: f64,
    nv: usize,
    n: usize,
}

impl BlockPreconditioner {
    /// `alpha`: Laplacian scale of the velocity block; `sigma`: pressure scale.
    pub fn new(domain: &BoxDomain, alpha: f64, sigma: f64) -> Self {
        let n = domain.node_count();
        Self {
            mg: Multigrid::new(domain),
            alpha,
            sigma,
            nv: 3 * n,
            n,
        }
    }

    pub fn apply_velocity(&self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        for k in 0..3 {
            self.mg.vcycle(&r[k * n..(k + 1) * n], &mut z[k * n..(k + 1) * n]);
        }
        let s = 1.0 / self.alpha;
        z.iter_mut().for_each(|v| *v *= s);
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64], vol: f64) {
        let (rv, rp) = r.split_at(self.nv);
        let (zv, zp) = z.split_at_mut(self.nv);
        self.apply_velocity(rv, zv);
        let s = self.sigma / vol;
        for (o, v) in zp.iter_mut().zip(rp) {
            *o = s * v;
        }
    }
}

/// Scale of the velocity block of `A` for an isotropic-like tensor: the
/// mean of the shear and bulk-augmented diagonal moduli.
fn tensor_scales(tensor: &CellMap<ElasticityTensor>) -> (f64, f64) {
    let mut shear: f64 = 0.0;
    let mut bulk: f64 = 0.0;
    for t in &tensor.table {
        shear = shear.max(t.shear_scale());
        bulk = bulk.max(t.bulk_coefficient());
    }
    // A ≈ -(s/2)Δ - (s/6 + b)∇div on each component
    let alpha = 0.5 * shear + (shear / 6.0 + bulk) / 3.0;
    (alpha, shear)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub tol: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub momentum_residual: f64,
    pub divergence_residual: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub v: VectorField,
    /// One value per cell, x-fastest, zero mean when Γ is the whole boundary.
    pub pressure: Vec<f64>,
    pub cell_counts: [usize; 3],
    pub report: SolveReport,
}

impl SaddleSolution {
    /// Pressure at cell centres.
    pub fn pressure_at(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.cell_counts;
        self.pressure[i + n[0] * (j + n[1] * k)]
    }
}

/// Nodal load vector `w_n f(x_n)`, zero on Γ, plus any extra force.
pub(crate) fn nodal_load(domain: &BoxDomain, f: &VectorField, extra: Option<&Vec<f64>>) -> Vec<f64> {
    let n = domain.node_count();
    let mut out = vec![0.0; 3 * n];
    for node in 0..n {
        let w = domain.weight(node);
        for k in 0..3 {
            out[k * n + node] = w * f.data[k][node];
        }
    }
    if let Some(e) = extra {
        for (o, v) in out.iter_mut().zip(e) {
            *o += v;
        }
    }
    out
}

/// Γ values of the boundary data, zero elsewhere.
pub(crate) fn boundary_lift(domain: &BoxDomain, data: Option<&VectorField>) -> Vec<f64> {
    let n = domain.node_count();
    let mut out = vec![0.0; 3 * n];
    if let Some(b) = data {
        for node in domain.gamma_nodes() {
            for k in 0..3 {
                out[k * n + node] = b.data[k][node];
            }
        }
    }
    out
}

pub(crate) fn mask(fixed: &[bool], v: &mut [f64]) {
    let n = fixed.len();
    for k in 0..3 {
        for i in 0..n {
            if fixed[i] {
                v[k * n + i] = 0.0;
            }
        }
    }
}

/// `∫ f · v` by nodal quadrature.
pub fn load_functional(f: &VectorField, v: &VectorField) -> f64 {
    f.inner(v)
}

/// `½ ∫ Ē(v) : H : Ē(v) - L(v)`, or `Infinite` when `v` misses the
/// Dirichlet data or `‖div v‖ > feas_tol`.
pub fn linearized_energy(problem: &LinearizedProblem, v: &VectorField) -> Result<Energy, SolverError> {
    problem.validate()?;
    let op = SaddleOperator::new(&problem.domain, &problem.tensor, 0.0);
    Ok(linearized_energy_with(problem, &op, v))
}

pub(crate) fn linearized_energy_with(problem: &LinearizedProblem, op: &SaddleOperator, v: &VectorField) -> Energy {
    let x = v.flat();
    let data_tol = 1e-12 * (1.0 + v.max_abs());
    let zero = VectorField::zeros(&problem.domain);
    let data = problem.boundary.as_ref().unwrap_or(&zero);
    if !v.satisfies_dirichlet_data(data, data_tol) {
        return Energy::Infinite;
    }
    let div = op.divergence(&x);
    let g = problem.constraint_rhs.as_deref();
    let vol = op.cells.volume;
    let feas: f64 = div
        .iter()
        .enumerate()
        .map(|(c, d)| {
            // B v = g  ⇔  div_c = -g_c/|c|
            let target = g.map_or(0.0, |g| -g[c] / vol);
            (d - target).powi(2)
        })
        .sum::<f64>();
    if (vol * feas).sqrt() > problem.feas_tol {
        return Energy::Infinite;
    }
    Energy::Finite(quadratic_energy(problem, op, &x))
}

/// `½ xᵀ A x - L(x) - extra · x` with no feasibility checks.
pub(crate) fn quadratic_energy(problem: &LinearizedProblem, op: &SaddleOperator, x: &[f64]) -> f64 {
    let v = VectorField::from_flat(&problem.domain, x);
    let mut e = 0.5 * op.quadratic(x, x) - load_functional(&problem.load, &v);
    if let Some(extra) = &problem.extra_force {
        e -= extra.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    e
}

/// Minimizes the linearized energy over `div v = 0`, `v = v̄` on Γ.
pub fn solve_linearized(problem: &LinearizedProblem, tol: f64, max_iter: usize) -> Result<SaddleSolution, SolverError> {
    solve_linearized_from(problem, tol, max_iter, None)
}

/// As `solve_linearized`, starting from the given cell pressures.
pub fn solve_linearized_from(
    problem: &LinearizedProblem,
    tol: f64,
    max_iter: usize,
    initial_pressure: Option<&[f64]>,
) -> Result<SaddleSolution, SolverError> {
    problem.validate()?;
    let (alpha, shear) = tensor_scales(&problem.tensor);
    // β h² ∫|∇q|² / shear with face differences (Δq/h)² |c|
    let stab = problem.beta * Cells::new(&problem.domain).volume / shear.max(f64::MIN_POSITIVE);
    let op = SaddleOperator::new(&problem.domain, &problem.tensor, stab);
    let pre = BlockPreconditioner::new(&problem.domain, alpha, 2.0 / 3.0 * shear + tensor_bulk(&problem.tensor));
    let rhs = saddle_rhs(problem, &op);
    let nv = op.velocity_len();
    let nc = op.cells.len();
    let mut x = vec![0.0; nv + nc];
    if let Some(p0) = initial_pressure {
        if p0.len() != nc {
            return Err(SolverError::InvalidProblem("initial pressure has the wrong length".into()));
        }
        x[nv..].copy_from_slice(p0);
    }
    let lift = boundary_lift(&problem.domain, problem.boundary.as_ref());
    let report = run_minres(&op, &pre, &rhs, &mut x, &lift, tol, max_iter, 0.0)?;
    let mut v = x[..nv].to_vec();
    for (a, b) in v.iter_mut().zip(&lift) {
        *a += b;
    }
    let mut pressure = x[nv..].to_vec();
    if problem.domain.gamma() == GammaMarker::FullBoundary {
        let mean = pressure.iter().sum::<f64>() / nc as f64;
        pressure.iter_mut().for_each(|p| *p -= mean);
    }
    Ok(SaddleSolution {
        v: VectorField::from_flat(&problem.domain, &v),
        pressure,
        cell_counts: op.cells.counts,
        report,
    })
}

fn tensor_bulk(tensor: &CellMap<ElasticityTensor>) -> f64 {
    tensor.table.iter().map(|t| t.bulk_coefficient()).fold(0.0, f64::max)
}

/// Right-hand side after lifting the boundary data.
fn saddle_rhs(problem: &LinearizedProblem, op: &SaddleOperator) -> Vec<f64> {
    let nv = op.velocity_len();
    let nc = op.cells.len();
    let lift = boundary_lift(&problem.domain, problem.boundary.as_ref());
    let mut rhs = vec![0.0; nv + nc];
    let f = nodal_load(&problem.domain, &problem.load, problem.extra_force.as_ref());
    let mut al = vec![0.0; nv];
    op.apply_a(&lift, &mut al);
    for i in 0..nv {
        rhs[i] = f[i] - al[i];
    }
    mask(&op.fixed, &mut rhs[..nv]);
    let mut bl = vec![0.0; nc];
    op.apply_b(&lift, &mut bl);
    for c in 0..nc {
        rhs[nv + c] = problem.constraint_rhs.as_ref().map_or(0.0, |g| g[c]) - bl[c];
    }
    rhs
}

/// True residuals `(‖r_v‖/‖b_v‖, ‖div v - target‖_{L²})` of an iterate.
fn residuals(op: &SaddleOperator, rhs: &[f64], x: &[f64], lift: &[f64], mass_coupling: f64) -> (f64, f64) {
    let nv = op.velocity_len();
    let mut y = vec![0.0; x.len()];
    op.apply(x, &mut y, mass_coupling);
    let rv: Vec<f64> = (0..nv).map(|i| rhs[i] - y[i]).collect();
    let bn = norm(&rhs[..nv]);
    let mom = if bn > 0.0 { norm(&rv) / bn } else { norm(&rv) };
    // constraint residual measured as a divergence, including the lift
    let vol = op.cells.volume;
    let rp: f64 = (nv..x.len()).map(|i| ((rhs[i] - y[i]) / vol).powi(2)).sum();
    let _ = lift;
    (mom, (vol * rp).sqrt())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_minres(
    op: &SaddleOperator,
    pre: &BlockPreconditioner,
    rhs: &[f64],
    x: &mut [f64],
    lift: &[f64],
    tol: f64,
    max_iter: usize,
    mass_coupling: f64,
) -> Result<SolveReport, SolverError> {
    let vol = op.cells.volume;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut rtol = 0.2 * tol;
    let mut restarts = 0;
    loop {
        let budget = max_iter.saturating_sub(iterations);
        let res = minres(
            |p, y| op.apply(p, y, mass_coupling),
            |r, z| pre.apply(r, z, vol),
            rhs,
            x,
            rtol,
            0.0,
            budget.max(1),
        );
        let stats = match res {
            Ok(s) => s,
            Err(LinalgError::NotConverged {
                iterations: it,
                residual,
                history: h,
            }) => {
                history.extend(h);
                return Err(SolverError::NotConverged {
                    iterations: iterations + it,
                    residual,
                    history,
                });
            }
            Err(e) => return Err(e.into()),
        };
        iterations += stats.iterations;
        history.extend(stats.history);
        let (mom, div) = residuals(op, rhs, x, lift, mass_coupling);
        if (mom <= tol && div <= tol) || stats.residual == 0.0 {
            return Ok(SolveReport {
                tol,
                iterations,
                restarts,
                momentum_residual: mom,
                divergence_residual: div,
                history,
            });
        }
        if iterations >= max_iter || restarts >= 8 {
            return Err(SolverError::NotConverged {
                iterations,
                residual: mom.max(div),
                history,
            });
        }
        restarts += 1;
        // the restart measures reduction from the current residual
        rtol = (0.1 * tol / mom.max(div)).clamp(1e-6, 0.5);
    }
}
