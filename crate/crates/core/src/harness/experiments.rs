//! The seven experiments. Each returns a typed report; `run` writes it.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fields::{grisvard_check, norm_w1p, BoxDomain, GammaMarker, VectorField};
use crate::flow_recovery::{recover, velocity_by_name, verify_properties, PropertyStatus};
use crate::materials::{
    distance_to_so3, energy, hessian_at_identity, quadratic_form, sampling, stress, MaterialModel, Matrix3, Vector3,
    VolumetricModel,
};
use crate::solvers::manufactured::{self, ManufacturedRow};
use crate::solvers::{
    linearized_energy, load_functional, minimize_nonlinear, solve_linearized, LinearizedProblem, NonlinearProblem,
    NonlinearReport, SaddleSolution, ShiftedFunctionals, SolveReport, TwoRouteReport,
};
use crate::util::{loglog_slope, observed_orders};

use super::config::ExperimentConfig;
use super::HarnessError;

/// One row of an h-sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub h: f64,
    #[serde(rename = "E_nonlinear")]
    pub e_nonlinear: f64,
    #[serde(rename = "E_linear_min")]
    pub e_linear_min: f64,
    pub gap: f64,
    pub dist_w1p: f64,
    pub max_det_err: f64,
    pub iters: usize,
}

pub const CONVERGENCE_COLUMNS: [&str; 7] = ["h", "E_nonlinear", "E_linear_min", "gap", "dist_w1p", "max_det_err", "iters"];

/// Strictly decreasing, or identically zero.
pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == 0.0) || xs.windows(2).all(|w| w[1] < w[0])
}

fn slope(h: &[f64], v: &[f64]) -> Option<f64> {
    if v.len() < 2 || v.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    Some(loglog_slope(&h[..v.len()], v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub gap_strictly_decreasing: bool,
    pub dist_strictly_decreasing: bool,
    pub gap_slope: Option<f64>,
    pub dist_slope: Option<f64>,
    /// Last gap over first gap; `None` when the first gap is zero.
    pub final_over_initial_gap: Option<f64>,
    pub max_det_err: f64,
}

impl SweepSummary {
    pub fn of(records: &[ConvergenceRecord]) -> Self {
        let h: Vec<f64> = records.iter().map(|r| r.h).collect();
        let gaps: Vec<f64> = records.iter().map(|r| r.gap).collect();
        let dists: Vec<f64> = records.iter().map(|r| r.dist_w1p).collect();
        let ratio = match (gaps.first(), gaps.last()) {
            (Some(&a), Some(&b)) if a > 0.0 => Some(b / a),
            _ => None,
        };
        Self {
            gap_strictly_decreasing: strictly_decreasing(&gaps),
            dist_strictly_decreasing: strictly_decreasing(&dists),
            gap_slope: slope(&h, &gaps),
            dist_slope: slope(&h, &dists),
            final_over_initial_gap: ratio,
            max_det_err: records.iter().map(|r| r.max_det_err).fold(0.0, f64::max),
        }
    }
}

// ---------------------------------------------------------------- materials

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Pass condition, as text.
    pub criterion: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialCheckReport {
    pub model: String,
    pub checks: Vec<Check>,
    pub min_eigenvalue: f64,
}

impl MaterialCheckReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, value: f64, criterion: &str, pass: bool) -> Check {
    Check {
        name: name.into(),
        value,
        criterion: criterion.into(),
        pass,
    }
}

fn random_trace_free(rng: &mut ChaCha8Rng) -> Matrix3 {
    let a = Matrix3::from_fn(|_, _| sampling::standard_normal(rng));
    let s = 0.5 * (a + a.transpose());
    s - Matrix3::identity() * (s.trace() / 3.0)
}

/// Fitted log-log slope of `W(diag(λ⁻², λ, λ))` against the distance to SO(3), λ ∈ [10, 1000].
pub fn ogden_growth_slope(model: &MaterialModel) -> f64 {
    let v = VolumetricModel::new(1.0).expect("c = 1 is valid");
    let pts: Vec<(f64, f64)> = (0..=20)
        .map(|i| {
            let lam = 10f64.powf(1.0 + 2.0 * i as f64 / 20.0);
            let f = Matrix3::from_diagonal(&Vector3::new(lam.powi(-2), lam, lam));
            (distance_to_so3(&f).ln(), energy(model, &v, &f).value().unwrap_or(f64::NAN).ln())
        })
        .collect();
    crate::util::least_squares_slope(&pts)
}

pub fn material_check(cfg: &ExperimentConfig) -> Result<MaterialCheckReport, HarnessError> {
    let (model, vol) = cfg.material.build()?;
    let mc = &cfg.material_check;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();

    let w_id = energy(&model, &vol, &Matrix3::identity()).value().unwrap_or(f64::INFINITY);
    checks.push(check("energy_at_identity", w_id, "W(I) == 0", w_id == 0.0));

    let mut frame = 0.0f64;
    for _ in 0..mc.pairs {
        let f = sampling::random_deformation(&mut rng, mc.det_range[0], mc.det_range[1]);
        let r = sampling::random_rotation(&mut rng);
        let a = energy(&model, &vol, &f).value().unwrap_or(f64::NAN);
        let b = energy(&model, &vol, &(r * f)).value().unwrap_or(f64::NAN);
        frame = frame.max((a - b).abs());
    }
    checks.push(check("frame_indifference", frame, "max |W(RF) - W(F)| <= 1e-10", frame <= 1e-10));

    let mut rot_stress = 0.0f64;
    for _ in 0..mc.rotations {
        let r = sampling::random_rotation(&mut rng);
        rot_stress = rot_stress.max(stress(&model, &vol, &r)?.norm());
    }
    checks.push(check("rotation_stress", rot_stress, "max |DW(R)| <= 1e-8", rot_stress <= 1e-8));

    let mu = match &model {
        MaterialModel::NeoHookean { mu } => *mu,
        _ => 1.0,
    };
    let neo = MaterialModel::neo_hookean(mu)?;
    let ogden = MaterialModel::ogden(&[2.0 * mu], &[2.0])?;
    let mut red = 0.0f64;
    for _ in 0..mc.ogden_samples {
        let f = sampling::random_isochoric(&mut rng);
        let a = energy(&neo, &vol, &f).value().unwrap_or(f64::NAN);
        let b = energy(&ogden, &vol, &f).value().unwrap_or(f64::NAN);
        red = red.max((a - b).abs());
    }
    checks.push(check("ogden_neo_hookean_reduction", red, "max |Ogden(2mu, 2) - NeoHookean(mu)| <= 1e-12", red <= 1e-12));

    let t1 = hessian_at_identity(&model, &VolumetricModel::new(1.0)?);
    let t10 = hessian_at_identity(&model, &VolumetricModel::new(10.0)?);
    let mut inv = 0.0f64;
    for _ in 0..mc.tensors {
        let b = random_trace_free(&mut rng);
        inv = inv.max((quadratic_form(&t1, &b) - quadratic_form(&t10, &b)).abs());
    }
    checks.push(check("volumetric_invariance", inv, "max |Q_c1(B) - Q_c10(B)| <= 1e-9", inv <= 1e-9));

    let min_eigenvalue = hessian_at_identity(&model, &vol).min_eigenvalue();
    checks.push(check("ellipticity", min_eigenvalue, "min eigenvalue > 0", min_eigenvalue > 0.0));

    let s = ogden_growth_slope(&MaterialModel::ogden(&[1.0], &[1.5])?);
    checks.push(check("ogden_growth_slope", s, "1 < slope < 2", s > 1.0 && s < 2.0));

    Ok(MaterialCheckReport {
        model: format!("{model:?}"),
        checks,
        min_eigenvalue,
    })
}

// ---------------------------------------------------------------- flows

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub h: f64,
    pub max_det_err: f64,
    pub max_det_err_discrete: f64,
    pub dist_w1p: f64,
    pub dist_linf: f64,
    pub h_grad_linf: f64,
}

pub const FLOW_COLUMNS: [&str; 6] = ["h", "max_det_err", "max_det_err_discrete", "dist_w1p", "dist_linf", "h_grad_linf"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub velocity: String,
    pub steps: usize,
    pub p: f64,
    pub rows: Vec<FlowRow>,
    pub dist_slope: Option<f64>,
    pub dist_decreasing: bool,
    pub h_grad_decreasing: bool,
    pub gamma_fixing: PropertyStatus,
    pub gronwall: PropertyStatus,
    pub rk4_consistency: f64,
}

pub fn flow_recover(cfg: &ExperimentConfig) -> Result<FlowReport, HarnessError> {
    let v = velocity_by_name(&cfg.flow.velocity)?;
    let d = cfg.domain.build()?;
    let r = verify_properties(v.as_ref(), &cfg.sweep.h, &d, cfg.flow.steps, cfg.sweep.p)?;
    let rows: Vec<FlowRow> = r
        .results
        .iter()
        .map(|x| FlowRow {
            h: x.h,
            max_det_err: x.diagnostics.max_det_err,
            max_det_err_discrete: x.diagnostics.max_det_err_discrete,
            dist_w1p: x.diagnostics.dist_w1p,
            dist_linf: x.diagnostics.dist_linf,
            h_grad_linf: x.diagnostics.h_grad_linf,
        })
        .collect();
    let dists: Vec<f64> = rows.iter().map(|r| r.dist_w1p).collect();
    Ok(FlowReport {
        velocity: v.name(),
        steps: cfg.flow.steps,
        p: cfg.sweep.p,
        dist_slope: slope(&cfg.sweep.h, &dists),
        rows,
        dist_decreasing: r.dist_decreasing,
        h_grad_decreasing: r.h_grad_decreasing,
        gamma_fixing: r.gamma_fixing,
        gronwall: r.gronwall,
        rk4_consistency: r.rk4_consistency,
    })
}

// ---------------------------------------------------------------- grisvard

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrisvardRow {
    pub n: usize,
    pub h: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub relative_gap: f64,
}

pub const GRISVARD_COLUMNS: [&str; 6] = ["n", "h", "lhs", "rhs", "gap", "relative_gap"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrisvardStudy {
    pub field: String,
    pub rows: Vec<GrisvardRow>,
    pub orders: Vec<f64>,
    /// Every relative gap at round-off level (<= 1e-12).
    pub exact: bool,
    /// `exact`, or every observed order >= 1.5.
    pub pass: bool,
}

/// `ζ = s(x) (-(x₂ - ½), x₁ - ½, 0)` with `s` the product of `sin²(πxᵢ)`.
pub fn bump_rotation(d: &BoxDomain) -> VectorField {
    VectorField::from_fn(d, |x| {
        let s = (PI * x[0]).sin().powi(2) * (PI * x[1]).sin().powi(2) * (PI * x[2]).sin().powi(2);
        [-s * (x[1] - 0.5), s * (x[0] - 0.5), 0.0]
    })
}

pub fn grisvard(cfg: &ExperimentConfig) -> Result<GrisvardStudy, HarnessError> {
    let mut rows = Vec::new();
    for &n in &cfg.grisvard.grids {
        let d = BoxDomain::unit_cube(n, GammaMarker::FullBoundary)?;
        let r = grisvard_check(&bump_rotation(&d))?;
        rows.push(GrisvardRow {
            n,
            h: d.spacing(0),
            lhs: r.lhs,
            rhs: r.rhs,
            gap: r.gap,
            relative_gap: r.gap / r.lhs,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let orders: Vec<f64> = observed_orders(&h, &gaps).into_iter().map(|o| if o.is_finite() { o } else { 0.0 }).collect();
    let exact = rows.iter().all(|r| r.relative_gap <= 1e-12);
    let pass = exact || orders.iter().all(|&o| o >= 1.5);
    Ok(GrisvardStudy {
        field: "bump-rotation".into(),
        rows,
        orders,
        exact,
        pass,
    })
}

// ---------------------------------------------------------------- linear

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedStudy {
    pub rows: Vec<ManufacturedRow>,
    pub orders: Vec<f64>,
    pub min_order: f64,
    pub max_divergence_residual: f64,
}

pub const MANUFACTURED_COLUMNS: [&str; 7] =
    ["n", "h", "l2_error", "pressure_l2_error", "divergence_residual", "momentum_residual", "iterations"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRun {
    pub energy: f64,
    pub load_functional: f64,
    pub max_velocity: f64,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearOutcome {
    Manufactured(ManufacturedStudy),
    Single(LinearRun),
}

pub(crate) struct Setup {
    pub domain: BoxDomain,
    pub model: MaterialModel,
    pub vol: VolumetricModel,
    pub linear: LinearizedProblem,
}

pub(crate) fn setup(cfg: &ExperimentConfig) -> Result<Setup, HarnessError> {
    let domain = cfg.domain.build()?;
    let (model, vol) = cfg.material.build()?;
    let tensor = hessian_at_identity(&model, &vol);
    let load = cfg.load.build(&domain, tensor.shear_scale(), cfg.seed);
    let mut linear = LinearizedProblem::new(domain, tensor, load);
    linear.beta = cfg.solver.beta;
    Ok(Setup {
        domain,
        model,
        vol,
        linear,
    })
}

fn energy_value(p: &LinearizedProblem, v: &VectorField) -> Result<f64, HarnessError> {
    linearized_energy(p, v)?
        .value()
        .ok_or_else(|| HarnessError::Check("linearized minimizer is infeasible".into()))
}

/// Linearized minimizer of the configured problem and its energy.
pub(crate) fn linear_minimizer(cfg: &ExperimentConfig, s: &Setup) -> Result<(SaddleSolution, f64), HarnessError> {
    let sol = solve_linearized(&s.linear, cfg.solver.tol, cfg.solver.max_iter)?;
    let e = energy_value(&s.linear, &sol.v)?;
    Ok((sol, e))
}

pub fn solve_linear(cfg: &ExperimentConfig) -> Result<(LinearOutcome, Option<VectorField>), HarnessError> {
    let s = setup(cfg)?;
    if cfg.load.field == "manufactured" {
        let rows = manufactured::study(s.linear.tensor.get(0), &cfg.solver.grids, cfg.solver.beta, cfg.solver.tol, cfg.solver.max_iter)?;
        let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let e: Vec<f64> = rows.iter().map(|r| r.l2_error).collect();
        let orders = observed_orders(&h, &e);
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        let max_div = rows.iter().map(|r| r.divergence_residual).fold(0.0, f64::max);
        return Ok((
            LinearOutcome::Manufactured(ManufacturedStudy {
                rows,
                orders,
                min_order,
                max_divergence_residual: max_div,
            }),
            None,
        ));
    }
    let (sol, e) = linear_minimizer(cfg, &s)?;
    let run = LinearRun {
        energy: e,
        load_functional: load_functional(&s.linear.load, &sol.v),
        max_velocity: sol.v.max_abs(),
        report: sol.report.clone(),
    };
    Ok((LinearOutcome::Single(run), Some(sol.v)))
}

// ---------------------------------------------------------------- nonlinear

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearRun {
    pub h: f64,
    pub init: String,
    pub init_energy: f64,
    pub linear_energy: f64,
    pub record: ConvergenceRecord,
    pub report: NonlinearReport,
}

fn nonlinear_problem(cfg: &ExperimentConfig, s: &Setup, h: f64, pressure: Option<&[f64]>) -> Result<NonlinearProblem, HarnessError> {
    let mode = cfg.nonlinear.mode(h, pressure)?;
    let mut p = NonlinearProblem::new(s.domain, s.model.clone(), s.vol, h, s.linear.load.clone(), mode);
    p.options = cfg.nonlinear.options.clone();
    Ok(p)
}

pub fn solve_nonlinear(cfg: &ExperimentConfig) -> Result<(NonlinearRun, VectorField), HarnessError> {
    let s = setup(cfg)?;
    let h = cfg.nonlinear.h.unwrap_or(cfg.sweep.h[0]);
    let (sol, e_lin) = linear_minimizer(cfg, &s)?;
    let (init, pressure) = match cfg.nonlinear.init.as_str() {
        "zero" => (VectorField::zeros(&s.domain), None),
        _ => (sol.v.clone(), Some(sol.pressure.as_slice())),
    };
    let p = nonlinear_problem(cfg, &s, h, pressure)?;
    let init_energy = crate::solvers::nonlinear_energy(&p, &init)?.total.value().unwrap_or(f64::INFINITY);
    let r = minimize_nonlinear(&p, &init)?;
    let record = ConvergenceRecord {
        h,
        e_nonlinear: r.report.energy,
        e_linear_min: e_lin,
        gap: (r.report.energy - e_lin).abs(),
        dist_w1p: norm_w1p(&(&r.v - &sol.v), cfg.sweep.p),
        max_det_err: r.report.breakdown.max_det_err,
        iters: r.report.iterations,
    };
    Ok((
        NonlinearRun {
            h,
            init: cfg.nonlinear.init.clone(),
            init_energy,
            linear_energy: e_lin,
            record,
            report: r.report,
        },
        r.v,
    ))
}

// ---------------------------------------------------------------- sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub linear: SolveReport,
    pub linear_energy: f64,
    pub records: Vec<ConvergenceRecord>,
    pub summary: SweepSummary,
    /// Per-h optimizer reports, in h order.
    pub nonlinear: Vec<NonlinearReport>,
    /// Set when the sweep stopped early; `records` holds the completed rows.
    pub failure: Option<String>,
}

/// Minimizes at every h; `data(h)` gives (Dirichlet data, initial field).
fn nonlinear_sweep(
    cfg: &ExperimentConfig,
    s: &Setup,
    reference: &VectorField,
    pressure: &[f64],
    e_lin: f64,
    mut data: impl FnMut(f64) -> Result<(Option<VectorField>, VectorField), HarnessError>,
) -> (Vec<ConvergenceRecord>, Vec<NonlinearReport>, Option<String>) {
    let mut records = Vec::new();
    let mut reports = Vec::new();
    for &h in &cfg.sweep.h {
        let mut step = || -> Result<(ConvergenceRecord, NonlinearReport), HarnessError> {
            let (boundary, init) = data(h)?;
            let mut p = nonlinear_problem(cfg, s, h, Some(pressure))?;
            p.boundary = boundary;
            let r = minimize_nonlinear(&p, &init)?;
            let rec = ConvergenceRecord {
                h,
                e_nonlinear: r.report.energy,
                e_linear_min: e_lin,
                gap: (r.report.energy - e_lin).abs(),
                dist_w1p: norm_w1p(&(&r.v - reference), cfg.sweep.p),
                max_det_err: r.report.breakdown.max_det_err,
                iters: r.report.iterations,
            };
            Ok((rec, r.report))
        };
        match step() {
            Ok((rec, rep)) => {
                records.push(rec);
                reports.push(rep);
            }
            Err(e) => return (records, reports, Some(format!("h = {h}: {e}"))),
        }
    }
    (records, reports, None)
}

pub fn gamma_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, HarnessError> {
    let s = setup(cfg)?;
    let (sol, e_lin) = linear_minimizer(cfg, &s)?;
    let init = sol.v.clone();
    let (records, nonlinear, failure) = nonlinear_sweep(cfg, &s, &sol.v, &sol.pressure, e_lin, |_| Ok((None, init.clone())));
    Ok(SweepReport {
        linear: sol.report,
        linear_energy: e_lin,
        summary: SweepSummary::of(&records),
        records,
        nonlinear,
        failure,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedReport {
    pub velocity: String,
    pub boundary: String,
    pub two_routes: TwoRouteReport,
    /// `|G̃(v₀) - Ḡ(v₀ + v̄)|` at the computed minimizer and at seeded random `v₀`.
    pub identity_gaps: Vec<f64>,
    pub max_identity_gap: f64,
    pub solver_tol: f64,
    pub sweep: SweepReport,
}

pub fn shifted_sweep(cfg: &ExperimentConfig) -> Result<ShiftedReport, HarnessError> {
    let s = setup(cfg)?;
    let v = velocity_by_name(&cfg.shift.velocity)?;
    let vbar = VectorField::from_fn(&s.domain, |x| {
        let u = v.velocity(&Vector3::from(x));
        [u[0], u[1], u[2]]
    });
    let sf = ShiftedFunctionals::new(&s.linear, vbar.clone())?;
    let routes = sf.two_routes(cfg.solver.tol, cfg.solver.max_iter)?;
    let v0 = routes.shifted.v.clone();
    let e_lin = sf.g_tilde(&v0);

    let mut identity_gaps = vec![(sf.g_tilde(&v0) - sf.g_bar(&(&v0 + &vbar))).abs()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.shift.trials {
        let mut w = VectorField::from_fn(&s.domain, |_| {
            [sampling::standard_normal(&mut rng), sampling::standard_normal(&mut rng), sampling::standard_normal(&mut rng)]
        });
        w.clear_gamma();
        identity_gaps.push((sf.g_tilde(&w) - sf.g_bar(&(&w + &vbar))).abs());
    }
    let max_identity_gap = identity_gaps.iter().copied().fold(0.0, f64::max);

    let flow = cfg.shift.boundary == "flow";
    let reference = routes.direct.v.clone();
    let (records, nonlinear, failure) = nonlinear_sweep(cfg, &s, &reference, &routes.direct.pressure, e_lin, |h| {
        let data = if flow {
            recover(v.as_ref(), h, &s.domain, cfg.shift.steps, cfg.sweep.p)?.field
        } else {
            vbar.clone()
        };
        let init = &v0 + &data;
        Ok((Some(data), init))
    });
    Ok(ShiftedReport {
        velocity: v.name(),
        boundary: cfg.shift.boundary.clone(),
        two_routes: routes.report,
        identity_gaps,
        max_identity_gap,
        solver_tol: cfg.solver.tol,
        sweep: SweepReport {
            linear: routes.direct.report,
            linear_energy: e_lin,
            summary: SweepSummary::of(&records),
            records,
            nonlinear,
            failure,
        },
    })
}
