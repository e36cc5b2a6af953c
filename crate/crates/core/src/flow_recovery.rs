//! Volume-preserving recovery displacements from divergence-free velocities.
//!
//! For a velocity `v` the flow `ẏ = v(y)`, `y(0) = x` and its gradient
//! `Ż = ∇v(y) Z`, `Z(0) = I` are integrated together up to `t = h`. The
//! displacement `v_h = (y(h, ·) - id)/h` then has `I + h∇v_h = Z(h, ·)`, and
//! `det Z = exp(∫ div v) = 1` when `div v = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{gradient, w1p_from_parts, BoxDomain, GammaMarker, TensorField, VectorField};
use crate::materials::{det_from_disp, Matrix3, Vector3};
use crate::potentials::{make_analytic_divfree, CurlVelocity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("trajectory from node {node} at {start:?} left the velocity's domain at {position:?}")]
    TrajectoryExit {
        node: usize,
        start: [f64; 3],
        position: [f64; 3],
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown velocity `{0}`")]
    UnknownVelocity(String),
}

/// A smooth velocity field with its Jacobian and declared metadata.
pub trait AnalyticVelocity: Send + Sync {
    fn velocity(&self, x: &Vector3) -> Vector3;
    /// `(∇v)_{ab} = ∂v_a/∂x_b`
    fn jacobian(&self, x: &Vector3) -> Matrix3;
    fn divergence_free(&self) -> bool;
    /// Portion of the sampling box where `v` vanishes.
    fn zero_set(&self) -> GammaMarker {
        GammaMarker::None
    }
    /// Bounding box `(lo, hi)` of the domain of definition; `None` means all of R³.
    fn domain_of_definition(&self) -> Option<([f64; 3], [f64; 3])> {
        None
    }
    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroVelocity;

impl AnalyticVelocity for ZeroVelocity {
    fn velocity(&self, _: &Vector3) -> Vector3 {
        Vector3::zeros()
    }
    fn jacobian(&self, _: &Vector3) -> Matrix3 {
        Matrix3::zeros()
    }
    fn divergence_free(&self) -> bool {
        true
    }
    fn zero_set(&self) -> GammaMarker {
        GammaMarker::FullBoundary
    }
    fn name(&self) -> String {
        "zero".into()
    }
}

/// `v(x) = ω ∧ (x - center)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidVelocity {
    pub omega: Vector3,
    pub center: Vector3,
}

impl RigidVelocity {
    pub fn new(omega: Vector3) -> Self {
        Self {
            omega,
            center: Vector3::zeros(),
        }
    }
}

impl AnalyticVelocity for RigidVelocity {
    fn velocity(&self, x: &Vector3) -> Vector3 {
        self.omega.cross(&(x - self.center))
    }
    fn jacobian(&self, _: &Vector3) -> Matrix3 {
        self.omega.cross_matrix()
    }
    fn divergence_free(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        format!("rigid({},{},{})", self.omega[0], self.omega[1], self.omega[2])
    }
}

/// `v_a = x_b` for the axis pair `(a, b)`, 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShearVelocity {
    pub a: usize,
    pub b: usize,
}

impl AnalyticVelocity for ShearVelocity {
    fn velocity(&self, x: &Vector3) -> Vector3 {
        let mut v = Vector3::zeros();
        v[self.a] = x[self.b];
        v
    }
    fn jacobian(&self, _: &Vector3) -> Matrix3 {
        let mut m = Matrix3::zeros();
        m[(self.a, self.b)] = 1.0;
        m
    }
    fn divergence_free(&self) -> bool {
        self.a != self.b
    }
    fn zero_set(&self) -> GammaMarker {
        GammaMarker::Face {
            axis: self.b,
            side: crate::fields::Side::Low,
        }
    }
    fn name(&self) -> String {
        format!("shear({},{})", self.a + 1, self.b + 1)
    }
}

/// Arnold-Beltrami-Childress field, 2π-periodic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcVelocity {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AnalyticVelocity for AbcVelocity {
    fn velocity(&self, x: &Vector3) -> Vector3 {
        let (a, b, c) = (self.a, self.b, self.c);
        Vector3::new(
            a * x[2].sin() + c * x[1].cos(),
            b * x[0].sin() + a * x[2].cos(),
            c * x[1].sin() + b * x[0].cos(),
        )
    }
    fn jacobian(&self, x: &Vector3) -> Matrix3 {
        let (a, b, c) = (self.a, self.b, self.c);
        Matrix3::new(
            0.0,
            -c * x[1].sin(),
            a * x[2].cos(),
            b * x[0].cos(),
            0.0,
            -a * x[2].sin(),
            -b * x[0].sin(),
            c * x[1].cos(),
            0.0,
        )
    }
    fn divergence_free(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        format!("abc({},{},{})", self.a, self.b, self.c)
    }
}

/// Parses `zero`, `rigid(w1,w2,w3)`, `shear(a,b)` (1-based axes),
/// `abc(A,B,C)` or `curl_of(<potential>)`.
pub fn velocity_by_name(text: &str) -> Result<Box<dyn AnalyticVelocity>, FlowError> {
    let text = text.trim();
    let (head, args) = match text.find('(') {
        Some(i) if text.ends_with(')') => (&text[..i], &text[i + 1..text.len() - 1]),
        _ => (text, ""),
    };
    let nums = || -> Result<Vec<f64>, FlowError> {
        args.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|_| FlowError::UnknownVelocity(text.into())))
            .collect()
    };
    match head.trim() {
        "zero" => Ok(Box::new(ZeroVelocity)),
        "rigid" => match nums()?.as_slice() {
            [a, b, c] => Ok(Box::new(RigidVelocity::new(Vector3::new(*a, *b, *c)))),
            _ => Err(FlowError::UnknownVelocity(text.into())),
        },
        "shear" => match nums()?.as_slice() {
            [a, b] if (1.0..=3.0).contains(a) && (1.0..=3.0).contains(b) && a != b => Ok(Box::new(ShearVelocity {
                a: *a as usize - 1,
                b: *b as usize - 1,
            })),
            _ => Err(FlowError::UnknownVelocity(text.into())),
        },
        "abc" => match nums()?.as_slice() {
            [a, b, c] => Ok(Box::new(AbcVelocity { a: *a, b: *b, c: *c })),
            [] => Ok(Box::new(AbcVelocity { a: 1.0, b: 1.0, c: 1.0 })),
            _ => Err(FlowError::UnknownVelocity(text.into())),
        },
        "curl_of" => {
            let v: CurlVelocity = make_analytic_divfree(args.trim()).map_err(|_| FlowError::UnknownVelocity(text.into()))?;
            Ok(Box::new(v))
        }
        _ => Err(FlowError::UnknownVelocity(text.into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowState {
    pub y: Vector3,
    pub z: Matrix3,
    pub t: f64,
}

fn inside(dom: &Option<([f64; 3], [f64; 3])>, y: &Vector3) -> bool {
    match dom {
        None => true,
        Some((lo, hi)) => (0..3).all(|a| y[a] >= lo[a] && y[a] <= hi[a]),
    }
}

fn exit_error(start: &Vector3, y: &Vector3) -> FlowError {
    FlowError::TrajectoryExit {
        node: usize::MAX,
        start: [start[0], start[1], start[2]],
        position: [y[0], y[1], y[2]],
    }
}

/// Classical RK4 on the 12-dimensional system `(y, Z)` with `steps` fixed steps up to `t = h`.
pub fn integrate_flow(v: &dyn AnalyticVelocity, x: &Vector3, h: f64, steps: usize) -> Result<FlowState, FlowError> {
    if !(h > 0.0) || steps == 0 {
        return Err(FlowError::InvalidArgument(format!("need h > 0 and steps >= 1, got h={h}, steps={steps}")));
    }
    let dom = v.domain_of_definition();
    let dt = h / steps as f64;
    let mut y = *x;
    let mut z = Matrix3::identity();
    let rhs = |y: &Vector3, z: &Matrix3| -> Result<(Vector3, Matrix3), FlowError> {
        if !inside(&dom, y) {
            return Err(exit_error(x, y));
        }
        Ok((v.velocity(y), v.jacobian(y) * z))
    };
    for _ in 0..steps {
        let (k1y, k1z) = rhs(&y, &z)?;
        let (k2y, k2z) = rhs(&(y + 0.5 * dt * k1y), &(z + 0.5 * dt * k1z))?;
        let (k3y, k3z) = rhs(&(y + 0.5 * dt * k2y), &(z + 0.5 * dt * k2z))?;
        let (k4y, k4z) = rhs(&(y + dt * k3y), &(z + dt * k3z))?;
        y += dt * ((k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0);
        z += dt * ((k1z + 2.0 * k2z + 2.0 * k3z + k4z) / 6.0);
    }
    if !inside(&dom, &y) {
        return Err(exit_error(x, &y));
    }
    Ok(FlowState { y, z, t: h })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDiagnostics {
    /// `max |det Z(h,x) - 1|` over nodes, from the integrated flow gradient.
    pub max_det_err: f64,
    /// `max |det(I + h∇_h v_h) - 1|` with the grid gradient of the sampled field.
    pub max_det_err_discrete: f64,
    /// `‖v_h - v‖_{W^{1,p}}` using the flow gradient `(Z - I)/h`.
    pub dist_w1p: f64,
    pub dist_linf: f64,
    /// `‖h∇v_h‖_∞ = max |Z - I|`
    pub h_grad_linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub h: f64,
    pub p: f64,
    pub field: VectorField,
    /// `∇v_h = (Z - I)/h` at every node.
    pub flow_gradient: TensorField,
    pub diagnostics: RecoveryDiagnostics,
}

/// Samples `v_h = (y(h, x) - x)/h` on every node of `domain`.
pub fn recover(
    v: &dyn AnalyticVelocity,
    h: f64,
    domain: &BoxDomain,
    steps: usize,
    p: f64,
) -> Result<RecoveryResult, FlowError> {
    if !(p >= 1.0) {
        return Err(FlowError::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    let n = domain.node_count();
    let mut field = VectorField::zeros(domain);
    let mut grads = Vec::with_capacity(n);
    let mut diff = VectorField::zeros(domain);
    let mut diff_grad = Vec::with_capacity(n);
    let mut max_det_err = 0.0f64;
    let mut h_grad_linf = 0.0f64;
    for node in 0..n {
        let x = Vector3::from(domain.position(node));
        let st = integrate_flow(v, &x, h, steps).map_err(|e| match e {
            FlowError::TrajectoryExit { start, position, .. } => FlowError::TrajectoryExit { node, start, position },
            other => other,
        })?;
        let vh = (st.y - x) / h;
        let dz = st.z - Matrix3::identity();
        field.set(node, [vh[0], vh[1], vh[2]]);
        grads.push(dz / h);
        let ve = v.velocity(&x);
        diff.set(node, [vh[0] - ve[0], vh[1] - ve[1], vh[2] - ve[2]]);
        diff_grad.push(dz / h - v.jacobian(&x));
        max_det_err = max_det_err.max(det_from_disp(&dz).abs());
        h_grad_linf = h_grad_linf.max(dz.norm());
    }
    let discrete = gradient(&field);
    let max_det_err_discrete = discrete
        .values
        .iter()
        .map(|g| det_from_disp(&(h * g)).abs())
        .fold(0.0, f64::max);
    let diff_grad = TensorField {
        domain: *domain,
        values: diff_grad,
    };
    let diagnostics = RecoveryDiagnostics {
        max_det_err,
        max_det_err_discrete,
        dist_w1p: w1p_from_parts(&diff, &diff_grad, p),
        dist_linf: diff.norm_linf(),
        h_grad_linf,
    };
    Ok(RecoveryResult {
        h,
        p,
        field,
        flow_gradient: TensorField {
            domain: *domain,
            values: grads,
        },
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropertyStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub results: Vec<RecoveryResult>,
    /// `‖v_h - v‖_{W^{1,p}}` strictly decreasing along the h list (or identically zero).
    pub dist_decreasing: bool,
    /// `‖h∇v_h‖_∞` strictly decreasing (or identically zero).
    pub h_grad_decreasing: bool,
    /// `v_h = 0` on the declared zero set.
    pub gamma_fixing: PropertyStatus,
    /// `‖v‖_{W^{1,∞}}` sampled on the grid.
    pub w1inf: f64,
    /// Gronwall constant `C_v = ‖v‖_{W^{1,∞}} exp(‖v‖_{W^{1,∞}})`.
    pub c_v: f64,
    /// `‖v_h - v‖_∞ <= C_v ‖v‖_{W^{1,∞}} h` for every h.
    pub gronwall: PropertyStatus,
    /// Change of `v_h` under step halving relative to `‖v_h - v‖_∞`, at the first h.
    pub rk4_consistency: f64,
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == 0.0) || xs.windows(2).all(|w| w[1] < w[0])
}

pub fn verify_properties(
    v: &dyn AnalyticVelocity,
    h_list: &[f64],
    domain: &BoxDomain,
    steps: usize,
    p: f64,
) -> Result<PropertyReport, FlowError> {
    if h_list.is_empty() || h_list.iter().any(|&h| !(h > 0.0)) || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(FlowError::InvalidArgument("h list must be positive and strictly decreasing".into()));
    }
    let results = h_list
        .iter()
        .map(|&h| recover(v, h, domain, steps, p))
        .collect::<Result<Vec<_>, _>>()?;
    let dists: Vec<f64> = results.iter().map(|r| r.diagnostics.dist_w1p).collect();
    let hgrads: Vec<f64> = results.iter().map(|r| r.diagnostics.h_grad_linf).collect();

    let zero_dom = domain.with_gamma(v.zero_set()).ok();
    let gamma_fixing = match zero_dom {
        Some(d) if v.zero_set() != GammaMarker::None => {
            let nodes = d.gamma_nodes();
            let ok = results.iter().all(|r| {
                nodes
                    .iter()
                    .all(|&n| r.field.get(n).iter().all(|x| x.abs() <= 1e-10))
            });
            if ok {
                PropertyStatus::Pass
            } else {
                PropertyStatus::Fail
            }
        }
        _ => PropertyStatus::NotApplicable,
    };

    let w1inf = (0..domain.node_count())
        .map(|n| {
            let x = Vector3::from(domain.position(n));
            v.velocity(&x).norm().max(v.jacobian(&x).norm())
        })
        .fold(0.0, f64::max);
    let c_v = w1inf * w1inf.exp();
    let gronwall = if results
        .iter()
        .all(|r| r.diagnostics.dist_linf <= c_v * w1inf * r.h * (1.0 + 1e-12) + 1e-14)
    {
        PropertyStatus::Pass
    } else {
        PropertyStatus::Fail
    };

    let first = &results[0];
    let refined = recover(v, first.h, domain, 2 * steps, p)?;
    let change = (&refined.field - &first.field).norm_linf();
    let signal = first.diagnostics.dist_linf;
    let rk4_consistency = if signal > 0.0 { change / signal } else { 0.0 };

    Ok(PropertyReport {
        dist_decreasing: strictly_decreasing(&dists),
        h_grad_decreasing: strictly_decreasing(&hgrads),
        results,
        gamma_fixing,
        w1inf,
        c_v,
        gronwall,
        rk4_consistency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::loglog_slope;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::TAU;

    #[test]
    fn zero_velocity_is_stationary() {
        let x = Vector3::new(0.3, -1.0, 2.0);
        let st = integrate_flow(&ZeroVelocity, &x, 0.7, 5).unwrap();
        assert_eq!(st.y, x);
        assert_eq!(st.z, Matrix3::identity());
    }

    #[test]
    fn rotation_closed_form() {
        let v = RigidVelocity::new(Vector3::new(0.0, 0.0, 1.0));
        let x = Vector3::new(0.4, -0.2, 0.9);
        let st = integrate_flow(&v, &x, 0.3, 64).unwrap();
        let r = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3);
        assert!((st.y - r * x).amax() <= 1e-10);
        assert!((st.z.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn linear_shear_is_exact() {
        let v = ShearVelocity { a: 0, b: 1 };
        let x = Vector3::new(0.25, 0.5, 0.75);
        let h = 0.125;
        let st = integrate_flow(&v, &x, h, 1).unwrap();
        assert_eq!(st.y, Vector3::new(0.25 + h * 0.5, 0.5, 0.75));
        let mut z = Matrix3::identity();
        z[(0, 1)] = h;
        assert_eq!(st.z, z);
        assert_eq!(st.z.determinant(), 1.0);
        let st = integrate_flow(&v, &x, h, 3).unwrap();
        assert!((st.y - Vector3::new(0.25 + h * 0.5, 0.5, 0.75)).amax() <= 1e-15);
        assert_eq!(st.z.determinant(), 1.0);
    }

    #[test]
    fn abc_is_divergence_free_at_samples() {
        let v = AbcVelocity { a: 1.0, b: 0.7, c: 1.3 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x = Vector3::from_fn(|_, _| TAU * rng.gen::<f64>());
            assert!(v.jacobian(&x).trace().abs() <= 1e-10);
            // Jacobian against central differences
            let e = 1e-6;
            for b in 0..3 {
                let mut dx = Vector3::zeros();
                dx[b] = e;
                let fd = (v.velocity(&(x + dx)) - v.velocity(&(x - dx))) / (2.0 * e);
                assert!((fd - v.jacobian(&x).column(b)).amax() <= 1e-8);
            }
        }
    }

    #[test]
    fn recover_zero_field() {
        let d = BoxDomain::unit_cube(5, GammaMarker::FullBoundary).unwrap();
        let r = recover(&ZeroVelocity, 0.1, &d, 4, 2.0).unwrap();
        assert_eq!(r.field.max_abs(), 0.0);
        let g = r.diagnostics;
        assert_eq!(
            (g.max_det_err, g.max_det_err_discrete, g.dist_w1p, g.dist_linf, g.h_grad_linf),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn recover_rotation_first_order() {
        let d = BoxDomain::unit_cube(9, GammaMarker::None).unwrap();
        let v = RigidVelocity::new(Vector3::new(0.3, -0.5, 1.0));
        let hs = [0.2, 0.1, 0.05, 0.025];
        let mut dists = Vec::new();
        for &h in &hs {
            let r = recover(&v, h, &d, 32, 2.0).unwrap();
            assert!(r.diagnostics.max_det_err <= 1e-10);
            dists.push(r.diagnostics.dist_w1p);
        }
        assert!(loglog_slope(&hs, &dists) >= 0.9);
    }

    #[test]
    fn exit_is_reported_with_node() {
        struct Boxed(RigidVelocity);
        impl AnalyticVelocity for Boxed {
            fn velocity(&self, x: &Vector3) -> Vector3 {
                self.0.velocity(x)
            }
            fn jacobian(&self, x: &Vector3) -> Matrix3 {
                self.0.jacobian(x)
            }
            fn divergence_free(&self) -> bool {
                true
            }
            fn domain_of_definition(&self) -> Option<([f64; 3], [f64; 3])> {
                Some(([0.0; 3], [1.0; 3]))
            }
            fn name(&self) -> String {
                "boxed".into()
            }
        }
        let d = BoxDomain::unit_cube(3, GammaMarker::None).unwrap();
        let err = recover(&Boxed(RigidVelocity::new(Vector3::new(0.0, 0.0, 1.0))), 0.1, &d, 4, 2.0).unwrap_err();
        assert!(matches!(err, FlowError::TrajectoryExit { node: 3, .. }), "{err:?}");
    }

    #[test]
    fn properties_on_rotation_and_zero() {
        let d = BoxDomain::unit_cube(7, GammaMarker::None).unwrap();
        let rep = verify_properties(&RigidVelocity::new(Vector3::new(0.0, 0.0, 1.0)), &[0.2, 0.1, 0.05], &d, 16, 2.0).unwrap();
        assert!(rep.dist_decreasing && rep.h_grad_decreasing);
        assert_eq!(rep.gronwall, PropertyStatus::Pass);
        assert_eq!(rep.gamma_fixing, PropertyStatus::NotApplicable);
        let dists: Vec<f64> = rep.results.iter().map(|r| r.diagnostics.dist_w1p).collect();
        assert!(dists.windows(2).all(|w| w[1] < w[0]));

        let rep = verify_properties(&ZeroVelocity, &[0.2, 0.1], &d, 4, 2.0).unwrap();
        assert!(rep.results.iter().all(|r| r.field.max_abs() == 0.0));
        assert_eq!(rep.gamma_fixing, PropertyStatus::Pass);

        let per = BoxDomain::periodic([TAU; 3], [8; 3]).unwrap();
        let rep = verify_properties(&AbcVelocity { a: 1.0, b: 1.0, c: 1.0 }, &[0.1, 0.05], &per, 32, 2.0).unwrap();
        assert_eq!(rep.gamma_fixing, PropertyStatus::NotApplicable);
        assert!(rep.rk4_consistency <= 1e-3);

        let rep = verify_properties(&ShearVelocity { a: 0, b: 1 }, &[0.2, 0.1], &d, 2, 2.0).unwrap();
        assert_eq!(rep.gamma_fixing, PropertyStatus::Pass);
        assert!(verify_properties(&ZeroVelocity, &[0.1, 0.2], &d, 4, 2.0).is_err());
    }

    #[test]
    fn names_parse() {
        for s in ["zero", "rigid(0,0,1)", "shear(1,2)", "abc(1,1,1)", "abc", "curl_of(trig)", "curl_of(bump)"] {
            let v = velocity_by_name(s).unwrap();
            assert!(v.divergence_free(), "{s}");
        }
        assert!(velocity_by_name("shear(1,1)").is_err());
        assert!(velocity_by_name("vortex").is_err());
    }
}
