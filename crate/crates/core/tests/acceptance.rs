//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Runs under `cargo test` as a plain binary (no libtest harness).

use std::f64::consts::TAU;
use std::time::Instant;

use incompressa::fields::{curl, BoxDomain, VectorField};
use incompressa::harness::experiments::{self, LinearOutcome};
use incompressa::harness::{run, Experiment, ExperimentConfig};
use incompressa::materials::Vector3;
use incompressa::potentials::{curl_inverse, leray_project, Potential, TrigPotential};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit_s: f64, f: impl FnOnce() -> Result<Outcome, String>) -> Outcome {
    let t = Instant::now();
    let r = f();
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(o) => {
            let in_time = secs < limit_s;
            let mut detail = format!("{} [{secs:.1}s, limit {limit_s}s]", o.detail);
            if !in_time {
                detail.push_str(" over time limit");
            }
            outcome(o.pass && in_time, detail)
        }
        Err(e) => outcome(false, format!("error: {e} [{secs:.1}s]")),
    }
}

fn c1_materials() -> Result<Outcome, String> {
    let r = experiments::material_check(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let names = ["energy_at_identity", "frame_indifference", "rotation_stress", "ogden_neo_hookean_reduction"];
    let checks: Vec<_> = names.iter().map(|n| r.check(n).expect("check present")).collect();
    let detail = checks.iter().map(|c| format!("{}={:e}", c.name, c.value)).collect::<Vec<_>>().join(" ");
    Ok(outcome(checks.iter().all(|c| c.pass), detail))
}

fn c2_volumetric() -> Result<Outcome, String> {
    let r = experiments::material_check(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let c = r.check("volumetric_invariance").expect("check present");
    Ok(outcome(c.pass, format!("max |Q_c1 - Q_c10| = {:e} over 100 trace-free B", c.value)))
}

fn c3_ellipticity() -> Result<Outcome, String> {
    let r = experiments::material_check(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    Ok(outcome(r.min_eigenvalue > 0.0, format!("lambda_min = {:e}", r.min_eigenvalue)))
}

fn c4_ogden_growth() -> Result<Outcome, String> {
    let og = incompressa::MaterialModel::ogden(&[1.0], &[1.5]).map_err(|e| e.to_string())?;
    let s = experiments::ogden_growth_slope(&og);
    Ok(outcome(s > 1.0 && s < 2.0, format!("slope = {s:.4}")))
}

fn c5_flow() -> Result<Outcome, String> {
    let mut c = ExperimentConfig::default();
    c.domain.n = 33;
    c.flow.velocity = "abc".into();
    c.flow.steps = 128;
    c.sweep.h = vec![0.1];
    let abc = experiments::flow_recover(&c).map_err(|e| e.to_string())?;
    let det = abc.rows[0].max_det_err;
    c.flow.velocity = "rigid(0,0,1)".into();
    c.sweep.h = vec![0.2, 0.1, 0.05, 0.025];
    let rot = experiments::flow_recover(&c).map_err(|e| e.to_string())?;
    let slope = rot.dist_slope.unwrap_or(0.0);
    let pass = det <= 1e-8 && slope >= 0.9 && rot.h_grad_decreasing;
    Ok(outcome(
        pass,
        format!("abc max|det Z - 1| = {det:e}; rotation W12 slope = {slope:.3}, h-gradient decreasing = {}", rot.h_grad_decreasing),
    ))
}

fn c6_grisvard() -> Result<Outcome, String> {
    let r = experiments::grisvard(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let gaps = r.rows.iter().map(|x| format!("{:e}", x.relative_gap)).collect::<Vec<_>>().join(", ");
    let branch = if r.exact {
        "exact branch: relative gap <= 1e-12 on every grid"
    } else {
        "order branch"
    };
    Ok(outcome(r.pass, format!("{branch}; relative gaps [{gaps}]; orders {:?}", r.orders)))
}

fn c7_potentials() -> Result<Outcome, String> {
    let d = BoxDomain::periodic([1.0; 3], [32; 3]).map_err(|e| e.to_string())?;
    let p = TrigPotential::benchmark();
    let w0 = VectorField::from_fn(&d, |x| {
        let w = p.value(&Vector3::from(x));
        [w[0], w[1], w[2]]
    });
    let v = curl(&w0);
    let w = curl_inverse(&v, 1e-10, 2000).map_err(|e| e.to_string())?;
    let round_trip = (&curl(&w) - &v).norm_l2();
    // Leray idempotence on a field with a gradient part
    let g = VectorField::from_fn(&d, |x| [(TAU * x[0]).cos(), 0.5 * (TAU * x[1]).cos(), 0.0]);
    let u = &v + &g;
    let tol = 1e-10;
    let once = leray_project(&u, tol, 2000).map_err(|e| e.to_string())?;
    let twice = leray_project(&once.field, tol, 2000).map_err(|e| e.to_string())?;
    let idem = (&twice.field - &once.field).norm_l2();
    let bound = 2.0 * tol * u.norm_l2();
    Ok(outcome(
        round_trip <= 1e-6 && idem <= bound,
        format!("|curl w - v| = {round_trip:e}; |P(Pu) - Pu| = {idem:e} (bound {bound:e})"),
    ))
}

fn c8_manufactured() -> Result<Outcome, String> {
    let mut c = ExperimentConfig::default();
    c.load.field = "manufactured".into();
    c.solver.grids = vec![17, 33, 65];
    let (r, _) = experiments::solve_linear(&c).map_err(|e| e.to_string())?;
    let LinearOutcome::Manufactured(m) = r else {
        return Err("expected a manufactured study".into());
    };
    let errs = m.rows.iter().map(|x| format!("{:e}", x.l2_error)).collect::<Vec<_>>().join(", ");
    Ok(outcome(
        m.min_order >= 1.8 && m.max_divergence_residual <= 1e-8,
        format!("L2 errors [{errs}]; min order {:.3}; max div residual {:e}", m.min_order, m.max_divergence_residual),
    ))
}

fn c9_gamma_sweep() -> Result<Outcome, String> {
    let mut c = ExperimentConfig::default();
    c.domain.n = 33;
    let r = experiments::gamma_sweep(&c).map_err(|e| e.to_string())?;
    if let Some(f) = &r.failure {
        return Err(f.clone());
    }
    let s = &r.summary;
    let ratio = s.final_over_initial_gap.unwrap_or(f64::INFINITY);
    let gaps = r.records.iter().map(|x| format!("{:e}", x.gap)).collect::<Vec<_>>().join(", ");
    let dists = r.records.iter().map(|x| format!("{:e}", x.dist_w1p)).collect::<Vec<_>>().join(", ");
    Ok(outcome(
        s.gap_strictly_decreasing && s.dist_strictly_decreasing && ratio <= 0.25 && s.max_det_err <= c.nonlinear.options.det_tol,
        format!("gaps [{gaps}]; W12 [{dists}]; final/initial {ratio:.4}; max det err {:e}", s.max_det_err),
    ))
}

fn c10_shifted() -> Result<Outcome, String> {
    let mut c = ExperimentConfig::default();
    c.domain.n = 17;
    c.sweep.h = vec![0.1, 0.05];
    let r = experiments::shifted_sweep(&c).map_err(|e| e.to_string())?;
    let bound = 10.0 * r.solver_tol;
    Ok(outcome(
        r.max_identity_gap <= 1e-9 && r.two_routes.max_diff <= bound && r.sweep.failure.is_none(),
        format!(
            "identity gap {:e}; two-route difference {:e} (bound {bound:e})",
            r.max_identity_gap, r.two_routes.max_diff
        ),
    ))
}

fn c11_determinism() -> Result<Outcome, String> {
    let mut c = ExperimentConfig::default();
    c.domain.n = 9;
    c.sweep.h = vec![0.2, 0.1];
    c.grisvard.grids = vec![9, 17];
    c.seed = 11;
    let mut compared = 0;
    for e in [Experiment::MaterialCheck, Experiment::Grisvard, Experiment::GammaSweep, Experiment::ShiftedSweep] {
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        let ra = run(e, &c, a.path()).map_err(|e| e.to_string())?;
        let rb = run(e, &c, b.path()).map_err(|e| e.to_string())?;
        for (fa, fb) in ra.files.iter().zip(&rb.files) {
            let x = std::fs::read(fa).map_err(|e| e.to_string())?;
            let y = std::fs::read(fb).map_err(|e| e.to_string())?;
            if x != y {
                return Ok(outcome(false, format!("{} differs between runs", fa.display())));
            }
            compared += 1;
        }
    }
    Ok(outcome(true, format!("{compared} artifacts byte-identical across two runs")))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Result<Outcome, String>); 11] = [
        ("material identities", 5.0, c1_materials),
        ("volumetric invariance", 1.0, c2_volumetric),
        ("ellipticity", 5.0, c3_ellipticity),
        ("sub-quadratic Ogden growth", 1.0, c4_ogden_growth),
        ("flow recovery", 60.0, c5_flow),
        ("Grisvard identity", 30.0, c6_grisvard),
        ("potentials", 30.0, c7_potentials),
        ("linearized solver", 300.0, c8_manufactured),
        ("gamma-sweep", 1200.0, c9_gamma_sweep),
        ("shifted-sweep", 300.0, c10_shifted),
        ("determinism", 600.0, c11_determinism),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let o = timed(*limit, *f);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag} {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
