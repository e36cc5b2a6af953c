//! Experiment front end: config in, deterministic CSV/JSON artifacts out.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::fields::{FieldError, VectorField};
use crate::flow_recovery::FlowError;
use crate::materials::MaterialError;
use crate::solvers::SolverError;

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{Experiment, ExperimentConfig};
pub use experiments::{ConvergenceRecord, SweepReport, SweepSummary};

use experiments::{LinearOutcome, CONVERGENCE_COLUMNS, FLOW_COLUMNS, GRISVARD_COLUMNS, MANUFACTURED_COLUMNS};
use output::{num, to_json, Table};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for everything that fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Material(_) | HarnessError::Field(FieldError::InvalidDomain(_)) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    Partial,
    Failed,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    experiment: &'a str,
    format_version: u32,
    seed: u64,
    config_hash: &'a str,
    status: Status,
    error: Option<String>,
    result: Option<&'a T>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub status: Status,
    pub config_hash: String,
    pub files: Vec<PathBuf>,
    pub failure: Option<String>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Complete => 0,
            _ => 3,
        }
    }
}

/// Loads and validates a config file, applying the command-line overrides.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

struct Writer<'a> {
    dir: &'a Path,
    name: &'static str,
    seed: u64,
    hash: String,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn json<T: Serialize>(&mut self, status: Status, error: Option<String>, result: Option<&T>) -> Result<(), HarnessError> {
        let env = Envelope {
            experiment: self.name,
            format_version: 1,
            seed: self.seed,
            config_hash: &self.hash,
            status,
            error,
            result,
        };
        let p = output::write(self.dir, &format!("{}.json", self.name), to_json(&env).as_bytes())?;
        self.files.push(p);
        Ok(())
    }

    fn csv(&mut self, table: &Table, partial: Option<&str>) -> Result<(), HarnessError> {
        let text = table.render(self.name, self.seed, &self.hash, partial);
        let p = output::write(self.dir, &format!("{}.csv", self.name), text.as_bytes())?;
        self.files.push(p);
        Ok(())
    }

    fn field(&mut self, v: &VectorField) -> Result<(), HarnessError> {
        let mut bytes = Vec::new();
        v.write_binary(&mut bytes)?;
        let p = output::write(self.dir, &format!("{}.v.bin", self.name), &bytes)?;
        self.files.push(p);
        Ok(())
    }
}

fn convergence_table(records: &[ConvergenceRecord]) -> Table {
    let mut t = Table::new(&CONVERGENCE_COLUMNS);
    for r in records {
        t.push(vec![
            num(r.h),
            num(r.e_nonlinear),
            num(r.e_linear_min),
            num(r.gap),
            num(r.dist_w1p),
            num(r.max_det_err),
            r.iters.to_string(),
        ]);
    }
    t
}

fn finish<T: Serialize>(w: &mut Writer, report: &T, table: Option<&Table>, failure: Option<String>) -> Result<Status, HarnessError> {
    let status = if failure.is_some() { Status::Partial } else { Status::Complete };
    if let Some(t) = table {
        w.csv(t, failure.as_deref())?;
    }
    w.json(status, failure, Some(report))?;
    Ok(status)
}

/// Runs one experiment and writes `<experiment>.json` (plus `.csv` and
/// `.v.bin` where they apply) into `out`.
///
/// Configuration problems return `Err` before anything is written. A solver
/// failure writes a `failed` JSON marker and returns `Err`; a failure in the
/// middle of a sweep keeps the finished rows and returns `Status::Partial`.
pub fn run(experiment: Experiment, cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary, HarnessError> {
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(HarnessError::Config(format!("config is for `{e}`, not `{experiment}`")));
        }
    }
    cfg.validate()?;
    let mut w = Writer {
        dir: out,
        name: experiment.as_str(),
        seed: cfg.seed,
        hash: cfg.hash(),
        files: Vec::new(),
    };
    let result = execute(experiment, cfg, &mut w);
    match result {
        Ok((status, failure)) => Ok(RunSummary {
            experiment,
            status,
            config_hash: w.hash.clone(),
            files: w.files,
            failure,
        }),
        Err(e) => {
            if e.exit_code() == 3 {
                w.json::<()>(Status::Failed, Some(e.to_string()), None)?;
            }
            Err(e)
        }
    }
}

fn execute(experiment: Experiment, cfg: &ExperimentConfig, w: &mut Writer) -> Result<(Status, Option<String>), HarnessError> {
    match experiment {
        Experiment::MaterialCheck => {
            let r = experiments::material_check(cfg)?;
            let mut t = Table::new(&["check", "value", "pass"]);
            for c in &r.checks {
                t.push(vec![c.name.clone(), num(c.value), c.pass.to_string()]);
            }
            Ok((finish(w, &r, Some(&t), None)?, None))
        }
        Experiment::FlowRecover => {
            let r = experiments::flow_recover(cfg)?;
            let mut t = Table::new(&FLOW_COLUMNS);
            for x in &r.rows {
                t.push(vec![num(x.h), num(x.max_det_err), num(x.max_det_err_discrete), num(x.dist_w1p), num(x.dist_linf), num(x.h_grad_linf)]);
            }
            Ok((finish(w, &r, Some(&t), None)?, None))
        }
        Experiment::Grisvard => {
            let r = experiments::grisvard(cfg)?;
            let mut t = Table::new(&GRISVARD_COLUMNS);
            for x in &r.rows {
                t.push(vec![x.n.to_string(), num(x.h), num(x.lhs), num(x.rhs), num(x.gap), num(x.relative_gap)]);
            }
            Ok((finish(w, &r, Some(&t), None)?, None))
        }
        Experiment::SolveLinear => {
            let (r, v) = experiments::solve_linear(cfg)?;
            let table = match &r {
                LinearOutcome::Manufactured(m) => {
                    let mut t = Table::new(&MANUFACTURED_COLUMNS);
                    for x in &m.rows {
                        t.push(vec![
                            x.n.to_string(),
                            num(x.h),
                            num(x.l2_error),
                            num(x.pressure_l2_error),
                            num(x.divergence_residual),
                            num(x.momentum_residual),
                            x.iterations.to_string(),
                        ]);
                    }
                    Some(t)
                }
                LinearOutcome::Single(_) => None,
            };
            if let Some(v) = &v {
                w.field(v)?;
            }
            Ok((finish(w, &r, table.as_ref(), None)?, None))
        }
        Experiment::SolveNonlinear => {
            let (r, v) = experiments::solve_nonlinear(cfg)?;
            w.field(&v)?;
            let t = convergence_table(std::slice::from_ref(&r.record));
            Ok((finish(w, &r, Some(&t), None)?, None))
        }
        Experiment::GammaSweep => {
            let r = experiments::gamma_sweep(cfg)?;
            let t = convergence_table(&r.records);
            let f = r.failure.clone();
            Ok((finish(w, &r, Some(&t), f.clone())?, f))
        }
        Experiment::ShiftedSweep => {
            let r = experiments::shifted_sweep(cfg)?;
            let t = convergence_table(&r.sweep.records);
            let f = r.sweep.failure.clone();
            Ok((finish(w, &r, Some(&t), f.clone())?, f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Solver(SolverError::InfeasibleStart).exit_code(), 3);
        assert_eq!(HarnessError::Check("x".into()).exit_code(), 3);
    }

    #[test]
    fn experiment_mismatch_is_a_config_error() {
        let mut c = ExperimentConfig::default();
        c.experiment = Some(Experiment::Grisvard);
        let dir = tempfile::tempdir().unwrap();
        let e = run(Experiment::GammaSweep, &c, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn solver_failure_leaves_a_marker() {
        let mut c = ExperimentConfig::default();
        c.domain.n = 5;
        c.solver.max_iter = 1;
        c.solver.tol = 1e-14;
        let dir = tempfile::tempdir().unwrap();
        let e = run(Experiment::SolveLinear, &c, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let text = std::fs::read_to_string(dir.path().join("solve-linear.json")).unwrap();
        assert!(text.contains("\"status\": \"failed\""));
    }

    #[test]
    fn grisvard_run_writes_hashed_rows() {
        let mut c = ExperimentConfig::default();
        c.grisvard.grids = vec![5, 9];
        let dir = tempfile::tempdir().unwrap();
        let s = run(Experiment::Grisvard, &c, dir.path()).unwrap();
        assert_eq!(s.exit_code(), 0);
        let csv = std::fs::read_to_string(dir.path().join("grisvard.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.ends_with(&s.config_hash)));
    }
}
