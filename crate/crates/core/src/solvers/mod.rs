//! Linearized and scaled nonlinear incompressible solvers on a box.

use thiserror::Error;

use crate::fields::{FieldError, VectorField};
use crate::linalg::LinalgError;
use crate::materials::MaterialError;

pub mod linear;
pub mod manufactured;
pub mod multigrid;
pub mod nonlinear;
pub mod q1;
pub mod shifted;

pub use linear::{
    linearized_energy, load_functional, solve_linearized, solve_linearized_from, LinearizedProblem, SaddleSolution,
    SolveReport,
};
pub use nonlinear::{
    minimize_nonlinear, nonlinear_energy, ConstraintMode, EnergyBreakdown, NonlinearProblem, NonlinearReport,
    NonlinearSolution, OptimizerOptions,
};
pub use q1::CellMap;
pub use shifted::{ShiftedFunctionals, TwoRouteReport, TwoRoutes};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("elasticity tensor is not positive definite (min eigenvalue {0:e})")]
    Indefinite(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("line search failed at iteration {iteration} (energy {energy:e})")]
    LineSearch {
        iteration: usize,
        energy: f64,
        last: Box<VectorField>,
    },
    #[error("constraint violation stalled at {violation:e} after {cycles} multiplier cycles")]
    Stagnation { cycles: usize, violation: f64 },
    #[error("initial iterate has infinite energy")]
    InfeasibleStart,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

impl From<LinalgError> for SolverError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotConverged {
                iterations,
                residual,
                history,
            } => SolverError::NotConverged {
                iterations,
                residual,
                history,
            },
            LinalgError::Indefinite(x) => SolverError::Indefinite(x),
        }
    }
}
