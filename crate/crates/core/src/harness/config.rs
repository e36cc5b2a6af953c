//! Experiment configuration: one TOML table per run.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fields::{BoxDomain, GammaMarker, Side, VectorField};
use crate::materials::MaterialSpec;
use crate::solvers::{ConstraintMode, OptimizerOptions};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    MaterialCheck,
    FlowRecover,
    Grisvard,
    SolveLinear,
    SolveNonlinear,
    GammaSweep,
    ShiftedSweep,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::MaterialCheck,
        Experiment::FlowRecover,
        Experiment::Grisvard,
        Experiment::SolveLinear,
        Experiment::SolveNonlinear,
        Experiment::GammaSweep,
        Experiment::ShiftedSweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::MaterialCheck => "material-check",
            Experiment::FlowRecover => "flow-recover",
            Experiment::Grisvard => "grisvard",
            Experiment::SolveLinear => "solve-linear",
            Experiment::SolveNonlinear => "solve-nonlinear",
            Experiment::GammaSweep => "gamma-sweep",
            Experiment::ShiftedSweep => "shifted-sweep",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSpec {
    /// Nodes per axis; overridden by `counts`.
    pub n: usize,
    pub counts: Option<[usize; 3]>,
    pub extents: [f64; 3],
    /// `full`, `none` or a face such as `x-low`, `z-high`.
    pub gamma: String,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            n: 17,
            counts: None,
            extents: [1.0; 3],
            gamma: "full".into(),
        }
    }
}

pub fn parse_gamma(s: &str) -> Result<GammaMarker, HarnessError> {
    let bad = || HarnessError::Config(format!("unknown gamma `{s}`"));
    match s {
        "full" => Ok(GammaMarker::FullBoundary),
        "none" => Ok(GammaMarker::None),
        _ => {
            let (a, side) = s.split_once('-').ok_or_else(bad)?;
            let axis = match a {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => return Err(bad()),
            };
            let side = match side {
                "low" => Side::Low,
                "high" => Side::High,
                _ => return Err(bad()),
            };
            Ok(GammaMarker::Face { axis, side })
        }
    }
}

impl DomainSpec {
    pub fn build(&self) -> Result<BoxDomain, HarnessError> {
        let counts = self.counts.unwrap_or([self.n; 3]);
        Ok(BoxDomain::new(self.extents, counts, parse_gamma(&self.gamma)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadSpec {
    /// `zero`, `sin-x2`, `uniform-x`, `manufactured` or `random`.
    pub field: String,
    pub amplitude: f64,
}

impl Default for LoadSpec {
    fn default() -> Self {
        Self {
            field: "sin-x2".into(),
            amplitude: 0.01,
        }
    }
}

impl LoadSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !self.amplitude.is_finite() {
            return Err(HarnessError::Config("load amplitude must be finite".into()));
        }
        match self.field.as_str() {
            "zero" | "sin-x2" | "uniform-x" | "manufactured" | "random" => Ok(()),
            other => Err(HarnessError::Config(format!("unknown load field `{other}`"))),
        }
    }

    /// Samples the load on `domain`; `shear2` enters the manufactured forcing.
    pub fn build(&self, domain: &BoxDomain, shear2: f64, seed: u64) -> VectorField {
        let a = self.amplitude;
        match self.field.as_str() {
            "sin-x2" => VectorField::from_fn(domain, |x| [a * (TAU * x[1]).sin(), 0.0, 0.0]),
            "uniform-x" => VectorField::from_fn(domain, |_| [a, 0.0, 0.0]),
            "manufactured" => VectorField::from_fn(domain, |x| {
                let f = crate::solvers::manufactured::load(x, shear2);
                [a * f[0], a * f[1], a * f[2]]
            }),
            "random" => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                VectorField::from_fn(domain, |_| [a * rng.gen_range(-1.0..1.0), a * rng.gen_range(-1.0..1.0), a * rng.gen_range(-1.0..1.0)])
            }
            _ => VectorField::zeros(domain),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub h: Vec<f64>,
    /// Exponent of the reported `W^{1,p}` distance.
    pub p: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            h: vec![0.2, 0.1, 0.05, 0.025],
            p: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSolverSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub beta: f64,
    /// Grids of the manufactured-solution study.
    pub grids: Vec<usize>,
}

impl Default for LinearSolverSpec {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
            beta: 0.0,
            grids: vec![17, 33, 65],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearSpec {
    /// `augmented-lagrangian` or `penalty`.
    pub mode: String,
    pub weight: f64,
    /// Scale of `solve-nonlinear`; defaults to the first sweep entry.
    pub h: Option<f64>,
    /// `linear` (linearized minimizer) or `zero`.
    pub init: String,
    pub options: OptimizerOptions,
}

impl Default for NonlinearSpec {
    fn default() -> Self {
        Self {
            mode: "augmented-lagrangian".into(),
            weight: 100.0,
            h: None,
            init: "linear".into(),
            options: OptimizerOptions::default(),
        }
    }
}

impl NonlinearSpec {
    /// Constraint mode; AL multipliers start from `-h q` for cell pressures `q`.
    pub fn mode(&self, h: f64, pressure: Option<&[f64]>) -> Result<ConstraintMode, HarnessError> {
        match self.mode.as_str() {
            "penalty" => Ok(ConstraintMode::Penalty { weight: self.weight }),
            "augmented-lagrangian" => Ok(ConstraintMode::AugmentedLagrangian {
                weight: self.weight,
                multipliers: pressure.map(|q| q.iter().map(|p| -h * p).collect()),
            }),
            other => Err(HarnessError::Config(format!("unknown constraint mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    /// Analytic velocity by name, e.g. `rigid(0,0,1)` or `shear(1,2)`.
    pub velocity: String,
    /// `flow`: nonlinear data from the recovery flow of `v̄`; `direct`: `v̄` itself.
    pub boundary: String,
    pub steps: usize,
    /// Random trial fields for the shift identity.
    pub trials: usize,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            velocity: "rigid(0,0,1)".into(),
            boundary: "flow".into(),
            steps: 64,
            trials: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub velocity: String,
    pub steps: usize,
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self {
            velocity: "abc".into(),
            steps: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialCheckSpec {
    pub pairs: usize,
    pub rotations: usize,
    pub ogden_samples: usize,
    pub tensors: usize,
    /// Determinant range of random deformation gradients.
    pub det_range: [f64; 2],
}

impl Default for MaterialCheckSpec {
    fn default() -> Self {
        Self {
            pairs: 1000,
            rotations: 100,
            ogden_samples: 100,
            tensors: 100,
            det_range: [0.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrisvardSpec {
    pub grids: Vec<usize>,
}

impl Default for GrisvardSpec {
    fn default() -> Self {
        Self { grids: vec![17, 33, 65] }
    }
}

fn default_material() -> MaterialSpec {
    MaterialSpec {
        model: "neo-hookean".into(),
        mu: Some(1.0),
        mu_p: None,
        alpha_p: None,
        c1: None,
        c2: None,
        c3: None,
        c_vol: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must agree with the command line when present.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the command line wins.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default = "default_material")]
    pub material: MaterialSpec,
    #[serde(default)]
    pub load: LoadSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub solver: LinearSolverSpec,
    #[serde(default)]
    pub nonlinear: NonlinearSpec,
    #[serde(default)]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub material_check: MaterialCheckSpec,
    #[serde(default)]
    pub grisvard: GrisvardSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            output: None,
            domain: DomainSpec::default(),
            material: default_material(),
            load: LoadSpec::default(),
            sweep: SweepSpec::default(),
            solver: LinearSolverSpec::default(),
            nonlinear: NonlinearSpec::default(),
            shift: ShiftSpec::default(),
            flow: FlowSpec::default(),
            material_check: MaterialCheckSpec::default(),
            grisvard: GrisvardSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        let h = &self.sweep.h;
        if h.is_empty() || h.iter().any(|&x| !(x > 0.0 && x.is_finite())) || h.windows(2).any(|w| w[1] >= w[0]) {
            return cfg(format!("sweep.h must be positive and strictly decreasing, got {h:?}"));
        }
        if !(self.sweep.p >= 1.0) {
            return cfg(format!("sweep.p must be >= 1, got {}", self.sweep.p));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return cfg("solver.tol must be positive and solver.max_iter nonzero".into());
        }
        if !(self.solver.beta >= 0.0) {
            return cfg("solver.beta must be >= 0".into());
        }
        if let Some(h) = self.nonlinear.h {
            if !(h > 0.0) {
                return cfg("nonlinear.h must be positive".into());
            }
        }
        if !matches!(self.nonlinear.init.as_str(), "linear" | "zero") {
            return cfg(format!("nonlinear.init must be `linear` or `zero`, got `{}`", self.nonlinear.init));
        }
        self.nonlinear.mode(1.0, None)?;
        if !matches!(self.shift.boundary.as_str(), "flow" | "direct") {
            return cfg(format!("shift.boundary must be `flow` or `direct`, got `{}`", self.shift.boundary));
        }
        if self.shift.steps == 0 || self.flow.steps == 0 {
            return cfg("integration steps must be nonzero".into());
        }
        if self.grisvard.grids.len() < 2 || self.solver.grids.is_empty() {
            return cfg("grid lists are too short".into());
        }
        let [lo, hi] = self.material_check.det_range;
        if !(lo > 0.0 && hi >= lo) {
            return cfg("material_check.det_range must satisfy 0 < lo <= hi".into());
        }
        self.load.validate()?;
        self.material.build()?;
        self.domain.build()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
