//! Incompressible finite elasticity on structured grids: material laws,
//! discrete calculus, volume-preserving recovery flows, vector potentials,
//! linearized and nonlinear solvers, and an experiment harness for the
//! small-strain limit.

pub mod fields;
pub mod flow_recovery;
pub mod harness;
pub mod linalg;
pub mod materials;
pub mod potentials;
pub mod solvers;
pub mod util;

pub use fields::{BoxDomain, GammaMarker, ScalarField, TensorField, VectorField};
pub use materials::{Energy, MaterialModel, Matrix3, Matrix3Ext, VolumetricModel};
