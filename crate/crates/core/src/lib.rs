//! Finite element solver for optimal control of parabolic
//! convection-diffusion equations with box constraints on the control.
//!
//! State and co-state are discretized with P1 elements on triangulations of
//! the unit square and stabilized by algebraic flux correction; the state is
//! advanced by backward Euler, the co-state backwards in time, and the control
//! is the clamp of the scaled co-state. An outer fixed-point loop couples the
//! sweeps.

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod experiments;
pub mod limiter;
pub mod mesh;
pub mod ocp;
pub mod problems;
pub mod quadrature;
pub mod sparse;
pub mod stepper;
pub mod vtk;

pub use error::{Error, Result, StepKind};
pub use mesh::Mesh;
pub use ocp::{solve_ocp, solve_ocp_from, OcpConfig, OuterReport, Trajectory};
pub use problems::{builtin_problem, ProblemSpec};
pub use sparse::SparseOperator;
pub use stepper::{Limiting, PicardReport, StepConfig};
