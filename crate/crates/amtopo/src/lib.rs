//! Level-set topology optimization with additive-manufacturing build
//! constraints.
//!
//! The crate optimizes 2D structures on a fixed rectangular design domain
//! with a reaction-diffusion level-set update. Besides the structural
//! objective (rigidity or heat dissipation), designs can be penalized for
//! violating metal-AM process limits:
//!
//! * an **overhang constraint** detects downward-facing surfaces shallower
//!   than the printable threshold angle through a Helmholtz-filtered density
//!   gradient;
//! * a **layer thermal constraint** simulates the build layer by layer,
//!   flash-heating each newly deposited overhang boundary and integrating the
//!   excess temperature, so designs with poor heat-dissipation paths are
//!   penalized;
//! * a **distortion constraint** accumulates layer-by-layer inherent-strain
//!   displacement increments and penalizes their p-norm, steering the
//!   structure away from warp-prone layouts.
//!
//! Start with [`config::OptimizationConfig`] and [`optimizer::run`], or see
//! the `examples/` directory for runnable end-to-end studies.

pub mod audit;
pub mod build_mechanical;
pub mod build_thermal;
pub mod config;
pub mod error;
pub mod field;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod objectives;
pub mod optimizer;
pub mod overhang;

pub use error::{Error, Result};
