//! Mesh-based Galerkin finite elements and meshless Kansa collocation with
//! radial basis functions, side by side on manufactured-solution benchmarks
//! for steady and unsteady Poisson and Stokes problems.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod linsolve;
pub mod metrics;
pub mod rbf;
pub mod shapeopt;
pub mod timestep;

pub use error::{Error, Result};
