//! Frame-field calculus on parallelizable manifolds: torsion and curvature of
//! frames, two-point splittings, and the homogeneous flow with its gauge ODE.

pub mod calculus;
pub mod catalog;
pub mod error;
pub mod flows;
pub mod frame;
pub mod grid;
pub mod groupoid;
pub mod validation;

pub use error::{HflowError, Result};
pub use frame::{invert_frame, invert_matrix_field, FrameField, GaugeField};
pub use grid::{Chart, ChartKind, IndexTag, TensorField};
