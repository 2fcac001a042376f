//! Charts, discrete tensor fields, differentiation, interpolation and file formats.

pub mod chart;
pub mod diff;
pub mod field;
pub mod interp;
pub mod io;

pub use chart::{Chart, ChartKind};
pub use diff::{differentiate, gradient};
pub use field::{flat_index, unflatten, FieldJet, IndexTag, NormKind, TensorField};
pub use interp::Interpolator;
pub use io::{field_to_csv, write_csv, FieldEntry, FieldFile};
