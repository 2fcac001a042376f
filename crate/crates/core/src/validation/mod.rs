//! Reference oracles and the property suites run by the `validate` task.

pub mod oracles;
pub mod suites;

pub use suites::{run_suite, Check, Suite, SuiteReport};
