//! Acceptance run: every property suite at its pinned sizes and tolerances.
//!
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fail.
//! Extra arguments select suites by name, e.g. `cargo test --test acceptance -- keystone`.

use std::process::ExitCode;

use hflow_core::validation::{run_suite, Suite};

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<Suite> = Suite::ALL
        .into_iter()
        .filter(|s| filters.is_empty() || filters.iter().any(|f| s.name().contains(f.as_str())))
        .collect();
    println!("running {} acceptance criteria", selected.len());
    let mut failed = 0;
    for suite in selected {
        match run_suite(suite) {
            Ok(report) => {
                println!("{}", report.summary_line());
                for c in report.checks.iter().filter(|c| !c.passed) {
                    println!("       over: {} measured {:.3e} tol {:.1e}", c.name, c.measured, c.tolerance);
                }
                for note in &report.notes {
                    println!("       note: {note}");
                }
                if !report.passed() {
                    failed += 1;
                }
            }
            Err(e) => {
                println!("[FAIL] {:>2} {}: error: {e}", suite.number(), suite.name());
                failed += 1;
            }
        }
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
