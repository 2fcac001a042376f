//! `hflow`: run one task on one frame and write a report plus artifacts.
//!
//! Exit status: 0 when every assertion passes, 1 when one fails, 2 for
//! usage and configuration errors, 3 for numerical failures.

mod config;
mod report;
mod spec;
mod tasks;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use hflow_core::HflowError;

use config::{Cli, RunConfig};
use report::{RunReport, Status};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn usage_from(e: HflowError) -> Self {
        CliError::Usage(e.to_string())
    }

    /// Configuration errors stay usage errors wherever they surface.
    pub fn numerical(e: HflowError) -> Self {
        match e {
            HflowError::Config(_) | HflowError::UnknownRecipe(_) => CliError::Usage(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, opts) = cli.task.split();
    let config = match RunConfig::resolve(task, opts) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(n) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&CliError::usage(e.to_string()));
        }
    }
    if let Err(e) = std::fs::create_dir_all(&config.out) {
        return fail(&CliError::io(&config.out, e));
    }
    let mut report = RunReport::new(config);
    match tasks::run(&mut report) {
        Ok(()) => {}
        Err(CliError::Numerical(msg)) => {
            report.status = Status::Error;
            report.error = Some(msg);
        }
        Err(e) => return fail(&e),
    }
    report.finish();
    if let Err(e) = report.write() {
        return fail(&e);
    }
    print!("{}", report.summary());
    ExitCode::from(report.status.exit_code() as u8)
}

fn fail(e: &CliError) -> ExitCode {
    match e {
        CliError::Usage(m) => eprintln!("hflow: {m}"),
        CliError::Numerical(m) => eprintln!("hflow: numerical failure: {m}"),
    }
    ExitCode::from(e.exit_code())
}
