//! The JSON run report written next to every run's artifacts.

use std::collections::BTreeMap;

use hflow_core::validation::{Check, SuiteReport};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{RunConfig, Task};
use crate::CliError;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// Every assertion passed.
    Pass,
    /// The run finished but an assertion failed.
    Fail,
    /// A numerical failure stopped the run; artifacts may be partial.
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Error => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub task: Task,
    /// The resolved configuration, defaults included.
    pub config: RunConfig,
    pub results: BTreeMap<String, Value>,
    pub assertions: Vec<Check>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suites: Vec<SuiteReport>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            task: config.task,
            config,
            results: BTreeMap::new(),
            assertions: Vec::new(),
            suites: Vec::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            status: Status::Pass,
            error: None,
        }
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.results.insert(key.to_string(), v);
    }

    pub fn assert(&mut self, name: &str, measured: f64, tolerance: f64) {
        self.assertions.push(Check::new(name, measured, tolerance));
    }

    /// Writes `contents` into the output directory and lists it as an artifact.
    pub fn artifact(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.config.out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn finish(&mut self) {
        if self.status != Status::Error {
            self.status = if self.assertions.iter().all(|c| c.passed) {
                Status::Pass
            } else {
                Status::Fail
            };
        }
    }

    pub fn write(&self) -> Result<(), CliError> {
        let path = self.config.out.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    /// Short human-readable summary for the terminal.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&s.summary_line());
            out.push('\n');
        }
        if self.suites.is_empty() {
            for c in &self.assertions {
                out.push_str(&format!(
                    "[{}] {}: measured {:.3e} tol {:.1e}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance
                ));
            }
        }
        if let Some(e) = &self.error {
            out.push_str(&format!("error: {e}\n"));
        }
        out.push_str(&format!(
            "{:?}: {} -> {}\n",
            self.status,
            self.task_name(),
            self.config.out.join(REPORT_FILE).display()
        ));
        out
    }

    fn task_name(&self) -> String {
        serde_json::to_value(self.task)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}
