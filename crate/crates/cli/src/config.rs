//! Run configuration: command-line flags layered over an optional TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "hflow", version, about = "Frame calculus, homogeneous flow and gauge-ODE experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub task: TaskCommand,
}

#[derive(Debug, Subcommand)]
pub enum TaskCommand {
    /// Connection, torsion, curvatures and flow operator of a frame.
    Inspect(Options),
    /// Integrate the homogeneous flow (optionally with a DeTurck term).
    Flow(Options),
    /// Integrate the pointwise gauge ODE at one node, or the scalar model.
    GaugeOde(Options),
    /// Develop a solution of the frame equation along a path.
    Develop(Options),
    /// Run property suites.
    Validate(Options),
    /// Compare the flow PDE with gauge ODEs at every node.
    CrossValidate(Options),
}

impl TaskCommand {
    pub fn split(self) -> (Task, Options) {
        match self {
            TaskCommand::Inspect(o) => (Task::Inspect, o),
            TaskCommand::Flow(o) => (Task::Flow, o),
            TaskCommand::GaugeOde(o) => (Task::GaugeOde, o),
            TaskCommand::Develop(o) => (Task::Develop, o),
            TaskCommand::Validate(o) => (Task::Validate, o),
            TaskCommand::CrossValidate(o) => (Task::CrossValidate, o),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Inspect,
    Flow,
    GaugeOde,
    Develop,
    Validate,
    CrossValidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Plain homogeneous flow.
    None,
    /// DeTurck term against the zero connection.
    Zero,
    /// DeTurck term against the initial frame's connection.
    Initial,
}

/// Flags shared by every subcommand; each task reads the ones it needs.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `heisenberg`, `affine`, `abelian:dim=N`, `warped:dim=N,amp=A`,
    /// `perturbation:seed=S,amp=A,band=B,dim=N` or `file:PATH`.
    #[arg(long)]
    pub frame: Option<String>,
    /// `periodic[:length=L]` or `box[:lo=A,hi=B]`; defaults to the frame's own chart.
    #[arg(long)]
    pub chart: Option<String>,
    /// Nodes per axis.
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Record every k-th flow step.
    #[arg(long)]
    pub sample_every: Option<usize>,
    #[arg(long, value_enum)]
    pub reference: Option<Reference>,
    /// Write frame snapshots of the flow to a field file.
    #[arg(long)]
    pub snapshots: bool,
    /// Grid node for gauge-ode.
    #[arg(long)]
    pub node: Option<usize>,
    /// Scalar model `a0,R` for gauge-ode instead of a grid node.
    #[arg(long)]
    pub scalar: Option<String>,
    /// Path start for develop.
    #[arg(long)]
    pub from: Option<String>,
    /// Path end for develop.
    #[arg(long)]
    pub to: Option<String>,
    /// Initial value f(from); defaults to `from`.
    #[arg(long)]
    pub initial: Option<String>,
    /// Square loop `a,b,side` in axes a and b for a monodromy probe.
    #[arg(long = "loop")]
    pub loop_spec: Option<String>,
    /// Runge–Kutta steps for develop.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Suite to run under validate; repeatable. Default: all.
    #[arg(long)]
    pub suite: Vec<String>,
    /// Tolerance override `key=value`; repeatable.
    #[arg(long)]
    pub tol: Vec<String>,
    /// Output directory.
    #[arg(long, env = "HFLOW_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub frame: Option<String>,
    pub chart: Option<String>,
    pub resolution: Option<usize>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub sample_every: Option<usize>,
    pub reference: Option<Reference>,
    pub snapshots: Option<bool>,
    pub node: Option<usize>,
    pub scalar: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub initial: Option<String>,
    #[serde(rename = "loop")]
    pub loop_spec: Option<String>,
    pub steps: Option<usize>,
    #[serde(default)]
    pub suites: Vec<String>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

/// Everything a task needs, with defaults filled in. Echoed into the report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub frame: String,
    pub chart: Option<String>,
    pub resolution: Option<usize>,
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub reference: Reference,
    pub snapshots: bool,
    pub node: usize,
    pub scalar: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub initial: Option<String>,
    #[serde(rename = "loop")]
    pub loop_spec: Option<String>,
    pub steps: usize,
    pub suites: Vec<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

pub const DEFAULT_OUT: &str = "hflow-out";

fn default_frame(task: Task) -> &'static str {
    match task {
        Task::Inspect | Task::Develop => "heisenberg",
        _ => "perturbation:seed=0,amp=0.1",
    }
}

impl RunConfig {
    pub fn resolve(task: Task, opts: Options) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(p) => FileConfig::read(p)?,
            None => FileConfig::default(),
        };
        let mut tolerances = file.tolerances;
        for item in &opts.tol {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--tol `{item}` is not key=value")))?;
            let v: f64 = v.parse().map_err(|_| CliError::usage(format!("--tol `{item}`: bad number")))?;
            tolerances.insert(k.to_string(), v);
        }
        let cfg = Self {
            task,
            frame: opts.frame.or(file.frame).unwrap_or_else(|| default_frame(task).to_string()),
            chart: opts.chart.or(file.chart),
            resolution: opts.res.or(file.resolution),
            t_end: opts.t_end.or(file.t_end).unwrap_or(0.05),
            dt: opts.dt.or(file.dt).unwrap_or(1e-3),
            sample_every: opts.sample_every.or(file.sample_every).unwrap_or(1),
            reference: opts.reference.or(file.reference).unwrap_or(Reference::None),
            snapshots: opts.snapshots || file.snapshots.unwrap_or(false),
            node: opts.node.or(file.node).unwrap_or(0),
            scalar: opts.scalar.or(file.scalar),
            from: opts.from.or(file.from),
            to: opts.to.or(file.to),
            initial: opts.initial.or(file.initial),
            loop_spec: opts.loop_spec.or(file.loop_spec),
            steps: opts.steps.or(file.steps).unwrap_or(1000),
            suites: if opts.suite.is_empty() { file.suites } else { opts.suite },
            tolerances,
            out: opts.out.or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            threads: opts.threads.or(file.threads),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(CliError::usage(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CliError::usage(format!("dt must be positive, got {}", self.dt)));
        }
        if self.sample_every == 0 || self.steps == 0 {
            return Err(CliError::usage("sample_every and steps must be positive"));
        }
        if self.threads == Some(0) {
            return Err(CliError::usage("threads must be positive"));
        }
        if let Some((k, v)) = self.tolerances.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::usage(format!("tolerance `{k}` = {v} must be a non-negative number")));
        }
        Ok(())
    }

    /// Tolerance for assertion `key`, overridable with `--tol key=value`.
    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "frame = \"affine\"\nt_end = 0.2\ndt = 0.01\n[tolerances]\nresidual = 1e-3\n",
        )
        .unwrap();
        let opts = Options {
            config: Some(path.clone()),
            dt: Some(0.005),
            tol: vec!["deviation=2e-5".into()],
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Task::Flow, opts).unwrap();
        assert_eq!(cfg.frame, "affine");
        assert_eq!(cfg.t_end, 0.2);
        assert_eq!(cfg.dt, 0.005);
        assert_eq!(cfg.tolerance("residual", 1.0), 1e-3);
        assert_eq!(cfg.tolerance("deviation", 1.0), 2e-5);
        assert_eq!(cfg.tolerance("other", 0.5), 0.5);
    }

    #[test]
    fn defaults_depend_on_the_task() {
        let cfg = RunConfig::resolve(Task::Develop, Options::default()).unwrap();
        assert_eq!(cfg.frame, "heisenberg");
        assert_eq!(cfg.steps, 1000);
        let cfg = RunConfig::resolve(Task::CrossValidate, Options::default()).unwrap();
        assert!(cfg.frame.starts_with("perturbation"));
        assert_eq!((cfg.t_end, cfg.dt), (0.05, 1e-3));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let bad = |opts: Options| RunConfig::resolve(Task::Flow, opts).unwrap_err().exit_code();
        assert_eq!(bad(Options { dt: Some(-1.0), ..Default::default() }), 2);
        assert_eq!(bad(Options { tol: vec!["x".into()], ..Default::default() }), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "nonsense = 1\n").unwrap();
        assert_eq!(bad(Options { config: Some(path), ..Default::default() }), 2);
    }
}
