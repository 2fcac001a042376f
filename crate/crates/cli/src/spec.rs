//! Frame and chart specifications as written on the command line.
//!
//! A frame spec is a name followed by optional `key=value` parameters:
//! `heisenberg`, `warped:dim=3,amp=0.2`, `perturbation:seed=0,amp=0.1`,
//! `file:fields.json`. A chart spec is `periodic[:length=L]` or `box[:lo=a,hi=b]`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use hflow_core::catalog::{abelian, builtin, perturbation, warped, ExpectedInvariants, BUILTIN_NAMES};
use hflow_core::frame::FRAME_SIGNATURE;
use hflow_core::grid::{Chart, FieldFile};
use hflow_core::{FrameField, HflowError};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum FrameSpec {
    Builtin { name: String, dim: Option<usize>, amp: Option<f64> },
    Perturbation { seed: u64, amp: f64, band: u32, dim: usize },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartSpec {
    Periodic { length: f64 },
    Box { lo: f64, hi: f64 },
}

fn split_params(text: &str) -> Result<(String, BTreeMap<String, String>), CliError> {
    let (name, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut params = BTreeMap::new();
    for item in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("parameter `{item}` in `{text}` is not key=value")))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((name.trim().to_string(), params))
}

fn take<T: std::str::FromStr>(params: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    params
        .remove(key)
        .map(|v| v.parse().map_err(|_| CliError::usage(format!("bad value `{v}` for `{key}`"))))
        .transpose()
}

fn no_leftovers(params: &BTreeMap<String, String>, what: &str) -> Result<(), CliError> {
    match params.keys().next() {
        Some(k) => Err(CliError::usage(format!("unknown parameter `{k}` for {what}"))),
        None => Ok(()),
    }
}

impl FrameSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if let Some(path) = text.strip_prefix("file:") {
            return Ok(FrameSpec::File(PathBuf::from(path)));
        }
        let (name, mut p) = split_params(text)?;
        let spec = match name.as_str() {
            "perturbation" => FrameSpec::Perturbation {
                seed: take(&mut p, "seed")?.unwrap_or(0),
                amp: take(&mut p, "amp")?.unwrap_or(0.1),
                band: take(&mut p, "band")?.unwrap_or(2),
                dim: take(&mut p, "dim")?.unwrap_or(2),
            },
            n if BUILTIN_NAMES.contains(&n) => FrameSpec::Builtin {
                name: name.clone(),
                dim: take(&mut p, "dim")?,
                amp: take(&mut p, "amp")?,
            },
            other => return Err(CliError::usage(format!("unknown frame `{other}`"))),
        };
        no_leftovers(&p, &name)?;
        Ok(spec)
    }
}

impl ChartSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let (name, mut p) = split_params(text)?;
        let spec = match name.as_str() {
            "periodic" => ChartSpec::Periodic {
                length: take(&mut p, "length")?.unwrap_or(2.0 * PI),
            },
            "box" => ChartSpec::Box {
                lo: take(&mut p, "lo")?.unwrap_or(-1.0),
                hi: take(&mut p, "hi")?.unwrap_or(1.0),
            },
            other => return Err(CliError::usage(format!("unknown chart kind `{other}`"))),
        };
        no_leftovers(&p, &name)?;
        Ok(spec)
    }

    fn build(self, dim: usize, res: usize) -> Result<Chart, HflowError> {
        match self {
            ChartSpec::Periodic { length } => Chart::periodic(dim, res, length),
            ChartSpec::Box { lo, hi } => Chart::open_box(dim, res, lo, hi),
        }
    }
}

/// Default resolution: 64 nodes per axis in two dimensions, 32 in three or more.
pub fn default_resolution(dim: usize) -> usize {
    if dim >= 3 {
        32
    } else {
        64
    }
}

/// A frame plus whatever its recipe promises about it.
pub struct LoadedFrame {
    pub frame: FrameField,
    pub expected: Option<ExpectedInvariants>,
}

/// Loads a frame. Bad specs and unreadable files are usage errors; frames
/// that load but are not usable (non-finite, singular) are numerical failures.
pub fn load_frame(spec: &FrameSpec, chart: Option<ChartSpec>, res: Option<usize>) -> Result<LoadedFrame, CliError> {
    let recipe = match spec {
        FrameSpec::File(path) => {
            return Ok(LoadedFrame {
                frame: load_file(path)?,
                expected: None,
            })
        }
        FrameSpec::Builtin { name, dim, amp } => match (name.as_str(), dim, amp) {
            ("abelian", d, None) => abelian(d.unwrap_or(2)),
            ("warped", d, a) => warped(d.unwrap_or(2), a.unwrap_or(0.3)),
            (n, None, None) => builtin(n),
            (n, _, _) => return Err(CliError::usage(format!("frame `{n}` takes no parameters"))),
        }
        .map_err(CliError::usage_from)?,
        FrameSpec::Perturbation { dim, .. } => {
            let chart = chart.unwrap_or(ChartSpec::Periodic { length: 2.0 * PI });
            let c = Arc::new(chart.build(*dim, res.unwrap_or(default_resolution(*dim))).map_err(CliError::usage_from)?);
            let FrameSpec::Perturbation { seed, amp, band, .. } = spec else { unreachable!() };
            let r = perturbation(*seed, *amp, *band, &c).map_err(CliError::usage_from)?;
            return Ok(LoadedFrame {
                frame: FrameField::analytic(c, r.formula).map_err(CliError::numerical)?,
                expected: Some(r.expected),
            });
        }
    };
    let res = res.unwrap_or(default_resolution(recipe.dim));
    let chart = match chart {
        Some(c) => Arc::new(c.build(recipe.dim, res).map_err(CliError::usage_from)?),
        None => recipe.default_chart(res).map_err(CliError::usage_from)?,
    };
    Ok(LoadedFrame {
        frame: FrameField::analytic(chart, recipe.formula).map_err(CliError::numerical)?,
        expected: Some(recipe.expected),
    })
}

/// Frame stored in a field file: the entry named `frame`, else the first with a frame signature.
fn load_file(path: &PathBuf) -> Result<FrameField, CliError> {
    let file = FieldFile::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let (_, fields) = file
        .to_fields()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let values = fields
        .iter()
        .find(|(name, _)| name == "frame")
        .or_else(|| fields.iter().find(|(_, f)| f.signature() == FRAME_SIGNATURE))
        .map(|(_, f)| f.clone())
        .ok_or_else(|| CliError::usage(format!("{} holds no frame field", path.display())))?;
    FrameField::sampled(values).map_err(CliError::numerical)
}

/// Parses `0.1,-0.2,0.5`.
pub fn parse_point(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::usage(format!("bad coordinate `{s}` in `{text}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hflow_core::grid::ChartKind;

    #[test]
    fn frame_specs_parse() {
        assert_eq!(
            FrameSpec::parse("perturbation:seed=3,amp=0.2").unwrap(),
            FrameSpec::Perturbation { seed: 3, amp: 0.2, band: 2, dim: 2 }
        );
        assert!(matches!(FrameSpec::parse("heisenberg").unwrap(), FrameSpec::Builtin { dim: None, .. }));
        assert_eq!(FrameSpec::parse("file:a.json").unwrap(), FrameSpec::File("a.json".into()));
        assert!(FrameSpec::parse("sphere").is_err());
        assert!(FrameSpec::parse("perturbation:sed=1").is_err());
        assert!(FrameSpec::parse("perturbation:seed").is_err());
        assert!(FrameSpec::parse("perturbation:seed=x").is_err());
    }

    #[test]
    fn chart_specs_parse() {
        assert_eq!(ChartSpec::parse("box:lo=-2").unwrap(), ChartSpec::Box { lo: -2.0, hi: 1.0 });
        assert_eq!(ChartSpec::parse("periodic").unwrap(), ChartSpec::Periodic { length: 2.0 * PI });
        assert!(ChartSpec::parse("sphere").is_err());
    }

    #[test]
    fn loading_builtins_respects_resolution() {
        let f = load_frame(&FrameSpec::parse("affine").unwrap(), None, Some(16)).unwrap().frame;
        assert_eq!(f.chart().resolution(), &[16, 16]);
        assert_eq!(f.chart().kind(), ChartKind::OpenBox);
        assert!(load_frame(&FrameSpec::parse("heisenberg:dim=2").unwrap(), None, Some(8)).is_err());
        assert_eq!(parse_point("1, 2.5,-3").unwrap(), vec![1.0, 2.5, -3.0]);
        assert!(parse_point("1,,2").is_err());
    }
}
