//! Field files and CSV export.
//!
//! A field file is a JSON document:
//!
//! ```json
//! { "format_version": 1,
//!   "chart": { "kind": "periodic-box", "resolution": [..], "lower": [..], "upper": [..] },
//!   "fields": [ { "name": "..", "signature": ["coord-up", ..], "data": "<base64>" } ] }
//! ```
//!
//! `data` holds little-endian f64 values, point-major then row-major over the
//! multi-index, exactly as [`TensorField`] stores them.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::chart::Chart;
use super::field::{unflatten, IndexTag, TensorField};
use crate::error::{HflowError, Result};

pub const FIELD_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldFile {
    pub format_version: u32,
    pub chart: Chart,
    pub fields: Vec<FieldEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub signature: Vec<IndexTag>,
    pub data: String,
}

impl FieldFile {
    /// Packs named fields; every field must live on `chart`.
    pub fn from_fields(chart: &Chart, fields: &[(&str, &TensorField)]) -> Result<Self> {
        let mut entries = Vec::with_capacity(fields.len());
        for (name, field) in fields {
            if **field.chart() != *chart {
                return Err(HflowError::ShapeMismatch(format!("field `{name}` lives on a different chart")));
            }
            let mut bytes = Vec::with_capacity(field.data().len() * 8);
            for v in field.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(FieldEntry {
                name: (*name).to_string(),
                signature: field.signature().to_vec(),
                data: STANDARD.encode(bytes),
            });
        }
        Ok(Self {
            format_version: FIELD_FILE_VERSION,
            chart: chart.clone(),
            fields: entries,
        })
    }

    /// Unpacks every field, checking version and payload length.
    pub fn to_fields(&self) -> Result<(Arc<Chart>, Vec<(String, TensorField)>)> {
        if self.format_version != FIELD_FILE_VERSION {
            return Err(HflowError::VersionMismatch {
                found: self.format_version,
                expected: FIELD_FILE_VERSION,
            });
        }
        // re-validate the chart; a hand-edited document may violate its invariants
        let chart = Arc::new(Chart::new(
            self.chart.kind(),
            self.chart.resolution().to_vec(),
            self.chart.lower().to_vec(),
            self.chart.upper().to_vec(),
        )?);
        let mut out = Vec::with_capacity(self.fields.len());
        for entry in &self.fields {
            let bytes = STANDARD
                .decode(entry.data.as_bytes())
                .map_err(|e| HflowError::Format(format!("field `{}`: {e}", entry.name)))?;
            if bytes.len() % 8 != 0 {
                return Err(HflowError::ShapeMismatch(format!(
                    "field `{}` payload is {} bytes, not a whole number of f64 values",
                    entry.name,
                    bytes.len()
                )));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let field = TensorField::from_data(chart.clone(), entry.signature.clone(), data).map_err(|e| match e {
                HflowError::ShapeMismatch(m) => HflowError::ShapeMismatch(format!("field `{}`: {m}", entry.name)),
                other => other,
            })?;
            out.push((entry.name.clone(), field));
        }
        Ok((chart, out))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("field file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HflowError::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Column header for a component, e.g. `T[0,1,2]`.
pub fn component_label(name: &str, n: usize, rank: usize, comp: usize) -> String {
    if rank == 0 {
        return name.to_string();
    }
    let idx = unflatten(n, rank, comp);
    let joined: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
    format!("{name}[{}]", joined.join(","))
}

/// One row per node: coordinates `x0..`, then every component of the field.
pub fn field_to_csv(name: &str, field: &TensorField) -> String {
    let n = field.dim();
    let comps = field.components();
    let mut out = String::new();
    let mut header: Vec<String> = (0..n).map(|a| format!("x{a}")).collect();
    header.extend((0..comps).map(|c| component_label(name, n, field.rank(), c)));
    out.push_str(&header.join(","));
    out.push('\n');
    for node in 0..field.num_nodes() {
        let coords = field.chart().coordinates(node);
        let row: Vec<String> = coords
            .iter()
            .chain(field.node(node).iter())
            .map(|v| format!("{v:e}"))
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_csv(path: &Path, name: &str, field: &TensorField) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(field_to_csv(name, field).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::chart::ChartKind;
    use proptest::prelude::*;

    fn chart() -> Chart {
        Chart::new(ChartKind::OpenBox, vec![8, 9], vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap()
    }

    proptest! {
        #[test]
        fn save_load_is_bit_exact(seed in any::<u64>()) {
            let chart = Arc::new(chart());
            let mut state = seed;
            let field = TensorField::from_data(
                chart.clone(),
                vec![IndexTag::CoordUp, IndexTag::RnDown],
                (0..chart.num_nodes() * 4)
                    .map(|_| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        f64::from_bits(state >> 2) // includes subnormals, huge values
                    })
                    .collect(),
            )
            .unwrap();
            let file = FieldFile::from_fields(&chart, &[("eps", &field)]).unwrap();
            let back = FieldFile::from_json(&file.to_json()).unwrap();
            let (_, fields) = back.to_fields().unwrap();
            let bits = |f: &TensorField| f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&fields[0].1), bits(&field));
            prop_assert_eq!(fields[0].1.signature(), field.signature());
        }
    }

    #[test]
    fn truncated_payload_is_shape_mismatch() {
        let chart = Arc::new(chart());
        let field = TensorField::zeros(chart.clone(), vec![IndexTag::CoordUp]);
        let mut file = FieldFile::from_fields(&chart, &[("v", &field)]).unwrap();
        let mut bytes = STANDARD.decode(&file.fields[0].data).unwrap();
        bytes.truncate(bytes.len() - 8);
        file.fields[0].data = STANDARD.encode(bytes);
        assert!(matches!(file.to_fields(), Err(HflowError::ShapeMismatch(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let chart = chart();
        let mut file = FieldFile::from_fields(&chart, &[]).unwrap();
        file.format_version = 7;
        assert!(matches!(file.to_fields(), Err(HflowError::VersionMismatch { found: 7, .. })));
    }

    #[test]
    fn empty_field_list_is_valid() {
        let chart = chart();
        let file = FieldFile::from_fields(&chart, &[]).unwrap();
        let (c, fields) = FieldFile::from_json(&file.to_json()).unwrap().to_fields().unwrap();
        assert!(fields.is_empty());
        assert_eq!(*c, chart);
    }

    #[test]
    fn csv_has_header_and_one_row_per_node() {
        let chart = Arc::new(chart());
        let field = TensorField::zeros(chart.clone(), vec![IndexTag::CoordUp, IndexTag::CoordDown]);
        let csv = field_to_csv("g", &field);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "x0,x1,g[0,0],g[0,1],g[1,0],g[1,1]");
        assert_eq!(lines.count(), chart.num_nodes());
    }
}
