// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ingestion, the non-negativity shift and result persistence.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::pipeline::{DetectionResult, SegmentNetwork};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "nmfcpd";

/// Shift all cells by `max(0, -min)` so the smallest entry becomes 0.
pub fn shift_nonneg(y_raw: ArrayView2<'_, f64>) -> Result<(TimeSeriesMatrix, f64)> {
    if let Some(((i, j), v)) = y_raw.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid_input(format!("cell ({i}, {j}) = {v} is not finite")));
    }
    let min = y_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min < 0.0 { -min } else { 0.0 };
    let shifted = if shift > 0.0 {
        y_raw.mapv(|v| v + shift)
    } else {
        y_raw.to_owned()
    };
    Ok((TimeSeriesMatrix::new(shifted)?, shift))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delimiter {
    Comma,
    Tab,
}

impl Delimiter {
    fn byte(self) -> u8 {
        match self {
            Self::Comma => b',',
            Self::Tab => b'\t',
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Force the delimiter instead of detecting it from the first line.
    pub delimiter: Option<Delimiter>,
    /// Force whether the first row is a header; detected when `None`.
    pub header: Option<bool>,
}

/// A parsed delimited text matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct InputDocument {
    pub values: Array2<f64>,
    pub names: Option<Vec<String>>,
    pub source: PathBuf,
    pub delimiter: Delimiter,
}

fn detect_delimiter(first_line: &str) -> Delimiter {
    if first_line.matches('\t').count() > first_line.matches(',').count() {
        Delimiter::Tab
    } else {
        Delimiter::Comma
    }
}

/// Read a delimited matrix, rows = time points, columns = variables.
pub fn ingest(path: impl AsRef<Path>, options: IngestOptions) -> Result<InputDocument> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::ingest(&shown, e.to_string()))?;
    let doc = parse_delimited(&text, options).map_err(|msg| Error::ingest(&shown, msg))?;
    log::info!("read {shown}: T = {}, p = {}", doc.0.nrows(), doc.0.ncols());
    Ok(InputDocument {
        values: doc.0,
        names: doc.1,
        source: path.to_path_buf(),
        delimiter: doc.2,
    })
}

type Parsed = (Array2<f64>, Option<Vec<String>>, Delimiter);

fn parse_delimited(text: &str, options: IngestOptions) -> std::result::Result<Parsed, String> {
    let first = text.lines().find(|l| !l.trim().is_empty()).ok_or("file is empty")?;
    let delimiter = options.delimiter.unwrap_or_else(|| detect_delimiter(first));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter.byte())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut names = None;
    let mut width = None;
    let mut cells = Vec::new();
    let mut n_rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let is_header = idx == 0
            && options
                .header
                .unwrap_or_else(|| record.iter().any(|c| c.parse::<f64>().is_err()));
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(format!("line {line}: expected {w} fields, found {}", record.len()));
            }
            _ => {}
        }
        if is_header {
            names = Some(record.iter().map(str::to_owned).collect());
            continue;
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| format!("line {line}, column {}: cannot parse {cell:?} as a number", col + 1))?;
            if !v.is_finite() {
                return Err(format!("line {line}, column {}: value {cell} is not finite", col + 1));
            }
            cells.push(v);
        }
        n_rows += 1;
    }
    let width = width.ok_or("file is empty")?;
    if n_rows == 0 {
        return Err("no data rows".into());
    }
    let values = Array2::from_shape_vec((n_rows, width), cells).map_err(|e| e.to_string())?;
    Ok((values, names, delimiter))
}

/// Write a numeric matrix as comma-separated text with full round-trip precision.
pub fn write_matrix<T: std::fmt::Display>(
    path: impl AsRef<Path>,
    values: ArrayView2<'_, T>,
    names: Option<&[String]>,
) -> Result<()> {
    let mut out = String::new();
    if let Some(names) = names {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for row in values.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a headerless comma- or tab-separated numeric matrix.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    Ok(ingest(path, IngestOptions::default())?.values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub source: Option<String>,
    pub n_times: usize,
    pub n_vars: usize,
    pub names: Option<Vec<String>>,
}

/// Sidecar files holding one segment's matrices, relative to the result document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkSidecars {
    pub consensus: String,
    pub cluster_adjacency: Option<String>,
    pub threshold_adjacency: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub first: usize,
    pub last: usize,
    pub labels: Option<Vec<usize>>,
    pub cluster_density: Option<f64>,
    pub threshold_density: Option<f64>,
    pub files: NetworkSidecars,
}

/// The persisted record of a detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch; omitted unless requested so runs stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    pub seed: u64,
    pub input: InputSummary,
    pub change_points: Vec<usize>,
    pub result: DetectionResult,
    pub networks: Vec<NetworkSummary>,
}

impl ResultDocument {
    /// Assemble a document; sidecar names are derived from `out_path`'s file stem.
    pub fn new(input: InputSummary, result: DetectionResult, networks: &[SegmentNetwork], out_path: &Path) -> Self {
        let stem = out_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "result".into());
        let networks = networks
            .iter()
            .enumerate()
            .map(|(i, n)| NetworkSummary {
                first: n.first,
                last: n.last,
                labels: n.labels.clone(),
                cluster_density: n.cluster_density(),
                threshold_density: n.threshold_density(),
                files: NetworkSidecars {
                    consensus: format!("{stem}.seg{i}.consensus.csv"),
                    cluster_adjacency: n
                        .cluster_adjacency
                        .as_ref()
                        .map(|_| format!("{stem}.seg{i}.clusters.csv")),
                    threshold_adjacency: n
                        .threshold_adjacency
                        .as_ref()
                        .map(|_| format!("{stem}.seg{i}.threshold.csv")),
                },
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix: None,
            seed: result.config.seed,
            input,
            change_points: result.change_points.clone(),
            result,
            networks,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Write the result document and the matrix sidecars of `networks` next to it.
pub fn emit(doc: &ResultDocument, networks: &[SegmentNetwork], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    for (summary, net) in doc.networks.iter().zip(networks) {
        write_matrix(dir.join(&summary.files.consensus), net.consensus.values.view(), None)?;
        if let (Some(name), Some(a)) = (&summary.files.cluster_adjacency, &net.cluster_adjacency) {
            write_matrix(dir.join(name), a.values().view(), None)?;
        }
        if let (Some(name), Some(a)) = (&summary.files.threshold_adjacency, &net.threshold_adjacency) {
            write_matrix(dir.join(name), a.values().view(), None)?;
        }
    }
    fs::write(path, doc.to_json()?)?;
    Ok(())
}

pub fn read_result(path: impl AsRef<Path>) -> Result<ResultDocument> {
    let text = fs::read_to_string(path)?;
    let doc: ResultDocument = serde_json::from_str(&text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid_input(format!(
            "unsupported result schema version {} (expected {SCHEMA_VERSION})",
            doc.schema_version
        )));
    }
    Ok(doc)
}

/// Ground truth written alongside simulated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub scenario: u8,
    pub seed: u64,
    pub n_times: usize,
    pub n_vars: usize,
    pub change_points: Vec<usize>,
    /// Cluster labels per segment.
    pub labels: Vec<Vec<usize>>,
    pub ridges: Vec<f64>,
}

pub fn write_truth(truth: &TruthDocument, path: impl AsRef<Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(truth)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<TruthDocument> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
