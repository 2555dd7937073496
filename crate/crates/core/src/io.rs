//! Expression-matrix ingestion and the estimate report.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, Method, Pi0Estimate};
use crate::testing::{Group, TestFamily};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Csv,
    Tsv,
}

impl MatrixFormat {
    /// `.tsv`, `.tab` and `.txt` are tab separated, everything else comma.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("tsv" | "tab" | "txt") => MatrixFormat::Tsv,
            _ => MatrixFormat::Csv,
        }
    }

    fn delimiter(&self) -> u8 {
        match self {
            MatrixFormat::Csv => b',',
            MatrixFormat::Tsv => b'\t',
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MatrixFormat::Csv),
            "tsv" => Ok(MatrixFormat::Tsv),
            _ => Err(Error::InvalidParameter(format!("unknown matrix format '{s}'"))),
        }
    }
}

/// How columns are assigned to the two groups.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSpec {
    /// One-sample analysis.
    None,
    /// One label per data column, in column order.
    Inline(Vec<String>),
    /// Side file: either one label per column (separated by commas,
    /// whitespace or newlines) or `sample_id,label` lines.
    File(PathBuf),
    /// Label is the header token up to the first occurrence of the
    /// separator, e.g. `ALL_12` → `ALL`.
    HeaderPrefix(char),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    /// 1-based line in the input file.
    pub line: usize,
    pub gene_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    /// Rows are genes, columns samples.
    pub values: Array2<f64>,
    pub gene_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    pub groups: Option<Vec<Group>>,
    /// Names of groups X and Y, in order of first appearance.
    pub group_names: Option<(String, String)>,
    pub dropped: Vec<DroppedRow>,
}

impl ExpressionMatrix {
    pub fn group_sizes(&self) -> Option<(usize, usize)> {
        self.groups.as_ref().map(|g| {
            let x = g.iter().filter(|&&v| v == Group::X).count();
            (x, g.len() - x)
        })
    }
}

fn is_missing(token: &str) -> bool {
    matches!(
        token.to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "inf" | "+inf" | "-inf" | "infinity" | "+infinity" | "-infinity"
    )
}

enum Cell {
    Value(f64),
    Missing,
}

fn parse_cell(token: &str, line: usize, column: usize) -> Result<Cell> {
    let t = token.trim();
    if is_missing(t) {
        return Ok(Cell::Missing);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Cell::Value(v)),
        Ok(_) => Ok(Cell::Missing),
        Err(_) => Err(Error::Parse {
            line,
            message: format!("column {}: '{}' is not a number", column + 1, t),
        }),
    }
}

fn looks_numeric(token: &str) -> bool {
    let t = token.trim();
    is_missing(t) || t.parse::<f64>().is_ok()
}

pub fn ingest_matrix(path: &Path, format: MatrixFormat, labels: &LabelSpec) -> Result<ExpressionMatrix> {
    let file = File::open(path)?;
    ingest_reader(BufReader::new(file), format, labels)
}

/// Reads a matrix with a header row of sample ids and an optional leading
/// gene-id column. The gene-id column is recognized when the header has one
/// field fewer than the data rows, or when the first field of the first data
/// row is not numeric.
pub fn ingest_reader<R: Read>(reader: R, format: MatrixFormat, labels: &LabelSpec) -> Result<ExpressionMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r?,
        None => return Err(Error::EmptyInput),
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();

    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, rec));
    }
    let first = rows.first().ok_or(Error::EmptyInput)?;
    let width = first.1.len();
    let has_ids = header.len() + 1 == width
        || (header.len() == width && !looks_numeric(first.1.get(0).unwrap_or("")));
    let sample_ids: Vec<String> = if has_ids && header.len() == width {
        header[1..].to_vec()
    } else {
        header.clone()
    };
    let ncols = if has_ids { width - 1 } else { width };
    if ncols == 0 {
        return Err(Error::Parse {
            line: first.0,
            message: "no data columns".into(),
        });
    }
    if sample_ids.len() != ncols {
        return Err(Error::Parse {
            line: 1,
            message: format!("header has {} sample ids for {} data columns", sample_ids.len(), ncols),
        });
    }

    let mut values = Vec::with_capacity(rows.len() * ncols);
    let mut gene_ids = Vec::with_capacity(rows.len());
    let mut dropped = Vec::new();
    for (k, (line, rec)) in rows.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {} fields, found {}", width, rec.len()),
            });
        }
        let id = if has_ids {
            rec.get(0).unwrap_or("").to_string()
        } else {
            format!("row{}", k + 1)
        };
        let offset = usize::from(has_ids);
        let mut row = Vec::with_capacity(ncols);
        let mut missing = false;
        for c in 0..ncols {
            match parse_cell(rec.get(c + offset).unwrap_or(""), *line, c + offset)? {
                Cell::Value(v) => row.push(v),
                Cell::Missing => missing = true,
            }
        }
        if missing {
            dropped.push(DroppedRow { line: *line, gene_id: id });
        } else {
            values.extend(row);
            gene_ids.push(id);
        }
    }
    if gene_ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values = Array2::from_shape_vec((gene_ids.len(), ncols), values)
        .expect("row lengths checked");

    let (groups, group_names) = match resolve_labels(labels, &sample_ids)? {
        Some(tokens) => {
            let (g, names) = assign_groups(&tokens)?;
            (Some(g), Some(names))
        }
        None => (None, None),
    };
    Ok(ExpressionMatrix {
        values,
        gene_ids,
        sample_ids,
        groups,
        group_names,
        dropped,
    })
}

fn resolve_labels(spec: &LabelSpec, sample_ids: &[String]) -> Result<Option<Vec<String>>> {
    let tokens = match spec {
        LabelSpec::None => return Ok(None),
        LabelSpec::Inline(t) => t.clone(),
        LabelSpec::HeaderPrefix(sep) => sample_ids
            .iter()
            .map(|id| id.split(*sep).next().unwrap_or("").to_string())
            .collect(),
        LabelSpec::File(path) => read_label_file(path, sample_ids)?,
    };
    if tokens.len() != sample_ids.len() {
        return Err(Error::Labels(format!(
            "{} labels for {} sample columns",
            tokens.len(),
            sample_ids.len()
        )));
    }
    Ok(Some(tokens))
}

fn read_label_file(path: &Path, sample_ids: &[String]) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let split = |l: &str| -> Vec<String> {
        l.split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    };
    // `sample_id,label` pairs, matched by id
    if !lines.is_empty() && lines.iter().all(|l| split(l).len() == 2) && lines.len() >= sample_ids.len() {
        let map: BTreeMap<String, String> = lines
            .iter()
            .map(|l| {
                let t = split(l);
                (t[0].clone(), t[1].clone())
            })
            .collect();
        if sample_ids.iter().all(|id| map.contains_key(id)) {
            return Ok(sample_ids.iter().map(|id| map[id].clone()).collect());
        }
    }
    Ok(lines.iter().flat_map(|l| split(l)).collect())
}

/// Maps label tokens to groups; the first label seen becomes group X.
pub fn assign_groups(tokens: &[String]) -> Result<(Vec<Group>, (String, String))> {
    let first = tokens.first().ok_or_else(|| Error::Labels("no labels".into()))?.clone();
    let second = tokens
        .iter()
        .find(|t| **t != first)
        .ok_or_else(|| Error::Labels(format!("only one group label '{first}' present")))?
        .clone();
    if let Some(extra) = tokens.iter().find(|t| **t != first && **t != second) {
        return Err(Error::Labels(format!(
            "more than two group labels: '{first}', '{second}', '{extra}'"
        )));
    }
    let groups = tokens
        .iter()
        .map(|t| if *t == first { Group::X } else { Group::Y })
        .collect();
    Ok((groups, (first, second)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionStats {
    pub m: usize,
    pub columns: usize,
    pub rows_dropped: usize,
    pub dropped: Vec<DroppedRow>,
    pub group_sizes: Option<(usize, usize)>,
    pub group_names: Option<(String, String)>,
}

impl IngestionStats {
    pub fn from_matrix(x: &ExpressionMatrix) -> Self {
        Self {
            m: x.values.nrows(),
            columns: x.values.ncols(),
            rows_dropped: x.dropped.len(),
            dropped: x.dropped.clone(),
            group_sizes: x.group_sizes(),
            group_names: x.group_names.clone(),
        }
    }
}

/// Outcome of one method: the estimate, or the error it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodResult {
    Estimate(Pi0Estimate),
    Failed { method: Method, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub input: Option<String>,
    pub family: TestFamily,
    pub ingestion: IngestionStats,
    pub config: EstimatorConfig,
    pub results: Vec<MethodResult>,
}

impl EstimateReport {
    pub fn new(
        input: Option<String>,
        family: TestFamily,
        ingestion: IngestionStats,
        config: EstimatorConfig,
        results: BTreeMap<Method, Result<Pi0Estimate>>,
    ) -> Self {
        let results = results
            .into_iter()
            .map(|(method, r)| match r {
                Ok(e) => MethodResult::Estimate(e),
                Err(e) => MethodResult::Failed {
                    method,
                    error: e.to_string(),
                },
            })
            .collect();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input,
            family,
            ingestion,
            config,
            results,
        }
    }

    pub fn any_failed(&self) -> bool {
        self.results.iter().any(|r| matches!(r, MethodResult::Failed { .. }))
    }
}
