//! Tabular input for the learners and the count models.
//!
//! A [`Dataset`] is a column-typed design matrix (continuous or binary
//! columns only) with a continuous response, optional per-row group labels
//! and stable row identities. Multi-level categorical columns are expanded
//! into `parent_level` indicator columns at load time.
//!
//! A [`CountDataset`] holds one nonnegative count per mosquito together with
//! group-level covariates, which is what the zero-inflated models consume.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnSource {
    Raw,
    OneHot { parent: String, level: String },
    Derived { rule: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub source: ColumnSource,
}

impl ColumnMeta {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            source: ColumnSource::Raw,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Binary,
            source: ColumnSource::Raw,
        }
    }

    /// The locus an indicator column belongs to, if any.
    pub fn parent(&self) -> Option<&str> {
        match &self.source {
            ColumnSource::OneHot { parent, .. } => Some(parent),
            _ => None,
        }
    }
}

/// Declared type of one CSV column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaKind {
    Continuous,
    /// 0/1 column, optionally tagged with the locus it indicates an allele of.
    Binary {
        locus: Option<String>,
    },
    /// Multi-level column expanded into one indicator per observed level.
    /// A cell may list several levels separated by `;` or `|`.
    Categorical,
    Response,
    Group,
    Skip,
}

impl fmt::Display for SchemaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaKind::Continuous => f.write_str("continuous"),
            SchemaKind::Binary { locus: None } => f.write_str("binary"),
            SchemaKind::Binary { locus: Some(l) } => write!(f, "binary({l})"),
            SchemaKind::Categorical => f.write_str("categorical"),
            SchemaKind::Response => f.write_str("response"),
            SchemaKind::Group => f.write_str("group"),
            SchemaKind::Skip => f.write_str("skip"),
        }
    }
}

impl std::str::FromStr for SchemaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let kind = match s.to_ascii_lowercase().as_str() {
            "continuous" => SchemaKind::Continuous,
            "binary" => SchemaKind::Binary { locus: None },
            "categorical" => SchemaKind::Categorical,
            "response" => SchemaKind::Response,
            "group" => SchemaKind::Group,
            "skip" => SchemaKind::Skip,
            lower => {
                if lower.starts_with("binary(") && s.ends_with(')') {
                    let locus = s["binary(".len()..s.len() - 1].trim();
                    if locus.is_empty() {
                        return Err(Error::Schema("empty locus in binary(...)".into()));
                    }
                    SchemaKind::Binary {
                        locus: Some(locus.to_string()),
                    }
                } else {
                    return Err(Error::Schema(format!("unknown column kind {s:?}")));
                }
            }
        };
        Ok(kind)
    }
}

/// Column-type declarations, one `name:kind` pair per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    entries: Vec<(String, SchemaKind)>,
}

impl Schema {
    pub fn new(entries: Vec<(String, SchemaKind)>) -> Self {
        Self { entries }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kind) = line
                .split_once(':')
                .ok_or_else(|| Error::Schema(format!("line {}: expected name:kind, got {line:?}", lineno + 1)))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::Schema(format!("line {}: empty column name", lineno + 1)));
            }
            if entries.iter().any(|(n, _): &(String, SchemaKind)| n == name) {
                return Err(Error::Schema(format!("column {name:?} declared twice")));
            }
            entries.push((name.to_string(), kind.parse()?));
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[(String, SchemaKind)] {
        &self.entries
    }

    pub fn kind_of(&self, name: &str) -> Option<&SchemaKind> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, k)| k)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, kind) in &self.entries {
            writeln!(f, "{name}:{kind}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Active response column. Required when the schema declares several.
    pub response: Option<String>,
    /// Drop rows with any missing cell instead of rejecting the file.
    pub drop_incomplete_rows: bool,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_number(column: &str, row: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
        column: column.to_string(),
        row,
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonNumeric {
            column: column.to_string(),
            row,
            value: cell.to_string(),
        });
    }
    Ok(v)
}

fn check_binary(column: &str, values: &[f64]) -> Result<()> {
    for (row, &v) in values.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::ForeignBinaryValue {
                column: column.to_string(),
                row,
                value: v,
            });
        }
    }
    Ok(())
}

fn split_levels(cell: &str) -> impl Iterator<Item = &str> {
    cell.split([';', '|']).map(str::trim).filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Column-typed design matrix with a continuous response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<ColumnMeta>,
    // column-major: values[c][r]
    values: Vec<Vec<f64>>,
    response: NamedColumn,
    other_responses: Vec<NamedColumn>,
    group_id: Option<Vec<String>>,
    row_ids: Vec<u64>,
}

impl Dataset {
    /// Builds a dataset from column-major values. Binary columns are checked.
    pub fn new(
        columns: Vec<ColumnMeta>,
        values: Vec<Vec<f64>>,
        response_name: impl Into<String>,
        response: Vec<f64>,
    ) -> Result<Self> {
        if columns.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "column metadata vs value columns".into(),
                expected: columns.len(),
                actual: values.len(),
            });
        }
        let n = response.len();
        for (meta, col) in columns.iter().zip(&values) {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    what: format!("column {}", meta.name),
                    expected: n,
                    actual: col.len(),
                });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingValue {
                    column: meta.name.clone(),
                    row,
                });
            }
            if meta.kind == ColumnKind::Binary {
                check_binary(&meta.name, col)?;
            }
        }
        let mut seen = BTreeSet::new();
        for meta in &columns {
            if !seen.insert(meta.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", meta.name)));
            }
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                column: response_name.into(),
                row,
            });
        }
        Ok(Self {
            columns,
            values,
            response: NamedColumn {
                name: response_name.into(),
                values: response,
            },
            other_responses: Vec::new(),
            group_id: None,
            row_ids: (0..n as u64).collect(),
        })
    }

    pub fn with_group_ids(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                what: "group labels".into(),
                expected: self.n_rows(),
                actual: groups.len(),
            });
        }
        self.group_id = Some(groups);
        Ok(self)
    }

    /// Replaces the row identities used to key bootstrap draws.
    pub fn with_row_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                what: "row ids".into(),
                expected: self.n_rows(),
                actual: ids.len(),
            });
        }
        let distinct: BTreeSet<_> = ids.iter().collect();
        if distinct.len() != ids.len() {
            return Err(Error::Schema("row ids must be distinct".into()));
        }
        self.row_ids = ids;
        Ok(self)
    }

    /// Keeps an extra response column that can later be activated.
    pub fn with_extra_response(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                what: "response".into(),
                expected: self.n_rows(),
                actual: values.len(),
            });
        }
        self.other_responses.push(NamedColumn {
            name: name.into(),
            values,
        });
        Ok(self)
    }

    /// Makes `name` the active response. A feature column of that name is
    /// moved out of the design matrix.
    pub fn with_response(mut self, name: &str) -> Result<Self> {
        if self.response.name == name {
            return Ok(self);
        }
        let incoming = if let Some(pos) = self.other_responses.iter().position(|c| c.name == name) {
            self.other_responses.remove(pos)
        } else if let Some(pos) = self.columns.iter().position(|c| c.name == name) {
            self.columns.remove(pos);
            NamedColumn {
                name: name.to_string(),
                values: self.values.remove(pos),
            }
        } else {
            return Err(Error::UnknownColumn(name.to_string()));
        };
        let old = std::mem::replace(&mut self.response, incoming);
        self.other_responses.push(old);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.response.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[col][row]
    }

    pub fn response(&self) -> &[f64] {
        &self.response.values
    }

    pub fn response_name(&self) -> &str {
        &self.response.name
    }

    pub fn other_responses(&self) -> &[NamedColumn] {
        &self.other_responses
    }

    pub fn group_id(&self) -> Option<&[String]> {
        self.group_id.as_deref()
    }

    /// Group label of a row; rows without labels are their own group.
    pub fn group_of(&self, row: usize) -> String {
        match &self.group_id {
            Some(g) => g[row].clone(),
            None => row.to_string(),
        }
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    /// Learner view over the selected columns, in the given order.
    pub fn features(&self, vars: &[usize]) -> Features<'_> {
        Features {
            columns: vars.iter().map(|&v| self.values[v].as_slice()).collect(),
            response: &self.response.values,
            canonical: canonical_order(&self.row_ids),
        }
    }

    /// Learner view over every column.
    pub fn all_features(&self) -> Features<'_> {
        let all: Vec<usize> = (0..self.n_cols()).collect();
        self.features(&all)
    }

    /// Appends a derived column.
    pub fn push_column(&mut self, meta: ColumnMeta, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                what: format!("column {}", meta.name),
                expected: self.n_rows(),
                actual: values.len(),
            });
        }
        if self.columns.iter().any(|c| c.name == meta.name) {
            return Err(Error::Schema(format!("duplicate column {:?}", meta.name)));
        }
        if meta.kind == ColumnKind::Binary {
            check_binary(&meta.name, &values)?;
        }
        self.columns.push(meta);
        self.values.push(values);
        Ok(())
    }

    /// Appends the multiplicity-of-infection column computed from the
    /// locus-tagged indicator columns.
    pub fn append_moi(&mut self, name: &str) -> Result<()> {
        let moi = derive_moi(&self.columns, &self.values)?;
        self.push_column(
            ColumnMeta {
                name: name.to_string(),
                kind: ColumnKind::Continuous,
                source: ColumnSource::Derived { rule: "moi".into() },
            },
            moi,
        )
    }

    /// Appends `ln(source + offset)` as a derived column.
    pub fn append_log_transform(&mut self, source: &str, offset: f64, name: &str) -> Result<()> {
        let idx = self.column_index(source)?;
        let logged = log_transform(&self.values[idx], offset)?;
        self.push_column(
            ColumnMeta {
                name: name.to_string(),
                kind: ColumnKind::Continuous,
                source: ColumnSource::Derived {
                    rule: format!("log({source}+{offset})"),
                },
            },
            logged,
        )
    }

    /// Schema describing the CSV produced by [`Dataset::write_csv`].
    pub fn schema(&self) -> Schema {
        let mut entries: Vec<(String, SchemaKind)> = self
            .columns
            .iter()
            .map(|c| {
                let kind = match (c.kind, &c.source) {
                    (ColumnKind::Binary, ColumnSource::OneHot { parent, .. }) => SchemaKind::Binary {
                        locus: Some(parent.clone()),
                    },
                    (ColumnKind::Binary, _) => SchemaKind::Binary { locus: None },
                    (ColumnKind::Continuous, _) => SchemaKind::Continuous,
                };
                (c.name.clone(), kind)
            })
            .collect();
        entries.push((self.response.name.clone(), SchemaKind::Response));
        for extra in &self.other_responses {
            entries.push((extra.name.clone(), SchemaKind::Response));
        }
        if self.group_id.is_some() {
            entries.push(("group".into(), SchemaKind::Group));
        }
        Schema::new(entries)
    }

    /// Writes features, responses and group labels (in that column order).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        header.push(&self.response.name);
        header.extend(self.other_responses.iter().map(|c| c.name.as_str()));
        if self.group_id.is_some() {
            header.push("group");
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            record.extend(self.values.iter().map(|c| format_number(c[r])));
            record.push(format_number(self.response.values[r]));
            record.extend(self.other_responses.iter().map(|c| format_number(c.values[r])));
            if let Some(g) = &self.group_id {
                record.push(g[r].clone());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Writes the dataset CSV and its schema next to it.
    pub fn write_with_schema(&self, csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(csv_path)?;
        self.schema().write(schema_path)
    }

    pub fn summary(&self) -> DatasetSummary {
        let describe = |name: &str, kind: Option<ColumnKind>, source: Option<ColumnSource>, v: &[f64]| {
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            ColumnSummary {
                name: name.to_string(),
                kind,
                source,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
            }
        };
        DatasetSummary {
            n_rows: self.n_rows(),
            n_columns: self.n_cols(),
            n_groups: self
                .group_id
                .as_ref()
                .map(|g| g.iter().collect::<BTreeSet<_>>().len())
                .unwrap_or(self.n_rows()),
            response: describe(&self.response.name, None, None, &self.response.values),
            columns: self
                .columns
                .iter()
                .zip(&self.values)
                .map(|(m, v)| describe(&m.name, Some(m.kind), Some(m.source.clone()), v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ColumnKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<ColumnSource>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_rows: usize,
    pub n_columns: usize,
    pub n_groups: usize,
    pub response: ColumnSummary,
    pub columns: Vec<ColumnSummary>,
}

pub(crate) fn format_number(v: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{v}")
}

fn canonical_order(row_ids: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row_ids.len()).collect();
    order.sort_by_key(|&i| row_ids[i]);
    order
}

/// Read-only view of a design matrix handed to trees and forests.
///
/// `canonical` lists row positions sorted by row identity; bootstrap draws
/// and permutations are expressed in that order so that results do not
/// depend on how rows happen to be stored.
#[derive(Debug, Clone)]
pub struct Features<'a> {
    columns: Vec<&'a [f64]>,
    response: &'a [f64],
    canonical: Vec<usize>,
}

impl<'a> Features<'a> {
    pub fn from_columns(columns: Vec<&'a [f64]>, response: &'a [f64]) -> Result<Self> {
        for c in &columns {
            if c.len() != response.len() {
                return Err(Error::LengthMismatch {
                    what: "feature column".into(),
                    expected: response.len(),
                    actual: c.len(),
                });
            }
        }
        Ok(Self {
            columns,
            response,
            canonical: (0..response.len()).collect(),
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    #[inline]
    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn value(&self, row: usize, var: usize) -> f64 {
        self.columns[var][row]
    }

    #[inline]
    pub fn column(&self, var: usize) -> &'a [f64] {
        self.columns[var]
    }

    #[inline]
    pub fn response(&self) -> &'a [f64] {
        self.response
    }

    /// Row positions in identity order.
    pub fn canonical_rows(&self) -> &[usize] {
        &self.canonical
    }
}

/// Loads a CSV according to `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, options: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_from(file, schema, options)
}

pub fn load_csv_from<R: std::io::Read>(reader: R, schema: &Schema, options: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for name in &header {
        if schema.kind_of(name).is_none() {
            return Err(Error::Schema(format!("column {name:?} has no declared type")));
        }
    }
    for (name, _) in schema.entries() {
        if !header.contains(name) {
            return Err(Error::Schema(format!("declared column {name:?} not in file")));
        }
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::LengthMismatch {
                what: format!("fields in data row {i}"),
                expected: header.len(),
                actual: rec.len(),
            });
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }

    // missing-value policy, skipped columns excluded
    let relevant: Vec<usize> = (0..header.len())
        .filter(|&c| schema.kind_of(&header[c]) != Some(&SchemaKind::Skip))
        .collect();
    let mut kept = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        if let Some(&c) = relevant.iter().find(|&&c| is_missing(&row[c])) {
            if options.drop_incomplete_rows {
                log::warn!("dropping row {i}: missing {}", header[c]);
                continue;
            }
            return Err(Error::MissingValue {
                column: header[c].clone(),
                row: i,
            });
        }
        kept.push(row);
    }
    let rows = kept;
    let n = rows.len();

    let mut columns = Vec::new();
    let mut values = Vec::new();
    let mut responses: Vec<NamedColumn> = Vec::new();
    let mut groups: Option<Vec<String>> = None;

    for (c, name) in header.iter().enumerate() {
        let kind = schema.kind_of(name).expect("checked above");
        let numeric = || -> Result<Vec<f64>> {
            rows.iter()
                .enumerate()
                .map(|(r, row)| parse_number(name, r, &row[c]))
                .collect()
        };
        match kind {
            SchemaKind::Skip => {}
            SchemaKind::Continuous => {
                columns.push(ColumnMeta::continuous(name.clone()));
                values.push(numeric()?);
            }
            SchemaKind::Binary { locus } => {
                let v = numeric()?;
                check_binary(name, &v)?;
                let source = match locus {
                    Some(parent) => ColumnSource::OneHot {
                        parent: parent.clone(),
                        level: name.strip_prefix(&format!("{parent}_")).unwrap_or(name).to_string(),
                    },
                    None => ColumnSource::Raw,
                };
                columns.push(ColumnMeta {
                    name: name.clone(),
                    kind: ColumnKind::Binary,
                    source,
                });
                values.push(v);
            }
            SchemaKind::Categorical => {
                let levels: BTreeSet<&str> = rows.iter().flat_map(|row| split_levels(&row[c])).collect();
                for level in levels {
                    let v: Vec<f64> = rows
                        .iter()
                        .map(|row| {
                            if split_levels(&row[c]).any(|l| l == level) {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    columns.push(ColumnMeta {
                        name: format!("{name}_{level}"),
                        kind: ColumnKind::Binary,
                        source: ColumnSource::OneHot {
                            parent: name.clone(),
                            level: level.to_string(),
                        },
                    });
                    values.push(v);
                }
            }
            SchemaKind::Response => responses.push(NamedColumn {
                name: name.clone(),
                values: numeric()?,
            }),
            SchemaKind::Group => {
                if groups.is_some() {
                    return Err(Error::Schema("more than one group column".into()));
                }
                groups = Some(rows.iter().map(|row| row[c].trim().to_string()).collect());
            }
        }
    }

    if responses.is_empty() {
        return Err(Error::Schema("no response column declared".into()));
    }
    if options.response.is_none() && responses.len() > 1 {
        return Err(Error::Schema("several response columns declared; choose one".into()));
    }
    debug_assert!(responses.iter().all(|r| r.values.len() == n));
    let first = responses.remove(0);
    let mut ds = Dataset::new(columns, values, first.name, first.values)?;
    for extra in responses {
        ds = ds.with_extra_response(extra.name, extra.values)?;
    }
    if let Some(g) = groups {
        ds = ds.with_group_ids(g)?;
    }
    if let Some(name) = &options.response {
        ds = ds.with_response(name)?;
    }
    Ok(ds)
}

/// Multiplicity of infection per row: the largest number of indicators set
/// for any single locus.
pub fn derive_moi(columns: &[ColumnMeta], values: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut by_locus: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, c) in columns.iter().enumerate() {
        if let Some(parent) = c.parent() {
            match by_locus.iter_mut().find(|(p, _)| *p == parent) {
                Some((_, idx)) => idx.push(i),
                None => by_locus.push((parent, vec![i])),
            }
        }
    }
    if by_locus.is_empty() {
        return Err(Error::Schema("no locus-tagged indicator columns for MOI".into()));
    }
    let n = values.first().map_or(0, Vec::len);
    Ok((0..n)
        .map(|r| {
            by_locus
                .iter()
                .map(|(_, idx)| idx.iter().filter(|&&c| values[c][r] == 1.0).count())
                .max()
                .unwrap_or(0) as f64
        })
        .collect())
}

/// Natural log of `value + offset`, rejecting nonpositive arguments.
pub fn log_transform(values: &[f64], offset: f64) -> Result<Vec<f64>> {
    if offset.is_nan() || offset < 0.0 {
        return Err(Error::domain(format!("log offset must be >= 0, got {offset}")));
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let arg = v + offset;
            if arg > 0.0 && arg.is_finite() {
                Ok(arg.ln())
            } else {
                Err(Error::domain(format!("log of nonpositive value {arg} at row {i}")))
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Count data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountGroup {
    pub label: String,
    /// Group-level covariates, aligned with `CountDataset::covariate_names`.
    pub covariates: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Per-mosquito counts nested in gametocyte-carrier groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDataset {
    covariate_names: Vec<String>,
    groups: Vec<CountGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    /// Proportion of mosquitoes with at least one oocyst.
    pub prevalence: f64,
    /// Mean count among infected mosquitoes (0 when none are infected).
    pub mean_infected: f64,
}

impl CountDataset {
    pub fn new(covariate_names: Vec<String>, groups: Vec<CountGroup>) -> Result<Self> {
        for g in &groups {
            if g.covariates.len() != covariate_names.len() {
                return Err(Error::LengthMismatch {
                    what: format!("covariates of group {}", g.label),
                    expected: covariate_names.len(),
                    actual: g.covariates.len(),
                });
            }
            if let Some(i) = g.covariates.iter().position(|v| !v.is_finite()) {
                return Err(Error::domain(format!(
                    "non-finite covariate {} in group {}",
                    covariate_names[i], g.label
                )));
            }
        }
        Ok(Self {
            covariate_names,
            groups,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn groups(&self) -> &[CountGroup] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(|g| g.counts.len()).sum()
    }

    pub fn counts(&self) -> impl Iterator<Item = u64> + '_ {
        self.groups.iter().flat_map(|g| g.counts.iter().copied())
    }

    pub fn max_count(&self) -> u64 {
        self.counts().max().unwrap_or(0)
    }

    /// Multiplies one covariate by `factor` in every group.
    pub fn scale_covariate(&mut self, name: &str, factor: f64) -> Result<()> {
        let i = self.covariate_index(name)?;
        for g in &mut self.groups {
            g.covariates[i] *= factor;
        }
        Ok(())
    }

    pub fn group_summaries(&self) -> Vec<GroupSummary> {
        self.groups
            .iter()
            .map(|g| {
                let infected: Vec<u64> = g.counts.iter().copied().filter(|&c| c > 0).collect();
                let n = g.counts.len();
                GroupSummary {
                    label: g.label.clone(),
                    n,
                    prevalence: if n == 0 { 0.0 } else { infected.len() as f64 / n as f64 },
                    mean_infected: if infected.is_empty() {
                        0.0
                    } else {
                        infected.iter().sum::<u64>() as f64 / infected.len() as f64
                    },
                }
            })
            .collect()
    }

    /// Reads long-format data: one row per mosquito with a group label, a
    /// count, and group-constant numeric covariates in every other column.
    pub fn from_csv(path: impl AsRef<Path>, group_col: &str, count_col: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, group_col, count_col)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, group_col: &str, count_col: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let gi = header
            .iter()
            .position(|h| h == group_col)
            .ok_or_else(|| Error::UnknownColumn(group_col.to_string()))?;
        let ci = header
            .iter()
            .position(|h| h == count_col)
            .ok_or_else(|| Error::UnknownColumn(count_col.to_string()))?;
        let cov_idx: Vec<usize> = (0..header.len()).filter(|&i| i != gi && i != ci).collect();
        let names: Vec<String> = cov_idx.iter().map(|&i| header[i].clone()).collect();

        let mut groups: Vec<CountGroup> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::LengthMismatch {
                    what: format!("fields in data row {r}"),
                    expected: header.len(),
                    actual: rec.len(),
                });
            }
            let label = rec[gi].trim().to_string();
            if is_missing(&label) {
                return Err(Error::MissingValue {
                    column: group_col.to_string(),
                    row: r,
                });
            }
            let raw = rec[ci].trim();
            let count: u64 = raw.parse().map_err(|_| Error::NonNumeric {
                column: count_col.to_string(),
                row: r,
                value: raw.to_string(),
            })?;
            let covs = cov_idx
                .iter()
                .map(|&i| {
                    if is_missing(&rec[i]) {
                        Err(Error::MissingValue {
                            column: header[i].clone(),
                            row: r,
                        })
                    } else {
                        parse_number(&header[i], r, &rec[i])
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            match index.get(&label) {
                Some(&g) => {
                    let group = &mut groups[g];
                    if let Some(k) = (0..covs.len()).find(|&k| group.covariates[k] != covs[k]) {
                        return Err(Error::domain(format!(
                            "covariate {} varies within group {label} (row {r})",
                            names[k]
                        )));
                    }
                    group.counts.push(count);
                }
                None => {
                    index.insert(label.clone(), groups.len());
                    groups.push(CountGroup {
                        label,
                        covariates: covs,
                        counts: vec![count],
                    });
                }
            }
        }
        Self::new(names, groups)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, group_col: &str, count_col: &str) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec![group_col.to_string(), count_col.to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for g in &self.groups {
            for &c in &g.counts {
                let mut rec = vec![g.label.clone(), c.to_string()];
                rec.extend(g.covariates.iter().map(|&v| format_number(v)));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn schema(text: &str) -> Schema {
        Schema::parse(text).unwrap()
    }

    #[test]
    fn loads_three_row_file() {
        let csv = "x,flag,y\n1.5,0,2\n2.5,1,3\n3.5,1,4\n";
        let ds = load_csv_from(
            csv.as_bytes(),
            &schema("x:continuous\nflag:binary\ny:response\n"),
            &LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.columns().len(), 2);
        assert_eq!(ds.columns()[1].kind, ColumnKind::Binary);
        assert_eq!(ds.response(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn binary_column_with_foreign_value_is_rejected() {
        let csv = "flag,y\n0,1\n2,1\n";
        let err = load_csv_from(
            csv.as_bytes(),
            &schema("flag:binary\ny:response"),
            &LoadOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("foreign value in binary column"), "{err}");
    }

    #[test]
    fn non_numeric_and_missing_cells() {
        let s = schema("x:continuous\ny:response");
        let err = load_csv_from("x,y\nabc,1\n".as_bytes(), &s, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { .. }));

        let err = load_csv_from("x,y\n,1\n2,2\n".as_bytes(), &s, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingValue { .. }));

        let opts = LoadOptions {
            drop_incomplete_rows: true,
            ..Default::default()
        };
        let ds = load_csv_from("x,y\n,1\n2,2\n".as_bytes(), &s, &opts).unwrap();
        assert_eq!(ds.n_rows(), 1);
    }

    #[test]
    fn ragged_rows_and_undeclared_columns() {
        let s = schema("x:continuous\ny:response");
        assert!(load_csv_from("x,y\n1\n".as_bytes(), &s, &LoadOptions::default()).is_err());
        let err = load_csv_from("x,y,z\n1,2,3\n".as_bytes(), &s, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/nonexistent/data.csv", &Schema::default(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn categorical_expands_to_locus_allele_indicators() {
        let csv = "Pfg377,PfPK2,y\n093;102,180,1\n093,183|180,0\n099,166,1\n";
        let mut ds = load_csv_from(
            csv.as_bytes(),
            &schema("Pfg377:categorical\nPfPK2:categorical\ny:response"),
            &LoadOptions::default(),
        )
        .unwrap();
        let names = ds.column_names();
        assert_eq!(
            names,
            [
                "Pfg377_093",
                "Pfg377_099",
                "Pfg377_102",
                "PfPK2_166",
                "PfPK2_180",
                "PfPK2_183"
            ]
        );
        assert_eq!(ds.column(ds.column_index("Pfg377_093").unwrap()), &[1.0, 1.0, 0.0]);
        ds.append_moi("MOI").unwrap();
        let moi = ds.column(ds.column_index("MOI").unwrap());
        assert_eq!(moi, &[2.0, 2.0, 1.0]);
    }

    #[test]
    fn moi_definition_cases() {
        // Pfg377 has two alleles set, PfPK2 one
        let cols = vec![
            ColumnMeta {
                name: "Pfg377_093".into(),
                kind: ColumnKind::Binary,
                source: ColumnSource::OneHot {
                    parent: "Pfg377".into(),
                    level: "093".into(),
                },
            },
            ColumnMeta {
                name: "Pfg377_102".into(),
                kind: ColumnKind::Binary,
                source: ColumnSource::OneHot {
                    parent: "Pfg377".into(),
                    level: "102".into(),
                },
            },
            ColumnMeta {
                name: "PfPK2_180".into(),
                kind: ColumnKind::Binary,
                source: ColumnSource::OneHot {
                    parent: "PfPK2".into(),
                    level: "180".into(),
                },
            },
        ];
        let values = vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(derive_moi(&cols, &values).unwrap(), vec![2.0, 1.0]);

        let untagged = vec![ColumnMeta::binary("a")];
        assert!(derive_moi(&untagged, &[vec![1.0]]).is_err());
    }

    /// Independent recount: walk the raw allele lists instead of indicator
    /// columns.
    #[test]
    fn moi_matches_row_wise_recount_on_random_seven_locus_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let loci = ["POLYa", "TA60", "ARA2", "Pfg377", "PfPK2", "TA87", "TA109"];
        let levels = [21usize, 9, 10, 5, 15, 10, 17];
        let n = 60;
        let mut rows: Vec<Vec<Vec<usize>>> = Vec::new();
        for _ in 0..n {
            let row = levels
                .iter()
                .map(|&l| {
                    let k = rng.random_range(1..=3usize);
                    let mut set: BTreeSet<usize> = BTreeSet::new();
                    while set.len() < k.min(l) {
                        set.insert(rng.random_range(0..l));
                    }
                    set.into_iter().collect()
                })
                .collect();
            rows.push(row);
        }
        let mut text = loci.join(",");
        text.push_str(",y\n");
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .map(|alleles| {
                    alleles
                        .iter()
                        .map(|a| format!("{:03}", a))
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .collect();
            text.push_str(&cells.join(","));
            text.push_str(",0\n");
        }
        let mut s = String::new();
        for l in loci {
            s.push_str(&format!("{l}:categorical\n"));
        }
        s.push_str("y:response\n");
        let mut ds = load_csv_from(text.as_bytes(), &schema(&s), &LoadOptions::default()).unwrap();
        ds.append_moi("MOI").unwrap();
        let moi = ds.column(ds.column_index("MOI").unwrap()).to_vec();
        let expected: Vec<f64> = rows
            .iter()
            .map(|row| row.iter().map(Vec::len).max().unwrap() as f64)
            .collect();
        assert_eq!(moi, expected);
    }

    #[test]
    fn log_transform_cases() {
        let v = log_transform(&[2f64.exp()], 0.0).unwrap();
        assert_abs_diff_eq!(v[0], 2.0, epsilon = 1e-15);
        assert!(log_transform(&[0.0], 0.0).is_err());
        assert!(log_transform(&[0.0], -1.0).is_err());
        assert_abs_diff_eq!(log_transform(&[0.0], 1.0).unwrap()[0], 0.0);

        // log_gameto range of the field data
        let lo = 1.816f64;
        let hi = 7.742f64;
        let back = log_transform(&[lo.exp(), hi.exp()], 0.0).unwrap();
        assert_abs_diff_eq!(back[0], lo, epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], hi, epsilon = 1e-12);
    }

    #[test]
    fn response_switching() {
        let ds = Dataset::new(
            vec![ColumnMeta::continuous("a"), ColumnMeta::continuous("b")],
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            "y",
            vec![0.0, 1.0],
        )
        .unwrap();
        let ds = ds.with_response("b").unwrap();
        assert_eq!(ds.response_name(), "b");
        assert_eq!(ds.column_names(), ["a"]);
        assert_eq!(ds.other_responses()[0].name, "y");
        let ds = ds.with_response("y").unwrap();
        assert_eq!(ds.response(), &[0.0, 1.0]);
        assert!(ds.with_response("nope").is_err());
    }

    #[test]
    fn count_dataset_from_long_csv() {
        let csv = "isolate,oocysts,log_gameto\nA,0,2.5\nA,3,2.5\nB,0,4.0\nB,0,4.0\nB,7,4.0\n";
        let cd = CountDataset::from_csv_reader(csv.as_bytes(), "isolate", "oocysts").unwrap();
        assert_eq!(cd.n_groups(), 2);
        assert_eq!(cd.n_obs(), 5);
        assert_eq!(cd.covariate_names(), ["log_gameto"]);
        let s = cd.group_summaries();
        assert_abs_diff_eq!(s[1].prevalence, 1.0 / 3.0);
        assert_abs_diff_eq!(s[1].mean_infected, 7.0);

        let bad = "isolate,oocysts,x\nA,0,1\nA,1,2\n";
        assert!(CountDataset::from_csv_reader(bad.as_bytes(), "isolate", "oocysts").is_err());
        let neg = "isolate,oocysts,x\nA,-1,1\n";
        assert!(CountDataset::from_csv_reader(neg.as_bytes(), "isolate", "oocysts").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            cont in proptest::collection::vec(-1e6f64..1e6, 1..30),
            seed in any::<u64>(),
        ) {
            let n = cont.len();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bin: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ds = Dataset::new(
                vec![ColumnMeta::continuous("c"), ColumnMeta::binary("b")],
                vec![cont, bin],
                "y",
                y,
            ).unwrap();
            let mut buf = Vec::new();
            ds.write_csv_to(&mut buf).unwrap();
            let back = load_csv_from(buf.as_slice(), &ds.schema(), &LoadOptions::default()).unwrap();
            prop_assert_eq!(&back, &ds);
            let mut buf2 = Vec::new();
            back.write_csv_to(&mut buf2).unwrap();
            prop_assert_eq!(buf, buf2);
        }

        #[test]
        fn moi_is_invariant_to_column_order_within_locus(bits in proptest::collection::vec(0u8..2, 12), shift in 0usize..4) {
            let meta = |i: usize| ColumnMeta {
                name: format!("L_{i}"),
                kind: ColumnKind::Binary,
                source: ColumnSource::OneHot { parent: "L".into(), level: i.to_string() },
            };
            let cols: Vec<ColumnMeta> = (0..4).map(meta).collect();
            let values: Vec<Vec<f64>> = (0..4).map(|c| (0..3).map(|r| bits[c * 3 + r] as f64).collect()).collect();
            let mut perm: Vec<usize> = (0..4).collect();
            perm.rotate_left(shift);
            let cols_p: Vec<ColumnMeta> = perm.iter().map(|&i| cols[i].clone()).collect();
            let values_p: Vec<Vec<f64>> = perm.iter().map(|&i| values[i].clone()).collect();
            prop_assert_eq!(derive_moi(&cols, &values).unwrap(), derive_moi(&cols_p, &values_p).unwrap());
        }

        #[test]
        fn log_transform_is_strictly_monotone(a in 1e-9f64..1e9, b in 1e-9f64..1e9) {
            prop_assume!(a != b);
            let v = log_transform(&[a, b], 0.0).unwrap();
            prop_assert_eq!(a < b, v[0] < v[1]);
        }
    }
}
