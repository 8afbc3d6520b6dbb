//! Typed in-memory tables: CSV loading, schema inference, missing-row removal
//! and seeded train/test splitting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strings treated as a missing cell in any column.
pub const MISSING_MARKERS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "null", "NULL", "?"];

pub fn is_missing_marker(s: &str) -> bool {
    MISSING_MARKERS.contains(&s.trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: None,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }
}

/// Ordered column list, plus an optional designated target column.
///
/// JSON form: `{"columns":[{"name":"a","kind":"numeric"}, ...], "target": "a"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self {
            columns,
            target: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Result<Self> {
        self.target = Some(target.into());
        self.validate()?;
        Ok(self)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if col.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", col.name)));
            }
            if let Some(cats) = &col.categories {
                if col.kind == ColumnKind::Numeric {
                    return Err(Error::Schema(format!(
                        "numeric column {:?} declares categories",
                        col.name
                    )));
                }
                if cats.is_empty() {
                    return Err(Error::Schema(format!(
                        "column {:?} declares an empty category list",
                        col.name
                    )));
                }
                let distinct: HashSet<&String> = cats.iter().collect();
                if distinct.len() != cats.len() {
                    return Err(Error::Schema(format!(
                        "column {:?} declares duplicate categories",
                        col.name
                    )));
                }
            }
        }
        if let Some(t) = &self.target {
            if !seen.contains(t.as_str()) {
                return Err(Error::Schema(format!("target {t:?} is not a column")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    /// Same column names, kinds and order (declared categories and target are ignored).
    pub fn same_layout(&self, other: &Schema) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Cat(Arc<str>),
    Num(f64),
    Missing,
}

impl Cell {
    pub fn cat(s: &str) -> Self {
        Cell::Cat(Arc::from(s))
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Cell::Cat(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Cat(s) => f.write_str(s),
            // `Display` for f64 is the shortest string that round-trips.
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Missing => Ok(()),
        }
    }
}

/// An immutable, row-major table whose cells conform to `schema`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Cell>>) -> Result<Self> {
        schema.validate()?;
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::invalid(format!(
                    "row {} has {} cells, schema has {} columns",
                    r + 1,
                    row.len(),
                    schema.len()
                )));
            }
            for (cell, col) in row.iter().zip(&schema.columns) {
                let ok = match (cell, col.kind) {
                    (Cell::Missing, _) => true,
                    (Cell::Num(v), ColumnKind::Numeric) => v.is_finite(),
                    (Cell::Cat(_), ColumnKind::Categorical) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::InvalidValue {
                        column: col.name.clone(),
                        reason: format!("row {}: cell {cell:?} does not fit kind {:?}", r + 1, col.kind),
                    });
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &Cell> {
        self.rows.iter().map(move |r| &r[idx])
    }

    /// Non-missing values of a numeric column, in row order.
    pub fn numeric_values(&self, idx: usize) -> Vec<f64> {
        self.column(idx).filter_map(Cell::as_num).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn with_schema_target(mut self, target: Option<String>) -> Result<Self> {
        self.schema.target = target;
        self.schema.validate()?;
        Ok(self)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_records(&mut w)?;
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_records(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_records<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(self.schema.names())?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        Ok(())
    }
}

/// Reads a CSV file into a header-first grid of raw strings.
pub fn read_csv_grid(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid(file)
}

pub fn read_csv_grid_from_str(text: &str) -> Result<Vec<Vec<String>>> {
    read_grid(text.as_bytes())
}

fn read_grid<R: std::io::Read>(reader: R) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(reader);
    let mut grid = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        grid.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(grid)
}

/// A column is numeric iff it has at least one non-missing cell and every
/// non-missing cell parses as a finite real.
pub fn infer_schema(grid: &[Vec<String>]) -> Result<Schema> {
    let header = grid
        .first()
        .ok_or_else(|| Error::invalid("empty grid: no header row"))?;
    let columns = header
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let mut seen_value = false;
            let mut all_numeric = true;
            for row in &grid[1..] {
                let s = row[c].trim();
                if is_missing_marker(s) {
                    continue;
                }
                seen_value = true;
                if !s.parse::<f64>().is_ok_and(f64::is_finite) {
                    all_numeric = false;
                    break;
                }
            }
            if seen_value && all_numeric {
                ColumnSpec::numeric(name.clone())
            } else {
                ColumnSpec::categorical(name.clone())
            }
        })
        .collect();
    Schema::new(columns)
}

/// Builds a typed table from a header-first grid. Columns follow `schema`
/// order when given, otherwise header order with inferred kinds.
pub fn table_from_grid(grid: &[Vec<String>], schema: Option<&Schema>) -> Result<Table> {
    let header = grid
        .first()
        .ok_or_else(|| Error::invalid("csv has no header row"))?;
    let schema = match schema {
        Some(s) => {
            let header_set: HashSet<&str> = header.iter().map(String::as_str).collect();
            let schema_set: HashSet<&str> = s.names().collect();
            if header_set != schema_set || header.len() != s.len() {
                return Err(Error::Schema(format!(
                    "header {:?} does not match schema columns {:?}",
                    header,
                    s.names().collect::<Vec<_>>()
                )));
            }
            s.clone()
        }
        None => infer_schema(grid)?,
    };
    let source_idx: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| header.iter().position(|h| *h == c.name).expect("checked above"))
        .collect();

    let mut interners: Vec<HashMap<String, Arc<str>>> = vec![HashMap::new(); schema.len()];
    let mut rows = Vec::with_capacity(grid.len().saturating_sub(1));
    for (r, raw) in grid[1..].iter().enumerate() {
        let mut row = Vec::with_capacity(schema.len());
        for (c, col) in schema.columns.iter().enumerate() {
            let s = raw[source_idx[c]].trim();
            let cell = if is_missing_marker(s) {
                Cell::Missing
            } else {
                match col.kind {
                    ColumnKind::Numeric => match s.parse::<f64>() {
                        Ok(v) if v.is_finite() => Cell::Num(v),
                        Ok(_) => Cell::Missing,
                        Err(_) => {
                            return Err(Error::NumericParse {
                                row: r + 1,
                                column: col.name.clone(),
                                value: s.to_owned(),
                            })
                        }
                    },
                    ColumnKind::Categorical => {
                        let interned = interners[c]
                            .entry(s.to_owned())
                            .or_insert_with(|| Arc::from(s))
                            .clone();
                        Cell::Cat(interned)
                    }
                }
            };
            row.push(cell);
        }
        rows.push(row);
    }
    Table::new(schema, rows)
}

pub fn load_csv(path: &Path, schema: Option<&Schema>) -> Result<Table> {
    let grid = read_csv_grid(path)?;
    table_from_grid(&grid, schema)
}

pub fn load_csv_str(text: &str, schema: Option<&Schema>) -> Result<Table> {
    let grid = read_csv_grid_from_str(text)?;
    table_from_grid(&grid, schema)
}

/// Keeps exactly the rows without missing cells, in order.
pub fn drop_missing(t: &Table) -> Table {
    Table {
        schema: t.schema.clone(),
        rows: t
            .rows
            .iter()
            .filter(|r| !r.iter().any(Cell::is_missing))
            .cloned()
            .collect(),
    }
}

/// Seeded shuffle, then the first `round(fraction * n)` rows form the first part.
pub fn split(t: &Table, fraction: f64, seed: u64) -> Result<(Table, Table)> {
    if t.n_rows() < 2 {
        return Err(Error::invalid(format!(
            "split needs at least 2 rows, got {}",
            t.n_rows()
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} not in (0,1)")));
    }
    let (a, b) = split_indices(t.n_rows(), fraction, seed);
    Ok((t.select_rows(&a), t.select_rows(&b)))
}

pub(crate) fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let first = ((fraction * n as f64).round() as usize).min(n);
    let second = idx.split_off(first);
    (idx, second)
}
