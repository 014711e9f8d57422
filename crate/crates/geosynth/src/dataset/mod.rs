//! Schema-aware loading, encoding, splitting, and geometric handling of
//! geolocated tabular data.

pub mod geometry;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{MultiPolygon, Polygon, RegionGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Latitude,
    Longitude,
    Numeric,
    Integer,
    Boolean,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f64, f64)>,
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
            bounds: None,
        }
    }

    pub fn latitude(name: &str) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Latitude,
            categories: Vec::new(),
            bounds: None,
        }
    }

    pub fn longitude(name: &str) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Longitude,
            categories: Vec::new(),
            bounds: None,
        }
    }

    pub fn boolean(name: &str) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Boolean,
            categories: Vec::new(),
            bounds: None,
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: levels.iter().map(|s| s.to_string()).collect(),
            bounds: None,
        }
    }

    pub fn integer(name: &str, bounds: Option<(f64, f64)>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Integer,
            categories: Vec::new(),
            bounds,
        }
    }

    /// Effective numeric bounds: explicit bounds, plus the hard geographic
    /// ranges for coordinate columns.
    pub(crate) fn effective_bounds(&self) -> Option<(f64, f64)> {
        match self.kind {
            ColumnKind::Latitude => Some(combine_bounds(self.bounds, (-90.0, 90.0))),
            ColumnKind::Longitude => Some(combine_bounds(self.bounds, (-180.0, 180.0))),
            _ => self.bounds,
        }
    }
}

fn combine_bounds(user: Option<(f64, f64)>, hard: (f64, f64)) -> (f64, f64) {
    match user {
        Some((lo, hi)) => (lo.max(hard.0), hi.min(hard.1)),
        None => hard,
    }
}

/// One table cell. Numeric columns (including coordinates) use `Number`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Number(f64),
    Integer(i64),
    Boolean(bool),
    Category(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Integer(v) => Some(*v as f64),
            _ => None,
        }
    }
}

/// Validate a schema: exactly one latitude and one longitude column,
/// unique non-empty category lists, unique column names.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<()> {
    let mut lat = 0;
    let mut lon = 0;
    let mut names = BTreeSet::new();
    for col in schema {
        if !names.insert(col.name.as_str()) {
            return Err(Error::Schema(format!("duplicate column name {}", col.name)));
        }
        match col.kind {
            ColumnKind::Latitude => lat += 1,
            ColumnKind::Longitude => lon += 1,
            ColumnKind::Categorical => {
                if col.categories.is_empty() {
                    return Err(Error::Schema(format!(
                        "categorical column {} lists no levels",
                        col.name
                    )));
                }
                let set: BTreeSet<_> = col.categories.iter().collect();
                if set.len() != col.categories.len() {
                    return Err(Error::Schema(format!(
                        "categorical column {} has duplicate levels",
                        col.name
                    )));
                }
            }
            _ => {}
        }
    }
    if lat != 1 || lon != 1 {
        return Err(Error::Schema(format!(
            "schema needs exactly one latitude and one longitude column, got {lat} and {lon}"
        )));
    }
    Ok(())
}

/// Schema-typed rows of one geolocated unit each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoTable {
    schema: Vec<ColumnSpec>,
    rows: Vec<Vec<Cell>>,
}

impl GeoTable {
    /// Construct with full validation of kinds and bounds.
    pub fn new(schema: Vec<ColumnSpec>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        validate_schema(&schema)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Data(format!(
                    "row {i} has {} cells, schema has {} columns",
                    row.len(),
                    schema.len()
                )));
            }
            for (cell, spec) in row.iter().zip(&schema) {
                if !cell_conforms(cell, spec) {
                    return Err(Error::Data(format!(
                        "row {i} column {} does not conform to its spec",
                        spec.name
                    )));
                }
            }
        }
        Ok(GeoTable { schema, rows })
    }

    /// Construct without bounds validation. Used for internally transformed
    /// tables (e.g. coordinates replaced by flow latents).
    pub(crate) fn new_unchecked(schema: Vec<ColumnSpec>, rows: Vec<Vec<Cell>>) -> Self {
        GeoTable { schema, rows }
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn latitude_index(&self) -> usize {
        self.schema
            .iter()
            .position(|c| c.kind == ColumnKind::Latitude)
            .expect("schema validated")
    }

    pub fn longitude_index(&self) -> usize {
        self.schema
            .iter()
            .position(|c| c.kind == ColumnKind::Longitude)
            .expect("schema validated")
    }

    /// N x 2 coordinate matrix in (lon, lat) order.
    pub fn coords(&self) -> Array2<f64> {
        let lat = self.latitude_index();
        let lon = self.longitude_index();
        let mut out = Array2::zeros((self.rows.len(), 2));
        for (i, row) in self.rows.iter().enumerate() {
            out[[i, 0]] = row[lon].as_f64().unwrap();
            out[[i, 1]] = row[lat].as_f64().unwrap();
        }
        out
    }

    /// Copy with coordinate cells replaced by the given (lon, lat) values,
    /// skipping bounds validation.
    pub(crate) fn with_coords(&self, coords: &Array2<f64>) -> GeoTable {
        let lat = self.latitude_index();
        let lon = self.longitude_index();
        let mut rows = self.rows.clone();
        for (i, row) in rows.iter_mut().enumerate() {
            row[lon] = Cell::Number(coords[[i, 0]]);
            row[lat] = Cell::Number(coords[[i, 1]]);
        }
        GeoTable {
            schema: self.schema.clone(),
            rows,
        }
    }

    pub(crate) fn subset(&self, indices: &[usize]) -> GeoTable {
        GeoTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

fn cell_conforms(cell: &Cell, spec: &ColumnSpec) -> bool {
    match (cell, spec.kind) {
        (Cell::Number(v), ColumnKind::Latitude)
        | (Cell::Number(v), ColumnKind::Longitude)
        | (Cell::Number(v), ColumnKind::Numeric) => {
            if !v.is_finite() {
                return false;
            }
            match spec.effective_bounds() {
                Some((lo, hi)) => *v >= lo && *v <= hi,
                None => true,
            }
        }
        (Cell::Integer(v), ColumnKind::Integer) => match spec.effective_bounds() {
            Some((lo, hi)) => (*v as f64) >= lo && (*v as f64) <= hi,
            None => true,
        },
        (Cell::Boolean(_), ColumnKind::Boolean) => true,
        (Cell::Category(level), ColumnKind::Categorical) => {
            spec.categories.iter().any(|l| l == level)
        }
        _ => false,
    }
}

/// Result of loading a CSV: the accepted rows plus the count of rejected ones.
#[derive(Debug)]
pub struct LoadReport {
    pub table: GeoTable,
    pub rejected: usize,
}

/// Load a schema definition from its JSON file.
pub fn load_schema(path: &Path) -> Result<Vec<ColumnSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let schema: Vec<ColumnSpec> = serde_json::from_str(&text)?;
    validate_schema(&schema)?;
    Ok(schema)
}

/// Load a CSV into a `GeoTable`. Rows with missing, unparseable, or
/// out-of-bounds cells are rejected and counted.
pub fn load_table(path: &Path, schema: &[ColumnSpec]) -> Result<LoadReport> {
    validate_schema(schema)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader.headers()?.clone();
    let mut col_pos = Vec::with_capacity(schema.len());
    for spec in schema {
        match headers.iter().position(|h| h == spec.name) {
            Some(p) => col_pos.push(p),
            None => {
                return Err(Error::Schema(format!(
                    "column {} missing from CSV header",
                    spec.name
                )))
            }
        }
    }

    let mut rows = Vec::new();
    let mut rejected = 0usize;
    for record in reader.records() {
        let record = record?;
        match parse_row(&record, schema, &col_pos) {
            Some(row) => rows.push(row),
            None => rejected += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyData(format!(
            "no valid rows in {}",
            path.display()
        )));
    }
    Ok(LoadReport {
        table: GeoTable {
            schema: schema.to_vec(),
            rows,
        },
        rejected,
    })
}

fn parse_row(record: &csv::StringRecord, schema: &[ColumnSpec], pos: &[usize]) -> Option<Vec<Cell>> {
    let mut row = Vec::with_capacity(schema.len());
    for (spec, &p) in schema.iter().zip(pos) {
        let raw = record.get(p)?.trim();
        if raw.is_empty() {
            return None;
        }
        let cell = match spec.kind {
            ColumnKind::Latitude | ColumnKind::Longitude | ColumnKind::Numeric => {
                Cell::Number(raw.parse::<f64>().ok()?)
            }
            ColumnKind::Integer => Cell::Integer(raw.parse::<i64>().ok()?),
            ColumnKind::Boolean => match raw.to_ascii_lowercase().as_str() {
                "true" | "1" => Cell::Boolean(true),
                "false" | "0" => Cell::Boolean(false),
                _ => return None,
            },
            ColumnKind::Categorical => Cell::Category(raw.to_string()),
        };
        if !cell_conforms(&cell, spec) {
            return None;
        }
        row.push(cell);
    }
    Some(row)
}

/// Write a table to CSV (RFC 4180 quoting, header row).
pub fn write_csv(table: &GeoTable, path: &Path) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    writer.write_record(table.schema.iter().map(|c| c.name.as_str()))?;
    for row in &table.rows {
        let record: Vec<String> = row
            .iter()
            .map(|cell| match cell {
                Cell::Number(v) => format_f64(*v),
                Cell::Integer(v) => v.to_string(),
                Cell::Boolean(v) => v.to_string(),
                Cell::Category(s) => s.clone(),
            })
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn format_f64(v: f64) -> String {
    // shortest representation that round-trips
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // serde_json uses ryu internally; format through it for exact round-trip
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMode {
    /// z-score coordinates and numerics, one-hot categoricals/booleans.
    Model,
    /// min-max rescale every numeric column (including coordinates) to [0,1].
    Distance,
}

/// How a source column maps into matrix columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ColumnEncoding {
    ZScore { mean: f64, std: f64 },
    MinMax { min: f64, max: f64 },
    OneHot { levels: Vec<String> },
}

/// One source column's slice of the encoded matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedGroup {
    pub source: usize,
    pub start: usize,
    pub width: usize,
    pub encoding: ColumnEncoding,
}

/// Reusable encoder: schema plus fitted per-column scalers. Apply it to any
/// table with the same schema to encode with the original scalers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layout {
    pub schema: Vec<ColumnSpec>,
    pub groups: Vec<EncodedGroup>,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    pub values: Array2<f64>,
    pub layout: Layout,
}

fn boolean_levels() -> Vec<String> {
    vec!["true".to_string(), "false".to_string()]
}

fn cell_level(cell: &Cell) -> &str {
    match cell {
        Cell::Boolean(true) => "true",
        Cell::Boolean(false) => "false",
        Cell::Category(s) => s,
        _ => unreachable!("level lookup on numeric cell"),
    }
}

/// Fit an encoding layout on a table.
pub fn fit_layout(table: &GeoTable, mode: EncodeMode) -> Result<Layout> {
    if table.n_rows() == 0 {
        return Err(Error::EmptyData("encode on empty table".into()));
    }
    let mut groups = Vec::new();
    let mut start = 0usize;
    for (c, spec) in table.schema.iter().enumerate() {
        let encoding = match spec.kind {
            ColumnKind::Latitude | ColumnKind::Longitude | ColumnKind::Numeric | ColumnKind::Integer => {
                let values: Vec<f64> = table.rows.iter().map(|r| r[c].as_f64().unwrap()).collect();
                match mode {
                    EncodeMode::Model => {
                        let mean = values.iter().sum::<f64>() / values.len() as f64;
                        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                            / values.len() as f64;
                        let std = var.sqrt();
                        ColumnEncoding::ZScore {
                            mean,
                            std: if std > 0.0 { std } else { 1.0 },
                        }
                    }
                    EncodeMode::Distance => {
                        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        ColumnEncoding::MinMax { min, max }
                    }
                }
            }
            ColumnKind::Boolean => ColumnEncoding::OneHot {
                levels: boolean_levels(),
            },
            ColumnKind::Categorical => ColumnEncoding::OneHot {
                levels: spec.categories.clone(),
            },
        };
        let width = match &encoding {
            ColumnEncoding::OneHot { levels } => levels.len(),
            _ => 1,
        };
        groups.push(EncodedGroup {
            source: c,
            start,
            width,
            encoding,
        });
        start += width;
    }
    Ok(Layout {
        schema: table.schema.clone(),
        groups,
        width: start,
    })
}

impl Layout {
    /// Encode a table with this layout's fitted scalers.
    pub fn apply(&self, table: &GeoTable) -> Result<Array2<f64>> {
        if table.schema.len() != self.schema.len() {
            return Err(Error::Shape("table schema does not match layout".into()));
        }
        let n = table.n_rows();
        let mut out = Array2::zeros((n, self.width));
        for group in &self.groups {
            for (i, row) in table.rows.iter().enumerate() {
                let cell = &row[group.source];
                match &group.encoding {
                    ColumnEncoding::ZScore { mean, std } => {
                        out[[i, group.start]] = (cell.as_f64().unwrap() - mean) / std;
                    }
                    ColumnEncoding::MinMax { min, max } => {
                        let v = cell.as_f64().unwrap();
                        // constant column maps to 0
                        out[[i, group.start]] = if max > min { (v - min) / (max - min) } else { 0.0 };
                    }
                    ColumnEncoding::OneHot { levels } => {
                        let level = cell_level(cell);
                        let idx = levels
                            .iter()
                            .position(|l| l == level)
                            .ok_or_else(|| Error::Data(format!("unknown level {level}")))?;
                        out[[i, group.start + idx]] = 1.0;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decode a matrix back to a table. One-hot groups resolve by argmax
    /// (first index wins ties); integers round to the nearest value and clamp
    /// to bounds. Coordinate values are not bounds-clamped here; region
    /// clipping happens downstream.
    pub fn decode(&self, values: &Array2<f64>) -> Result<GeoTable> {
        if values.ncols() != self.width {
            return Err(Error::Shape(format!(
                "decode: matrix has {} columns, layout expects {}",
                values.ncols(),
                self.width
            )));
        }
        let n = values.nrows();
        let mut rows = vec![Vec::with_capacity(self.schema.len()); n];
        for group in &self.groups {
            let spec = &self.schema[group.source];
            for (i, row) in rows.iter_mut().enumerate() {
                debug_assert_eq!(row.len(), group.source);
                let cell = match &group.encoding {
                    ColumnEncoding::ZScore { mean, std } => {
                        decode_numeric(values[[i, group.start]] * std + mean, spec)
                    }
                    ColumnEncoding::MinMax { min, max } => {
                        decode_numeric(min + values[[i, group.start]] * (max - min), spec)
                    }
                    ColumnEncoding::OneHot { levels } => {
                        let mut best = 0usize;
                        let mut best_v = values[[i, group.start]];
                        for k in 1..levels.len() {
                            let v = values[[i, group.start + k]];
                            if v > best_v {
                                best_v = v;
                                best = k;
                            }
                        }
                        if spec.kind == ColumnKind::Boolean {
                            Cell::Boolean(levels[best] == "true")
                        } else {
                            Cell::Category(levels[best].clone())
                        }
                    }
                };
                row.push(cell);
            }
        }
        Ok(GeoTable {
            schema: self.schema.clone(),
            rows,
        })
    }

    /// Matrix columns of a source column.
    pub fn columns_of(&self, source: usize) -> std::ops::Range<usize> {
        let g = self.groups.iter().find(|g| g.source == source).expect("source column in layout");
        g.start..g.start + g.width
    }
}

fn decode_numeric(v: f64, spec: &ColumnSpec) -> Cell {
    match spec.kind {
        ColumnKind::Integer => {
            let mut rounded = v.round();
            if let Some((lo, hi)) = spec.effective_bounds() {
                rounded = rounded.clamp(lo.ceil(), hi.floor());
            }
            Cell::Integer(rounded as i64)
        }
        _ => Cell::Number(v),
    }
}

/// Encode a table, fitting scalers on the table itself.
pub fn encode(table: &GeoTable, mode: EncodeMode) -> Result<EncodedMatrix> {
    let layout = fit_layout(table, mode)?;
    let values = layout.apply(table)?;
    Ok(EncodedMatrix { values, layout })
}

/// Decode an encoded matrix back to a table.
pub fn decode(matrix: &EncodedMatrix) -> Result<GeoTable> {
    matrix.layout.decode(&matrix.values)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Split into two disjoint parts; the first gets round(fraction * N) rows.
/// Deterministic given the seed. With `stratify_on`, per-level proportions
/// are preserved within one row; single-row levels go to the first part.
pub fn split(
    table: &GeoTable,
    fraction: f64,
    seed: u64,
    stratify_on: Option<&str>,
) -> Result<(GeoTable, GeoTable)> {
    let n = table.n_rows();
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(Error::Config(format!("split fraction {fraction} not in (0,1)")));
    }
    let n1 = (fraction * n as f64).round() as usize;
    if n1 == 0 {
        return Err(Error::Config("split: fraction * N < 0.5 rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut first: Vec<usize> = Vec::with_capacity(n1);
    match stratify_on {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            first.extend_from_slice(&idx[..n1]);
        }
        Some(column) => {
            let c = table
                .column_index(column)
                .ok_or_else(|| Error::Config(format!("stratify column {column} not in schema")))?;
            let mut by_level: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, row) in table.rows.iter().enumerate() {
                let key = match &row[c] {
                    Cell::Boolean(b) => b.to_string(),
                    Cell::Category(s) => s.clone(),
                    Cell::Integer(v) => v.to_string(),
                    Cell::Number(v) => format_f64(*v),
                };
                by_level.entry(key).or_default().push(i);
            }
            // largest-remainder allocation to hit n1 exactly
            let levels: Vec<&Vec<usize>> = by_level.values().collect();
            let mut alloc: Vec<usize> = Vec::with_capacity(levels.len());
            let mut remainders: Vec<(usize, f64)> = Vec::new();
            let mut total = 0usize;
            for (k, members) in levels.iter().enumerate() {
                let quota = fraction * members.len() as f64;
                let base = (quota.floor() as usize).min(members.len());
                alloc.push(base);
                total += base;
                remainders.push((k, quota - quota.floor()));
            }
            remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut need = n1.saturating_sub(total);
            for &(k, _) in &remainders {
                if need == 0 {
                    break;
                }
                if alloc[k] < levels[k].len() {
                    alloc[k] += 1;
                    need -= 1;
                }
            }
            // single-row levels go to the first part
            for (k, members) in levels.iter().enumerate() {
                if members.len() == 1 && alloc[k] == 0 {
                    alloc[k] = 1;
                    // compensate by shrinking the largest allocation
                    if let Some(j) = (0..alloc.len())
                        .filter(|&j| j != k && alloc[j] > 0)
                        .max_by_key(|&j| alloc[j])
                    {
                        alloc[j] -= 1;
                    }
                }
            }
            for (k, members) in levels.iter().enumerate() {
                let mut idx = (*members).clone();
                idx.shuffle(&mut rng);
                first.extend_from_slice(&idx[..alloc[k]]);
            }
        }
    }
    let chosen: BTreeSet<usize> = first.iter().cloned().collect();
    let first_idx: Vec<usize> = (0..n).filter(|i| chosen.contains(i)).collect();
    let second_idx: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
    Ok((table.subset(&first_idx), table.subset(&second_idx)))
}
