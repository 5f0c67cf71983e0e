//! Untyped and typed tables.
//!
//! [`RawTable`] is the CSV view (header plus string rows). [`TypedTable`] is
//! columnar: each column stores one contiguous vector of nullable cells so
//! analysis code can scan a field without touching the rest of the row.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{format_gtfs_time, ServiceDate};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("column {name:?} has {found} cells, table has {expected} rows")]
    ColumnLength { name: String, expected: usize, found: usize },
    #[error("column {name:?} declared {kind} but stores {storage}")]
    StorageMismatch { name: String, kind: SemanticType, storage: &'static str },
}

/// A CSV table as read from disk, cells already trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        check_unique(headers.iter().map(String::as_str))?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(TableError::RaggedRow { row: i, expected: headers.len(), found: row.len() });
            }
        }
        Ok(RawTable { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<(), TableError> {
    let mut seen: Vec<&str> = Vec::new();
    for n in names {
        if seen.contains(&n) {
            return Err(TableError::DuplicateColumn(String::from(n)));
        }
        seen.push(n);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Text,
    Integer,
    Float,
    TimeSeconds,
    Date,
    Color,
    Coordinate,
    Identifier,
}

impl SemanticType {
    pub const ALL: [SemanticType; 8] = [
        SemanticType::Text,
        SemanticType::Integer,
        SemanticType::Float,
        SemanticType::TimeSeconds,
        SemanticType::Date,
        SemanticType::Color,
        SemanticType::Coordinate,
        SemanticType::Identifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::Text => "text",
            SemanticType::Integer => "integer",
            SemanticType::Float => "float",
            SemanticType::TimeSeconds => "time_seconds",
            SemanticType::Date => "date",
            SemanticType::Color => "color",
            SemanticType::Coordinate => "coordinate",
            SemanticType::Identifier => "identifier",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Self> {
        SemanticType::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Which storage vector a column of this type uses.
    pub fn storage(self) -> Storage {
        match self {
            SemanticType::Text | SemanticType::Color | SemanticType::Identifier => Storage::Text,
            SemanticType::Integer => Storage::Integer,
            SemanticType::Float | SemanticType::Coordinate => Storage::Float,
            SemanticType::TimeSeconds => Storage::Time,
            SemanticType::Date => Storage::Date,
        }
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Text,
    Integer,
    Float,
    Time,
    Date,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Text(Vec<Option<String>>),
    Integer(Vec<Option<i64>>),
    Float(Vec<Option<f64>>),
    Time(Vec<Option<u32>>),
    Date(Vec<Option<ServiceDate>>),
}

macro_rules! per_storage {
    ($data:expr, $v:ident => $body:expr) => {
        match $data {
            ColumnData::Text($v) => $body,
            ColumnData::Integer($v) => $body,
            ColumnData::Float($v) => $body,
            ColumnData::Time($v) => $body,
            ColumnData::Date($v) => $body,
        }
    };
}

impl ColumnData {
    pub fn empty(storage: Storage) -> Self {
        match storage {
            Storage::Text => ColumnData::Text(Vec::new()),
            Storage::Integer => ColumnData::Integer(Vec::new()),
            Storage::Float => ColumnData::Float(Vec::new()),
            Storage::Time => ColumnData::Time(Vec::new()),
            Storage::Date => ColumnData::Date(Vec::new()),
        }
    }

    pub fn storage(&self) -> Storage {
        match self {
            ColumnData::Text(_) => Storage::Text,
            ColumnData::Integer(_) => Storage::Integer,
            ColumnData::Float(_) => Storage::Float,
            ColumnData::Time(_) => Storage::Time,
            ColumnData::Date(_) => Storage::Date,
        }
    }

    fn storage_name(&self) -> &'static str {
        match self {
            ColumnData::Text(_) => "text",
            ColumnData::Integer(_) => "integer",
            ColumnData::Float(_) => "float",
            ColumnData::Time(_) => "time",
            ColumnData::Date(_) => "date",
        }
    }

    pub fn len(&self) -> usize {
        per_storage!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, row: usize) -> bool {
        per_storage!(self, v => v[row].is_none())
    }

    pub fn all_null(&self) -> bool {
        per_storage!(self, v => v.iter().all(Option::is_none))
    }

    pub fn value(&self, row: usize) -> Value<'_> {
        match self {
            ColumnData::Text(v) => v[row].as_deref().map_or(Value::Null, Value::Text),
            ColumnData::Integer(v) => v[row].map_or(Value::Null, Value::Integer),
            ColumnData::Float(v) => v[row].map_or(Value::Null, Value::Float),
            ColumnData::Time(v) => v[row].map_or(Value::Null, Value::Time),
            ColumnData::Date(v) => v[row].map_or(Value::Null, Value::Date),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&i| v[i].clone()).collect()),
            ColumnData::Integer(v) => ColumnData::Integer(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Float(v) => ColumnData::Float(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Time(v) => ColumnData::Time(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Date(v) => ColumnData::Date(rows.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// A borrowed cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value<'a> {
    Null,
    Text(&'a str),
    Integer(i64),
    Float(f64),
    Time(u32),
    Date(ServiceDate),
}

impl fmt::Display for Value<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str(""),
            Value::Text(s) => f.write_str(s),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Time(t) => write!(f, "{t}"),
            Value::Date(d) => write!(f, "{d}"),
        }
    }
}

impl Value<'_> {
    /// GTFS-style rendering: times as `HH:MM:SS`, dates as `YYYYMMDD`.
    pub fn to_gtfs_string(&self) -> String {
        match self {
            Value::Time(t) => format_gtfs_time(*t),
            Value::Date(d) => d.to_gtfs(),
            other => alloc::format!("{other}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: SemanticType,
    pub data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: SemanticType, data: ColumnData) -> Result<Self, TableError> {
        let name = name.into();
        if kind.storage() != data.storage() {
            return Err(TableError::StorageMismatch { name, kind, storage: data.storage_name() });
        }
        Ok(Column { name, kind, data })
    }
}

/// Column-oriented table with nullable, typed cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TypedTable {
    columns: Vec<Column>,
    rows: usize,
}

impl TypedTable {
    pub fn new(columns: Vec<Column>) -> Result<Self, TableError> {
        check_unique(columns.iter().map(|c| c.name.as_str()))?;
        let rows = columns.first().map_or(0, |c| c.data.len());
        for c in &columns {
            if c.data.len() != rows {
                return Err(TableError::ColumnLength { name: c.name.clone(), expected: rows, found: c.data.len() });
            }
            if c.kind.storage() != c.data.storage() {
                return Err(TableError::StorageMismatch {
                    name: c.name.clone(),
                    kind: c.kind,
                    storage: c.data.storage_name(),
                });
            }
        }
        Ok(TypedTable { columns, rows })
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }

    pub fn text(&self, name: &str) -> Option<&[Option<String>]> {
        match self.column(name).map(|c| &c.data) {
            Some(ColumnData::Text(v)) => Some(v),
            _ => None,
        }
    }

    pub fn integers(&self, name: &str) -> Option<&[Option<i64>]> {
        match self.column(name).map(|c| &c.data) {
            Some(ColumnData::Integer(v)) => Some(v),
            _ => None,
        }
    }

    pub fn floats(&self, name: &str) -> Option<&[Option<f64>]> {
        match self.column(name).map(|c| &c.data) {
            Some(ColumnData::Float(v)) => Some(v),
            _ => None,
        }
    }

    pub fn times(&self, name: &str) -> Option<&[Option<u32>]> {
        match self.column(name).map(|c| &c.data) {
            Some(ColumnData::Time(v)) => Some(v),
            _ => None,
        }
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<Value<'_>> {
        let c = self.column(column)?;
        (row < self.rows).then(|| c.data.value(row))
    }

    /// Appends a column; its length must match the table's row count
    /// unless the table has no columns yet.
    pub fn push_column(&mut self, column: Column) -> Result<(), TableError> {
        if self.columns.iter().any(|c| c.name == column.name) {
            return Err(TableError::DuplicateColumn(column.name));
        }
        if !self.columns.is_empty() && column.data.len() != self.rows {
            return Err(TableError::ColumnLength { name: column.name, expected: self.rows, found: column.data.len() });
        }
        self.rows = column.data.len();
        self.columns.push(column);
        Ok(())
    }

    /// Rows at the given indices, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> TypedTable {
        TypedTable {
            columns: self
                .columns
                .iter()
                .map(|c| Column { name: c.name.clone(), kind: c.kind, data: c.data.select(rows) })
                .collect(),
            rows: rows.len(),
        }
    }

    /// Keeps rows where `keep[i]` is true. Returns the number removed.
    pub fn retain_rows(&mut self, keep: &[bool]) -> usize {
        debug_assert_eq!(keep.len(), self.rows);
        let idx: Vec<usize> = (0..self.rows).filter(|&i| keep[i]).collect();
        let removed = self.rows - idx.len();
        if removed > 0 {
            *self = self.select_rows(&idx);
        }
        removed
    }

    /// First `n` rows in stored order.
    pub fn head(&self, n: usize) -> TypedTable {
        let idx: Vec<usize> = (0..n.min(self.rows)).collect();
        self.select_rows(&idx)
    }

    /// Removes columns whose cells are all null. Returns the removed names.
    pub fn drop_null_columns(&mut self) -> Vec<String> {
        let mut removed = Vec::new();
        self.columns.retain(|c| {
            let drop = c.data.all_null();
            if drop {
                removed.push(c.name.clone());
            }
            !drop
        });
        if self.columns.is_empty() {
            self.rows = 0;
        }
        removed
    }
}
