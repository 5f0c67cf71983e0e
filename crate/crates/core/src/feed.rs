//! Raw and normalized feed models.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{RawTable, TypedTable};

/// A parsed but untyped feed: one table per file stem.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawFeed {
    pub source_id: String,
    pub tables: BTreeMap<String, RawTable>,
}

impl RawFeed {
    pub fn new(source_id: impl Into<String>) -> Self {
        RawFeed { source_id: source_id.into(), tables: BTreeMap::new() }
    }

    pub fn table(&self, stem: &str) -> Option<&RawTable> {
        self.tables.get(stem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistUnits {
    Meters,
    Kilometers,
    Miles,
}

impl DistUnits {
    pub fn per_kilometer(self) -> f64 {
        match self {
            DistUnits::Meters => 1000.0,
            DistUnits::Kilometers => 1.0,
            DistUnits::Miles => 1.0 / 1.609_344,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DistUnits::Meters => "meters",
            DistUnits::Kilometers => "kilometers",
            DistUnits::Miles => "miles",
        }
    }
}

impl fmt::Display for DistUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown distance unit {0:?} (expected m, km or mi)")]
pub struct UnknownUnit(pub String);

impl FromStr for DistUnits {
    type Err = UnknownUnit;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "meter" | "meters" | "metres" => Ok(DistUnits::Meters),
            "km" | "kilometer" | "kilometers" | "kilometres" => Ok(DistUnits::Kilometers),
            "mi" | "mile" | "miles" => Ok(DistUnits::Miles),
            _ => Err(UnknownUnit(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedMeta {
    pub feed_id: String,
    pub dist_units: Option<DistUnits>,
    pub file_list: Vec<String>,
    pub row_counts: BTreeMap<String, u64>,
    /// Unix seconds.
    pub prepared_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedError {
    #[error("unknown file {0:?}")]
    UnknownFile(String),
}

/// A preprocessed feed. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Feed {
    pub(crate) tables: BTreeMap<String, TypedTable>,
    pub(crate) meta: FeedMeta,
}

impl Feed {
    /// Assembles a feed without running preprocessing. Metadata file list
    /// and row counts are recomputed from `tables`.
    pub fn from_parts(tables: BTreeMap<String, TypedTable>, mut meta: FeedMeta) -> Self {
        meta.file_list = tables.keys().cloned().collect();
        meta.row_counts = tables.iter().map(|(k, t)| (k.clone(), t.num_rows() as u64)).collect();
        Feed { tables, meta }
    }

    pub fn meta(&self) -> &FeedMeta {
        &self.meta
    }

    pub fn tables(&self) -> &BTreeMap<String, TypedTable> {
        &self.tables
    }

    pub fn table(&self, stem: &str) -> Option<&TypedTable> {
        self.tables.get(stem)
    }

    pub fn has_table(&self, stem: &str) -> bool {
        self.tables.contains_key(stem)
    }

    pub fn into_parts(self) -> (BTreeMap<String, TypedTable>, FeedMeta) {
        (self.tables, self.meta)
    }
}

pub const DEFAULT_SAMPLE_ROWS: usize = 5;

/// The first `min(n, rows)` rows of a file, headers preserved.
pub fn sample_rows(feed: &Feed, file_stem: &str, n: usize) -> Result<TypedTable, FeedError> {
    feed.table(file_stem).map(|t| t.head(n)).ok_or_else(|| FeedError::UnknownFile(file_stem.to_string()))
}
