//! Feed cache container.
//!
//! ```text
//! header   magic "GTFSFCAC" | version u32 | payload length u64     (little endian)
//! body     zlib(payload)
//! payload  manifest | column blocks
//! manifest feed_id str | dist_units u8 | prepared_at u64 | table count u32
//!          per table: stem str | rows u64 | column count u32
//!                     per column: name str | semantic type u8
//! block    per table, per column, in manifest order:
//!          null bitmap (ceil(rows/8) bytes, bit set = present) | present values
//!          text: str, integer: i64, float: f64 bits, time: u32,
//!          date: u16 year, u8 month, u8 day
//! str      u32 byte length | UTF-8 bytes
//! ```
//!
//! Readers reject any other version with [`CacheError::VersionMismatch`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::feed::{DistUnits, Feed, FeedMeta};
use crate::table::{Column, ColumnData, SemanticType, Storage, TypedTable};
use crate::time::ServiceDate;

pub const MAGIC: [u8; 8] = *b"GTFSFCAC";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "feedcache";
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("cache format version {found}, this reader understands {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt cache: {0}")]
    CorruptCache(String),
}

fn corrupt(msg: &str) -> CacheError {
    CacheError::CorruptCache(msg.to_string())
}

fn kind_code(kind: SemanticType) -> u8 {
    SemanticType::ALL.iter().position(|k| *k == kind).expect("listed") as u8
}

fn units_code(u: Option<DistUnits>) -> u8 {
    match u {
        None => 0,
        Some(DistUnits::Meters) => 1,
        Some(DistUnits::Kilometers) => 2,
        Some(DistUnits::Miles) => 3,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn bitmap<T>(&mut self, cells: &[Option<T>]) {
        let mut bytes = alloc::vec![0u8; cells.len().div_ceil(8)];
        for (i, c) in cells.iter().enumerate() {
            if c.is_some() {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        self.0.extend_from_slice(&bytes);
    }
}

/// Serializes a feed into the cache container.
pub fn encode(feed: &Feed) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    let meta = feed.meta();
    w.str(&meta.feed_id);
    w.u8(units_code(meta.dist_units));
    w.u64(meta.prepared_at);
    w.u32(feed.tables().len() as u32);
    for (stem, t) in feed.tables() {
        w.str(stem);
        w.u64(t.num_rows() as u64);
        w.u32(t.num_columns() as u32);
        for c in t.columns() {
            w.str(&c.name);
            w.u8(kind_code(c.kind));
        }
    }
    for t in feed.tables().values() {
        for c in t.columns() {
            match &c.data {
                ColumnData::Text(v) => {
                    w.bitmap(v);
                    v.iter().flatten().for_each(|s| w.str(s));
                }
                ColumnData::Integer(v) => {
                    w.bitmap(v);
                    v.iter().flatten().for_each(|x| w.u64(*x as u64));
                }
                ColumnData::Float(v) => {
                    w.bitmap(v);
                    v.iter().flatten().for_each(|x| w.u64(x.to_bits()));
                }
                ColumnData::Time(v) => {
                    w.bitmap(v);
                    v.iter().flatten().for_each(|x| w.u32(*x));
                }
                ColumnData::Date(v) => {
                    w.bitmap(v);
                    for d in v.iter().flatten() {
                        w.u16(d.year);
                        w.u8(d.month);
                        w.u8(d.day);
                    }
                }
            }
        }
    }
    let payload = w.0;
    let body = miniz_oxide::deflate::compress_to_vec_zlib(&payload, 6);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("unexpected end of payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CacheError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CacheError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("len 2")))
    }
    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }
    fn u64(&mut self) -> Result<u64, CacheError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }
    fn len(&mut self) -> Result<usize, CacheError> {
        let n = self.u64()?;
        // every row costs at least one bitmap bit per column; reject absurd counts early
        usize::try_from(n).ok().filter(|&n| n / 8 <= self.buf.len()).ok_or_else(|| corrupt("implausible length"))
    }
    fn str(&mut self) -> Result<String, CacheError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        core::str::from_utf8(bytes).map(ToString::to_string).map_err(|_| corrupt("invalid UTF-8"))
    }
    fn column<T>(
        &mut self,
        rows: usize,
        mut value: impl FnMut(&mut Self) -> Result<T, CacheError>,
    ) -> Result<Vec<Option<T>>, CacheError> {
        let bitmap = self.take(rows.div_ceil(8))?;
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let present = bitmap[i / 8] & (1 << (i % 8)) != 0;
            out.push(if present { Some(value(self)?) } else { None });
        }
        Ok(out)
    }
}

/// Parses a cache container produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Feed, CacheError> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("truncated header"));
    }
    if bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("len 4"));
    if version != FORMAT_VERSION {
        return Err(CacheError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().expect("len 8"));
    let payload = miniz_oxide::inflate::decompress_to_vec_zlib(&bytes[HEADER_LEN..])
        .map_err(|_| corrupt("compressed body is damaged"))?;
    if payload.len() as u64 != declared {
        return Err(corrupt("payload length mismatch"));
    }

    let mut r = Reader { buf: &payload, pos: 0 };
    let feed_id = r.str()?;
    let dist_units = match r.u8()? {
        0 => None,
        1 => Some(DistUnits::Meters),
        2 => Some(DistUnits::Kilometers),
        3 => Some(DistUnits::Miles),
        _ => return Err(corrupt("unknown distance unit")),
    };
    let prepared_at = r.u64()?;
    let n_tables = r.u32()? as usize;
    let mut manifest = Vec::new();
    for _ in 0..n_tables {
        let stem = r.str()?;
        let rows = r.len()?;
        let n_cols = r.u32()? as usize;
        let mut cols = Vec::new();
        for _ in 0..n_cols {
            let name = r.str()?;
            let kind = *SemanticType::ALL.get(r.u8()? as usize).ok_or_else(|| corrupt("unknown column type"))?;
            cols.push((name, kind));
        }
        manifest.push((stem, rows, cols));
    }

    let mut tables = BTreeMap::new();
    for (stem, rows, cols) in manifest {
        let mut columns = Vec::with_capacity(cols.len());
        for (name, kind) in cols {
            let data = match kind.storage() {
                Storage::Text => ColumnData::Text(r.column(rows, Reader::str)?),
                Storage::Integer => ColumnData::Integer(r.column(rows, |r| r.u64().map(|x| x as i64))?),
                Storage::Float => ColumnData::Float(r.column(rows, |r| r.u64().map(f64::from_bits))?),
                Storage::Time => ColumnData::Time(r.column(rows, Reader::u32)?),
                Storage::Date => ColumnData::Date(r.column(rows, |r| {
                    let (y, m, d) = (r.u16()?, r.u8()?, r.u8()?);
                    ServiceDate::new(y, m, d).map_err(|_| corrupt("invalid date"))
                })?),
            };
            columns.push(Column::new(name, kind, data).map_err(|e| CacheError::CorruptCache(e.to_string()))?);
        }
        let table = TypedTable::new(columns).map_err(|e| CacheError::CorruptCache(e.to_string()))?;
        if tables.insert(stem, table).is_some() {
            return Err(corrupt("duplicate table"));
        }
    }
    if r.pos != payload.len() {
        return Err(corrupt("trailing bytes"));
    }
    let meta = FeedMeta { feed_id, dist_units, file_list: Vec::new(), row_counts: BTreeMap::new(), prepared_at };
    Ok(Feed::from_parts(tables, meta))
}
