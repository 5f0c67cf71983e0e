//! Reading GTFS feeds from disk and the cache file round trip.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;
use transit_ask_core::cache::{self, CacheError, FILE_EXTENSION};
use transit_ask_core::schema::REQUIRED_FILES;
use transit_ask_core::table::TableError;
use transit_ask_core::{Feed, RawFeed, RawTable};

#[derive(Debug, Error)]
pub enum FeedIoError {
    #[error("missing required file {0}.txt")]
    MissingRequiredFile(String),
    #[error("malformed CSV in {file} at line {line}: {reason}")]
    MalformedCsv { file: String, line: u64, reason: String },
    #[error("{0} is not valid UTF-8")]
    EncodingError(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}: not a zip archive or directory")]
    UnsupportedSource(PathBuf),
    #[error("zip archive {path}: {reason}")]
    Zip { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Cache { path: PathBuf, source: CacheError },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FeedIoError + '_ {
    move |source| FeedIoError::Io { path: path.to_path_buf(), source }
}

/// Parses one CSV file. Cells are trimmed and a UTF-8 BOM is dropped.
pub fn parse_table(file: &str, bytes: &[u8]) -> Result<RawTable, FeedIoError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let text = std::str::from_utf8(bytes).map_err(|_| FeedIoError::EncodingError(file.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(text.as_bytes());
    let malformed = |e: csv::Error| FeedIoError::MalformedCsv {
        file: file.to_string(),
        line: e.position().map_or(0, |p| p.line()),
        reason: match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                format!("expected {expected_len} fields, found {len}")
            }
            _ => e.to_string(),
        },
    };
    let headers: Vec<String> = reader.headers().map_err(malformed)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record.map_err(malformed)?.iter().map(str::to_string).collect());
    }
    RawTable::new(headers, rows).map_err(|e| FeedIoError::MalformedCsv {
        file: file.to_string(),
        line: match e {
            TableError::RaggedRow { row, .. } => row as u64 + 2,
            _ => 1,
        },
        reason: e.to_string(),
    })
}

fn stem_of(name: &str) -> Option<&str> {
    let base = name.rsplit(['/', '\\']).next()?;
    base.strip_suffix(".txt").filter(|s| !s.is_empty() && !s.starts_with('.'))
}

/// Reads a GTFS zip archive or a directory of `.txt` files. Unknown files
/// are kept as generic tables.
pub fn parse_feed(source: &Path) -> Result<RawFeed, FeedIoError> {
    let source_id = source
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("feed")
        .to_string();
    let mut feed = RawFeed::new(source_id);
    if source.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(source)
            .map_err(io(source))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for path in entries {
            let Some(stem) = path.file_name().and_then(|n| n.to_str()).and_then(stem_of) else { continue };
            let bytes = fs::read(&path).map_err(io(&path))?;
            let name = format!("{stem}.txt");
            feed.tables.insert(stem.to_string(), parse_table(&name, &bytes)?);
        }
    } else if source.is_file() {
        let file = fs::File::open(source).map_err(io(source))?;
        let zip_err = |e: zip::result::ZipError| FeedIoError::Zip { path: source.to_path_buf(), reason: e.to_string() };
        let mut archive = zip::ZipArchive::new(file).map_err(zip_err)?;
        for i in 0..archive.len() {
            let mut entry = archive.by_index(i).map_err(zip_err)?;
            if entry.is_dir() {
                continue;
            }
            let name = entry.name().to_string();
            let Some(stem) = stem_of(&name) else { continue };
            let stem = stem.to_string();
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes).map_err(io(source))?;
            feed.tables.insert(stem.clone(), parse_table(&format!("{stem}.txt"), &bytes)?);
        }
    } else if !source.exists() {
        return Err(FeedIoError::Io {
            path: source.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        });
    } else {
        return Err(FeedIoError::UnsupportedSource(source.to_path_buf()));
    }
    for stem in REQUIRED_FILES {
        if !feed.tables.contains_key(stem) {
            return Err(FeedIoError::MissingRequiredFile(stem.to_string()));
        }
    }
    Ok(feed)
}

pub fn save_cache(feed: &Feed, path: &Path) -> Result<(), FeedIoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, cache::encode(feed)).map_err(io(path))
}

pub fn load_cache(path: &Path) -> Result<Feed, FeedIoError> {
    let bytes = fs::read(path).map_err(io(path))?;
    cache::decode(&bytes).map_err(|source| FeedIoError::Cache { path: path.to_path_buf(), source })
}

/// Cache path for a feed inside `dir`.
pub fn cache_path(dir: &Path, feed_id: &str) -> PathBuf {
    dir.join(format!("{feed_id}.{FILE_EXTENSION}"))
}

/// Loads every `*.feedcache` in `dir`, keyed by the feed id in its metadata.
pub fn load_feeds_dir(dir: &Path) -> Result<BTreeMap<String, Feed>, FeedIoError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(FILE_EXTENSION))
        .collect();
    paths.sort();
    let mut feeds = BTreeMap::new();
    for p in paths {
        let feed = load_cache(&p)?;
        feeds.insert(feed.meta().feed_id.clone(), feed);
    }
    Ok(feeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trims_and_strips_bom() {
        let t = parse_table("stops.txt", b"\xEF\xBB\xBFstop_id, stop_name\n IT:1 ,Illinois Terminal\n").unwrap();
        assert_eq!(t.headers, ["stop_id", "stop_name"]);
        assert_eq!(t.rows[0], ["IT:1", "Illinois Terminal"]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let e = parse_table("trips.txt", b"a,b\n1,2\n3\n").unwrap_err();
        assert!(matches!(e, FeedIoError::MalformedCsv { ref file, line: 3, .. } if file == "trips.txt"), "{e}");
    }

    #[test]
    fn invalid_utf8() {
        assert!(matches!(parse_table("x.txt", b"a\n\xff\xfe\n"), Err(FeedIoError::EncodingError(_))));
    }

    #[test]
    fn quoted_commas() {
        let t = parse_table("stops.txt", b"stop_id,stop_name\n1,\"Church St. & Victor St. (northwest corner)\"\n").unwrap();
        assert_eq!(t.rows[0][1], "Church St. & Victor St. (northwest corner)");
    }
}
