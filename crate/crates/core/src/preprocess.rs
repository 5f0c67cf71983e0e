//! Raw feed to normalized [`Feed`].
//!
//! Steps, in order:
//! 1. type every column (empty cells become nulls, times become seconds
//!    since midnight, dates become [`ServiceDate`]s);
//! 2. check references that pruning cannot repair;
//! 3. drop all-null columns and empty files, then prune unreferenced
//!    shapes, stops, trips and routes, repeating until nothing changes;
//! 4. fill in `shape_dist_traveled` where it is missing.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::feed::{DistUnits, Feed, FeedMeta, RawFeed};
use crate::geo::{cumulative_shape_distances, haversine_km, LatLon};
use crate::schema::{field_type, REQUIRED_FILES};
use crate::table::{Column, ColumnData, RawTable, SemanticType, Storage, TableError, TypedTable};
use crate::time::{parse_gtfs_time, ServiceDate};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DanglingRef {
    pub file: String,
    pub row: usize,
    pub column: String,
    pub value: String,
    pub target: String,
}

impl fmt::Display for DanglingRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{} row {} = {:?} not found in {}", self.file, self.column, self.row, self.value, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("missing required file {0:?}")]
    MissingRequiredFile(String),
    #[error("{file}.{column} row {row}: {reason} ({value:?})")]
    InvalidCell { file: String, column: String, row: usize, value: String, reason: String },
    #[error("{} unresolved reference(s), first: {}", .0.len(), .0[0])]
    IntegrityError(Vec<DanglingRef>),
    #[error("shape {0:?} has decreasing shape_dist_traveled")]
    NonMonotoneShape(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Default)]
pub struct PrepareOptions {
    /// Overrides the raw feed's source id.
    pub feed_id: Option<String>,
    /// Units of any `shape_dist_traveled` already present in the feed;
    /// computed distances are written in the same units. Kilometers if unset.
    pub dist_units: Option<DistUnits>,
    /// Unix seconds recorded in the metadata.
    pub prepared_at: u64,
}

pub fn preprocess(raw: &RawFeed, opts: &PrepareOptions) -> Result<Feed, PreprocessError> {
    for stem in REQUIRED_FILES {
        if !raw.tables.contains_key(stem) {
            return Err(PreprocessError::MissingRequiredFile(stem.to_string()));
        }
    }
    let mut tables = BTreeMap::new();
    for (stem, table) in &raw.tables {
        tables.insert(stem.clone(), type_table(stem, table)?);
    }
    let meta = FeedMeta {
        feed_id: opts.feed_id.clone().unwrap_or_else(|| raw.source_id.clone()),
        dist_units: None,
        file_list: Vec::new(),
        row_counts: BTreeMap::new(),
        prepared_at: opts.prepared_at,
    };
    finish(tables, meta, opts.dist_units)
}

/// Re-applies the normalization rules to an already built feed.
pub fn normalize(feed: Feed) -> Result<Feed, PreprocessError> {
    let (tables, meta) = feed.into_parts();
    let units = meta.dist_units;
    finish(tables, meta, units)
}

fn finish(
    mut tables: BTreeMap<String, TypedTable>,
    mut meta: FeedMeta,
    units: Option<DistUnits>,
) -> Result<Feed, PreprocessError> {
    let dangling = dangling_references(&tables);
    if !dangling.is_empty() {
        return Err(PreprocessError::IntegrityError(dangling));
    }
    prune_to_fixed_point(&mut tables);
    for stem in REQUIRED_FILES {
        if !tables.contains_key(stem) {
            return Err(PreprocessError::MissingRequiredFile(stem.to_string()));
        }
    }

    let units = units.unwrap_or(DistUnits::Kilometers);
    fill_shape_distances(&mut tables, units)?;
    fill_stop_time_distances(&mut tables, units);
    drop_empty(&mut tables);

    let has_dist = tables.values().any(|t| t.has_column("shape_dist_traveled"));
    meta.dist_units = has_dist.then_some(units);
    Ok(Feed::from_parts(tables, meta))
}

fn invalid(file: &str, column: &str, row: usize, value: &str, reason: impl ToString) -> PreprocessError {
    PreprocessError::InvalidCell {
        file: file.to_owned(),
        column: column.to_owned(),
        row,
        value: value.to_owned(),
        reason: reason.to_string(),
    }
}

fn type_table(stem: &str, raw: &RawTable) -> Result<TypedTable, PreprocessError> {
    let mut columns = Vec::with_capacity(raw.headers.len());
    for (ci, name) in raw.headers.iter().enumerate() {
        let kind = field_type(stem, name);
        let cells = raw.rows.iter().map(|r| r[ci].as_str());
        let data = match kind.storage() {
            Storage::Text => ColumnData::Text(cells.map(|c| (!c.is_empty()).then(|| c.to_owned())).collect()),
            Storage::Integer => ColumnData::Integer(typed(stem, name, cells, |c| {
                c.parse::<i64>().map_err(|_| "not an integer".to_string())
            })?),
            Storage::Float => {
                let coordinate = kind == SemanticType::Coordinate;
                let limit = if name.ends_with("lat") { 90.0 } else { 180.0 };
                ColumnData::Float(typed(stem, name, cells, |c| {
                    let x: f64 = c.parse().map_err(|_| "not a number".to_string())?;
                    if !x.is_finite() {
                        return Err("not finite".to_string());
                    }
                    if coordinate && x.abs() > limit {
                        return Err("coordinate out of range".to_string());
                    }
                    Ok(x)
                })?)
            }
            Storage::Time => ColumnData::Time(typed(stem, name, cells, |c| parse_gtfs_time(c).map_err(|e| e.to_string()))?),
            Storage::Date => {
                ColumnData::Date(typed(stem, name, cells, |c| ServiceDate::parse_gtfs(c).map_err(|e| e.to_string()))?)
            }
        };
        columns.push(Column::new(name.clone(), kind, data)?);
    }
    Ok(TypedTable::new(columns)?)
}

fn typed<'a, T>(
    stem: &str,
    column: &str,
    cells: impl Iterator<Item = &'a str>,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Vec<Option<T>>, PreprocessError> {
    cells
        .enumerate()
        .map(|(row, c)| {
            if c.is_empty() {
                Ok(None)
            } else {
                parse(c).map(Some).map_err(|reason| invalid(stem, column, row, c, reason))
            }
        })
        .collect()
}

fn ids<'a>(tables: &'a BTreeMap<String, TypedTable>, stem: &str, column: &str) -> impl Iterator<Item = &'a str> {
    tables
        .get(stem)
        .and_then(|t| t.text(column))
        .into_iter()
        .flat_map(|v| v.iter().filter_map(|c| c.as_deref()))
}

fn id_set<'a>(tables: &'a BTreeMap<String, TypedTable>, stem: &str, column: &str) -> BTreeSet<&'a str> {
    ids(tables, stem, column).collect()
}

/// Foreign keys from `stop_times` and `trips` that point nowhere.
pub fn dangling_references(tables: &BTreeMap<String, TypedTable>) -> Vec<DanglingRef> {
    const CHECKS: [(&str, &str, &str, &str); 4] = [
        ("stop_times", "trip_id", "trips", "trip_id"),
        ("stop_times", "stop_id", "stops", "stop_id"),
        ("trips", "route_id", "routes", "route_id"),
        ("trips", "shape_id", "shapes", "shape_id"),
    ];
    let mut out = Vec::new();
    for (file, column, target, key) in CHECKS {
        let Some(values) = tables.get(file).and_then(|t| t.text(column)) else { continue };
        let known = id_set(tables, target, key);
        for (row, v) in values.iter().enumerate() {
            if let Some(v) = v.as_deref() {
                if !known.contains(v) {
                    out.push(DanglingRef {
                        file: file.to_owned(),
                        row,
                        column: column.to_owned(),
                        value: v.to_owned(),
                        target: alloc::format!("{target}.{key}"),
                    });
                }
            }
        }
    }
    out
}

fn drop_empty(tables: &mut BTreeMap<String, TypedTable>) -> bool {
    let mut changed = false;
    for t in tables.values_mut() {
        changed |= !t.drop_null_columns().is_empty();
    }
    let before = tables.len();
    tables.retain(|_, t| !t.is_empty());
    changed || tables.len() != before
}

fn retain_by_key(tables: &mut BTreeMap<String, TypedTable>, stem: &str, column: &str, keep: &BTreeSet<String>) -> bool {
    let Some(t) = tables.get_mut(stem) else { return false };
    let mask: Vec<bool> = match t.text(column) {
        Some(v) => v.iter().map(|c| c.as_deref().is_some_and(|id| keep.contains(id))).collect(),
        None => vec![false; t.num_rows()],
    };
    t.retain_rows(&mask) > 0
}

fn owned(set: BTreeSet<&str>) -> BTreeSet<String> {
    set.into_iter().map(str::to_owned).collect()
}

fn prune_to_fixed_point(tables: &mut BTreeMap<String, TypedTable>) {
    loop {
        let mut changed = drop_empty(tables);

        let used_shapes = owned(id_set(tables, "trips", "shape_id"));
        changed |= retain_by_key(tables, "shapes", "shape_id", &used_shapes);

        let kept_stops = owned(referenced_stops(tables));
        changed |= retain_by_key(tables, "stops", "stop_id", &kept_stops);

        let used_trips = owned(id_set(tables, "stop_times", "trip_id"));
        changed |= retain_by_key(tables, "trips", "trip_id", &used_trips);
        let live_trips = owned(id_set(tables, "trips", "trip_id"));
        changed |= retain_by_key(tables, "frequencies", "trip_id", &live_trips);

        let used_routes = owned(id_set(tables, "trips", "route_id"));
        changed |= retain_by_key(tables, "routes", "route_id", &used_routes);

        if !changed {
            break;
        }
    }
}

/// Stops used by stop_times, transfers or pathways, plus all of their
/// parent stations.
fn referenced_stops(tables: &BTreeMap<String, TypedTable>) -> BTreeSet<&str> {
    let mut keep: BTreeSet<&str> = id_set(tables, "stop_times", "stop_id");
    for (file, col) in [
        ("transfers", "from_stop_id"),
        ("transfers", "to_stop_id"),
        ("pathways", "from_stop_id"),
        ("pathways", "to_stop_id"),
    ] {
        keep.extend(ids(tables, file, col));
    }
    let Some(stops) = tables.get("stops") else { return keep };
    let (Some(stop_ids), Some(parents)) = (stops.text("stop_id"), stops.text("parent_station")) else {
        return keep;
    };
    let parent_of: BTreeMap<&str, &str> = stop_ids
        .iter()
        .zip(parents)
        .filter_map(|(s, p)| Some((s.as_deref()?, p.as_deref()?)))
        .collect();
    let mut frontier: Vec<&str> = keep.iter().copied().collect();
    while let Some(s) = frontier.pop() {
        if let Some(&p) = parent_of.get(s) {
            if keep.insert(p) {
                frontier.push(p);
            }
        }
    }
    keep
}

/// Row indices grouped by an id column, each group sorted by an integer
/// sequence column (stable, so ties keep file order).
fn grouped_by_sequence<'a>(table: &'a TypedTable, id: &str, seq: &str) -> BTreeMap<&'a str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let Some(idv) = table.text(id) else { return groups };
    for (i, v) in idv.iter().enumerate() {
        if let Some(v) = v.as_deref() {
            groups.entry(v).or_default().push(i);
        }
    }
    if let Some(seqv) = table.integers(seq) {
        for rows in groups.values_mut() {
            rows.sort_by_key(|&i| seqv[i].unwrap_or(i64::MAX));
        }
    }
    groups
}

fn point(lat: &[Option<f64>], lon: &[Option<f64>], i: usize) -> Option<LatLon> {
    Some(LatLon::new(lat[i]?, lon[i]?))
}

fn fill_shape_distances(tables: &mut BTreeMap<String, TypedTable>, units: DistUnits) -> Result<(), PreprocessError> {
    let Some(shapes) = tables.get("shapes") else { return Ok(()) };
    let groups = grouped_by_sequence(shapes, "shape_id", "shape_pt_sequence");
    if let Some(existing) = shapes.floats("shape_dist_traveled") {
        for (shape, rows) in &groups {
            let mut last = f64::NEG_INFINITY;
            for &i in rows {
                if let Some(d) = existing[i] {
                    if d < last {
                        return Err(PreprocessError::NonMonotoneShape((*shape).to_owned()));
                    }
                    last = d;
                }
            }
        }
        return Ok(());
    }
    let (Some(lat), Some(lon)) = (shapes.floats("shape_pt_lat"), shapes.floats("shape_pt_lon")) else {
        return Ok(());
    };
    let mut dist = vec![None; shapes.num_rows()];
    for rows in groups.values() {
        let pts: Option<Vec<LatLon>> = rows.iter().map(|&i| point(lat, lon, i)).collect();
        let Some(pts) = pts else { continue };
        if let Ok(cum) = cumulative_shape_distances(&pts) {
            for (&i, d) in rows.iter().zip(cum) {
                dist[i] = Some(d * units.per_kilometer());
            }
        }
    }
    let shapes = tables.get_mut("shapes").expect("checked above");
    shapes.push_column(Column::new("shape_dist_traveled", SemanticType::Float, ColumnData::Float(dist))?)?;
    Ok(())
}

/// Fills stop_times.shape_dist_traveled. Stops of a trip with a shape are
/// snapped, in sequence order, to the nearest not-yet-passed shape vertex;
/// trips without a usable shape use straight-line distance between stops.
fn fill_stop_time_distances(tables: &mut BTreeMap<String, TypedTable>, units: DistUnits) {
    let Some(st) = tables.get("stop_times") else { return };
    if st.has_column("shape_dist_traveled") {
        return;
    }
    let Some(stops) = tables.get("stops") else { return };
    let (Some(stop_ids), Some(slat), Some(slon)) =
        (stops.text("stop_id"), stops.floats("stop_lat"), stops.floats("stop_lon"))
    else {
        return;
    };
    let stop_pos: BTreeMap<&str, LatLon> = stop_ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| Some((id.as_deref()?, point(slat, slon, i)?)))
        .collect();

    // shape_id -> (vertices, cumulative distance in `units`)
    let mut shape_geom: BTreeMap<&str, (Vec<LatLon>, Vec<f64>)> = BTreeMap::new();
    if let Some(shapes) = tables.get("shapes") {
        if let (Some(lat), Some(lon), Some(d)) =
            (shapes.floats("shape_pt_lat"), shapes.floats("shape_pt_lon"), shapes.floats("shape_dist_traveled"))
        {
            for (shape, rows) in grouped_by_sequence(shapes, "shape_id", "shape_pt_sequence") {
                let geom: Option<(Vec<LatLon>, Vec<f64>)> =
                    rows.iter().map(|&i| Some((point(lat, lon, i)?, d[i]?))).collect();
                if let Some(g) = geom {
                    shape_geom.insert(shape, g);
                }
            }
        }
    }
    let trip_shape: BTreeMap<&str, &str> = match tables.get("trips") {
        Some(trips) => match (trips.text("trip_id"), trips.text("shape_id")) {
            (Some(t), Some(s)) => t.iter().zip(s).filter_map(|(t, s)| Some((t.as_deref()?, s.as_deref()?))).collect(),
            _ => BTreeMap::new(),
        },
        None => BTreeMap::new(),
    };

    let st_stop = st.text("stop_id").unwrap_or(&[]);
    let mut dist = vec![None; st.num_rows()];
    for (trip, rows) in grouped_by_sequence(st, "trip_id", "stop_sequence") {
        let positions: Vec<Option<LatLon>> =
            rows.iter().map(|&i| st_stop.get(i).and_then(|s| s.as_deref()).and_then(|s| stop_pos.get(s).copied())).collect();
        match trip_shape.get(trip).and_then(|s| shape_geom.get(s)) {
            Some((verts, cum)) if !verts.is_empty() => {
                let mut from = 0;
                for (&row, pos) in rows.iter().zip(&positions) {
                    let Some(pos) = pos else { continue };
                    let best = (from..verts.len())
                        .min_by(|&a, &b| haversine_km(*pos, verts[a]).total_cmp(&haversine_km(*pos, verts[b])))
                        .unwrap_or(from);
                    dist[row] = Some(cum[best]);
                    from = best;
                }
            }
            _ => {
                let mut total = 0.0;
                let mut prev: Option<LatLon> = None;
                for (&row, pos) in rows.iter().zip(&positions) {
                    let Some(pos) = *pos else { continue };
                    if let Some(p) = prev {
                        total += haversine_km(p, pos) * units.per_kilometer();
                    }
                    dist[row] = Some(total);
                    prev = Some(pos);
                }
            }
        }
    }
    let st = tables.get_mut("stop_times").expect("checked above");
    st.push_column(Column { name: "shape_dist_traveled".into(), kind: SemanticType::Float, data: ColumnData::Float(dist) })
        .expect("fresh column with matching length");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(tables: &[(&str, &str)]) -> RawFeed {
        let mut f = RawFeed::new("t");
        for (stem, csv) in tables {
            let mut lines = csv.lines();
            let headers = lines.next().unwrap().split(',').map(str::to_owned).collect();
            let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
            f.tables.insert((*stem).to_owned(), RawTable::new(headers, rows).unwrap());
        }
        f
    }

    fn base() -> Vec<(&'static str, &'static str)> {
        vec![
            ("stops", "stop_id,stop_name,stop_lat,stop_lon,wheelchair_boarding\nA,Alpha,0.0,0.0,\nB,Beta,0.0,0.01,\nGHOST,Ghost,1.0,1.0,"),
            ("routes", "route_id,route_short_name,route_type\nR1,1,3\nR2,2,3"),
            ("trips", "route_id,service_id,trip_id,shape_id\nR1,WK,T1,S1\nR2,WK,T2,S1"),
            ("stop_times", "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,7:05:00,7:05:00,A,1\nT1,25:15:00,25:15:00,B,2"),
            ("shapes", "shape_id,shape_pt_lat,shape_pt_lon,shape_pt_sequence\nS1,0.0,0.0,1\nS1,0.0,0.01,2\nS9,5.0,5.0,1"),
        ]
    }

    #[test]
    fn prunes_and_types() {
        let feed = preprocess(&raw(&base()), &PrepareOptions::default()).unwrap();
        let stops = feed.table("stops").unwrap();
        assert_eq!(stops.text("stop_id").unwrap(), [Some("A".into()), Some("B".into())]);
        assert!(!stops.has_column("wheelchair_boarding"));
        // T2 has no stop_times, so it goes, and R2 with it
        assert_eq!(feed.table("trips").unwrap().num_rows(), 1);
        assert_eq!(feed.table("routes").unwrap().text("route_id").unwrap(), [Some("R1".into())]);
        assert_eq!(feed.table("shapes").unwrap().num_rows(), 2);
        let st = feed.table("stop_times").unwrap();
        assert_eq!(st.times("arrival_time").unwrap(), [Some(25500), Some(90900)]);
        assert_eq!(feed.meta().dist_units, Some(DistUnits::Kilometers));
        let d = st.floats("shape_dist_traveled").unwrap();
        assert_eq!(d[0], Some(0.0));
        assert!((d[1].unwrap() - 1.111949).abs() < 1e-5);
        assert_eq!(feed.meta().row_counts["stops"], 2);
    }

    #[test]
    fn dangling_trip_is_integrity_error() {
        let mut t = base();
        t[3].1 = "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,7:05:00,7:05:00,A,1\nNOPE,8:00:00,8:00:00,B,2";
        match preprocess(&raw(&t), &PrepareOptions::default()) {
            Err(PreprocessError::IntegrityError(refs)) => {
                assert_eq!(refs.len(), 1);
                assert_eq!(refs[0].value, "NOPE");
                assert_eq!(refs[0].target, "trips.trip_id");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_time_is_reported_with_location() {
        let mut t = base();
        t[3].1 = "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,7:5:00,7:05:00,A,1";
        match preprocess(&raw(&t), &PrepareOptions::default()) {
            Err(PreprocessError::InvalidCell { file, column, row, .. }) => {
                assert_eq!((file.as_str(), column.as_str(), row), ("stop_times", "arrival_time", 0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_required() {
        let t: Vec<_> = base().into_iter().filter(|(s, _)| *s != "stop_times").collect();
        assert_eq!(
            preprocess(&raw(&t), &PrepareOptions::default()),
            Err(PreprocessError::MissingRequiredFile("stop_times".into()))
        );
    }

    #[test]
    fn declared_units_scale_computed_distances() {
        let opts = PrepareOptions { dist_units: Some(DistUnits::Meters), ..Default::default() };
        let feed = preprocess(&raw(&base()), &opts).unwrap();
        let d = feed.table("shapes").unwrap().floats("shape_dist_traveled").unwrap();
        assert!((d[1].unwrap() - 1111.949).abs() < 1e-2);
        assert_eq!(feed.meta().dist_units, Some(DistUnits::Meters));
    }

    #[test]
    fn decreasing_provided_distances_rejected() {
        let mut t = base();
        t[4].1 = "shape_id,shape_pt_lat,shape_pt_lon,shape_pt_sequence,shape_dist_traveled\nS1,0.0,0.0,1,5.0\nS1,0.0,0.01,2,1.0";
        assert_eq!(
            preprocess(&raw(&t), &PrepareOptions::default()),
            Err(PreprocessError::NonMonotoneShape("S1".into()))
        );
    }

    #[test]
    fn parent_stations_survive() {
        let mut t = base();
        t[0].1 = "stop_id,stop_name,stop_lat,stop_lon,location_type,parent_station\nA,Alpha,0.0,0.0,0,STN\nB,Beta,0.0,0.01,0,\nSTN,Station,0.0,0.0,1,";
        let feed = preprocess(&raw(&t), &PrepareOptions::default()).unwrap();
        assert_eq!(feed.table("stops").unwrap().num_rows(), 3);
    }

    #[test]
    fn idempotent() {
        let feed = preprocess(&raw(&base()), &PrepareOptions::default()).unwrap();
        assert_eq!(normalize(feed.clone()).unwrap(), feed);
    }
}
