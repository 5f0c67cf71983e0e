//! Great-circle distances along polylines.

use alloc::vec::Vec;

use thiserror::Error;

/// Mean Earth radius (IUGG), kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeoError {
    #[error("polyline has no points")]
    EmptyPolyline,
    #[error("invalid coordinate ({lat}, {lon}) at index {index}")]
    InvalidCoordinate { index: usize, lat: f64, lon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite() && self.lon.is_finite() && self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0
    }
}

impl From<(f64, f64)> for LatLon {
    fn from((lat, lon): (f64, f64)) -> Self {
        LatLon { lat, lon }
    }
}

/// Haversine distance in kilometers.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = libm::sin(dlat / 2.0);
    let s_lon = libm::sin(dlon / 2.0);
    let h = s_lat * s_lat + libm::cos(lat1) * libm::cos(lat2) * s_lon * s_lon;
    2.0 * EARTH_RADIUS_KM * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Running distance along `points`, starting at zero.
pub fn cumulative_shape_distances(points: &[LatLon]) -> Result<Vec<f64>, GeoError> {
    if points.is_empty() {
        return Err(GeoError::EmptyPolyline);
    }
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| !p.is_valid()) {
        return Err(GeoError::InvalidCoordinate { index, lat: p.lat, lon: p.lon });
    }
    let mut out = Vec::with_capacity(points.len());
    let mut total = 0.0;
    out.push(total);
    for pair in points.windows(2) {
        total += haversine_km(pair[0], pair[1]);
        out.push(total);
    }
    Ok(out)
}
