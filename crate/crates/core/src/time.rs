//! GTFS time and date codecs.
//!
//! Times are stored as seconds since midnight of the service day and may
//! exceed 24 hours (`25:15:00` is 1:15 AM on the following calendar day).
//! Dates are plain calendar dates; service-day arithmetic is left to the
//! analysis code.

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound (exclusive) on the hour field.
pub const MAX_HOURS: u32 = 100;

/// Seconds since midnight for the largest accepted time, plus one.
pub const TIME_LIMIT_SECONDS: u32 = MAX_HOURS * 3600;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("invalid GTFS time format: {0:?}")]
    InvalidTimeFormat(String),
    #[error("time field out of range: {0:?}")]
    FieldOutOfRange(String),
    #[error("invalid GTFS date: {0:?}")]
    InvalidDate(String),
}

/// Parses `H:MM:SS` or `HH:MM:SS` into seconds since midnight.
pub fn parse_gtfs_time(text: &str) -> Result<u32, TimeError> {
    let bad = || TimeError::InvalidTimeFormat(String::from(text));
    let mut parts = text.split(':');
    let (h, m, s) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(m), Some(s), None) => (h, m, s),
        _ => return Err(bad()),
    };
    if h.is_empty() || m.len() != 2 || s.len() != 2 {
        return Err(bad());
    }
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !digits(h) || !digits(m) || !digits(s) {
        return Err(bad());
    }
    // "0007:00:00" style padding is not GTFS, but more than 2 hour digits
    // is reported as a range problem rather than a format one.
    let hours: u32 = h.parse().map_err(|_| TimeError::FieldOutOfRange(String::from(text)))?;
    let minutes: u32 = m.parse().map_err(|_| bad())?;
    let seconds: u32 = s.parse().map_err(|_| bad())?;
    if hours >= MAX_HOURS || minutes > 59 || seconds > 59 {
        return Err(TimeError::FieldOutOfRange(String::from(text)));
    }
    Ok(hours * 3600 + minutes * 60 + seconds)
}

/// Formats seconds since midnight as `HH:MM:SS` (hours may exceed 23).
pub fn format_gtfs_time(seconds: u32) -> String {
    format!("{:02}:{:02}:{:02}", seconds / 3600, (seconds / 60) % 60, seconds % 60)
}

/// A calendar date as written in GTFS (`YYYYMMDD`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServiceDate {
    pub year: u16,
    pub month: u8,
    pub day: u8,
}

impl ServiceDate {
    pub fn new(year: u16, month: u8, day: u8) -> Result<Self, TimeError> {
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return Err(TimeError::InvalidDate(format!("{year:04}{month:02}{day:02}")));
        }
        Ok(ServiceDate { year, month, day })
    }

    /// Parses the GTFS `YYYYMMDD` form.
    pub fn parse_gtfs(text: &str) -> Result<Self, TimeError> {
        let bad = || TimeError::InvalidDate(String::from(text));
        if text.len() != 8 || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let year = text[0..4].parse().map_err(|_| bad())?;
        let month = text[4..6].parse().map_err(|_| bad())?;
        let day = text[6..8].parse().map_err(|_| bad())?;
        ServiceDate::new(year, month, day).map_err(|_| bad())
    }

    pub fn to_gtfs(self) -> String {
        format!("{:04}{:02}{:02}", self.year, self.month, self.day)
    }
}

impl fmt::Display for ServiceDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

impl FromStr for ServiceDate {
    type Err = TimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceDate::parse_gtfs(s)
    }
}

fn is_leap(year: u16) -> bool {
    (year.is_multiple_of(4) && !year.is_multiple_of(100)) || year.is_multiple_of(400)
}

fn days_in_month(year: u16, month: u8) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(year) => 29,
        2 => 28,
        _ => 0,
    }
}
