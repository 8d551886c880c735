//! AVL trace parsing.
//!
//! Traces arrive as CSV with header `vehicle_id,timestamp,lat,lon,speed_mph`
//! and one row per ~5-second GPS fix. Timestamps are `HH:MM:SS` clock times
//! on an operating day that runs 03:00 to 03:00 the next morning: hours may
//! run up to 26 for the after-midnight tail, and times before 03:00 denote
//! the following calendar day, so both normalise to seconds past the first
//! midnight (up to 97200).

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("AVL input is missing required column `{0}`")]
    MissingColumn(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected one truth distribution per non-terminal patch ({expected}), got {got}")]
    TruthCountMismatch { expected: usize, got: usize },
}

/// One timestamped GPS measurement of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvlFix {
    pub vehicle_id: String,
    /// Seconds since midnight of the operating day's first calendar day.
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed_mph: f64,
    pub route_id: String,
}

/// Start of the operating day: 03:00.
pub const OPERATING_DAY_START_S: f64 = 3.0 * 3600.0;
const SECONDS_PER_DAY: f64 = 86_400.0;

/// Parse a clock time `HH:MM:SS` with hours up to 26.
pub fn parse_clock(text: &str) -> Option<f64> {
    let mut parts = text.split(':');
    let hh: u32 = parts.next()?.parse().ok()?;
    let mm: u32 = parts.next()?.parse().ok()?;
    let ss: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || hh > 26 || mm > 59 || ss > 59 {
        return None;
    }
    Some(f64::from(hh) * 3600.0 + f64::from(mm) * 60.0 + f64::from(ss))
}

/// Shift times before 03:00 into the after-midnight tail of the operating
/// day; times already written with 24-26 hours pass through unchanged.
pub fn normalise_to_operating_day(t: f64) -> f64 {
    if t < OPERATING_DAY_START_S {
        t + SECONDS_PER_DAY
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAvl {
    /// Fixes sorted by vehicle then timestamp, strictly increasing per
    /// vehicle (duplicate timestamps are dropped).
    pub fixes: Vec<AvlFix>,
    /// Malformed or duplicate rows skipped.
    pub skipped_rows: usize,
}

/// Parse an AVL CSV stream. An empty file yields an empty sequence; a
/// missing header column is a hard error naming the column.
pub fn parse_avl<R: Read>(reader: R, route_id: &str) -> Result<ParsedAvl, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(ParsedAvl {
            fixes: Vec::new(),
            skipped_rows: 0,
        });
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let col_vehicle = column("vehicle_id")?;
    let col_timestamp = column("timestamp")?;
    let col_lat = column("lat")?;
    let col_lon = column("lon")?;
    let col_speed = column("speed_mph")?;

    let mut fixes = Vec::new();
    let mut skipped_rows = 0usize;
    for record in csv_reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                skipped_rows += 1;
                continue;
            }
        };
        let parsed = (|| {
            let vehicle_id = record.get(col_vehicle)?.trim();
            if vehicle_id.is_empty() {
                return None;
            }
            let timestamp =
                normalise_to_operating_day(parse_clock(record.get(col_timestamp)?.trim())?);
            let lat: f64 = record.get(col_lat)?.trim().parse().ok()?;
            let lon: f64 = record.get(col_lon)?.trim().parse().ok()?;
            let speed_mph: f64 = record.get(col_speed)?.trim().parse().ok()?;
            if !speed_mph.is_finite() || speed_mph < 0.0 {
                return None;
            }
            Some(AvlFix {
                vehicle_id: vehicle_id.to_string(),
                timestamp,
                lat,
                lon,
                speed_mph,
                route_id: route_id.to_string(),
            })
        })();
        match parsed {
            Some(fix) => fixes.push(fix),
            None => skipped_rows += 1,
        }
    }

    fixes.sort_by(|a, b| {
        a.vehicle_id.cmp(&b.vehicle_id).then(
            a.timestamp
                .partial_cmp(&b.timestamp)
                .expect("finite timestamps"),
        )
    });
    let before = fixes.len();
    fixes.dedup_by(|b, a| a.vehicle_id == b.vehicle_id && a.timestamp == b.timestamp);
    skipped_rows += before - fixes.len();

    Ok(ParsedAvl {
        fixes,
        skipped_rows,
    })
}

/// Render seconds-past-midnight as `HH:MM:SS`, hours running past 23 for
/// the after-midnight tail (inverse of [`parse_clock`], nearest second).
pub fn format_clock(t: f64) -> String {
    let total = t.round() as u64;
    format!(
        "{:02}:{:02}:{:02}",
        total / 3600,
        (total % 3600) / 60,
        total % 60
    )
}

/// Write fixes in the AVL CSV interchange format.
pub fn write_avl_csv<W: std::io::Write>(out: W, fixes: &[AvlFix]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "timestamp", "lat", "lon", "speed_mph"])?;
    for f in fixes {
        w.write_record([
            f.vehicle_id.clone(),
            format_clock(f.timestamp),
            format!("{}", f.lat),
            format!("{}", f.lon),
            format!("{}", f.speed_mph),
        ])?;
    }
    w.flush()?;
    Ok(())
}
