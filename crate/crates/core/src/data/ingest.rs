//! CSV ingestion for stations, observations, and ensemble forecasts.
//!
//! Header columns are checked exactly (order and names); extra columns are
//! rejected unless lax mode is on. Rows with blank or non-finite numeric
//! fields are dropped and counted rather than aborting the load. Negative
//! irradiance is an error with its line number, except tiny negative dust
//! (|x| < 1e-9) which is clamped to exactly zero.

use chrono::{DateTime, Utc};
use std::collections::HashSet;
use std::path::Path;

use super::types::{ForecastRecord, Observation, Station, ENSEMBLE_SIZE, ZERO_DUST};
use crate::error::{Error, Result};

const STATION_HEADER: [&str; 6] = ["id", "name", "lon", "lat", "alt_m", "region"];
const OBS_HEADER: [&str; 3] = ["station_id", "valid_time", "ghi_wm2"];
const FORECAST_HEADER: [&str; 11] = [
    "station_id", "init_time", "lead_h", "m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8",
];

/// A loaded table plus row-drop diagnostics.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub rows: Vec<T>,
    /// Rows dropped because a numeric field was blank or non-finite.
    pub dropped_rows: usize,
}

fn data_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::DataAt {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn check_header(path: &Path, expected: &[&str], got: &csv::StringRecord, lax: bool) -> Result<Vec<usize>> {
    if lax {
        // lax: required columns may appear in any position, extras ignored
        let mut indices = Vec::with_capacity(expected.len());
        for want in expected {
            match got.iter().position(|h| h.trim() == *want) {
                Some(i) => indices.push(i),
                None => {
                    return Err(data_err(
                        path,
                        1,
                        format!("missing required column '{want}' (header: {})", got.iter().collect::<Vec<_>>().join(",")),
                    ))
                }
            }
        }
        return Ok(indices);
    }
    let got_cols: Vec<&str> = got.iter().map(str::trim).collect();
    if got_cols != expected {
        return Err(data_err(
            path,
            1,
            format!(
                "header mismatch: expected '{}', got '{}'",
                expected.join(","),
                got_cols.join(",")
            ),
        ));
    }
    Ok((0..expected.len()).collect())
}

/// Outcome of parsing one numeric field.
enum Field {
    Value(f64),
    /// Blank or non-finite: drop the row.
    Drop,
}

fn parse_field(path: &Path, line: u64, col: &str, raw: &str) -> Result<Field> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(Field::Drop);
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| data_err(path, line, format!("column '{col}': cannot parse '{raw}' as a number")))?;
    if !v.is_finite() {
        return Ok(Field::Drop);
    }
    Ok(Field::Value(v))
}

/// Parses a non-negative irradiance field. Values in (-1e-9, 0) are clamped
/// to exactly 0; more negative values are a hard error.
fn parse_irradiance(path: &Path, line: u64, col: &str, raw: &str) -> Result<Field> {
    match parse_field(path, line, col, raw)? {
        Field::Drop => Ok(Field::Drop),
        Field::Value(v) => {
            if v < -ZERO_DUST {
                Err(data_err(
                    path,
                    line,
                    format!("column '{col}': negative irradiance {v}"),
                ))
            } else if v < 0.0 || v.abs() < ZERO_DUST {
                Ok(Field::Value(0.0))
            } else {
                Ok(Field::Value(v))
            }
        }
    }
}

fn parse_time(path: &Path, line: u64, col: &str, raw: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| data_err(path, line, format!("column '{col}': bad RFC 3339 time '{}': {e}", raw.trim())))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

/// Loads the station table. Station ids must be unique; coordinates are
/// validated.
pub fn load_stations(path: &Path, lax: bool) -> Result<Vec<Station>> {
    let mut rdr = reader(path)?;
    let idx = check_header(path, &STATION_HEADER, rdr.headers().map_err(Error::from)?, lax)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(Error::from)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let id: u32 = field(0)
            .parse()
            .map_err(|_| data_err(path, line, format!("column 'id': cannot parse '{}'", field(0))))?;
        if !seen.insert(id) {
            return Err(data_err(path, line, format!("duplicate station id {id}")));
        }
        let lon = match parse_field(path, line, "lon", field(2))? {
            Field::Value(v) => v,
            Field::Drop => return Err(data_err(path, line, "column 'lon': blank or non-finite")),
        };
        let lat = match parse_field(path, line, "lat", field(3))? {
            Field::Value(v) => v,
            Field::Drop => return Err(data_err(path, line, "column 'lat': blank or non-finite")),
        };
        let alt = match parse_field(path, line, "alt_m", field(4))? {
            Field::Value(v) => v,
            Field::Drop => return Err(data_err(path, line, "column 'alt_m': blank or non-finite")),
        };
        let st = Station {
            id,
            name: field(1).to_string(),
            longitude: lon,
            latitude: lat,
            altitude: alt,
            region: field(5).to_string(),
        };
        st.validate()?;
        out.push(st);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no stations", path.display())));
    }
    Ok(out)
}

/// Loads observations. Rows with blank/non-finite GHI are dropped and
/// counted; negative GHI is an error.
pub fn load_observations(path: &Path, lax: bool) -> Result<Loaded<Observation>> {
    let mut rdr = reader(path)?;
    let idx = check_header(path, &OBS_HEADER, rdr.headers().map_err(Error::from)?, lax)?;
    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record.map_err(Error::from)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let station_id: u32 = field(0).parse().map_err(|_| {
            data_err(path, line, format!("column 'station_id': cannot parse '{}'", field(0)))
        })?;
        let valid_time = parse_time(path, line, "valid_time", field(1))?;
        match parse_irradiance(path, line, "ghi_wm2", field(2))? {
            Field::Value(ghi) => rows.push(Observation {
                station_id,
                valid_time,
                ghi,
            }),
            Field::Drop => dropped += 1,
        }
    }
    Ok(Loaded {
        rows,
        dropped_rows: dropped,
    })
}

/// Loads ensemble forecasts. A row is dropped (and counted) if any member is
/// blank or non-finite; negative members are an error.
pub fn load_forecasts(path: &Path, lax: bool) -> Result<Loaded<ForecastRecord>> {
    let mut rdr = reader(path)?;
    let idx = check_header(path, &FORECAST_HEADER, rdr.headers().map_err(Error::from)?, lax)?;
    let mut rows = Vec::new();
    let mut dropped = 0usize;
    'rows: for record in rdr.records() {
        let record = record.map_err(Error::from)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let station_id: u32 = field(0).parse().map_err(|_| {
            data_err(path, line, format!("column 'station_id': cannot parse '{}'", field(0)))
        })?;
        let init_time = parse_time(path, line, "init_time", field(1))?;
        let lead_h: u32 = field(2)
            .parse()
            .map_err(|_| data_err(path, line, format!("column 'lead_h': cannot parse '{}'", field(2))))?;
        if !(1..=48).contains(&lead_h) {
            return Err(data_err(path, line, format!("lead_h {lead_h} outside 1..=48")));
        }
        let mut members = [0.0f64; ENSEMBLE_SIZE];
        for (k, slot) in members.iter_mut().enumerate() {
            let col = FORECAST_HEADER[3 + k];
            match parse_irradiance(path, line, col, field(3 + k))? {
                Field::Value(v) => *slot = v,
                Field::Drop => {
                    dropped += 1;
                    continue 'rows;
                }
            }
        }
        rows.push(ForecastRecord {
            station_id,
            init_time,
            lead_h,
            members,
        });
    }
    Ok(Loaded {
        rows,
        dropped_rows: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_tmp(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_stations() {
        let f = write_tmp(
            "id,name,lon,lat,alt_m,region\n\
             7,Crucero,-69.57,-22.27,1180,II\n\
             12,Salvador,-69.62,-26.31,1600,III\n",
        );
        let v = load_stations(f.path(), false).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].id, 7);
        assert_eq!(v[0].name, "Crucero");
        assert_eq!(v[1].latitude, -26.31);
    }

    #[test]
    fn duplicate_station_id_is_error() {
        let f = write_tmp(
            "id,name,lon,lat,alt_m,region\n\
             7,A,-69.0,-22.0,100,II\n\
             7,B,-69.5,-23.0,200,II\n",
        );
        let err = load_stations(f.path(), false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate station id 7"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn header_mismatch_rejected_but_lax_reorders() {
        let f = write_tmp(
            "name,id,lon,lat,alt_m,region,extra\n\
             A,7,-69.0,-22.0,100,II,x\n",
        );
        assert!(load_stations(f.path(), false).is_err());
        let v = load_stations(f.path(), true).unwrap();
        assert_eq!(v[0].id, 7);
        assert_eq!(v[0].name, "A");
    }

    #[test]
    fn loads_observations_with_drops_and_clamps() {
        let f = write_tmp(
            "station_id,valid_time,ghi_wm2\n\
             7,2021-01-01T12:00:00Z,850.5\n\
             7,2021-01-01T13:00:00Z,\n\
             7,2021-01-01T14:00:00Z,NaN\n\
             7,2021-01-01T15:00:00Z,-2.5e-10\n",
        );
        let out = load_observations(f.path(), false).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.dropped_rows, 2);
        assert_eq!(out.rows[0].ghi, 850.5);
        assert_eq!(out.rows[1].ghi, 0.0); // dust clamped to exact zero
        assert_eq!(
            out.rows[0].valid_time,
            Utc.with_ymd_and_hms(2021, 1, 1, 12, 0, 0).unwrap()
        );
    }

    #[test]
    fn negative_observation_is_error_with_line() {
        let f = write_tmp(
            "station_id,valid_time,ghi_wm2\n\
             7,2021-01-01T12:00:00Z,100\n\
             7,2021-01-01T13:00:00Z,-3.0\n",
        );
        let msg = load_observations(f.path(), false).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("negative irradiance"), "{msg}");
    }

    #[test]
    fn loads_forecasts() {
        let f = write_tmp(
            "station_id,init_time,lead_h,m1,m2,m3,m4,m5,m6,m7,m8\n\
             7,2021-01-01T00:00:00Z,12,100,110,120,130,140,150,160,170\n\
             7,2021-01-01T00:00:00Z,13,0,0,0,0,0,0,0,0\n",
        );
        let out = load_forecasts(f.path(), false).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.dropped_rows, 0);
        assert_eq!(out.rows[0].members[7], 170.0);
        assert_eq!(out.rows[0].valid_time(), Utc.with_ymd_and_hms(2021, 1, 1, 12, 0, 0).unwrap());
        assert_eq!(out.rows[1].members, [0.0; 8]);
    }

    #[test]
    fn forecast_row_with_non_finite_member_dropped_once() {
        let f = write_tmp(
            "station_id,init_time,lead_h,m1,m2,m3,m4,m5,m6,m7,m8\n\
             7,2021-01-01T00:00:00Z,12,100,inf,120,130,,150,160,170\n\
             7,2021-01-01T00:00:00Z,13,1,2,3,4,5,6,7,8\n",
        );
        let out = load_forecasts(f.path(), false).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.dropped_rows, 1); // row counted once despite two bad fields
    }

    #[test]
    fn forecast_lead_out_of_range_is_error() {
        let f = write_tmp(
            "station_id,init_time,lead_h,m1,m2,m3,m4,m5,m6,m7,m8\n\
             7,2021-01-01T00:00:00Z,49,1,2,3,4,5,6,7,8\n",
        );
        let msg = load_forecasts(f.path(), false).unwrap_err().to_string();
        assert!(msg.contains("lead_h 49"), "{msg}");
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let f = write_tmp(
            "station_id,valid_time,ghi_wm2\n\
             7,2021-01-01 12:00,100\n",
        );
        let msg = load_observations(f.path(), false).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("RFC 3339"), "{msg}");
    }

    #[test]
    fn unknown_column_rejected_unless_lax() {
        let f = write_tmp(
            "station_id,valid_time,ghi_wm2,quality\n\
             7,2021-01-01T12:00:00Z,100,ok\n",
        );
        assert!(load_observations(f.path(), false).is_err());
        let out = load_observations(f.path(), true).unwrap();
        assert_eq!(out.rows.len(), 1);
    }
}
