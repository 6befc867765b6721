//! CSV readers and writers for station and mobility datasets, plus
//! PlanetLab-style per-VM CPU utilization files.
//!
//! Stations: `id,lat,lng`. Mobility: `taxi_id,lat,lng,occupancy,timestamp`
//! (occupancy is ignored). A header row is optional and is recognized by a
//! non-numeric coordinate in the first row.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::model::{BaseStation, GeoPoint, MobilityTrace, ServerId, StationId, TraceSample};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn row_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::TraceRow {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Records with their 1-based line numbers, header removed when the
/// `numeric` columns of the first record do not parse.
fn read_records(path: &Path, numeric: &[usize]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, rec));
    }
    if let Some((_, first)) = rows.first() {
        let is_header = numeric
            .iter()
            .any(|&i| first.get(i).is_none_or(|f| f.parse::<f64>().is_err()));
        if is_header {
            rows.remove(0);
        }
    }
    if rows.is_empty() {
        return Err(Error::trace(format!("{}: empty dataset", path.display())));
    }
    Ok(rows)
}

fn parse_point(path: &Path, line: u64, rec: &csv::StringRecord, lat_col: usize) -> Result<GeoPoint> {
    let num = |i: usize, name: &str| -> Result<f64> {
        let raw = rec.get(i).ok_or_else(|| row_err(path, line, format!("missing {name}")))?;
        raw.parse::<f64>()
            .map_err(|_| row_err(path, line, format!("invalid {name} '{raw}'")))
    };
    let (lat, lng) = (num(lat_col, "lat")?, num(lat_col + 1, "lng")?);
    GeoPoint::new(lat, lng).map_err(|e| row_err(path, line, e.to_string()))
}

/// One base station (and co-located server slot) per row.
pub fn load_station_csv(path: &Path) -> Result<Vec<BaseStation>> {
    let rows = read_records(path, &[1, 2])?;
    let mut seen = HashSet::new();
    let mut stations = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        if rec.len() < 3 {
            return Err(row_err(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let name = rec[0].to_string();
        if name.is_empty() {
            return Err(row_err(path, line, "empty station id"));
        }
        if !seen.insert(name.clone()) {
            return Err(row_err(path, line, format!("duplicate station id '{name}'")));
        }
        let location = parse_point(path, line, &rec, 1)?;
        let idx = stations.len();
        stations.push(BaseStation {
            id: StationId(idx),
            name,
            location,
            edge_server_id: ServerId(idx),
        });
    }
    Ok(stations)
}

pub fn write_station_csv(path: &Path, stations: &[BaseStation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| Error::runtime(format!("{}: {e}", path.display()));
    w.write_record(["id", "lat", "lng"]).map_err(io)?;
    for s in stations {
        w.write_record([s.name.clone(), s.location.lat.to_string(), s.location.lng.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// One trace per taxi id (ordered by id), samples sorted by timestamp.
/// Repeated timestamps keep the first sample.
pub fn load_mobility_csv(path: &Path) -> Result<Vec<MobilityTrace>> {
    let rows = read_records(path, &[1, 2, 4])?;
    let mut by_taxi: BTreeMap<String, Vec<TraceSample>> = BTreeMap::new();
    for (line, rec) in rows {
        if rec.len() < 5 {
            return Err(row_err(path, line, format!("expected 5 fields, found {}", rec.len())));
        }
        let location = parse_point(path, line, &rec, 1)?;
        let timestamp_s = rec[4]
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .ok_or_else(|| row_err(path, line, format!("invalid timestamp '{}'", &rec[4])))?;
        by_taxi
            .entry(rec[0].to_string())
            .or_default()
            .push(TraceSample { timestamp_s, location });
    }
    let mut traces = Vec::with_capacity(by_taxi.len());
    for (label, mut samples) in by_taxi {
        samples.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
        let mut kept: Vec<TraceSample> = Vec::with_capacity(samples.len());
        for s in samples {
            match kept.last() {
                Some(prev) if prev.timestamp_s == s.timestamp_s => {
                    if prev.location != s.location {
                        warn!(
                            "{}: taxi {label} has conflicting samples at t={}; keeping the first",
                            path.display(),
                            s.timestamp_s
                        );
                    }
                }
                _ => kept.push(s),
            }
        }
        traces.push(MobilityTrace { label, samples: kept });
    }
    Ok(traces)
}

pub fn write_mobility_csv(path: &Path, traces: &[MobilityTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| Error::runtime(format!("{}: {e}", path.display()));
    w.write_record(["taxi_id", "lat", "lng", "occupancy", "timestamp"]).map_err(io)?;
    for t in traces {
        for s in &t.samples {
            w.write_record([
                t.label.clone(),
                s.location.lat.to_string(),
                s.location.lng.to_string(),
                "0".to_string(),
                s.timestamp_s.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Read a directory of PlanetLab-style files (one CPU percentage per line),
/// in file-name order, as utilization fractions.
pub fn load_workload_dir(dir: &Path) -> Result<Vec<Vec<f64>>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| Error::Io { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut out = Vec::new();
    for path in files {
        let mut series = Vec::new();
        for (i, line) in BufReader::new(open(&path)?).lines().enumerate() {
            let line = line.map_err(|source| Error::Io { path: path.clone(), source })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let pct: f64 = line
                .parse()
                .map_err(|_| row_err(&path, i as u64 + 1, format!("invalid utilization '{line}'")))?;
            series.push((pct / 100.0).clamp(0.0, 1.0));
        }
        if !series.is_empty() {
            out.push(series);
        }
    }
    if out.is_empty() {
        return Err(Error::trace(format!("{}: no workload files", dir.display())));
    }
    Ok(out)
}

/// Write workload series in the format read by [`load_workload_dir`].
pub fn write_workload_dir(dir: &Path, series: &[Vec<f64>]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    for (i, s) in series.iter().enumerate() {
        let path = dir.join(format!("vm_{i:05}"));
        let mut f = create(&path)?;
        for v in s {
            writeln!(f, "{}", (v * 100.0).round() as i64)
                .map_err(|source| Error::Io { path: path.clone(), source })?;
        }
    }
    Ok(())
}
