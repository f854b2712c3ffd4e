//! Long-format CSV input: `day_id,time_hours,flow_rate`, one reading per
//! row.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{SampledCurve, TimeGrid};

pub const HEADER: [&str; 3] = ["day_id", "time_hours", "flow_rate"];

/// Times closer than this are the same grid point.
const TIME_RESOLUTION: f64 = 1e-6;

fn time_key(t: f64) -> i64 {
    (t / TIME_RESOLUTION).round() as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedDay {
    pub day_id: String,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub curves: Vec<SampledCurve>,
    pub rejected: Vec<RejectedDay>,
}

struct Row {
    line: usize,
    day: String,
    time: f64,
    /// `None` for an empty cell.
    flow: Option<f64>,
}

/// Days in order of first appearance, each with its rows sorted by time.
fn read_rows(reader: impl Read) -> Result<Vec<(String, Vec<Row>)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != HEADER {
        return Err(Error::Ingestion(format!(
            "line 1: expected header {}, found {}",
            HEADER.join(","),
            names.join(",")
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut days: HashMap<String, Vec<Row>> = HashMap::new();
    let mut seen: HashMap<(String, i64), usize> = HashMap::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Ingestion(format!("line {line}: {e}")))?;
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::Ingestion(format!("line {line}: expected 3 cells, found {}", rec.len())));
        }
        let day = rec[0].trim().to_string();
        if day.is_empty() {
            return Err(Error::Ingestion(format!("line {line}: empty day_id")));
        }
        let time: f64 = rec[1]
            .trim()
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| Error::Ingestion(format!("line {line}: time_hours {:?} is not a number", &rec[1])))?;
        let flow = match rec[2].trim() {
            "" => None,
            cell => Some(
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Ingestion(format!("line {line}: flow_rate {cell:?} is not a number")))?,
            ),
        };
        if let Some(first) = seen.insert((day.clone(), time_key(time)), line) {
            return Err(Error::Ingestion(format!(
                "lines {first} and {line}: duplicate reading for day {day} at {time} h"
            )));
        }
        if !days.contains_key(&day) {
            order.push(day.clone());
        }
        days.entry(day.clone()).or_default().push(Row { line, day, time, flow });
    }
    Ok(order
        .into_iter()
        .map(|d| {
            let mut rows = days.remove(&d).unwrap();
            rows.sort_by(|a, b| a.time.total_cmp(&b.time));
            (d, rows)
        })
        .collect())
}

/// Complete daily curves. The common grid is the set of times read on a
/// majority of days; a reading off that grid is an error, and a day missing
/// any grid time (or with an empty flow cell) is rejected.
pub fn parse_curves(reader: impl Read) -> Result<Ingested> {
    let days = read_rows(reader)?;
    if days.is_empty() {
        log::warn!("empty dataset: the input holds no readings");
        return Ok(Ingested { curves: Vec::new(), rejected: Vec::new() });
    }
    let mut counts: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for (_, rows) in &days {
        for r in rows {
            let e = counts.entry(time_key(r.time)).or_insert((0, r.time));
            e.0 += 1;
        }
    }
    let grid_times: Vec<f64> = counts
        .values()
        .filter(|(n, _)| 2 * n > days.len())
        .map(|&(_, t)| t)
        .collect();
    let off: Vec<String> = days
        .iter()
        .flat_map(|(_, rows)| rows)
        .filter(|r| 2 * counts[&time_key(r.time)].0 <= days.len())
        .take(5)
        .map(|r| format!("line {} (day {}, {} h)", r.line, r.day, r.time))
        .collect();
    if !off.is_empty() {
        return Err(Error::Ingestion(format!(
            "ragged grid: readings off the common time grid at {}",
            off.join(", ")
        )));
    }
    let grid = TimeGrid::new(grid_times).map_err(|e| Error::Ingestion(format!("common time grid: {e}")))?;
    let mut curves = Vec::new();
    let mut rejected = Vec::new();
    for (day, rows) in days {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.flow).collect();
        if values.len() < grid.len() {
            rejected.push(RejectedDay { day_id: day, missing: grid.len() - values.len() });
            continue;
        }
        curves.push(SampledCurve::new(grid.clone(), values, day)?);
    }
    for r in &rejected {
        log::warn!("day {} rejected: {} missing reading(s)", r.day_id, r.missing);
    }
    Ok(Ingested { curves, rejected })
}

pub fn read_curves(path: &Path) -> Result<Ingested> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    parse_curves(std::io::BufReader::new(file))
}

/// Partially observed days: each day's readings must sit on consecutive
/// points of `grid`. Readings after `until` are dropped.
pub fn parse_partial(reader: impl Read, grid: &TimeGrid, until: f64) -> Result<Vec<SampledCurve>> {
    let mut out = Vec::new();
    for (day, rows) in read_rows(reader)? {
        let rows: Vec<&Row> = rows.iter().filter(|r| r.time <= until + TIME_RESOLUTION).collect();
        let Some(first) = rows.first() else {
            return Err(Error::Ingestion(format!("day {day} has no readings up to {until} h")));
        };
        let start = grid.index_of(first.time).ok_or_else(|| {
            Error::GridMismatch(format!("line {}: {} h is not on the model grid", first.line, first.time))
        })?;
        let mut values = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let expected = grid.points().get(start + i).copied();
            if expected.is_none_or(|t| time_key(t) != time_key(r.time)) {
                return Err(Error::GridMismatch(format!(
                    "line {}: day {day} reading at {} h breaks the model grid",
                    r.line, r.time
                )));
            }
            values.push(r.flow.ok_or_else(|| {
                Error::Ingestion(format!("line {}: day {day} has an empty flow_rate", r.line))
            })?);
        }
        let sub = grid.slice(start..start + values.len())?;
        out.push(SampledCurve::new(sub, values, day)?);
    }
    Ok(out)
}

/// Writes curves back in the input layout.
pub fn write_curves(curves: &[SampledCurve], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for c in curves {
        for (t, v) in c.grid.points().iter().zip(&c.values) {
            w.write_record([c.id.as_str(), &t.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
