//! Long-form CSV files exchanged between commands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use hybridcast::{
    EnsembleForecast, PointForecast, PointSource, QuantileForecast, QuantileGrid, SeriesKey,
    YearMonth,
};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const QUANTILE_HEADER: [&str; 5] = ["key", "origin", "horizon", "level", "value"];
pub const POINT_HEADER: [&str; 4] = ["key", "origin", "horizon", "value"];

/// File-name-safe form of a series identifier.
pub fn file_stem(key: &SeriesKey) -> String {
    key.id()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn append_quantiles<W: Write>(w: &mut csv::Writer<W>, q: &QuantileForecast) -> Result<()> {
    let key = q.key().id();
    let origin = q.origin().to_string();
    for (h, row) in q.values().iter().enumerate() {
        for (level, value) in q.grid().levels().iter().zip(row) {
            w.write_record([
                key.as_str(),
                origin.as_str(),
                &(h + 1).to_string(),
                &level.to_string(),
                &value.to_string(),
            ])?;
        }
    }
    Ok(())
}

pub fn write_quantiles(path: &Path, forecasts: &[QuantileForecast]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(QUANTILE_HEADER)?;
    for q in forecasts {
        append_quantiles(&mut w, q)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_points(path: &Path, points: &[PointForecast]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(POINT_HEADER)?;
    for p in points {
        for (h, v) in p.values().iter().enumerate() {
            w.write_record([
                p.key().id(),
                p.origin().to_string(),
                (h + 1).to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Raw ensemble paths: `key, origin, path, horizon, value`.
pub fn write_paths(path: &Path, ensembles: &[EnsembleForecast]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", "origin", "path", "horizon", "value"])?;
    for e in ensembles {
        let key = e.key().id();
        let origin = e.origin().to_string();
        for (b, p) in e.paths().iter().enumerate() {
            for (h, v) in p.iter().enumerate() {
                w.write_record([
                    key.as_str(),
                    origin.as_str(),
                    &b.to_string(),
                    &(h + 1).to_string(),
                    &v.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.iter().ne(want.iter().copied()) {
        return Err(CliError::Input(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            want.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e| {
        CliError::Input(format!("{}:{line}: column `{name}`: {e} ({raw:?})", path.display()))
    })
}

type Group = (String, YearMonth);

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

/// Reads a long-form quantile file, one forecast per (key, origin).
pub fn read_quantiles(path: &Path) -> Result<BTreeMap<Group, QuantileForecast>> {
    let mut reader = open(path)?;
    check_header(path, reader.headers()?, &QUANTILE_HEADER)?;
    let mut cells: BTreeMap<Group, BTreeMap<usize, Vec<(f64, f64)>>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        let key = record[0].trim().to_string();
        let origin: YearMonth = field(path, line, "origin", &record[1])?;
        let horizon: usize = field(path, line, "horizon", &record[2])?;
        let level: f64 = field(path, line, "level", &record[3])?;
        let value: f64 = field(path, line, "value", &record[4])?;
        cells
            .entry((key, origin))
            .or_default()
            .entry(horizon)
            .or_default()
            .push((level, value));
    }
    let mut out = BTreeMap::new();
    for ((key, origin), by_h) in cells {
        let context = |msg: String| CliError::Input(format!("{}: {key} @ {origin}: {msg}", path.display()));
        if by_h.keys().copied().ne(1..=by_h.len()) {
            return Err(context("horizons must run 1..H without gaps".into()));
        }
        let mut levels = None;
        let mut rows = Vec::new();
        for (_, mut cells) in by_h {
            cells.sort_by(|a, b| a.0.total_cmp(&b.0));
            let these: Vec<f64> = cells.iter().map(|c| c.0).collect();
            match &levels {
                None => levels = Some(these),
                Some(l) if *l != these => return Err(context("levels differ between horizons".into())),
                _ => {}
            }
            rows.push(cells.into_iter().map(|c| c.1).collect());
        }
        let grid = QuantileGrid::new(levels.unwrap_or_default()).map_err(|e| context(e.to_string()))?;
        let series_key = SeriesKey::from_id(&key).map_err(|e| context(e.to_string()))?;
        let q = QuantileForecast::new(series_key, origin, grid, rows).map_err(|e| context(e.to_string()))?;
        out.insert((key, origin), q);
    }
    Ok(out)
}

/// Reads a long-form point file, one forecast per (key, origin).
pub fn read_points(path: &Path) -> Result<BTreeMap<Group, PointForecast>> {
    let mut reader = open(path)?;
    check_header(path, reader.headers()?, &POINT_HEADER)?;
    let mut cells: BTreeMap<Group, BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        let key = record[0].trim().to_string();
        let origin: YearMonth = field(path, line, "origin", &record[1])?;
        let horizon: usize = field(path, line, "horizon", &record[2])?;
        let value: f64 = field(path, line, "value", &record[3])?;
        if cells.entry((key.clone(), origin)).or_default().insert(horizon, value).is_some() {
            return Err(CliError::Input(format!(
                "{}:{line}: duplicate horizon {horizon} for {key} @ {origin}",
                path.display()
            )));
        }
    }
    let mut out = BTreeMap::new();
    for ((key, origin), by_h) in cells {
        let context = |msg: String| CliError::Input(format!("{}: {key} @ {origin}: {msg}", path.display()));
        if by_h.keys().copied().ne(1..=by_h.len()) {
            return Err(context("horizons must run 1..H without gaps".into()));
        }
        let series_key = SeriesKey::from_id(&key).map_err(|e| context(e.to_string()))?;
        let p = PointForecast::new(series_key, origin, by_h.into_values().collect(), PointSource::Expert)
            .map_err(|e| context(e.to_string()))?;
        out.insert((key, origin), p);
    }
    Ok(out)
}
