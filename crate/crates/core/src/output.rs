//! Figure-ready tables: CSV bodies behind a one-line `#` JSON header.
//!
//! The header carries the artifact name, crate version, resolved
//! configuration, a timestamp and any run metadata such as timings. Bodies
//! contain only deterministic values, so two runs with the same inputs
//! differ only in their first line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::mcwf::TrajectoryRecord;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Header {
    pub artifact: String,
    pub version: String,
    pub config: Value,
    pub timestamp: String,
    /// Anything else worth keeping next to the data (timings, seeds, notes).
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Header {
    pub fn new(artifact: &str, config: Value) -> Self {
        Header {
            artifact: artifact.to_string(),
            version: crate::VERSION.to_string(),
            config,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            extra: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Header, columns: &[&str]) -> Self {
        Table { header, columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Header line followed by the CSV body.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}", serde_json::to_string(&self.header)?)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes to a temporary file next to `path` and renames it into place,
    /// so readers never observe a partial table.
    pub fn persist(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        self.write_to(std::io::BufWriter::new(tmp.as_file_mut()))?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Formats a float with the shortest representation that round-trips.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Table read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadTable {
    pub header: Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReadTable {
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }
}

pub fn read_table(path: &Path) -> Result<ReadTable> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Argument(format!("{} lacks a JSON header line", path.display())))?;
    let header: Value = serde_json::from_str(json.trim_end())?;
    let mut csv = csv::Reader::from_reader(reader);
    let columns = csv.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let rows = csv
        .records()
        .map(|r| r.map(|rec| rec.iter().map(String::from).collect()).map_err(csv_error))
        .collect::<Result<_>>()?;
    Ok(ReadTable { header, columns, rows })
}

/// Everything after the header line, for byte-level comparisons.
pub fn body_bytes(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let start = bytes.iter().position(|&b| b == b'\n').map(|k| k + 1).unwrap_or(bytes.len());
    Ok(bytes[start..].to_vec())
}

/// One row per trajectory sample: index, seed, time and every recorded observable.
pub fn trajectory_table(header: Header, records: &[TrajectoryRecord]) -> Result<Table> {
    let first = records.first().ok_or_else(|| Error::Argument("no trajectories to dump".into()))?;
    let mut columns = vec!["trajectory".to_string(), "time".to_string()];
    columns.extend(first.labels.iter().cloned());
    let seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    let header = header.with("params", first.params).with("seeds", seeds).with("sample_dt", first.sample_dt).with("t_end", first.t_end);
    let mut table = Table { header, columns, rows: Vec::new() };
    for (k, r) in records.iter().enumerate() {
        if r.labels != first.labels {
            return Err(Error::Argument("records carry different observables".into()));
        }
        for (i, t) in r.times.iter().enumerate() {
            let mut row = vec![k.to_string(), fmt_f64(*t)];
            row.extend(r.samples.iter().map(|s| fmt_f64(s[i])));
            table.rows.push(row);
        }
    }
    Ok(table)
}
