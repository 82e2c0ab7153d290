//! Raw per-task usage records and their aggregation into per-machine series.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::data::series::{MachineSeries, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One task's mean resource usage over one measurement window.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// Seconds since trace epoch.
    pub window_start: i64,
    pub machine_id: String,
    /// CPU-core-seconds per second.
    pub cpu_rate: f64,
    /// Canonical memory usage fraction.
    pub memory: f64,
    /// Disk-time seconds per second; absent when the trace left the field empty.
    pub disk_io_time: Option<f64>,
    /// Fraction of local disk used.
    pub disk_space: f64,
}

/// Where each [`TraceRecord`] field lives in a delimited row.
///
/// Column positions are 1-based, following the numbering used in the public
/// cluster-trace schema documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSchema {
    pub time_col: usize,
    pub machine_col: usize,
    pub cpu_col: usize,
    pub memory_col: usize,
    pub disk_io_col: Option<usize>,
    pub disk_space_col: usize,
    /// Raw timestamps are divided by this to get seconds (1_000_000 for microsecond traces).
    pub time_divisor: i64,
    pub delimiter: u8,
    pub has_header: bool,
}

impl TraceSchema {
    /// Layout of the public cluster trace's `task_usage` table: start time (µs)
    /// in field 1, machine ID in 5, mean CPU rate 6, canonical memory 7,
    /// mean disk I/O time 12, mean local disk space 13. No header row.
    pub fn google() -> Self {
        TraceSchema {
            time_col: 1,
            machine_col: 5,
            cpu_col: 6,
            memory_col: 7,
            disk_io_col: Some(12),
            disk_space_col: 13,
            time_divisor: 1_000_000,
            delimiter: b',',
            has_header: false,
        }
    }

    /// `time,machine,cpu,memory,disk_io,disk_space` with times already in seconds.
    pub fn simple() -> Self {
        TraceSchema {
            time_col: 1,
            machine_col: 2,
            cpu_col: 3,
            memory_col: 4,
            disk_io_col: Some(5),
            disk_space_col: 6,
            time_divisor: 1,
            delimiter: b',',
            has_header: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "google" => Ok(Self::google()),
            "simple" => Ok(Self::simple()),
            other => Err(Error::config(format!(
                "unknown trace schema preset {other:?} (expected google or simple)"
            ))),
        }
    }

    fn columns(&self) -> impl Iterator<Item = (&'static str, usize)> {
        [
            ("time", self.time_col),
            ("machine", self.machine_col),
            ("cpu", self.cpu_col),
            ("memory", self.memory_col),
            ("disk_space", self.disk_space_col),
        ]
        .into_iter()
        .chain(self.disk_io_col.map(|c| ("disk_io", c)))
    }

    fn validate(&self) -> Result<()> {
        if self.time_divisor <= 0 {
            return Err(Error::config("time divisor must be positive"));
        }
        for (name, col) in self.columns() {
            if col == 0 {
                return Err(Error::config(format!(
                    "{name} column is 0; columns are numbered from 1"
                )));
            }
        }
        Ok(())
    }

    fn max_col(&self) -> usize {
        self.columns().map(|(_, c)| c).max().unwrap_or(0)
    }
}

impl Default for TraceSchema {
    fn default() -> Self {
        Self::google()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedTrace {
    pub records: Vec<TraceRecord>,
    /// Rows dropped because a mandatory field was missing, unparseable, negative or non-finite.
    pub skipped: usize,
}

/// Streams delimited rows into [`TraceRecord`]s, skipping (and counting) invalid rows.
pub fn parse_trace<R: Read>(source: R, schema: &TraceSchema) -> Result<ParsedTrace> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let needed = schema.max_col();
    if schema.has_header {
        let width = reader.headers()?.len();
        if width > 0 && width < needed {
            return Err(Error::config(format!(
                "schema references column {needed} but the header has {width} columns"
            )));
        }
    }

    let mut out = ParsedTrace::default();
    let mut row = csv::StringRecord::new();
    let mut first = true;
    while reader.read_record(&mut row)? {
        if first && !schema.has_header && row.len() < needed {
            return Err(Error::config(format!(
                "schema references column {needed} but the first row has {} columns",
                row.len()
            )));
        }
        first = false;
        match parse_row(&row, schema) {
            Some(rec) => out.records.push(rec),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, schema: &TraceSchema) -> Option<TraceRecord> {
    let field = |col: usize| row.get(col - 1);
    let usage = |col: usize| -> Option<f64> {
        let v: f64 = field(col)?.parse().ok()?;
        (v.is_finite() && v >= 0.0).then_some(v)
    };

    let raw_time: i64 = field(schema.time_col)?.parse().ok()?;
    let machine_id = field(schema.machine_col)?;
    if machine_id.is_empty() {
        return None;
    }
    let disk_io_time = match schema.disk_io_col {
        None => None,
        Some(col) => match field(col) {
            None | Some("") => None,
            Some(_) => Some(usage(col)?),
        },
    };
    Some(TraceRecord {
        window_start: raw_time.div_euclid(schema.time_divisor),
        machine_id: machine_id.to_string(),
        cpu_rate: usage(schema.cpu_col)?,
        memory: usage(schema.memory_col)?,
        disk_io_time,
        disk_space: usage(schema.disk_space_col)?,
    })
}

/// Sums every task record of `machine` into half-open `[start, start + interval)`
/// buckets, producing a consecutive series from the first to the last observed
/// bucket. Buckets (or the disk-I/O feature) with no observations hold `NaN`
/// as the missing marker; see [`crate::data::interpolate_missing`].
pub fn aggregate_machine_usage(
    records: &[TraceRecord],
    machine: &str,
    interval: i64,
) -> Result<MachineSeries> {
    if interval <= 0 {
        return Err(Error::config("aggregation interval must be positive"));
    }
    let mut buckets: BTreeMap<i64, [Vec<f64>; 4]> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.machine_id == machine) {
        let slot = buckets
            .entry(rec.window_start.div_euclid(interval))
            .or_default();
        slot[0].push(rec.cpu_rate);
        slot[1].push(rec.memory);
        if let Some(io) = rec.disk_io_time {
            slot[2].push(io);
        }
        slot[3].push(rec.disk_space);
    }
    let (first, last) = match (buckets.keys().next(), buckets.keys().next_back()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::EmptySeries(machine.to_string())),
    };

    let len = (last - first + 1) as usize;
    let mut values = Matrix::from_fn(len, FEATURE_NAMES.len(), |_, _| f64::NAN);
    for (bucket, mut cols) in buckets {
        let t = (bucket - first) as usize;
        for (f, col) in cols.iter_mut().enumerate() {
            if col.is_empty() {
                continue;
            }
            // Sorted summation makes the result independent of record order.
            col.sort_by(f64::total_cmp);
            values.set(t, f, col.iter().sum());
        }
    }
    MachineSeries::new(
        machine.to_string(),
        interval,
        first * interval,
        values,
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: i64, m: &str, cpu: f64) -> TraceRecord {
        TraceRecord {
            window_start: t,
            machine_id: m.into(),
            cpu_rate: cpu,
            memory: 0.0,
            disk_io_time: Some(0.0),
            disk_space: 0.0,
        }
    }

    #[test]
    fn empty_stream() {
        let p = parse_trace("".as_bytes(), &TraceSchema::simple()).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.skipped, 0);
    }

    #[test]
    fn empty_disk_io_is_absent() {
        let p = parse_trace(
            "300,m1,0.1,0.02,,0.001\n".as_bytes(),
            &TraceSchema::simple(),
        )
        .unwrap();
        assert_eq!(p.records.len(), 1);
        let r = &p.records[0];
        assert_eq!(r.window_start, 300);
        assert_eq!(r.machine_id, "m1");
        assert_eq!(r.cpu_rate, 0.1);
        assert_eq!(r.disk_io_time, None);
        assert_eq!(r.disk_space, 0.001);
    }

    #[test]
    fn non_numeric_cpu_row_skipped() {
        let src = "0,m1,0.1,0.1,0.0,0.1\n300,m1,abc,0.1,0.0,0.1\n600,m1,0.3,0.1,0.0,0.1\n";
        let p = parse_trace(src.as_bytes(), &TraceSchema::simple()).unwrap();
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.skipped, 1);
        assert_eq!(p.records[1].window_start, 600);
    }

    #[test]
    fn negative_usage_skipped() {
        let src = "0,m1,-0.1,0.1,0.0,0.1\n";
        let p = parse_trace(src.as_bytes(), &TraceSchema::simple()).unwrap();
        assert_eq!((p.records.len(), p.skipped), (0, 1));
    }

    #[test]
    fn schema_beyond_row_width_is_config_error() {
        let err = parse_trace("1,2,3\n".as_bytes(), &TraceSchema::simple()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn header_and_microsecond_times() {
        let mut schema = TraceSchema::simple();
        schema.has_header = true;
        schema.time_divisor = 1_000_000;
        let src = "t,m,c,mem,io,ds\n600000000,a,1,1,1,1\n";
        let p = parse_trace(src.as_bytes(), &schema).unwrap();
        assert_eq!(p.records[0].window_start, 600);
    }

    #[test]
    fn google_layout() {
        let src = "600000000,900000000,3418309,0,4155527081,0.001562,0.06787,0.07568,0.001156,0.001503,0.06787,2.861e-06,0.0001869,0.03967,0.0003567,2.445,0.007243,0,1,0\n";
        let p = parse_trace(src.as_bytes(), &TraceSchema::google()).unwrap();
        assert_eq!(p.records.len(), 1);
        let r = &p.records[0];
        assert_eq!(r.window_start, 600);
        assert_eq!(r.machine_id, "4155527081");
        assert_eq!(r.cpu_rate, 0.001562);
        assert_eq!(r.memory, 0.06787);
        assert_eq!(r.disk_io_time, Some(2.861e-06));
        assert_eq!(r.disk_space, 0.0001869);
    }

    #[test]
    fn same_bucket_sums() {
        let s = aggregate_machine_usage(&[rec(0, "m", 0.1), rec(0, "m", 0.3)], "m", 300).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.values.get(0, 0), 0.1 + 0.3);
    }

    #[test]
    fn consecutive_buckets_identity() {
        let recs = [rec(0, "m", 1.0), rec(300, "m", 2.0), rec(600, "m", 3.0)];
        let s = aggregate_machine_usage(&recs, "m", 300).unwrap();
        assert_eq!(s.values.column(0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn gap_bucket_marked_missing() {
        let recs = [rec(0, "m", 1.0), rec(600, "m", 3.0)];
        let s = aggregate_machine_usage(&recs, "m", 300).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.values.row(1).iter().all(|v| v.is_nan()));
        assert!(s.has_missing());
    }

    #[test]
    fn other_machines_filtered_and_empty_error() {
        let recs = [rec(0, "a", 1.0), rec(0, "b", 5.0)];
        let s = aggregate_machine_usage(&recs, "a", 300).unwrap();
        assert_eq!(s.values.get(0, 0), 1.0);
        assert!(matches!(
            aggregate_machine_usage(&recs, "zzz", 300),
            Err(Error::EmptySeries(_))
        ));
    }

    #[test]
    fn half_open_bucket_boundaries() {
        let recs = [rec(299, "m", 1.0), rec(300, "m", 2.0)];
        let s = aggregate_machine_usage(&recs, "m", 300).unwrap();
        assert_eq!(s.start_time, 0);
        assert_eq!(s.values.column(0), vec![1.0, 2.0]);
    }
}
