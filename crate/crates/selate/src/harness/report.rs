//! Report and dataset persistence. Files are written atomically (temp file
//! plus rename) and floats use the shortest round-trip encoding, so parsing
//! recovers them exactly.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, DatasetMeta, Method, Sample};
use crate::harness::run::{RunReport, RunRow};
use crate::{Error, Result};

pub const REPORT_HEADER: &str = "seed,method,estimate,error,runtime_sec";
pub const DATASET_HEADER: &str = "x,t,y0,y1,y,selected";

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Serialize the report rows as CSV with the fixed header.
pub fn report_to_csv(report: &RunReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.seed, row.method, row.estimate, row.error, row.runtime_sec
        ));
    }
    out
}

pub fn emit_csv(report: &RunReport, path: &Path) -> Result<()> {
    write_atomic(path, &report_to_csv(report))
}

/// Parse a report CSV back into rows (failure messages are not stored in the
/// CSV; failed rows come back as NaN rows).
pub fn parse_report_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "unexpected report header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!("bad report row {}: {line}", i + 2)));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("bad float `{s}` in row {}", i + 2)))
        };
        rows.push(RunRow {
            seed: fields[0]
                .parse::<u64>()
                .map_err(|_| Error::Data(format!("bad seed `{}`", fields[0])))?,
            method: fields[1].parse::<Method>()?,
            estimate: parse_f(fields[2])?,
            error: parse_f(fields[3])?,
            runtime_sec: parse_f(fields[4])?,
            failure: None,
        });
    }
    Ok(rows)
}

/// Serialize a dataset as CSV (header `x,t,y0,y1,y,selected`).
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for s in ds.iter() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.x, s.t, s.y0, s.y1, s.y, u8::from(s.selected)
        ));
    }
    out
}

pub fn emit_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_csv(ds))
}

pub fn parse_dataset_csv(text: &str, seed: u64) -> Result<Dataset> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == DATASET_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "unexpected dataset header: {other:?}"
            )))
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Data(format!("bad dataset row {}: {line}", i + 2)));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("bad float `{s}` in row {}", i + 2)))
        };
        let mut sample = Sample::new(
            f(fields[0])?,
            fields[1]
                .parse::<u8>()
                .map_err(|_| Error::Data(format!("bad treatment `{}`", fields[1])))?,
            f(fields[2])?,
            f(fields[3])?,
        );
        // The factual outcome is recomputed by consistency; verify it
        // round-trips.
        let y = f(fields[4])?;
        if y.to_bits() != sample.y.to_bits() {
            return Err(Error::Data(format!(
                "factual outcome in row {} violates consistency",
                i + 2
            )));
        }
        sample.selected = fields[5] == "1";
        samples.push(sample);
    }
    Dataset::new(samples, seed, DatasetMeta::default())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_population, PopulationConfig};

    #[test]
    fn report_round_trip_is_exact() {
        let report = RunReport {
            rows: vec![
                RunRow {
                    seed: 3,
                    method: Method::MleBeta,
                    estimate: 1.9876543210987654,
                    error: -0.012345678901234567,
                    runtime_sec: 0.0,
                    failure: None,
                },
                RunRow {
                    seed: 4,
                    method: Method::Ipw,
                    estimate: f64::NAN,
                    error: f64::NAN,
                    runtime_sec: 0.0,
                    failure: None,
                },
            ],
            oracle_ate: 2.0,
            config_hash: 77,
        };
        let csv = report_to_csv(&report);
        let rows = parse_report_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].estimate.to_bits(), report.rows[0].estimate.to_bits());
        assert_eq!(rows[0].error.to_bits(), report.rows[0].error.to_bits());
        assert!(rows[1].estimate.is_nan());
    }

    #[test]
    fn empty_report_is_header_only() {
        let report = RunReport {
            rows: vec![],
            oracle_ate: 2.0,
            config_hash: 0,
        };
        assert_eq!(report_to_csv(&report), format!("{REPORT_HEADER}\n"));
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let cfg = PopulationConfig {
            n: 200,
            seed: 5,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        let csv = dataset_to_csv(&ds);
        let back = parse_dataset_csv(&csv, ds.seed).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.iter().zip(back.iter()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y0.to_bits(), b.y0.to_bits());
            assert_eq!(a.y1.to_bits(), b.y1.to_bits());
            assert_eq!(a.t, b.t);
        }
    }
}
