//! CSV and JSON output of sweep rows.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sweep::SweepRow;

pub const CSV_HEADER: &str = "axis,value,trials,pe_mean,pe_stderr,iters_mean,nmse_db_mean,runtime_ms_mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(SimError::Config(format!("unknown format {s:?} (csv or json)"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    axis: String,
    value: f64,
    trials: usize,
    pe_mean: f64,
    pe_stderr: f64,
    iters_mean: f64,
    nmse_db_mean: f64,
    runtime_ms_mean: f64,
}

impl From<&SweepRow> for CsvRow {
    fn from(r: &SweepRow) -> Self {
        Self {
            axis: r.axis.clone(),
            value: r.value,
            trials: r.trials,
            pe_mean: r.pe_mean,
            pe_stderr: r.pe_stderr,
            iters_mean: r.iters_mean,
            nmse_db_mean: r.nmse_db_mean,
            runtime_ms_mean: r.runtime_ms_mean,
        }
    }
}

/// Aggregates only; per-trial records are dropped.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(SimError::Config(format!("unexpected csv header {:?}", header.join(","))));
    }
    rd.deserialize::<CsvRow>()
        .map(|r| {
            let r = r?;
            Ok(SweepRow {
                axis: r.axis,
                value: r.value,
                trials: r.trials,
                pe_mean: r.pe_mean,
                pe_stderr: r.pe_stderr,
                iters_mean: r.iters_mean,
                nmse_db_mean: r.nmse_db_mean,
                runtime_ms_mean: r.runtime_ms_mean,
                per_trial: Vec::new(),
            })
        })
        .collect()
}

/// Array of rows, each carrying its per-trial records.
pub fn write_json<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    writeln!(out).map_err(serde_json::Error::io)?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    Ok(serde_json::from_reader(input)?)
}

pub fn write_rows<W: Write>(rows: &[SweepRow], format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(rows, out),
        Format::Json => write_json(rows, out),
    }
}
