//! CSV and JSON serialisation of sweep results.
//!
//! CSV columns: `scheme,snr_db,user,outage_prob,mean_mi_bits,ergodic_capacity_bits,trials,seed`.
//! Floats are written with 10 significant digits in shortest form.
//!
//! JSON layout:
//!
//! ```text
//! {
//!   "schema": "bsa-relay.sweep.v1",
//!   "rows": [
//!     { "scheme": "bsa-alg1", "snr_db": 20.0, "user": 1,
//!       "outage_prob": 0.01, "outage_stderr": 0.001,
//!       "mean_mi_bits": 9.1, "ergodic_capacity_bits": 17.3,
//!       "trials": 10000, "seed": 42 }
//!   ]
//! }
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Scheme, SweepResult, SweepRow};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "scheme,snr_db,user,outage_prob,mean_mi_bits,ergodic_capacity_bits,trials,seed";
pub const JSON_SCHEMA_ID: &str = "bsa-relay.sweep.v1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidConfig(format!("unknown output format `{s}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDocument {
    schema: String,
    rows: Vec<SweepRow>,
}

fn sig10(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.9e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Writes `result` to `path`. An empty result yields a header-only CSV or
/// an empty `rows` array.
pub fn emit_results(result: &SweepResult, path: &Path, format: OutputFormat) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    match format {
        OutputFormat::Csv => write_csv(result, &mut out).map_err(io_err(path))?,
        OutputFormat::Json => {
            let doc = JsonDocument { schema: JSON_SCHEMA_ID.to_string(), rows: result.rows.clone() };
            serde_json::to_writer_pretty(&mut out, &doc)
                .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
            writeln!(out).map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

fn write_csv(result: &SweepResult, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scheme,
            sig10(r.snr_db),
            r.user,
            sig10(r.outage_prob),
            sig10(r.mean_mi_bits),
            sig10(r.ergodic_capacity_bits),
            r.trials,
            r.seed
        )?;
    }
    Ok(())
}

/// Reads a CSV written by [`emit_results`]. `outage_stderr` is recomputed
/// from `outage_prob` and `trials`.
pub fn read_csv(path: &Path) -> Result<SweepResult> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::InvalidConfig(format!("unexpected CSV header `{}`", header.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::InvalidConfig(format!("bad number `{}`", field(i))))
        };
        let int = |i: usize| -> Result<u64> {
            field(i).parse().map_err(|_| Error::InvalidConfig(format!("bad integer `{}`", field(i))))
        };
        let outage_prob = num(3)?;
        let trials = int(6)?;
        rows.push(SweepRow {
            scheme: field(0).parse::<Scheme>()?,
            snr_db: num(1)?,
            user: int(2)? as usize,
            outage_prob,
            outage_stderr: (outage_prob * (1.0 - outage_prob) / trials as f64).sqrt(),
            mean_mi_bits: num(4)?,
            ergodic_capacity_bits: num(5)?,
            trials,
            seed: int(7)?,
        });
    }
    Ok(SweepResult { rows })
}

/// Reads a JSON document written by [`emit_results`].
pub fn read_json(path: &Path) -> Result<SweepResult> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let doc: JsonDocument =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    if doc.schema != JSON_SCHEMA_ID {
        return Err(Error::InvalidConfig(format!("unsupported schema `{}`", doc.schema)));
    }
    Ok(SweepResult { rows: doc.rows })
}
