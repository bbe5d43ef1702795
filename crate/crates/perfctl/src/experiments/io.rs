//! CSV traces with full round-trip precision and TOML metadata sidecars.

use std::io::{Read, Write};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::solvers::{FixedPointResult, TraceRow};

pub const TRACE_HEADER: [&str; 4] = ["n", "ps_error", "expected_cost", "cost_std_error"];

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([r.n.to_string(), fmt_opt(r.ps_error), fmt_opt(r.expected_cost), fmt_opt(r.cost_std_error)])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|e| Error::Parse(format!("{field:?}: {e}")))
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != TRACE_HEADER {
        return Err(Error::Parse(format!("unexpected trace header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(TraceRow {
                n: rec[0].parse().map_err(|e| Error::Parse(format!("row index {:?}: {e}", &rec[0])))?,
                ps_error: parse_opt(&rec[1])?,
                expected_cost: parse_opt(&rec[2])?,
                cost_std_error: parse_opt(&rec[3])?,
            })
        })
        .collect()
}

/// One row per application of the best-response map.
pub fn write_fixed_point_csv<W: Write>(out: W, result: &FixedPointResult) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["n", "step", "gap_to_final"])?;
    let gaps = result.gaps_to(&result.m_star.m);
    for (n, step) in result.steps.iter().enumerate() {
        w.write_record([(n + 1).to_string(), fmt_f64(*step), fmt_f64(gaps[n + 1])])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per step: state, action, noise and stage cost.
pub fn write_trajectory_csv<W: Write>(out: W, record: &TrajectoryRecord) -> Result<()> {
    let mut w = writer(out);
    let dx = record.states[0].len();
    let du = record.actions[0].len();
    let mut header = vec!["t".to_string()];
    header.extend((0..dx).map(|i| format!("x{i}")));
    header.extend((0..du).map(|i| format!("u{i}")));
    header.extend((0..dx).map(|i| format!("w{i}")));
    header.push("cost".into());
    w.write_record(&header)?;
    for (t, (x, u)) in record.states.iter().zip(&record.actions).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        row.extend(u.iter().map(|v| fmt_f64(*v)));
        match record.noises.get(t) {
            Some(wt) => row.extend(wt.iter().map(|v| fmt_f64(*v))),
            None => row.extend((0..dx).map(|_| String::new())),
        }
        row.push(fmt_f64(record.stage_costs[t]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Parse(e.to_string()))
}

/// SHA-256 over the TOML rendering of every part.
pub fn config_hash<T: Serialize>(parts: &[&T]) -> Result<String> {
    let mut h = Sha256::new();
    for p in parts {
        h.update(to_toml(p)?.as_bytes());
        h.update([0u8]);
    }
    Ok(hex::encode(h.finalize()))
}
