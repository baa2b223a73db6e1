//! Export and import of simulation outputs.
//!
//! Numbers are written in Rust's shortest round-trip form, so a CSV read back
//! reproduces the exact `f64` values and identical inputs give identical bytes.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::AveragingWeights;
use crate::dynamics::{Diagnostics, SimulationRecord};
use crate::lattice::{read_grid, write_grid, GridError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

fn format_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Format { line, msg: msg.into() }
}

/// CSV with header `t_ms, n<id>, ...` and one row per recorded step.
pub fn write_record_csv<W: Write>(mut w: W, rec: &SimulationRecord) -> Result<(), IoError> {
    let mut line = String::from("t_ms");
    for id in &rec.neuron_ids {
        line.push_str(", n");
        line.push_str(&id.to_string());
    }
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for (k, t) in rec.times.iter().enumerate() {
        line.clear();
        line.push_str(&t.to_string());
        for u in rec.row(k) {
            line.push_str(", ");
            line.push_str(&u.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, line: usize) -> Result<f64, IoError> {
    field
        .trim()
        .parse()
        .map_err(|_| format_err(line, format!("not a number: {:?}", field.trim())))
}

/// Read a record CSV. Spike lists and diagnostics are not part of the file
/// and come back empty.
pub fn read_record_csv<R: BufRead>(r: R) -> Result<SimulationRecord, IoError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| format_err(1, "empty file"))??;
    let mut cols = header.split(',').map(str::trim);
    if cols.next() != Some("t_ms") {
        return Err(format_err(1, "header must start with t_ms"));
    }
    let neuron_ids = cols
        .map(|c| {
            c.strip_prefix('n')
                .and_then(|id| id.parse().ok())
                .ok_or_else(|| format_err(1, format!("bad column name {c:?}")))
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let n = neuron_ids.len();
    let mut times = Vec::new();
    let mut u = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        times.push(parse_f64(fields.next().unwrap(), lineno)?);
        let before = u.len();
        for f in fields {
            u.push(parse_f64(f, lineno)?);
        }
        if u.len() - before != n {
            return Err(format_err(lineno, format!("expected {n} values, found {}", u.len() - before)));
        }
    }
    Ok(SimulationRecord {
        times,
        spikes: vec![Vec::new(); n],
        neuron_ids,
        u,
        diagnostics: Diagnostics::default(),
    })
}

/// `NCG1` grid of shape `[rows, 1 + neurons]`: the time column followed by
/// the potentials. Neuron ids are not stored; they are the record's order.
pub fn write_record_binary<W: Write>(w: W, rec: &SimulationRecord) -> Result<(), IoError> {
    let n = rec.neuron_ids.len();
    let mut values = Vec::with_capacity(rec.times.len() * (n + 1));
    for (k, t) in rec.times.iter().enumerate() {
        values.push(*t);
        values.extend_from_slice(rec.row(k));
    }
    write_grid(w, &[rec.times.len(), n + 1], &values)?;
    Ok(())
}

/// Inverse of [`write_record_binary`], with neuron ids supplied by the caller.
pub fn read_record_binary<R: Read>(r: R, neuron_ids: Vec<usize>) -> Result<SimulationRecord, IoError> {
    let (sizes, values) = read_grid(r)?;
    let n = neuron_ids.len();
    if sizes.len() != 2 || sizes[1] != n + 1 {
        return Err(format_err(0, format!("grid shape {sizes:?} does not fit {n} neurons")));
    }
    let mut times = Vec::with_capacity(sizes[0]);
    let mut u = Vec::with_capacity(sizes[0] * n);
    for row in values.chunks_exact(n + 1) {
        times.push(row[0]);
        u.extend_from_slice(&row[1..]);
    }
    Ok(SimulationRecord {
        times,
        spikes: vec![Vec::new(); n],
        neuron_ids,
        u,
        diagnostics: Diagnostics::default(),
    })
}

pub const TRACE_HEADER: &str = "t_ms, v_model_mV";

pub fn write_trace_csv<W: Write>(mut w: W, times: &[f64], v: &[f64]) -> Result<(), IoError> {
    let mut s = String::with_capacity(times.len() * 24);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for (t, x) in times.iter().zip(v) {
        s.push_str(&format!("{t}, {x}\n"));
    }
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Two-column CSV `(t_ms, value)` with a header line.
pub fn read_trace_csv<R: BufRead>(r: R) -> Result<(Vec<f64>, Vec<f64>), IoError> {
    let mut times = Vec::new();
    let mut v = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if k == 0 {
            if !line.trim_start().starts_with("t_ms") {
                return Err(format_err(1, "header must start with t_ms"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(format_err(k + 1, format!("expected 2 columns, found {}", fields.len())));
        }
        times.push(parse_f64(fields[0], k + 1)?);
        v.push(parse_f64(fields[1], k + 1)?);
    }
    Ok((times, v))
}

pub fn write_weights_csv<W: Write>(mut w: W, wts: &AveragingWeights) -> Result<(), IoError> {
    let mut s = String::from("neuron_id, weight\n");
    for (id, x) in wts.neuron_ids.iter().zip(&wts.w) {
        s.push_str(&format!("{id}, {x}\n"));
    }
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub neuron_id: usize,
    pub times: Vec<f64>,
}

/// JSON array of `{neuron_id, times}`, one entry per neuron.
pub fn write_spikes_json<W: Write>(mut w: W, rec: &SimulationRecord) -> Result<(), IoError> {
    let trains: Vec<SpikeTrain> = rec
        .neuron_ids
        .iter()
        .zip(&rec.spikes)
        .map(|(&neuron_id, times)| SpikeTrain {
            neuron_id,
            times: times.clone(),
        })
        .collect();
    serde_json::to_writer(&mut w, &trains)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_spikes_json<R: Read>(r: R) -> Result<Vec<SpikeTrain>, IoError> {
    Ok(serde_json::from_reader(r)?)
}
