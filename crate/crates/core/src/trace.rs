//! Versioned on-disk artifacts: frame traces, probe logs, run summaries
//! and sweep tables. All writers are deterministic (stable ordering) so
//! identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::wifi::{FrameKind, FrameObservation, Mac, VirtualTime};

pub const TRACE_HEADER: &str = "# frameside-trace v1";
pub const PROBES_HEADER: &str = "# frameside-probes v1";
pub const SUMMARY_HEADER: &str = "# frameside-summary v1";
pub const SWEEP_HEADER: &str = "# frameside-sweep v1";

#[derive(Error, Debug)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing or unknown header: expected `{expected}`")]
    BadHeader { expected: &'static str },
    #[error("line {line}: {msg}")]
    BadLine { line: usize, msg: String },
}

fn bad(line: usize, msg: impl Into<String>) -> TraceError {
    TraceError::BadLine { line: line + 1, msg: msg.into() }
}

pub fn format_trace(frames: &[FrameObservation]) -> String {
    let mut out = String::new();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    out.push_str("t_us,channel,addr1,addr2,kind,len,amsdu\n");
    for f in frames {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            f.t.0, f.channel, f.addr1, f.addr2, f.kind, f.observable_len, f.amsdu
        )
        .unwrap();
    }
    out
}

pub fn write_trace(path: &Path, frames: &[FrameObservation]) -> Result<(), TraceError> {
    fs::write(path, format_trace(frames))?;
    Ok(())
}

pub fn parse_trace(text: &str) -> Result<Vec<FrameObservation>, TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(TraceError::BadHeader { expected: TRACE_HEADER }),
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if i == 1 && line.starts_with("t_us,") {
            continue; // column header
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad(i, format!("expected 7 fields, got {}", cols.len())));
        }
        let t = cols[0].parse::<u64>().map_err(|e| bad(i, format!("t_us: {e}")))?;
        let channel = cols[1].parse::<u8>().map_err(|e| bad(i, format!("channel: {e}")))?;
        let addr1: Mac = cols[2].parse().map_err(|e| bad(i, format!("addr1: {e}")))?;
        let addr2: Mac = cols[3].parse().map_err(|e| bad(i, format!("addr2: {e}")))?;
        let kind = match cols[4] {
            "data" => FrameKind::Data,
            "mgmt" => FrameKind::Mgmt,
            "ctrl" => FrameKind::Ctrl,
            other => return Err(bad(i, format!("unknown frame kind `{other}`"))),
        };
        let len = cols[5].parse::<u32>().map_err(|e| bad(i, format!("len: {e}")))?;
        let amsdu = cols[6].parse::<bool>().map_err(|e| bad(i, format!("amsdu: {e}")))?;
        frames.push(FrameObservation {
            addr1,
            addr2,
            channel,
            observable_len: len,
            t: VirtualTime(t),
            kind,
            amsdu,
        });
    }
    Ok(frames)
}

/// One transmitted probe with what came back in its window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeRecord {
    pub t_us: u64,
    pub phase: String,
    pub guess: u64,
    pub kind: String,
    pub seq: u32,
    pub ack: u32,
    pub payload_len: u32,
    pub response: String,
}

pub fn format_probe_log(records: &[ProbeRecord]) -> String {
    let mut out = String::new();
    out.push_str(PROBES_HEADER);
    out.push('\n');
    out.push_str("t_us,phase,guess,kind,seq,ack,payload_len,response\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t_us, r.phase, r.guess, r.kind, r.seq, r.ack, r.payload_len, r.response
        )
        .unwrap();
    }
    out
}

pub fn write_probe_log(path: &Path, records: &[ProbeRecord]) -> Result<(), TraceError> {
    fs::write(path, format_probe_log(records))?;
    Ok(())
}

pub fn parse_probe_log(text: &str) -> Result<Vec<ProbeRecord>, TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PROBES_HEADER => {}
        _ => return Err(TraceError::BadHeader { expected: PROBES_HEADER }),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if i == 1 && line.starts_with("t_us,") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(bad(i, format!("expected 8 fields, got {}", cols.len())));
        }
        records.push(ProbeRecord {
            t_us: cols[0].parse().map_err(|e| bad(i, format!("t_us: {e}")))?,
            phase: cols[1].to_string(),
            guess: cols[2].parse().map_err(|e| bad(i, format!("guess: {e}")))?,
            kind: cols[3].to_string(),
            seq: cols[4].parse().map_err(|e| bad(i, format!("seq: {e}")))?,
            ack: cols[5].parse().map_err(|e| bad(i, format!("ack: {e}")))?,
            payload_len: cols[6].parse().map_err(|e| bad(i, format!("payload_len: {e}")))?,
            response: cols[7].to_string(),
        });
    }
    Ok(records)
}

/// key = value lines emitted in key order.
pub fn format_summary(fields: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for (k, v) in fields {
        writeln!(out, "{k} = {v}").unwrap();
    }
    out
}

pub fn write_summary(path: &Path, fields: &BTreeMap<String, String>) -> Result<(), TraceError> {
    fs::write(path, format_summary(fields))?;
    Ok(())
}

pub fn parse_summary(text: &str) -> Result<BTreeMap<String, String>, TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SUMMARY_HEADER => {}
        _ => return Err(TraceError::BadHeader { expected: SUMMARY_HEADER }),
    }
    let mut fields = BTreeMap::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(i, "expected `key = value`"))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(fields)
}

/// One row of a parameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: String,
    pub trial: u32,
    pub seed: u64,
    pub outcome: String,
    pub probes: u64,
    pub bytes: u64,
    pub time_us: u64,
}

pub fn format_sweep(axis: &str, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    writeln!(out, "{axis},trial,seed,outcome,probes,bytes,time_us").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.axis_value, r.trial, r.seed, r.outcome, r.probes, r.bytes, r.time_us
        )
        .unwrap();
    }
    out
}

pub fn write_sweep(path: &Path, axis: &str, rows: &[SweepRow]) -> Result<(), TraceError> {
    fs::write(path, format_sweep(axis, rows))?;
    Ok(())
}
