use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::divergence::PerceptionMetric;
use crate::error::{RdpError, Result};
use crate::oracle::McEstimate;

pub const SCHEMA_VERSION: u32 = 1;

/// Leading CSV columns, in order. Per-dimension `D_i, P_i, a_i, w_i` groups
/// follow, then the eigenvalues `lambda_i`, then `status` and `message`.
pub const CSV_LEADING: [&str; 11] =
    ["command", "metric", "s1", "s2", "D", "P", "R_nats", "R_bits", "region", "iterations", "gap_final"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimRecord {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "P")]
    pub p: Option<f64>,
    pub a: Option<f64>,
    pub w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub gaps: Vec<f64>,
    pub lagrangian_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub command: String,
    pub metric: Option<PerceptionMetric>,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    #[serde(rename = "D")]
    pub d: Option<f64>,
    #[serde(rename = "P")]
    pub p: Option<f64>,
    #[serde(rename = "R_nats")]
    pub r_nats: Option<f64>,
    #[serde(rename = "R_bits")]
    pub r_bits: Option<f64>,
    /// Case for scalar runs, convergence status for multivariate runs.
    pub region: Option<String>,
    pub iterations: Option<usize>,
    pub gap_final: Option<f64>,
    pub dims: Vec<DimRecord>,
    /// Source eigenvalues (the variance for scalar runs).
    pub eigenvalues: Vec<f64>,
    pub status: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McEstimate>,
}

impl OutputRecord {
    pub fn new(command: &str, metric: Option<PerceptionMetric>) -> Self {
        Self {
            command: command.to_string(),
            metric,
            s1: None,
            s2: None,
            d: None,
            p: None,
            r_nats: None,
            r_bits: None,
            region: None,
            iterations: None,
            gap_final: None,
            dims: Vec::new(),
            eigenvalues: Vec::new(),
            status: "ok".into(),
            message: String::new(),
            trace: None,
            monte_carlo: None,
        }
    }

    pub fn with_rate(mut self, nats: f64) -> Self {
        self.r_nats = Some(nats);
        self.r_bits = Some(nats / std::f64::consts::LN_2);
        self
    }

    /// Failed row: inputs echoed, numerics left empty.
    pub fn failed(
        command: &str,
        metric: Option<PerceptionMetric>,
        s1: Option<f64>,
        s2: Option<f64>,
        err: &RdpError,
    ) -> Self {
        let mut r = Self::new(command, metric);
        r.s1 = s1;
        r.s2 = s2;
        r.status = err.kind().to_string();
        r.message = err.to_string();
        r
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFile {
    pub schema_version: u32,
    pub records: Vec<OutputRecord>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn csv_header(dims: usize) -> Vec<String> {
    let mut h: Vec<String> = CSV_LEADING.iter().map(|s| s.to_string()).collect();
    for i in 1..=dims {
        for name in ["D", "P", "a", "w"] {
            h.push(format!("{name}_{i}"));
        }
    }
    for i in 1..=dims {
        h.push(format!("lambda_{i}"));
    }
    h.push("status".into());
    h.push("message".into());
    h
}

pub fn write_csv<W: Write>(out: W, records: &[OutputRecord]) -> Result<()> {
    let dims = records.iter().map(|r| r.dims.len().max(r.eigenvalues.len())).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RdpError::Config(format!("failed to write CSV: {e}"));
    w.write_record(csv_header(dims)).map_err(io)?;
    for r in records {
        let mut row = vec![
            r.command.clone(),
            r.metric.map(|m| m.name().to_string()).unwrap_or_default(),
            fmt_opt(r.s1),
            fmt_opt(r.s2),
            fmt_opt(r.d),
            fmt_opt(r.p),
            fmt_opt(r.r_nats),
            fmt_opt(r.r_bits),
            r.region.clone().unwrap_or_default(),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            fmt_opt(r.gap_final),
        ];
        for i in 0..dims {
            match r.dims.get(i) {
                Some(g) => row.extend([g.d.to_string(), fmt_opt(g.p), fmt_opt(g.a), fmt_opt(g.w)]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        for i in 0..dims {
            row.push(fmt_opt(r.eigenvalues.get(i).copied()));
        }
        row.push(r.status.clone());
        row.push(r.message.clone());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| RdpError::Config(format!("failed to write CSV: {e}")))?;
    Ok(())
}

pub fn write_json<W: Write>(out: W, records: &[OutputRecord]) -> Result<()> {
    let file = RecordFile { schema_version: SCHEMA_VERSION, records: records.to_vec() };
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &file)
        .map_err(|e| RdpError::Config(format!("failed to write JSON: {e}")))?;
    writeln!(out).map_err(|e| RdpError::Config(format!("failed to write JSON: {e}")))
}

/// Reads records written by [`write_csv`] or [`write_json`].
pub fn read_records(text: &str) -> Result<Vec<OutputRecord>> {
    if text.trim_start().starts_with('{') {
        let file: RecordFile =
            serde_json::from_str(text).map_err(|e| RdpError::Config(format!("invalid records JSON: {e}")))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(RdpError::Config(format!("unsupported schema version {}", file.schema_version)));
        }
        return Ok(file.records);
    }
    read_csv(text)
}

fn parse_opt<T: std::str::FromStr>(row: &HashMap<&str, &str>, key: &str) -> Result<Option<T>> {
    match row.get(key) {
        None | Some(&"") => Ok(None),
        Some(v) => {
            v.parse().map(Some).map_err(|_| RdpError::Config(format!("cannot parse column '{key}' value '{v}'")))
        }
    }
}

fn read_csv(text: &str) -> Result<Vec<OutputRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let err = |e: csv::Error| RdpError::Config(format!("invalid records CSV: {e}"));
    let headers = rdr.headers().map_err(err)?.clone();
    let leading: Vec<&str> = headers.iter().take(CSV_LEADING.len()).collect();
    if leading != CSV_LEADING {
        return Err(RdpError::Config("CSV header does not match the records format".into()));
    }
    let dims = headers.iter().filter(|h| h.starts_with("lambda_")).count();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(err)?;
        let row: HashMap<&str, &str> = headers.iter().zip(rec.iter()).collect();
        let metric = match row.get("metric") {
            None | Some(&"") => None,
            Some(m) => Some(m.parse::<PerceptionMetric>()?),
        };
        let mut r = OutputRecord::new(row.get("command").copied().unwrap_or_default(), metric);
        r.s1 = parse_opt(&row, "s1")?;
        r.s2 = parse_opt(&row, "s2")?;
        r.d = parse_opt(&row, "D")?;
        r.p = parse_opt(&row, "P")?;
        r.r_nats = parse_opt(&row, "R_nats")?;
        r.r_bits = parse_opt(&row, "R_bits")?;
        r.region = parse_opt(&row, "region")?;
        r.iterations = parse_opt(&row, "iterations")?;
        r.gap_final = parse_opt(&row, "gap_final")?;
        for i in 1..=dims {
            if let Some(d) = parse_opt::<f64>(&row, &format!("D_{i}"))? {
                r.dims.push(DimRecord {
                    d,
                    p: parse_opt(&row, &format!("P_{i}"))?,
                    a: parse_opt(&row, &format!("a_{i}"))?,
                    w: parse_opt(&row, &format!("w_{i}"))?,
                });
            }
            if let Some(l) = parse_opt::<f64>(&row, &format!("lambda_{i}"))? {
                r.eigenvalues.push(l);
            }
        }
        r.status = row.get("status").copied().unwrap_or_default().to_string();
        r.message = row.get("message").copied().unwrap_or_default().to_string();
        out.push(r);
    }
    Ok(out)
}

/// Long-format CSV of optimizer traces: one row per half-step.
pub fn write_trace_csv<W: Write>(out: W, records: &[OutputRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RdpError::Config(format!("failed to write trace CSV: {e}"));
    w.write_record(["s1", "s2", "iteration", "gap", "lagrangian_after_d", "lagrangian_after_p"]).map_err(io)?;
    for r in records {
        let Some(t) = &r.trace else { continue };
        for (i, gap) in t.gaps.iter().enumerate() {
            w.write_record([
                fmt_opt(r.s1),
                fmt_opt(r.s2),
                (i + 1).to_string(),
                gap.to_string(),
                fmt_opt(t.lagrangian_values.get(2 * i).copied()),
                fmt_opt(t.lagrangian_values.get(2 * i + 1).copied()),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| RdpError::Config(format!("failed to write trace CSV: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<OutputRecord> {
        let mut ok = OutputRecord::new("multivar", Some(PerceptionMetric::Wasserstein2Sq)).with_rate(0.1 + 0.2);
        ok.s1 = Some(0.5);
        ok.s2 = Some(0.5);
        ok.d = Some(1.0 / 3.0);
        ok.p = Some(1e-17);
        ok.region = Some("converged".into());
        ok.iterations = Some(12);
        ok.gap_final = Some(3.5e-10);
        ok.dims = vec![
            DimRecord { d: 0.25, p: Some(0.01), a: Some(0.6), w: Some(0.1) },
            DimRecord { d: 0.5, p: Some(0.0), a: Some(0.3), w: Some(0.2) },
        ];
        ok.eigenvalues = vec![3.0, 1.0];
        let bad = OutputRecord::failed(
            "multivar",
            Some(PerceptionMetric::KlDirect),
            Some(1.0),
            Some(0.0),
            &RdpError::Bracket("no root, sorry".into()),
        );
        vec![ok, bad]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let recs = sample();
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "command,metric,s1,s2,D,P,R_nats,R_bits,region,iterations,gap_final,\
             D_1,P_1,a_1,w_1,D_2,P_2,a_2,w_2,lambda_1,lambda_2,status,message\n"
        ));
        assert_eq!(read_records(&text).unwrap(), recs);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let recs = sample();
        let mut buf = Vec::new();
        write_json(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert_eq!(read_records(&text).unwrap(), recs);
    }

    #[test]
    fn bits_follow_nats() {
        let r = OutputRecord::new("scalar", None).with_rate(2.0);
        assert!((r.r_bits.unwrap() - 2.0 / std::f64::consts::LN_2).abs() < 1e-12);
    }
}
