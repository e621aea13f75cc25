//! Trace and summary CSVs, and the text table.
//!
//! Every CSV starts with `# key=value` lines: generator, version, config
//! hash, the optimal value used for errors, and the full configuration.
//! Feeding those lines back to [`ExperimentSpec::apply_text`] reproduces the
//! run.

use crate::config::{ExperimentSpec, KEYS};
use crate::experiment::RunOutcome;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use stiefel_svrg::rng::GENERATOR_NAME;
use stiefel_svrg::RunTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(spec: &ExperimentSpec, f_star: f64) -> Self {
        let mut entries = vec![
            ("generator".to_string(), GENERATOR_NAME.to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("config_hash".to_string(), spec.config_hash()),
            ("f_star".to_string(), f_star.to_string()),
        ];
        for line in spec.canonical().lines() {
            let (k, v) = line.split_once('=').unwrap();
            entries.push((k.to_string(), v.to_string()));
        }
        Self { entries }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// The experiment described by the header.
    pub fn spec(&self) -> Result<ExperimentSpec, crate::config::ConfigError> {
        let mut spec = ExperimentSpec::default();
        for (k, v) in &self.entries {
            if KEYS.contains(&k.as_str()) {
                spec.set(k, v)?;
            }
        }
        Ok(spec)
    }

    fn write(&self, w: &mut impl Write) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "# {k}={v}")?;
        }
        Ok(())
    }

    fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }
}

/// Split leading `# key=value` lines from the CSV body.
fn split_header(text: &str) -> (Header, String) {
    let mut entries = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(h) => {
                if let Some((k, v)) = h.trim().split_once('=') {
                    entries.push((k.to_string(), v.to_string()));
                }
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    (Header { entries }, body)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub run_id: usize,
    pub epoch: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step_size: f64,
    pub ifo_calls: u64,
    pub ro_calls: u64,
    pub seconds: f64,
}

fn to_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn trace_rows(run_id: usize, trace: &RunTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            run_id,
            epoch: r.epoch,
            f: r.f,
            grad_norm: r.grad_norm,
            step_size: r.step_size,
            ifo_calls: r.ifo_calls,
            ro_calls: r.ro_calls,
            seconds: r.seconds,
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &Header, rows: &[T]) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    header.write(&mut f)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r).map_err(to_io)?;
    }
    w.flush()
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<(Header, Vec<T>)> {
    let mut text = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    let (header, body) = split_header(&text);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let rows = rdr.deserialize().collect::<Result<Vec<T>, _>>().map_err(to_io)?;
    Ok((header, rows))
}

pub fn write_trace(path: &Path, header: &Header, run_id: usize, trace: &RunTrace) -> io::Result<()> {
    write_csv(path, header, &trace_rows(run_id, trace))
}

pub fn read_trace(path: &Path) -> io::Result<(Header, Vec<TraceRow>)> {
    read_csv(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: usize,
    pub seed: u64,
    pub status: String,
    pub epochs: Option<usize>,
    pub grad_norm: Option<f64>,
    pub error: Option<f64>,
    pub recovery: Option<f64>,
    pub seconds: Option<f64>,
}

pub fn write_runs(path: &Path, header: &Header, runs: &[RunOutcome]) -> io::Result<()> {
    let rows: Vec<RunRow> = runs
        .iter()
        .map(|r| match &r.result {
            Ok(res) => {
                let last = res.trace.last();
                RunRow {
                    run_id: r.run_id,
                    seed: r.seed,
                    status: format!("{:?}", res.trace.status),
                    epochs: Some(last.epoch),
                    grad_norm: Some(last.grad_norm),
                    error: Some(res.error),
                    recovery: res.recovery,
                    seconds: Some(last.seconds),
                }
            }
            Err(e) => RunRow {
                run_id: r.run_id,
                seed: r.seed,
                status: format!("failed: {e}"),
                epochs: None,
                grad_norm: None,
                error: None,
                recovery: None,
                seconds: None,
            },
        })
        .collect();
    write_csv(path, header, &rows)
}

/// One table row. Epoch statistics, `nrm_bar`, `err_bar` and `t_bar` are
/// taken over completed runs (those that did not fail with an error); runs
/// that stop at the epoch cap count with the cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub retraction: String,
    pub tau_star: Option<f64>,
    pub runs: usize,
    pub completed: usize,
    pub converged: usize,
    pub epoch_min: usize,
    pub epoch_avg: f64,
    pub epoch_max: usize,
    pub epoch_std: f64,
    pub nrm_bar: f64,
    pub err_bar: f64,
    pub t_bar: f64,
}

impl SummaryRow {
    pub fn from_runs(method: &str, retraction: &str, tau_star: Option<f64>, runs: usize, outcomes: &[RunOutcome]) -> Self {
        let done: Vec<(usize, f64, f64, f64)> = outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .map(|r| {
                let l = r.trace.last();
                (l.epoch, l.grad_norm, r.error, l.seconds)
            })
            .collect();
        let converged = outcomes.iter().filter(|o| o.converged()).count();
        Self::from_parts(method, retraction, tau_star, runs, converged, &done)
    }

    /// From `(epochs, final grad norm, error, seconds)` of each completed run.
    pub fn from_parts(
        method: &str,
        retraction: &str,
        tau_star: Option<f64>,
        runs: usize,
        converged: usize,
        done: &[(usize, f64, f64, f64)],
    ) -> Self {
        let m = done.len();
        let mean = |f: &dyn Fn(&(usize, f64, f64, f64)) -> f64| {
            if m == 0 {
                f64::NAN
            } else {
                done.iter().map(f).sum::<f64>() / m as f64
            }
        };
        let epoch_avg = mean(&|r| r.0 as f64);
        let epoch_std = mean(&|r| (r.0 as f64 - epoch_avg).powi(2)).sqrt();
        Self {
            method: method.to_string(),
            retraction: retraction.to_string(),
            tau_star,
            runs,
            completed: m,
            converged,
            epoch_min: done.iter().map(|r| r.0).min().unwrap_or(0),
            epoch_avg,
            epoch_max: done.iter().map(|r| r.0).max().unwrap_or(0),
            epoch_std,
            nrm_bar: mean(&|r| r.1),
            err_bar: mean(&|r| r.2),
            t_bar: mean(&|r| r.3),
        }
    }
}

pub fn write_summary(path: &Path, header: &Header, rows: &[SummaryRow]) -> io::Result<()> {
    write_csv(path, header, rows)
}

pub fn read_summary(path: &Path) -> io::Result<(Header, Vec<SummaryRow>)> {
    read_csv(path)
}

/// One significant digit with a two-digit exponent, e.g. `7e-11`, `9e-07`.
pub fn fmt_sci1(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.0e}");
    let (mant, exp) = s.split_once('e').unwrap();
    let e: i32 = exp.parse().unwrap();
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

/// Aligned text table and CSV (with header) for the given rows.
pub fn emit_table(rows: &[SummaryRow], header: &Header) -> (String, String) {
    assert!(!rows.is_empty(), "emit_table needs at least one row");
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.retraction.clone(),
                r.tau_star.map_or("-".to_string(), |t| t.to_string()),
                format!("{}/{:.1}/{}/{:.1}", r.epoch_min, r.epoch_avg, r.epoch_max, r.epoch_std),
                fmt_sci1(r.nrm_bar),
                fmt_sci1(r.err_bar),
                format!("{:.2}", r.t_bar),
            ]
        })
        .collect();
    let titles = ["method", "retr.", "tau*", "epoch", "nrm", "err", "t"];
    let mut widths: Vec<usize> = titles.iter().map(|t| t.len()).collect();
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let mut text = String::new();
    let line = |text: &mut String, items: &[&str]| {
        let parts: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        writeln!(text, "{}", parts.join("  ").trim_end()).unwrap();
    };
    line(&mut text, &titles);
    for (c, r) in cells.iter().zip(rows) {
        let items: Vec<&str> = c.iter().map(String::as_str).collect();
        line(&mut text, &items);
        if r.converged < r.runs {
            writeln!(text, "  ({} of {} runs converged, {} completed)", r.converged, r.runs, r.completed).unwrap();
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).unwrap();
    }
    let csv = header.to_text() + &String::from_utf8(w.into_inner().unwrap()).unwrap();
    (text, csv)
}

/// Parse CSV text produced by [`emit_table`].
pub fn parse_summary_csv(text: &str) -> io::Result<(Header, Vec<SummaryRow>)> {
    let (header, body) = split_header(text);
    let rows = csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .map_err(to_io)?;
    Ok((header, rows))
}

/// `key → value` view of a header, for display.
pub fn header_map(h: &Header) -> BTreeMap<&str, &str> {
    h.entries.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
}
