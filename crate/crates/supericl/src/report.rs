//! Writing run outputs.
//!
//! A run directory holds `report.json` (aggregates and records),
//! `records.csv`, `histogram.csv` (`bin_lower,count_all,count_overridden`),
//! `config.json` (the resolved config snapshot), `stats.json` (cache and call
//! counts, kept out of the report so reruns compare byte-for-byte) and, when
//! requested, `prompts.jsonl`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use supericl_core::{EvalReport, PredictionRecord};

use crate::error::{HarnessError, Result};
use crate::runner::{RunArtifact, RunFailure};

pub const REPORT_FILE: &str = "report.json";
pub const FAILURE_MARKER: &str = "FAILED";

/// Fails unless `dir` is free for a new run or `overwrite` is set.
pub fn prepare_output_dir(dir: &Path, marker: &str, overwrite: bool) -> Result<()> {
    if dir.join(marker).exists() && !overwrite {
        return Err(HarnessError::OutputExists(dir.into()));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let stale = dir.join(FAILURE_MARKER);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| HarnessError::io(&stale, e))?;
    }
    Ok(())
}

pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write(path, s)
}

pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let csv_err = |e: csv::Error| HarnessError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct RecordRow<'a> {
    id: &'a str,
    gold: &'a str,
    plugin_label: Option<&'a str>,
    plugin_confidence: Option<f64>,
    final_label: Option<&'a str>,
    correct: bool,
    overridden: bool,
    explanation: Option<&'a str>,
    raw_completion: &'a str,
}

fn record_rows(records: &[PredictionRecord]) -> impl Iterator<Item = RecordRow<'_>> {
    records.iter().map(|r| RecordRow {
        id: &r.id,
        gold: &r.gold,
        plugin_label: r.plugin_pred.as_ref().map(|p| p.label.as_str()),
        plugin_confidence: r.plugin_pred.as_ref().map(|p| p.confidence),
        final_label: r.final_label.as_deref(),
        correct: r.is_correct(),
        overridden: r.overridden,
        explanation: r.explanation.as_deref(),
        raw_completion: &r.raw_completion,
    })
}

#[derive(Serialize)]
struct HistogramRow {
    bin_lower: f64,
    count_all: u64,
    count_overridden: u64,
}

/// Writes every file of a completed run into `dir`.
pub fn emit_report(artifact: &RunArtifact, dir: &Path, overwrite: bool) -> Result<()> {
    prepare_output_dir(dir, REPORT_FILE, overwrite)?;
    write(&dir.join(REPORT_FILE), report_json(&artifact.report))?;
    write_csv(
        &dir.join("records.csv"),
        record_rows(&artifact.report.records),
    )?;
    write_csv(
        &dir.join("histogram.csv"),
        artifact.report.histogram.iter().map(|b| HistogramRow {
            bin_lower: b.lower,
            count_all: b.count_all,
            count_overridden: b.count_overridden,
        }),
    )?;
    write_json(&dir.join("config.json"), &artifact.config)?;
    write_json(
        &dir.join("stats.json"),
        &serde_json::json!({ "context_ids": artifact.context_ids, "stats": artifact.stats }),
    )?;
    let prompts = dir.join("prompts.jsonl");
    match &artifact.prompts {
        Some(dumps) => {
            let mut f = fs::File::create(&prompts).map_err(|e| HarnessError::io(&prompts, e))?;
            for d in dumps {
                let line = serde_json::to_string(d).expect("prompt serializes");
                writeln!(f, "{line}").map_err(|e| HarnessError::io(&prompts, e))?;
            }
        }
        None if prompts.exists() => {
            fs::remove_file(&prompts).map_err(|e| HarnessError::io(&prompts, e))?
        }
        None => {}
    }
    Ok(())
}

/// Flushes the records of a failed run next to a failure marker.
pub fn emit_failure(failure: &RunFailure, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join("partial_records.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    for r in &failure.partial {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| HarnessError::io(&path, e))?;
    }
    write(&dir.join(FAILURE_MARKER), format!("{}\n", failure.error))
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::MalformedRecord {
        path,
        line: e.line(),
        reason: e.to_string(),
    })
}

/// One-paragraph human summary of a report.
pub fn summarize(report: &EvalReport) -> String {
    let pct = |v: f64| format!("{:.2}%", v * 100.0);
    let mut s = format!("n={} accuracy={}", report.n, pct(report.accuracy));
    if let Some(m) = report.mcc {
        s.push_str(&format!(" mcc={m:.4}"));
    }
    s.push_str(&format!(" overridden={}", pct(report.pct_overridden)));
    if let Some(a) = report.overridden_accuracy {
        s.push_str(&format!(" overridden_accuracy={}", pct(a)));
    }
    s
}
