//! Result files and the consolidated report.
//!
//! Per experiment `<id>`:
//! - `<id>_summary.csv`: `experiment,metric,value,target,lower,upper,pass`
//! - `<id>_<plot>.csv`: one plot series, header row gives the columns
//! - `<id>_trajectories.jsonl`: one tagged trajectory record per line
//!
//! `report.csv` merges every summary found in a directory.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Granularity;
use super::{ExperimentOutput, HarnessError, Metric};

pub const SUMMARY_HEADER: &str = "experiment,metric,value,target,lower,upper,pass";

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn pass_cell(m: &Metric) -> &'static str {
    match m.pass() {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "",
    }
}

/// Summary CSV text. Fixed formatting keeps it byte-stable across runs.
pub fn summary_csv(out: &ExperimentOutput) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for m in &out.metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            out.id,
            m.name,
            num(Some(m.value)),
            num(m.target),
            num(m.lower),
            num(m.upper),
            pass_cell(m)
        );
    }
    s
}

/// Writes summary, plot, and trajectory files; returns the paths written.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path, granularity: Granularity) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let summary = dir.join(format!("{}_summary.csv", out.id));
    fs::write(&summary, summary_csv(out))?;
    written.push(summary);
    for plot in &out.plots {
        let path = dir.join(format!("{}_{}.csv", out.id, plot.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&plot.columns)?;
        for row in &plot.rows {
            w.write_record(row.iter().map(|v| format!("{v:.6}")))?;
        }
        w.flush()?;
        written.push(path);
    }
    if granularity != Granularity::None && !out.trajectories.is_empty() {
        let path = dir.join(format!("{}_trajectories.jsonl", out.id));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for t in &out.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// One merged summary line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    pub target: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: String,
}

impl ReportRow {
    /// Pass/fail recomputed from the raw value and band.
    pub fn recomputed_pass(&self) -> Option<bool> {
        Metric::bounded(self.metric.clone(), self.value, self.target, self.lower, self.upper).pass()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn failures(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.pass == "fail").collect()
    }
}

/// Merges every `*_summary.csv` in `dir` into `dir/report.csv`.
pub fn report(dir: &Path) -> Result<Report, HarnessError> {
    let mut rep = Report::default();
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_summary.csv")))
            .collect(),
        Err(e) => {
            rep.warnings.push(format!("cannot read {}: {e}", dir.display()));
            return Ok(rep);
        }
    };
    files.sort();
    if files.is_empty() {
        rep.warnings.push(format!("no experiment summaries in {}", dir.display()));
    }
    for path in &files {
        let mut r = csv::Reader::from_path(path)?;
        for row in r.deserialize::<ReportRow>() {
            match row {
                Ok(row) => rep.rows.push(row),
                Err(e) => rep.warnings.push(format!("{}: {e}", path.display())),
            }
        }
    }
    if fs::metadata(dir).is_ok() {
        let mut text = String::from(SUMMARY_HEADER);
        text.push('\n');
        for r in &rep.rows {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{}",
                r.experiment,
                r.metric,
                num(Some(r.value)),
                num(r.target),
                num(r.lower),
                num(r.upper),
                r.pass
            );
        }
        fs::write(dir.join("report.csv"), text)?;
    }
    Ok(rep)
}
