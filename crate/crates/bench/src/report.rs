//! Output files. Everything except the timings file is a pure function of
//! the report, so identical seeds give identical bytes.
//!
//! - `metrics.json`: config echo, recalls, cache stats, needle ground truth.
//! - `heatmap-NNN.csv`: one per repetition; rows are decode steps, columns
//!   block ids, cells the number of layers selecting the block.
//! - `trace.jsonl`: one selection record per (repetition, step, layer).
//! - `timings.json`: wall clock per phase.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qllm_core::block_memory::BlockScore;
use qllm_core::engine::{Phase, SelectionRecord};
use serde::{Deserialize, Serialize};

use crate::experiment::{RunReport, Timings};

pub const SCHEMA_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, thiserror::Error)]
#[error("cannot write {}: {source}", path.display())]
pub struct ReportError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

pub fn heatmap_file(rep: usize) -> String {
    format!("heatmap-{rep:03}.csv")
}

#[derive(Serialize)]
struct Metrics<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a RunReport,
    heatmap_files: Vec<String>,
    trace_file: &'static str,
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub schema_version: u32,
    pub repetition: usize,
    pub seed: u64,
    pub step: u64,
    pub phase: Phase,
    pub layer: usize,
    pub selected: Vec<u64>,
    pub scores: Vec<BlockScore>,
    pub reused: bool,
}

impl TraceLine {
    pub fn new(repetition: usize, seed: u64, r: &SelectionRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            repetition,
            seed,
            step: r.step,
            phase: r.phase,
            layer: r.layer,
            selected: r.selected.clone(),
            scores: r.scores.clone(),
            reused: r.reused,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ReportError> {
    File::create(path).map(BufWriter::new).map_err(|source| ReportError { path: path.into(), source })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ReportError + '_ {
    move |source| ReportError { path: path.into(), source }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path)(e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_heatmap(path: &Path, grid: &[Vec<u32>], n_blocks: usize) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| io_err(path)(e.into());
    let mut header = vec!["schema_version".to_string(), "step".to_string()];
    header.extend((0..n_blocks).map(|b| format!("block_{b}")));
    w.write_record(&header).map_err(csv_err)?;
    for (step, row) in grid.iter().enumerate() {
        let mut rec = vec![SCHEMA_VERSION.to_string(), step.to_string()];
        rec.extend(row.iter().map(u32::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trace(path: &Path, report: &RunReport) -> Result<(), ReportError> {
    let mut w = create(path)?;
    for (rep, r) in report.repetitions.iter().enumerate() {
        for record in &r.trace {
            let line = serde_json::to_string(&TraceLine::new(rep, r.seed, record)).expect("trace serializes");
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Parse a `trace.jsonl` body.
pub fn read_trace(text: &str) -> serde_json::Result<Vec<TraceLine>> {
    text.lines().filter(|l| !l.is_empty()).map(serde_json::from_str).collect()
}

/// Write metrics, heatmaps and trace into `dir`, creating it if needed.
/// Returns the paths written.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let heatmap_files: Vec<String> = (0..report.repetitions.len()).map(heatmap_file).collect();
    for (r, name) in report.repetitions.iter().zip(&heatmap_files) {
        let path = dir.join(name);
        write_heatmap(&path, &r.heatmap, r.blocks_admitted)?;
        written.push(path);
    }
    let path = dir.join(TRACE_FILE);
    write_trace(&path, report)?;
    written.push(path);
    let path = dir.join(METRICS_FILE);
    let metrics = Metrics { schema_version: SCHEMA_VERSION, report, heatmap_files, trace_file: TRACE_FILE };
    write_json(&path, &metrics)?;
    written.push(path);
    Ok(written)
}

#[derive(Serialize)]
struct TimingRow<'a> {
    seed: u64,
    #[serde(flatten)]
    timings: &'a Timings,
}

/// Wall-clock file; not byte-stable across runs.
pub fn emit_timings(report: &RunReport, dir: &Path) -> Result<PathBuf, ReportError> {
    #[derive(Serialize)]
    struct File<'a> {
        schema_version: u32,
        repetitions: Vec<TimingRow<'a>>,
    }
    let rows = report.repetitions.iter().map(|r| TimingRow { seed: r.seed, timings: &r.timings }).collect();
    let path = dir.join(TIMINGS_FILE);
    write_json(&path, &File { schema_version: SCHEMA_VERSION, repetitions: rows })?;
    Ok(path)
}
