//! Result records and their jsonl, csv and svg renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Format;
use crate::CliError;

/// One self-describing output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub experiment: String,
    /// Seconds since the Unix epoch; the only field that varies between reruns.
    pub timestamp: u64,
    pub config_hash: String,
    pub seed: u64,
    pub stream: String,
    pub payload: serde_json::Value,
}

/// A flat table for csv output; the header is fixed even when there are no rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Empirical tail curve with its Wilson band and the bound it is compared to.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePlot {
    pub title: String,
    pub thresholds: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub band: Vec<(f64, f64)>,
    pub bound: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPlot {
    pub title: String,
    /// `(lo, hi, count)` per bin.
    pub bins: Vec<(f64, f64, usize)>,
    /// Vertical reference lines (threshold, predicted scale).
    pub markers: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plot {
    Curve(CurvePlot),
    Histogram(HistogramPlot),
}

/// Everything a command produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub command: String,
    pub records: Vec<ResultRecord>,
    pub table: Table,
    pub plots: Vec<Plot>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn jsonl(records: &[ResultRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialise"));
        out.push('\n');
    }
    out
}

pub fn csv(table: &Table) -> Result<String, CliError> {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    let fail = |e: ::csv::Error| CliError::Io(format!("csv: {e}"));
    w.write_record(&table.header).map_err(fail)?;
    for row in &table.rows {
        w.write_record(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
        let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 - 0.5, y0 + 0.5) };
        Self { x0, x1, y0, y1 }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <title>{}</title>\n\
         <rect class=\"frame\" x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        escape(title),
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One `circle` per point, one `line.band` per Wilson interval and a
/// `polyline.bound` for the bound.
pub fn svg_curve(plot: &CurvePlot) -> String {
    let xmax = plot.thresholds.iter().copied().fold(0.0, f64::max);
    let xmin = plot.thresholds.iter().copied().fold(xmax, f64::min);
    let f = Frame::new(xmin, xmax, 0.0, 1.0);
    let mut out = String::new();
    svg_open(&mut out, &plot.title);
    let pts: Vec<String> = plot
        .thresholds
        .iter()
        .zip(&plot.bound)
        .map(|(t, b)| format!("{:.2},{:.2}", f.x(*t), f.y(b.min(1.0))))
        .collect();
    let _ = writeln!(out, "<polyline class=\"bound\" fill=\"none\" stroke=\"#c33\" points=\"{}\"/>", pts.join(" "));
    for (i, t) in plot.thresholds.iter().enumerate() {
        let (lo, hi) = plot.band[i];
        let x = f.x(*t);
        let _ = writeln!(
            out,
            "<line class=\"band\" x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#36c\"/>",
            f.y(lo),
            f.y(hi)
        );
        let _ = writeln!(out, "<circle class=\"point\" cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#000\"/>", f.y(plot.p_hat[i]));
    }
    out.push_str("</svg>\n");
    out
}

/// One `rect.bin` per bin and one `line.marker` per reference value.
pub fn svg_histogram(plot: &HistogramPlot) -> String {
    let mut xmin = plot.bins.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let mut xmax = plot.bins.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    for (_, v) in &plot.markers {
        xmin = xmin.min(*v);
        xmax = xmax.max(*v);
    }
    if !xmin.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    let top = plot.bins.iter().map(|b| b.2).max().unwrap_or(0).max(1) as f64;
    let f = Frame::new(xmin, xmax, 0.0, top);
    let mut out = String::new();
    svg_open(&mut out, &plot.title);
    for (lo, hi, count) in &plot.bins {
        let (x0, x1) = (f.x(*lo), f.x(*hi));
        let y = f.y(*count as f64);
        let _ = writeln!(
            out,
            "<rect class=\"bin\" x=\"{x0:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#8ab\"/>",
            (x1 - x0).max(1.0),
            f.y(0.0) - y
        );
    }
    for (label, v) in &plot.markers {
        let x = f.x(*v);
        let _ = writeln!(
            out,
            "<line class=\"marker\" x1=\"{x:.2}\" y1=\"{MARGIN}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#c33\"><title>{}</title></line>",
            HEIGHT - MARGIN,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes the report in one format and returns the files written.
pub fn emit_report(report: &Report, format: Format, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let stem = &report.command;
    match format {
        Format::Jsonl => {
            let path = dir.join(format!("{stem}.records.jsonl"));
            write_file(&path, &jsonl(&report.records))?;
            Ok(vec![path])
        }
        Format::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            write_file(&path, &csv(&report.table)?)?;
            Ok(vec![path])
        }
        Format::Svg => {
            let mut written = Vec::new();
            for (i, plot) in report.plots.iter().enumerate() {
                let path = dir.join(format!("{stem}.{i}.svg"));
                let text = match plot {
                    Plot::Curve(c) => svg_curve(c),
                    Plot::Histogram(h) => svg_histogram(h),
                };
                write_file(&path, &text)?;
                written.push(path);
            }
            Ok(written)
        }
    }
}
