//! Deterministic report emission: CSV and JSON metric streams, BO trace
//! CSVs, and a flat SVG line-chart export for quick inspection.
//!
//! Rows are sorted by (experiment, function, model, x, metric, seed) and
//! floats print shortest-round-trip, so identical records always produce
//! byte-identical files.

use std::fs;
use std::path::Path;

use super::{BoTraceRow, ExperimentError, MetricRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn sorted(records: &[MetricRecord]) -> Vec<&MetricRecord> {
    let mut rows: Vec<&MetricRecord> = records.iter().collect();
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_report_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from("experiment,function_id,model,x,metric,value,dispersion,seed\n");
    for r in sorted(records) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.function_id,
            r.model,
            r.x,
            r.metric,
            opt(r.value),
            opt(r.dispersion),
            r.seed
        ));
    }
    out
}

fn format_report_json(records: &[MetricRecord]) -> String {
    let rows: Vec<&MetricRecord> = sorted(records);
    let mut text = serde_json::to_string_pretty(&rows).expect("serializable records");
    text.push('\n');
    text
}

pub fn parse_report_json(text: &str) -> Result<Vec<MetricRecord>, ExperimentError> {
    serde_json::from_str(text).map_err(|e| ExperimentError::InvalidConfig {
        detail: format!("bad report json: {e}"),
    })
}

/// Write the records to `path`; identical records give identical bytes.
pub fn emit_report(
    records: &[MetricRecord],
    path: &Path,
    format: ReportFormat,
) -> Result<(), ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::EmptyReport);
    }
    let text = match format {
        ReportFormat::Csv => format_report_csv(records),
        ReportFormat::Json => format_report_json(records),
    };
    fs::write(path, text).map_err(|source| ExperimentError::IoFailure {
        path: path.display().to_string(),
        source,
    })
}

/// `strategy,seed,iteration,molecule_id,true_score,best_so_far`.
pub fn format_bo_trace_csv(rows: &[BoTraceRow]) -> String {
    let mut sorted: Vec<&BoTraceRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.strategy.as_str(), a.seed, a.iteration).cmp(&(b.strategy.as_str(), b.seed, b.iteration))
    });
    let mut out = String::from("strategy,seed,iteration,molecule_id,true_score,best_so_far\n");
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.strategy, r.seed, r.iteration, r.molecule_id, r.true_score, r.best_so_far
        ));
    }
    out
}

pub fn write_bo_trace_csv(path: &Path, rows: &[BoTraceRow]) -> Result<(), ExperimentError> {
    fs::write(path, format_bo_trace_csv(rows)).map_err(|source| ExperimentError::IoFailure {
        path: path.display().to_string(),
        source,
    })
}

/// Minimal line-chart SVG: one polyline per named series over shared axes.
pub fn write_svg_lines(
    path: &Path,
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<(), ExperimentError> {
    fs::write(path, render_svg_lines(title, series)).map_err(|source| {
        ExperimentError::IoFailure {
            path: path.display().to_string(),
            source,
        }
    })
}

pub(crate) fn render_svg_lines(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let points: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    ));
    svg.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{x0}</text>\n",
        H - MARGIN + 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{x1}</text>\n",
        W - MARGIN,
        H - MARGIN + 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y0}</text>\n",
        MARGIN - 4.0,
        H - MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y1}</text>\n",
        MARGIN - 4.0,
        MARGIN + 4.0
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            MARGIN + 6.0,
            MARGIN + 14.0 + 13.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
