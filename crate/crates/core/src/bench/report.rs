use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde_json::json;

use super::CohortReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json-lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            _ => Err(Error::Usage(format!(
                "unknown report format '{s}'; expected markdown, csv or json-lines"
            ))),
        }
    }
}

/// Rounds to `digits` decimals, sending exact halves to the even neighbour.
pub fn round_half_even(x: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits);
    (x * scale).round_ties_even() / scale
}

fn two(x: f64) -> String {
    format!("{:.2}", round_half_even(x, 2))
}

const CSV_COLUMNS: [&str; 9] = [
    "name",
    "params_millions",
    "inference_ms",
    "peak_memory_mb",
    "resource_cost",
    "efficiency_score",
    "auc",
    "inference_p10_ms",
    "inference_p90_ms",
];

/// Renders rows in table order: model, params, inference time, peak memory,
/// resource cost, efficiency score. Markdown is rounded to two decimals;
/// the machine formats keep full precision.
pub fn render_report(report: &CohortReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = writeln!(out, "Protocol: {}. Lambda = {}.\n", report.protocol, report.lambda);
            out.push_str(
                "| Model | Params (M) | Inference Time (ms) | Peak Memory (MB) | Resource Cost | Efficiency Score |\n",
            );
            out.push_str("|---|---:|---:|---:|---:|---:|\n");
            for r in &report.rows {
                let (e, m) = (&r.efficiency, &r.efficiency.raw);
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    e.name,
                    two(m.params_millions),
                    two(m.inference_ms),
                    two(m.peak_memory_mb),
                    two(e.resource_cost),
                    two(e.efficiency_score)
                );
            }
        }
        ReportFormat::Csv => {
            let _ = writeln!(out, "# protocol: {}", report.protocol);
            let _ = writeln!(out, "# lambda: {}", report.lambda);
            let mut w = csv::Writer::from_writer(Vec::new());
            let _ = w.write_record(CSV_COLUMNS);
            for r in &report.rows {
                let (e, m) = (&r.efficiency, &r.efficiency.raw);
                let pct = |f: fn(&super::LatencyStats) -> f64| {
                    r.bench.as_ref().map_or(String::new(), |b| f(&b.latency).to_string())
                };
                let _ = w.write_record([
                    e.name.clone(),
                    m.params_millions.to_string(),
                    m.inference_ms.to_string(),
                    m.peak_memory_mb.to_string(),
                    e.resource_cost.to_string(),
                    e.efficiency_score.to_string(),
                    m.auc.to_string(),
                    pct(|l| l.p10_ms),
                    pct(|l| l.p90_ms),
                ]);
            }
            out.push_str(&String::from_utf8_lossy(&w.into_inner().unwrap_or_default()));
        }
        ReportFormat::JsonLines => {
            let _ = writeln!(out, "{}", json!({ "protocol": report.protocol, "lambda": report.lambda }));
            for r in &report.rows {
                let (e, m) = (&r.efficiency, &r.efficiency.raw);
                let mut row = json!({
                    "name": e.name,
                    "params_millions": m.params_millions,
                    "inference_ms": m.inference_ms,
                    "peak_memory_mb": m.peak_memory_mb,
                    "resource_cost": e.resource_cost,
                    "efficiency_score": e.efficiency_score,
                    "auc": m.auc,
                });
                if let Some(b) = &r.bench {
                    row["inference_p10_ms"] = json!(b.latency.p10_ms);
                    row["inference_p90_ms"] = json!(b.latency.p90_ms);
                    row["runs"] = json!(b.runs);
                    row["warmup"] = json!(b.warmup);
                    row["input_shape"] = json!(b.input_shape);
                    row["storage"] = json!(b.storage.as_str());
                }
                let _ = writeln!(out, "{row}");
            }
        }
    }
    out
}

pub fn write_report(path: &Path, text: &str) -> Result<()> {
    crate::fsutil::write_atomic(path, text.as_bytes())
}
