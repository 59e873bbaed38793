//! Rendering of benchmark reports.

use std::io::Write;

use serde::Serialize;

use fogchain_core::OpKind;

use crate::bench::BenchmarkReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    benchmark: String,
    op_kind: &'static str,
    confirmed: u64,
    failed: u64,
    gas_total: u64,
    gas_avg_exact: &'a str,
    gas_avg: f64,
    usd_cost: f64,
}

/// CSV has one row per operation kind, including kinds never submitted.
pub fn render<W: Write>(report: &BenchmarkReport, format: Format, out: W) -> std::io::Result<()> {
    match format {
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for op in OpKind::ALL {
                let counts = report.tx_count.get(&op).copied().unwrap_or_default();
                let gas = report.gas_avg.get(&op);
                w.serialize(CsvRow {
                    benchmark: report.benchmark.to_string(),
                    op_kind: op.as_str(),
                    confirmed: counts.confirmed,
                    failed: counts.failed,
                    gas_total: gas.map_or(0, |g| g.total),
                    gas_avg_exact: gas.map_or("0", |g| g.exact.as_str()),
                    gas_avg: gas.map_or(0.0, |g| g.value),
                    usd_cost: report.usd_cost.get(&op).copied().unwrap_or(0.0),
                })
                .map_err(std::io::Error::other)?;
            }
            w.flush()
        }
    }
}
