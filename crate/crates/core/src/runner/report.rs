use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::{write_file, Exclusion, PredictionRecord, RunError, RunManifest, RunMode, RunResult};
use crate::corpus::{EvalCase, TranscriptKind};
use crate::metrics::{bootstrap_se, full_report, rmse, write_item_csv, MetricsReport, ReportConfig};
use crate::parser::PredictedAssessment;
use crate::prompt::ContextStrategy;
use crate::scale::ScaleDefinition;

/// Published human inter-rater agreement, shown first in every table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub label: &'static str,
    pub pearson_total: f64,
    pub median_concordance: f64,
    pub n_items_below_threshold: usize,
    pub icc: f64,
}

pub const BENCHMARK: BenchmarkRow = BenchmarkRow {
    label: "Hafkenscheid et al. 1993",
    pearson_total: 0.62,
    median_concordance: 0.83,
    n_items_below_threshold: 3,
    icc: 0.70,
};

/// Total-score RMSE observed on the original clinical cohort.
pub const REFERENCE_RMSE: [(&str, f64); 2] = [("1-shot", 6.32), ("last_score", 7.19)];

pub const STRATEGY_CSV_HEADER: [&str; 6] = ["label", "strategy", "n_cases", "n_failed", "rmse", "rmse_bootstrap_se"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Table, ReportFormat::Csv, ReportFormat::Json];
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (expected table, csv or json)")),
        }
    }
}

/// Metrics for one group of predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    /// `psychs`, `en/open`, `all`, or a strategy label.
    pub label: String,
    pub strategy: ContextStrategy,
    pub n_cases: usize,
    pub n_failed: usize,
    pub rmse: Option<f64>,
    pub rmse_bootstrap_se: Option<f64>,
    pub report: Option<MetricsReport>,
    /// Why the full report could not be computed.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub mode: RunMode,
    pub concordance_threshold: f64,
    pub benchmark: BenchmarkRow,
    pub reference_rmse: Vec<(String, f64)>,
    pub rows: Vec<ReportRow>,
    pub exclusions: Vec<Exclusion>,
}

fn row(
    label: String,
    strategy: ContextStrategy,
    records: &[&PredictionRecord],
    scale: &ScaleDefinition,
    config: &ReportConfig,
) -> ReportRow {
    let mut pairs: Vec<(EvalCase, PredictedAssessment)> = records
        .iter()
        .filter_map(|r| r.prediction().map(|p| (r.case(), p.clone())))
        .collect();
    let n_failed = records.len() - pairs.len();
    pairs.sort_by_key(|a| a.0.key());
    let totals: Vec<(f64, f64)> = pairs
        .iter()
        .map(|(c, p)| (c.truth.total() as f64, p.total() as f64))
        .collect();

    let (report, skipped) = if pairs.is_empty() {
        (None, Some("no scored cases".to_string()))
    } else {
        match full_report(&pairs, scale, config) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let (rmse_value, se) = match &report {
        Some(r) => (Some(r.rmse), Some(r.rmse_bootstrap_se)),
        None if !totals.is_empty() => (
            rmse(&totals).ok(),
            bootstrap_se(&totals, |s| rmse(s), config.bootstrap_resamples, config.seed).ok(),
        ),
        None => (None, None),
    };
    ReportRow {
        label,
        strategy,
        n_cases: pairs.len(),
        n_failed,
        rmse: rmse_value,
        rmse_bootstrap_se: se,
        report,
        skipped,
    }
}

/// Metrics for every reporting group of a run.
///
/// Zero-shot runs report each transcript kind separately, then each
/// (language, kind) pair, then optionally all kinds pooled. Longitudinal runs
/// report one row per strategy over the targets every strategy scored.
pub fn compute_report(result: &RunResult, manifest: &RunManifest, scale: &ScaleDefinition) -> RunReport {
    let config = ReportConfig {
        concordance_threshold: manifest.concordance_threshold,
        bootstrap_resamples: manifest.bootstrap_resamples,
        seed: manifest.seed,
    };
    let mut rows = Vec::new();
    match result.mode {
        RunMode::ZeroShot => {
            for run in &result.strategies {
                let records: Vec<&PredictionRecord> = run.records.iter().collect();
                for kind in TranscriptKind::ALL {
                    let group: Vec<_> = records.iter().copied().filter(|r| r.kind == kind).collect();
                    if !group.is_empty() {
                        rows.push(row(kind.to_string(), run.strategy, &group, scale, &config));
                    }
                }
                let languages: BTreeSet<&str> = records.iter().map(|r| r.language.as_str()).collect();
                for language in languages {
                    for kind in TranscriptKind::ALL {
                        let group: Vec<_> = records
                            .iter()
                            .copied()
                            .filter(|r| r.kind == kind && r.language == language)
                            .collect();
                        if !group.is_empty() {
                            rows.push(row(format!("{language}/{kind}"), run.strategy, &group, scale, &config));
                        }
                    }
                }
                if manifest.pooled {
                    rows.push(row("all".into(), run.strategy, &records, scale, &config));
                }
            }
        }
        RunMode::Longitudinal => {
            let mut common: Option<BTreeSet<_>> = None;
            for run in &result.strategies {
                let scored: BTreeSet<_> = run
                    .records
                    .iter()
                    .filter(|r| r.prediction().is_some())
                    .map(PredictionRecord::key)
                    .collect();
                common = Some(match common {
                    None => scored,
                    Some(c) => c.intersection(&scored).cloned().collect(),
                });
            }
            let common = common.unwrap_or_default();
            for run in &result.strategies {
                let group: Vec<&PredictionRecord> = run
                    .records
                    .iter()
                    .filter(|r| r.prediction().is_none() || common.contains(&r.key()))
                    .collect();
                rows.push(row(run.strategy.to_string(), run.strategy, &group, scale, &config));
            }
        }
    }
    RunReport {
        run_id: result.run_id.clone(),
        mode: result.mode,
        concordance_threshold: config.concordance_threshold,
        benchmark: BENCHMARK,
        reference_rmse: REFERENCE_RMSE.iter().map(|(s, v)| (s.to_string(), *v)).collect(),
        rows,
        exclusions: result.exclusions.clone(),
    }
}

fn two(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

pub fn render_table(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Rater | Pearson r | Median Concordance | Concordance #subscores<{} | ICC",
        report.concordance_threshold
    );
    let b = &report.benchmark;
    let _ = writeln!(
        out,
        "{} | {:.2} | {:.2} | {} | {:.2}",
        b.label, b.pearson_total, b.median_concordance, b.n_items_below_threshold, b.icc
    );
    for row in &report.rows {
        let name = format!("LLM {} (n={})", row.label, row.n_cases);
        match &row.report {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "{name} | {:.2} | {:.2} | {} | {:.2}",
                    r.pearson_total, r.median_concordance, r.n_items_below_threshold, r.icc3k
                );
            }
            None => {
                let reason = row.skipped.as_deref().unwrap_or("no report");
                let _ = writeln!(out, "{name} | skipped: {reason}");
            }
        }
    }
    out.push_str("\nGroup | Cases | Failed | RMSE | SE\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{} | {} | {} | {} | {}",
            row.label,
            row.n_cases,
            row.n_failed,
            two(row.rmse),
            two(row.rmse_bootstrap_se)
        );
    }
    let reference: Vec<String> = report
        .reference_rmse
        .iter()
        .map(|(s, v)| format!("{s} {v:.2}"))
        .collect();
    let _ = writeln!(
        out,
        "\n* Reference total-score RMSE on the original clinical cohort: {}.",
        reference.join(", ")
    );
    if !report.exclusions.is_empty() {
        let _ = writeln!(
            out,
            "* {} timeline(s) excluded for insufficient history.",
            report.exclusions.len()
        );
    }
    out
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn render_strategy_csv(report: &RunReport) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STRATEGY_CSV_HEADER)?;
    for row in &report.rows {
        w.write_record([
            row.label.clone(),
            row.strategy.to_string(),
            row.n_cases.to_string(),
            row.n_failed.to_string(),
            cell(row.rmse),
            cell(row.rmse_bootstrap_se),
        ])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// File name and contents of each file a format produces.
pub fn render_report(report: &RunReport, format: ReportFormat) -> Vec<(&'static str, Vec<u8>)> {
    match format {
        ReportFormat::Table => vec![("report.txt", render_table(report).into_bytes())],
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            vec![("report.json", text.into_bytes())]
        }
        ReportFormat::Csv => {
            let labelled: Vec<(&str, &MetricsReport)> = report
                .rows
                .iter()
                .filter_map(|r| r.report.as_ref().map(|m| (r.label.as_str(), m)))
                .collect();
            let mut items = Vec::new();
            write_item_csv(&mut items, &labelled).expect("writing to memory");
            vec![
                ("report_items.csv", items),
                ("report_strategies.csv", render_strategy_csv(report).expect("writing to memory")),
            ]
        }
    }
}

pub fn emit_report(report: &RunReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut written = Vec::new();
    for (name, contents) in render_report(report, format) {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}
