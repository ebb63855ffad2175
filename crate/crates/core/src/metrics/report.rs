//! The full per-run report: totals-level agreement, per-item breakdowns and
//! grouped comparisons.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::agreement::{concordance_per_item, concordance_summary, icc3k, mean, pearson, rmse, ItemPairMatrix};
use super::bootstrap::{bootstrap_se, DEFAULT_RESAMPLES};
use super::mann_whitney::{mann_whitney, MannWhitneyResult, MwMode};
use super::{MetricsError, ScaleMetadataError};
use crate::corpus::EvalCase;
use crate::parser::PredictedAssessment;
use crate::scale::{Grouping, ScaleDefinition, OBSERVED_GROUP, SELF_REPORTED_GROUP};

pub const DEFAULT_CONCORDANCE_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub concordance_threshold: f64,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            concordance_threshold: DEFAULT_CONCORDANCE_THRESHOLD,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStats {
    pub index: u32,
    pub name: String,
    pub true_mean: f64,
    pub pred_mean: f64,
    /// `None` when either column is constant.
    pub pearson: Option<f64>,
    pub concordance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub grouping: Grouping,
    pub label: String,
    pub items: Vec<u32>,
    pub mean_true_total: f64,
    pub mean_pred_total: f64,
    pub pearson_total: Option<f64>,
    pub rmse: f64,
    pub median_concordance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_cases: usize,
    pub pearson_total: f64,
    pub icc3k: f64,
    pub per_item_concordance: Vec<f64>,
    pub median_concordance: f64,
    pub concordance_threshold: f64,
    pub n_items_below_threshold: usize,
    pub rmse: f64,
    pub rmse_bootstrap_se: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub mean_true_total: f64,
    pub mean_pred_total: f64,
    /// True vs predicted totals.
    pub mannwhitney_means: MannWhitneyResult,
    pub per_item_pearson: Vec<Option<f64>>,
    pub items: Vec<ItemStats>,
    /// Keyed `source:<label>` and `factor:<label>`.
    pub group_breakdowns: BTreeMap<String, GroupReport>,
    /// Mann-Whitney over per-item Pearson values, e.g. `self_reported_vs_observed`.
    pub group_comparisons: BTreeMap<String, MannWhitneyResult>,
}

/// Mann-Whitney comparisons of per-item Pearson values between groups.
///
/// `per_item_pearson` is indexed by item index minus one; items whose
/// correlation is undefined are left out of both samples.
pub fn group_compare(
    per_item_pearson: &[Option<f64>],
    groups: &BTreeMap<String, Vec<u32>>,
    pairings: &[(&str, &str)],
    mode: MwMode,
) -> Result<BTreeMap<String, MannWhitneyResult>, MetricsError> {
    let values = |label: &str| -> Result<Vec<f64>, MetricsError> {
        let items = groups
            .get(label)
            .ok_or_else(|| ScaleMetadataError(format!("no item group {label:?}")))?;
        Ok(items
            .iter()
            .filter_map(|i| per_item_pearson.get(*i as usize - 1).copied().flatten())
            .collect())
    };
    let mut out = BTreeMap::new();
    for (a, b) in pairings {
        let result = mann_whitney(&values(a)?, &values(b)?, mode)?;
        out.insert(format!("{a}_vs_{b}"), result);
    }
    Ok(out)
}

fn optional(r: Result<f64, MetricsError>) -> Result<Option<f64>, MetricsError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::DegenerateVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn full_report(
    cases: &[(EvalCase, PredictedAssessment)],
    scale: &ScaleDefinition,
    config: &ReportConfig,
) -> Result<MetricsReport, MetricsError> {
    if cases.len() < 3 {
        return Err(MetricsError::InsufficientData {
            needed: 3,
            found: cases.len(),
        });
    }
    for (case, pred) in cases {
        if pred.patient_id != case.patient_id() || pred.visit_index != case.visit_index() {
            return Err(MetricsError::Misaligned(format!(
                "case {} has prediction for {}@{}",
                case.key(),
                pred.patient_id,
                pred.visit_index
            )));
        }
        if pred.items.len() != scale.len() || case.truth.ratings.len() != scale.len() {
            return Err(MetricsError::LengthMismatch {
                expected: scale.len(),
                found: pred.items.len().min(case.truth.ratings.len()),
            });
        }
    }
    // Canonical order: bootstrap resampling indexes this sorted list.
    let mut sorted: Vec<&(EvalCase, PredictedAssessment)> = cases.iter().collect();
    sorted.sort_by(|a, b| a.0.key().cmp(&b.0.key()));

    let truth_rows: Vec<Vec<u8>> = sorted.iter().map(|(c, _)| c.truth.ratings.clone()).collect();
    let pred_rows: Vec<Vec<u8>> = sorted.iter().map(|(_, p)| p.ratings()).collect();
    let totals: Vec<(f64, f64)> = sorted
        .iter()
        .map(|(c, p)| (c.truth.total() as f64, p.total() as f64))
        .collect();
    let true_totals: Vec<f64> = totals.iter().map(|t| t.0).collect();
    let pred_totals: Vec<f64> = totals.iter().map(|t| t.1).collect();

    let matrix = ItemPairMatrix::from_rows(truth_rows.iter().zip(&pred_rows))?;
    let per_item_concordance = concordance_per_item(&matrix)?;
    let summary = concordance_summary(&per_item_concordance, config.concordance_threshold)?;

    let by_index = scale.items_by_index();
    let mut per_item_pearson = Vec::with_capacity(by_index.len());
    let mut items = Vec::with_capacity(by_index.len());
    for (j, item) in by_index.iter().enumerate() {
        let column: Vec<(f64, f64)> = matrix.column(j).map(|(t, p)| (t as f64, p as f64)).collect();
        let r = optional(pearson(&column))?;
        per_item_pearson.push(r);
        items.push(ItemStats {
            index: item.index,
            name: item.name.clone(),
            true_mean: mean(&column.iter().map(|c| c.0).collect::<Vec<_>>())?,
            pred_mean: mean(&column.iter().map(|c| c.1).collect::<Vec<_>>())?,
            pearson: r,
            concordance: per_item_concordance[j],
        });
    }

    let mut group_breakdowns = BTreeMap::new();
    for (grouping, prefix) in [(Grouping::Source, "source"), (Grouping::Factor, "factor")] {
        let groups = match scale.item_groups(grouping) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("skipping {prefix} breakdown: {e}");
                continue;
            }
        };
        for (label, members) in groups {
            let positions: Vec<usize> = members
                .iter()
                .filter_map(|i| by_index.iter().position(|item| item.index == *i))
                .collect();
            let group_totals: Vec<(f64, f64)> = truth_rows
                .iter()
                .zip(&pred_rows)
                .map(|(t, p)| {
                    let sum = |row: &Vec<u8>| positions.iter().map(|j| row[*j] as f64).sum::<f64>();
                    (sum(t), sum(p))
                })
                .collect();
            let concordances: Vec<f64> = positions.iter().map(|j| per_item_concordance[*j]).collect();
            group_breakdowns.insert(
                format!("{prefix}:{label}"),
                GroupReport {
                    grouping,
                    label: label.clone(),
                    items: members,
                    mean_true_total: mean(&group_totals.iter().map(|g| g.0).collect::<Vec<_>>())?,
                    mean_pred_total: mean(&group_totals.iter().map(|g| g.1).collect::<Vec<_>>())?,
                    pearson_total: optional(pearson(&group_totals))?,
                    rmse: rmse(&group_totals)?,
                    median_concordance: super::median(&concordances)?,
                },
            );
        }
    }

    let mut group_comparisons = BTreeMap::new();
    if let Ok(groups) = scale.item_groups(Grouping::Source) {
        match group_compare(
            &per_item_pearson,
            &groups,
            &[(SELF_REPORTED_GROUP, OBSERVED_GROUP)],
            MwMode::NormalApprox,
        ) {
            Ok(found) => group_comparisons = found,
            Err(e) => log::warn!("skipping source-group comparison: {e}"),
        }
    }

    Ok(MetricsReport {
        n_cases: sorted.len(),
        pearson_total: pearson(&totals)?,
        icc3k: icc3k(&totals.iter().map(|(t, p)| [*t, *p]).collect::<Vec<_>>())?,
        median_concordance: summary.median,
        concordance_threshold: config.concordance_threshold,
        n_items_below_threshold: summary.n_below,
        per_item_concordance,
        rmse: rmse(&totals)?,
        rmse_bootstrap_se: bootstrap_se(&totals, |s| rmse(s), config.bootstrap_resamples, config.seed)?,
        bootstrap_resamples: config.bootstrap_resamples,
        bootstrap_seed: config.seed,
        mean_true_total: mean(&true_totals)?,
        mean_pred_total: mean(&pred_totals)?,
        mannwhitney_means: mann_whitney(&true_totals, &pred_totals, MwMode::NormalApprox)?,
        per_item_pearson,
        items,
        group_breakdowns,
        group_comparisons,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const ITEM_CSV_HEADER: [&str; 8] = [
    "report", "item_index", "item", "true_mean", "pred_mean", "pearson", "concordance", "n_cases",
];

/// Per-item rows (name, true mean, predicted mean, Pearson, concordance) for
/// each labelled report, preceded by a header row.
pub fn write_item_csv<W: Write>(
    out: W,
    reports: &[(&str, &MetricsReport)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ITEM_CSV_HEADER)?;
    for (label, report) in reports {
        for item in &report.items {
            w.write_record([
                label.to_string(),
                item.index.to_string(),
                item.name.clone(),
                item.true_mean.to_string(),
                item.pred_mean.to_string(),
                cell(item.pearson),
                item.concordance.to_string(),
                report.n_cases.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
