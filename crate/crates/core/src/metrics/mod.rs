//! Statistics comparing predicted with true assessments.

pub mod agreement;
pub mod bootstrap;
pub mod mann_whitney;
pub mod report;

use thiserror::Error;

pub use agreement::{
    concordance_per_item, concordance_summary, icc3k, mean, median, pearson, rmse,
    ConcordanceSummary, ItemPairMatrix,
};
pub use bootstrap::{bootstrap_rng, bootstrap_se, uniform_index, BOOTSTRAP_STREAM, DEFAULT_RESAMPLES};
pub use mann_whitney::{mann_whitney, u_statistic, MannWhitneyResult, MwMode};
pub use report::{
    full_report, group_compare, write_item_csv, GroupReport, ItemStats, MetricsReport, ReportConfig,
    DEFAULT_CONCORDANCE_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("zero variance in one coordinate")]
    DegenerateVariance,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("rating {0} outside 1..=7")]
    InvalidRating(u8),
    #[error("exact Mann-Whitney requires untied samples")]
    TiesInExactMode,
    #[error("exact Mann-Whitney limited to a smaller sample of {limit}, found {smaller}")]
    TooLargeForExact { smaller: usize, limit: usize },
    #[error("prediction does not match its case: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Scale(#[from] ScaleMetadataError),
}

/// Grouping metadata missing from the scale.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct ScaleMetadataError(pub String);
