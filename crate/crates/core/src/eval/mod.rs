//! Top-k selection, F-measure and MAP, the paired t-test, results tables
//! and attention export.

mod attention;
mod metrics;
mod report;
mod stats;

use thiserror::Error;

pub use attention::{export_attention, layer_correlation, preference_profiles, AttentionExport, PROFILE_THRESHOLD};
pub use metrics::{average_precision, f_measure, top_k, EntityScores, Summary};
pub use report::{
    build_report, BaselineRow, BaselineTable, Cell, Cells, Half, Metric, MetricsReport, ReportOptions, ReportRow,
    RowKind, Spread, SystemRun, REPORT_FORMAT_VERSION,
};
pub use stats::paired_t_test;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("entity {entity} has no gold summaries for k = {k}")]
    NoGold { entity: String, k: usize },
    #[error("paired test needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{0}")]
    Mismatch(String),
    #[error("unknown system {0:?}")]
    UnknownSystem(String),
}
