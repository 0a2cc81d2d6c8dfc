//! Pair formation, verification metrics, subject-disjoint folds and the
//! cross-validated evaluation harness.

mod cv;
mod folds;
mod metrics;
mod pairs;
mod report;

pub use cv::{baseline_eer, evaluate_fused, run_cv, CvOutcome, CvParams};
pub use folds::{leaked, subject_disjoint_folds, FoldAssignment, FoldAudit, FoldSplit};
pub use metrics::{downsample_roc, eer, eer_from_roc, frr_at_far, roc_curve, FrrAtFar, RocPoint};
pub use pairs::{
    form_pairs, read_pairs, read_pairs_from, subjects_of, write_pairs, write_pairs_to, Pair,
};
pub use report::{render_table, EvalReport, FoldMetrics, TableRow, REPORT_SCHEMA_VERSION};

use thiserror::Error;

/// FIDO-style operating point for FRR reporting.
pub const DEFAULT_FAR_TARGET: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no {0} scores")]
    EmptyClass(&'static str),
    #[error("score is not finite")]
    NonFiniteScore,
    #[error("FAR target {0} is outside (0, 1]")]
    InvalidFarTarget(f64),
    #[error("subject {0} has no session {1} recording")]
    MissingSession(String, u8),
    #[error("need at least {needed} subjects for subject-disjoint folds, found {found}")]
    TooFewSubjects { needed: usize, found: usize },
    #[error("fold {fold}: {message}")]
    Fold { fold: usize, message: String },
}
