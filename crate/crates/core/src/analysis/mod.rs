//! Significance testing, correction diffs and time-cost regression.

mod diff;
mod regress;
mod significance;

use thiserror::Error;

use crate::evalsuite::EvalError;

pub use self::diff::{diff_corrections, CorrectionDiff, CorrectionItem, CorrectionKind};
pub use self::regress::{regress_time, Coefficient, RegressionResult, TimeRow};
pub use self::significance::{output_items, randomization_test, MetricSpec, OutputItem, SignificanceResult, Statistic};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("document mismatch: {a} vs {b}")]
    DocMismatch { a: String, b: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("number of resamples must be positive")]
    NoResamples,
}
