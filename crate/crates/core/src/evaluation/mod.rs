//! Grouped folds, ROC/AUC statistics, DeLong comparison and the nested
//! cross-validation engine.

mod delong;
mod export;
mod folds;
mod nested;
mod roc;

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::cohort::CohortError;
use crate::models::ModelError;
use crate::selection::SelectionError;

pub use delong::{delong_paired, delong_runs, DeLongResult};
pub use export::{roc_csv, roc_svg};
pub use folds::{grouped_kfold, grouped_kfold_stratified, FoldPlan};
pub use nested::{run_nested_cv, run_nested_cv_many, EyeMode, FoldDetail, NestedConfig, PooledScore, RunResult, ShapConfig};
pub use roc::{auc, mean_roc, roc_curve, RocCurve, MEAN_ROC_GRID};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("invalid fold configuration: {0}")]
    InvalidFolds(String),
    #[error("{patients} patients cannot fill {folds} folds")]
    TooFewPatients { patients: usize, folds: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("scores contain a non-finite value")]
    NonFiniteScore,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error(
        "outer fold {fold} test split has {positives} positive and {negatives} negative eyes; \
         choose a different seed or enable stratified folds"
    )]
    DegenerateFold { fold: usize, positives: usize, negatives: usize },
    #[error("paired comparison needs identical eye sets; only in first: [{}]; only in second: [{}]", only_a.join(", "), only_b.join(", "))]
    KeyMismatch { only_a: Vec<String>, only_b: Vec<String> },
    #[error("paired comparison found different labels for eye {0}")]
    LabelMismatch(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}
