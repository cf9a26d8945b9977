//! Replicated experiments: train competing lenders, audit the ecosystem,
//! post-process each lender to Equal Opportunity, and audit again.

mod data;
mod experiment;
mod stats;

pub use data::{
    generate_synthetic, load_csv, load_csv_reader, BinaryColumn, CsvSchema, SyntheticSpec,
};
pub use experiment::{
    results_csv, run_experiment, run_experiment_with_workers, summarize, DataSource,
    ExperimentConfig, ExperimentReport, ExperimentSummary, FitSplit, Mode, RunMetadata,
};
pub use stats::{
    effect_size, harm_likelihood, zero_baseline_count, EffectSize, IntervalEstimate, IntervalMethod,
};

use serde::{Deserialize, Serialize};

use crate::learners::LearnerError;

/// Baselines at or below this EOC level give no ratio.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("row {row}, column {column:?}: not a finite number")]
    ParseFailure { row: usize, column: String },
    #[error("io: {0}")]
    Io(String),
    #[error("no successful replicates")]
    NoReplicates,
    #[error("{0} harmed replicates with a positive baseline; need at least 2")]
    InsufficientRatios(usize),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Before/after measurements of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub eoc_before: f64,
    pub eoc_after: f64,
    /// Per-lender EO level on the evaluation split.
    pub eo_before: Vec<f64>,
    pub eo_after: Vec<f64>,
    /// Per-lender EO level on the split the policy was fitted on.
    pub fit_eo_before: Vec<f64>,
    pub fit_eo_after: Vec<f64>,
    /// `eoc_after > eoc_before`, strictly.
    pub harmed: bool,
    /// `eoc_after / eoc_before` when the baseline exceeds [`RATIO_FLOOR`].
    pub ratio: Option<f64>,
}

impl ReplicateResult {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        replicate: usize,
        seed: u64,
        eoc_before: f64,
        eoc_after: f64,
        eo_before: Vec<f64>,
        eo_after: Vec<f64>,
        fit_eo_before: Vec<f64>,
        fit_eo_after: Vec<f64>,
    ) -> Self {
        Self {
            replicate,
            seed,
            eoc_before,
            eoc_after,
            eo_before,
            eo_after,
            fit_eo_before,
            fit_eo_after,
            harmed: eoc_after > eoc_before,
            ratio: (eoc_before > RATIO_FLOOR).then(|| eoc_after / eoc_before),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

pub type ReplicateOutcome = Result<ReplicateResult, ReplicateFailure>;
