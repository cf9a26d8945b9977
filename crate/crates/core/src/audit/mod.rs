//! Empirical fairness audits of observed prediction tables.
//!
//! Randomized offers from distinct lenders are treated as independent given
//! the individual, so an individual's chance of at least one offer is
//! `1 - prod(1 - p_l)`. Lenders that do not serve an individual contribute
//! `p_l = 0`.

mod metrics;
mod table;

pub use metrics::{empirical_correlation, empirical_fairness, CorrelationReport, StrataSummary};
pub use table::{PredictionRow, PredictionTable};

use crate::group::Group;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AuditError {
    #[error("no rows in stratum group {group}, label {}", u8::from(*label))]
    EmptyGroup { group: Group, label: bool },
    #[error("lender {} has constant predictions on deserving group-{group} rows", lender + 1)]
    DegenerateVariance { group: Group, lender: usize },
    #[error("fewer than 2 deserving group-{group} rows served by lenders {} and {}", lenders.0 + 1, lenders.1 + 1)]
    InsufficientRows {
        group: Group,
        lenders: (usize, usize),
    },
    #[error("lender index {lender} out of range for {n} lenders")]
    NoSuchLender { lender: usize, n: usize },
    #[error("invalid prediction table: {0}")]
    InvalidTable(String),
    #[error("line {line}, column {column}: cannot parse {value:?}")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}
