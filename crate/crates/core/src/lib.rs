//! Fairness of ecosystems of competing classifiers.
//!
//! Several lenders each run a classifier on a shared pool of borrowers. Even
//! when every classifier satisfies Equal Opportunity on its own, the chance
//! that a deserving borrower receives *at least one* offer can differ between
//! groups, because the classifiers' errors are correlated differently in
//! each group or because the lenders serve different parts of each group.
//! This crate measures that gap (Equal Opportunity under Competition, EOC)
//! and its welfare, Equalized-Odds and Demographic-Parity relatives:
//!
//! - [`fairness`]: closed forms and worst-case bounds for two or `n` lenders.
//! - [`joint`]: exact joint output distributions, their fairness levels, and
//!   seeded sampling.
//! - [`audit`]: the same levels measured on per-individual prediction tables.
//! - [`postprocess`]: the least-loss derived Equal-Opportunity classifier.
//! - [`learners`]: logistic regression and CART trees for the pipeline.
//! - [`harness`]: replicated train / adjust / audit experiments.
//! - [`scenarios`] and [`verify`]: worked examples and brute-force oracles.
//!
//! Exact computations are generic over [`Scalar`], so the same code runs on
//! `f64` and on exact [`Rational`]s.

pub mod audit;
pub mod fairness;
pub mod group;
pub mod harness;
pub mod joint;
pub mod learners;
pub mod postprocess;
pub mod scalar;
pub mod scenarios;
pub mod verify;

pub use audit::{
    empirical_correlation, empirical_fairness, AuditError, PredictionRow, PredictionTable,
};
pub use fairness::{FairnessError, FairnessLevels, UtilityKind};
pub use group::Group;
pub use joint::{pmf_fairness_levels, EcosystemModel, JointPmf, ModelError};
pub use postprocess::{DerivedPolicy, PostprocessError};
pub use scalar::{lit, Rational, Real, Scalar};

/// Floating-point ecosystem model.
pub type Model = EcosystemModel<f64>;
/// Exact ecosystem model.
pub type ExactModel = EcosystemModel<Rational>;
/// Single-precision ecosystem model.
pub type Model32 = EcosystemModel<f32>;
/// Floating-point fairness levels.
pub type Levels = FairnessLevels<f64>;
/// Exact fairness levels.
pub type ExactLevels = FairnessLevels<Rational>;
/// Floating-point derived policy.
pub type Policy = DerivedPolicy<f64>;
/// Exact derived policy.
pub type ExactPolicy = DerivedPolicy<Rational>;
