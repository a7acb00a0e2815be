//! Error type shared by every module in the crate.

use alloc::string::String;

/// Failure modes surfaced by model construction, sampling, and analysis.
///
/// Validation of user-supplied structures happens eagerly at construction;
/// numeric failures (infeasible moments, non-PSD covariance, out-of-range
/// draws) surface from the operation that hit them.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{table}: ids must be contiguous positive integers ascending from 1")]
    NonContiguousIds { table: &'static str },

    #[error("{table}: column lengths are inconsistent")]
    RaggedTable { table: &'static str },

    #[error("{table}: table has no rows")]
    EmptyTable { table: &'static str },

    #[error("duplicate covariate column {name:?} across context tables")]
    DuplicateColumn { name: String },

    #[error("duplicate label {name:?} within the {dimension} dimension")]
    DuplicateLabel { dimension: &'static str, name: String },

    #[error("patient weights must be nonnegative and sum to a positive value in every group")]
    InvalidPatientWeights,

    #[error("patient_id values must be unique")]
    DuplicatePatientId,

    #[error("transition matrix: {reason}")]
    InvalidTransitionMatrix { reason: String },

    #[error("covariate column {name:?} not found in input data")]
    MissingTerm { name: String },

    #[error("{what} contains a non-finite value")]
    NonFinite { what: &'static str },

    #[error("{family} parameter {param:?} = {value} is outside its domain")]
    InvalidDistribution {
        family: &'static str,
        param: &'static str,
        value: f64,
    },

    #[error("probability argument {value} is outside {requirement}")]
    ProbabilityOutOfRange {
        value: f64,
        requirement: &'static str,
    },

    #[error("truncation point {lower} has zero survival mass; nothing to sample beyond it")]
    TruncationBeyondSupport { lower: f64 },

    #[error("dimension mismatch: {what}")]
    DimensionMismatch { what: String },

    #[error("covariance matrix is not symmetric (entry ({i},{j}))")]
    AsymmetricCovariance { i: usize, j: usize },

    #[error("covariance matrix is not positive semi-definite within jitter 1e-10")]
    NotPositiveSemiDefinite,

    #[error("moment matching infeasible: {reason}")]
    InfeasibleMoments { reason: String },

    #[error("intensity matrix: {reason}")]
    InvalidIntensityMatrix { reason: String },

    #[error("matrix {index}: row {row} sums to {sum}, not 1 within tolerance")]
    RowNotStochastic { index: usize, row: usize, sum: f64 },

    #[error("matrix {index}: the death row must be an identity row")]
    DeathRowNotAbsorbing { index: usize },

    #[error("a trajectory exceeded {limit} transitions; the model may cycle without advancing")]
    TrajectoryOverflow { limit: usize },

    #[error("matrix {index}: entry ({row},{col}) = {value} is outside [0, 1]")]
    ProbabilityOutOfBounds {
        index: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error(
        "relative risk on matrix {index} drives the row-{row} complement to {value}; \
         row is no longer a probability distribution"
    )]
    InfeasibleRelativeRisk { index: usize, row: usize, value: f64 },

    #[error("state-value table: {reason}")]
    InvalidStateValues { reason: String },

    #[error("state-value table: incomplete key crossing; missing combinations: {missing}")]
    IncompleteKeyCrossing { missing: String },

    #[error("time intervals must start at 0 and increase strictly; got {detail}")]
    InvalidIntervals { detail: String },

    #[error("query out of range: {what}")]
    QueryOutOfRange { what: String },

    #[error(
        "value model measures time from {model}, query measures time from {query}; \
         the two origins cannot be mixed"
    )]
    TimeOriginMismatch {
        model: &'static str,
        query: &'static str,
    },

    #[error("initial state distribution must be nonnegative and sum to 1; sum was {sum}")]
    InvalidInitialDistribution { sum: f64 },

    #[error("discount rate {rate} is negative")]
    NegativeDiscountRate { rate: f64 },

    #[error("state {state} has no outgoing transitions but is not a death state")]
    DeadEndState { state: u32 },

    #[error("maximum age supplied but patient starting ages are unknown")]
    MissingStartAges,

    #[error("survival curves disagree on the evaluation grid")]
    CurveGridMismatch,

    #[error("survival value {value} is outside [0, 1]")]
    SurvivalOutOfRange { value: f64 },

    #[error("survival curve {curve} increases along the time grid")]
    CurveNotMonotone { curve: usize },

    #[error("survival at time 0 is {value}, not 1")]
    CurveStartNotOne { value: f64 },

    #[error("time grid must be finite, nonnegative, and strictly increasing")]
    InvalidTimeGrid,

    #[error("linear solve failed: matrix is singular")]
    SingularMatrix,

    #[error("comparator strategy {strategy_id} is absent from the cost-effectiveness input")]
    MissingComparator { strategy_id: u32 },

    #[error("strategy sets differ across samples or groups in the cost-effectiveness input")]
    UnbalancedSamples,

    #[error("no rows at discount rate {dr} in the cost-effectiveness input")]
    MissingDiscountRate { dr: f64 },

    #[error("cost-effectiveness input has no samples")]
    EmptyCeInput,

    #[error("willingness-to-pay grid is empty")]
    EmptyWtpGrid,

    #[error("the total cost category is {got}, but the other categories sum to {expected}")]
    TotalCategoryMismatch { expected: f64, got: f64 },

    #[error("cost and QALY tables disagree on their keys: {detail}")]
    CeKeyMismatch { detail: String },
}
