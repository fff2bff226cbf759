use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("response column {0:?} not found in header")]
    MissingResponse(String),

    #[error("duplicate column name {0:?} in header")]
    DuplicateColumn(String),

    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("non-finite value at row {row}, column {column:?}")]
    NonFinite { row: usize, column: String },

    #[error("column {0:?} is constant; cannot standardize")]
    ConstantColumn(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset too small: {0}")]
    TooFewRows(String),

    #[error("penalized fit selected no predictors (empty active set)")]
    EmptySelection,

    #[error("first-stage support has {selected} predictors but only {rows} selection rows; refit impossible")]
    SelectionTooLarge { selected: usize, rows: usize },

    #[error(
        "coordinate descent did not converge at lambda={lambda:.6e} (last max update {delta:.3e})"
    )]
    NonConvergence { lambda: f64, delta: f64 },

    #[error("design matrix rank deficient (smallest singular value {min_singular:.3e})")]
    RankDeficient { min_singular: f64 },

    #[error("sample covariance is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularCovariance { condition: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input outside the weight function domain: {0}")]
    Domain(String),

    #[error("custom weight function rejected at registration: {0}")]
    CustomWeightRejected(String),

    #[error("unbalanced factorial design for pair ({i}, {j}): cell counts {counts:?}")]
    UnbalancedDesign {
        i: usize,
        j: usize,
        counts: Vec<usize>,
    },

    #[error("total sum of squares is zero (constant response)")]
    ZeroTss,

    #[error("active set of size {q} exceeds the plug-in covariance limit {limit}; use the bootstrap estimator or raise the limit")]
    PluginDimension { q: usize, limit: usize },

    #[error("penalty not twice differentiable at |beta_{index}| = {theta:.6} (kink at lambda or a*lambda); perturb lambda")]
    PenaltyKink { index: usize, theta: f64 },

    #[error("bootstrap resample covariance singular after {retries} retries (replicate {replicate})")]
    BootstrapSingular { replicate: usize, retries: usize },

    #[error("no grouping structure: fewer than two usable clusters at every candidate K")]
    NoGroupingStructure,

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("covariance model is not positive definite")]
    NotPositiveDefinite,

    #[error("unknown experiment id {0:?}")]
    UnknownExperiment(String),

    #[error("{0}")]
    Other(String),
}
