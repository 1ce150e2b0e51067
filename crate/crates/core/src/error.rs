use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GmedError {
    #[error("design matrix is rank deficient (rank {rank} of {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("logistic fit separated: |coefficient| reached {magnitude:.3}")]
    SeparationDetected { magnitude: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("jacobian is singular")]
    SingularJacobian,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("the interaction moment system requires interaction to be enabled")]
    InteractionDisabled,

    #[error("degenerate moment covariance: {0}")]
    DegenerateCovariance(String),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("weight matrix is singular")]
    SingularWeight,

    #[error("the CUE score test needs orthogonal (bias-reduced) nuisance estimation")]
    OrthogonalityRequired,

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumericCell { row: usize, column: String, value: String },

    #[error("no rows left after filtering")]
    EmptyAfterFiltering,

    #[error("confounder column `{0}` is constant")]
    ConstantColumn(String),

    #[error("mediator residual variance is zero")]
    ZeroResidualVariance,

    #[error("{failures} of {replicates} replicates failed")]
    TooManyFailures { failures: usize, replicates: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(String),
}

impl GmedError {
    /// Stable machine-readable name, used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            GmedError::RankDeficient { .. } => "RankDeficient",
            GmedError::SeparationDetected { .. } => "SeparationDetected",
            GmedError::NonConvergence { .. } => "NonConvergence",
            GmedError::SingularJacobian => "SingularJacobian",
            GmedError::DimensionMismatch(_) => "DimensionMismatch",
            GmedError::InteractionDisabled => "InteractionDisabled",
            GmedError::DegenerateCovariance(_) => "DegenerateCovariance",
            GmedError::ZeroDenominator(_) => "ZeroDenominator",
            GmedError::SingularWeight => "SingularWeight",
            GmedError::OrthogonalityRequired => "OrthogonalityRequired",
            GmedError::MissingColumn(_) => "MissingColumn",
            GmedError::NonNumericCell { .. } => "NonNumericCell",
            GmedError::EmptyAfterFiltering => "EmptyAfterFiltering",
            GmedError::ConstantColumn(_) => "ConstantColumn",
            GmedError::ZeroResidualVariance => "ZeroResidualVariance",
            GmedError::TooManyFailures { .. } => "TooManyFailures",
            GmedError::InvalidInput(_) => "InvalidInput",
            GmedError::Io(_) => "Io",
        }
    }

    /// Numerical failures map to exit code 3 in the CLI; everything else is an input error.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GmedError::NonConvergence { .. }
                | GmedError::SingularJacobian
                | GmedError::SeparationDetected { .. }
                | GmedError::DegenerateCovariance(_)
                | GmedError::SingularWeight
                | GmedError::ZeroDenominator(_)
                | GmedError::TooManyFailures { .. }
        )
    }
}

impl From<std::io::Error> for GmedError {
    fn from(e: std::io::Error) -> Self {
        GmedError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GmedError>;
