//! G-estimation of natural direct and indirect effects under partially
//! linear models, with orthogonal nuisance fits and constrained-GMM tests.

pub mod data;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod json;
pub mod moments;
pub mod numerics;
pub mod rng;
pub mod simulation;

/// Version tag carried by every JSON document.
pub const SCHEMA: &str = "gmed/1";

pub use data::{load_csv, write_csv, ColumnMap, Dataset, ExposureFamily, MissingPolicy, ModelConfig, NuisanceStrategy};
pub use error::{GmedError, Result};
pub use estimation::{bootstrap_variance, g_estimate, BootstrapReport, GEstimate};
pub use inference::{HypothesisSpec, TestMethod, TestOutcome};
pub use moments::{NuisanceParams, TargetParams};
pub use numerics::RootSolveReport;
