//! Nuisance fits, G-estimation, influence-function and bootstrap variances.

mod bootstrap;
mod gest;
mod nuisance;
mod ols;
mod xbar;

pub use bootstrap::{bootstrap_variance, BootstrapReport, MAX_FAILURE_RATE, MIN_REPLICATES};
pub use gest::{g_estimate, g_estimate_with, influence, GEstimate, GEstimateOptions, ESTIMATE_TOL};
pub use nuisance::{fit_exposure, fit_nuisance_bias_reduced, fit_nuisance_ml, orthogonality_residual, NuisanceFitter};
pub use ols::{ols_product, OlsProduct};
pub use xbar::{mediator_residuals, x_bar_oracle};
