//! Numerical kernel: dense solves, regression fits, root finding and the
//! chi-square tail.

pub mod chi2;
pub mod irls;
pub mod linalg;
pub mod newton;
pub mod wls;

pub use chi2::chi2_sf;
pub use irls::{expit, irls_logistic, IrlsOptions};
pub use newton::{finite_difference_jacobian, newton_solve, RootSolveReport, NEWTON_TOL};
pub use wls::{weighted_least_squares, LinearFit, LINEAR_TOL};
