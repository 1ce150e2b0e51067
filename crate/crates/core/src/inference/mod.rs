//! Tests of `H_α: (α−1)β₁β₂ + αβ₃ = 0`.

mod classical;
mod gmm;
mod score;
mod wald;

pub use classical::{ols_sobel_lr, sobel_lr_from_t};
pub use gmm::{gmm_objective, quadratic_form};
pub use score::{score_test, solve_constrained, score_test_cue, score_test_two_step, Branch, ConstrainedSolveState, ScoreOptions};
pub use wald::{robust_sobel, robust_wald_direct, sobel_statistic};

use serde::{Deserialize, Serialize};

use crate::error::{GmedError, Result};
use crate::moments::TargetParams;
use crate::numerics::{chi2_sf, RootSolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    SobelOls,
    LrOls,
    RobustSobel,
    RobustWaldDirect,
    ScoreTwoStep,
    ScoreCue,
}

impl TestMethod {
    pub fn label(&self) -> &'static str {
        match self {
            TestMethod::SobelOls => "sobel-ols",
            TestMethod::LrOls => "lr-ols",
            TestMethod::RobustSobel => "robust-sobel",
            TestMethod::RobustWaldDirect => "robust-wald-direct",
            TestMethod::ScoreTwoStep => "score-two-step",
            TestMethod::ScoreCue => "score-cue",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| GmedError::InvalidInput(format!("unknown test method `{s}`")))
    }

    pub fn all() -> [TestMethod; 6] {
        [
            TestMethod::SobelOls,
            TestMethod::LrOls,
            TestMethod::RobustSobel,
            TestMethod::RobustWaldDirect,
            TestMethod::ScoreTwoStep,
            TestMethod::ScoreCue,
        ]
    }

    /// Sobel-type tests and the direct Wald test target a fixed hypothesis.
    pub fn fixed_alpha(&self) -> Option<f64> {
        match self {
            TestMethod::SobelOls | TestMethod::LrOls | TestMethod::RobustSobel => Some(0.0),
            TestMethod::RobustWaldDirect => Some(1.0),
            _ => None,
        }
    }
}

/// The null `(α−1)β₁β₂ + αβ₃ = 0`, `α ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub alpha: f64,
}

impl HypothesisSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(GmedError::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn no_mediation() -> Self {
        Self { alpha: 0.0 }
    }

    pub fn no_direct_effect() -> Self {
        Self { alpha: 1.0 }
    }

    pub fn label(&self) -> &'static str {
        if self.alpha == 0.0 {
            "no-mediation"
        } else if self.alpha == 1.0 {
            "no-direct-effect"
        } else {
            "general"
        }
    }

    pub fn psi(&self, b: &TargetParams) -> f64 {
        (self.alpha - 1.0) * b.beta1 * b.beta2 + self.alpha * b.beta3
    }

    pub fn grad_psi(&self, b: &TargetParams) -> [f64; 3] {
        [(self.alpha - 1.0) * b.beta2, (self.alpha - 1.0) * b.beta1, self.alpha]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub method: TestMethod,
    pub alpha: f64,
    pub constrained_beta: Option<TargetParams>,
    pub lagrange_multiplier: Option<f64>,
    pub branch: Option<Branch>,
    pub solver_report: Option<RootSolveReport>,
    pub warnings: Vec<String>,
}

impl TestOutcome {
    pub fn chi2(statistic: f64, method: TestMethod, alpha: f64) -> Self {
        Self {
            statistic,
            df: 1,
            p_value: chi2_sf(statistic, 1),
            method,
            alpha,
            constrained_beta: None,
            lagrange_multiplier: None,
            branch: None,
            solver_report: None,
            warnings: Vec::new(),
        }
    }

    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}
