use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_replicate, DgpSpec};
use crate::data::{Dataset, ModelConfig, NuisanceStrategy};
use crate::error::{GmedError, Result};
use crate::estimation::{bootstrap_variance, g_estimate, ols_product, GEstimate};
use crate::inference::{
    ols_sobel_lr, robust_sobel, robust_wald_direct, score_test, HypothesisSpec, ScoreOptions, TestMethod, TestOutcome,
};

pub const MIN_EXPERIMENT_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// G-estimation with the analysis configuration's nuisance strategy.
    GEstimation,
    /// Product of OLS coefficients.
    Ols,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::GEstimation => "g-estimation",
            Estimator::Ols => "ols",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "g" | "g-estimation" => Ok(Estimator::GEstimation),
            "ols" => Ok(Estimator::Ols),
            _ => Err(GmedError::InvalidInput(format!("unknown estimator `{s}`"))),
        }
    }
}

/// A test method paired with the null it targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRequest {
    pub method: TestMethod,
    pub alpha: f64,
}

impl TestRequest {
    /// Sobel-type and direct Wald tests only exist for their own `α`.
    pub fn new(method: TestMethod, alpha: f64) -> Result<Self> {
        HypothesisSpec::new(alpha)?;
        if let Some(fixed) = method.fixed_alpha() {
            if fixed != alpha {
                return Err(GmedError::InvalidInput(format!("{} only tests alpha = {fixed}", method.label())));
            }
        }
        Ok(Self { method, alpha })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExperimentOptions {
    pub analysis: ModelConfig,
    /// Bootstrap replicates per dataset; 0 skips the bootstrap.
    pub bootstrap: usize,
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub truth: f64,
    pub bias: McCell,
    /// `n · Var(estimate)` across replicates.
    pub variance: McCell,
    /// Mean of `n · SE²` from the estimator's own variance formula.
    pub theory_variance: McCell,
    pub bootstrap_variance: Option<McCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub successes: usize,
    pub failures: usize,
    pub nide: EffectSummary,
    pub nde: EffectSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub method: TestMethod,
    pub alpha: f64,
    pub rejection_rate: McCell,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: DgpSpec,
    pub replicates: usize,
    pub level: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub tests: Vec<TestSummary>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    nide: f64,
    nde: f64,
    nide_var: f64,
    nde_var: f64,
    boot: Option<(f64, f64)>,
}

struct Replicate {
    estimates: Vec<Option<Draw>>,
    rejections: Vec<Option<bool>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn mean_cell(v: &[f64]) -> McCell {
    if v.is_empty() {
        return McCell { value: f64::NAN, se: f64::NAN };
    }
    McCell { value: mean(v), se: (sample_var(v) / v.len() as f64).sqrt() }
}

fn effect(truth: f64, n: usize, est: &[f64], theory: &[f64], boot: Option<Vec<f64>>) -> EffectSummary {
    let r = est.len() as f64;
    let bias = mean_cell(&est.iter().map(|e| e - truth).collect::<Vec<_>>());
    let var = n as f64 * sample_var(est);
    EffectSummary {
        truth,
        bias,
        variance: McCell { value: var, se: var * (2.0 / (r - 1.0)).sqrt() },
        theory_variance: mean_cell(theory),
        bootstrap_variance: boot.map(|b| mean_cell(&b)),
    }
}

fn bootstrap_seed(seed: u64, replicate: u64) -> u64 {
    seed ^ replicate.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn g_draw(data: &Dataset, est: &GEstimate, opts: &ExperimentOptions, seed: u64) -> Option<Draw> {
    let n = data.n() as f64;
    let boot = if opts.bootstrap > 0 {
        let b = bootstrap_variance(data, &opts.analysis, opts.bootstrap, seed).ok()?;
        Some((n * b.nide_se_boot.powi(2), n * b.nde_se_boot.powi(2)))
    } else {
        None
    };
    Some(Draw { nide: est.nide, nde: est.nde, nide_var: n * est.nide_se.powi(2), nde_var: n * est.nde_se.powi(2), boot })
}

fn ols_draw(data: &Dataset) -> Option<Draw> {
    let fit = ols_product(data, false).ok()?;
    let b = &fit.beta;
    let n = data.n() as f64;
    // delta method without the cross term (independent regressions)
    let nide_var = b.beta2.powi(2) * fit.se[0].powi(2) + b.beta1.powi(2) * fit.se[1].powi(2);
    Some(Draw { nide: b.nide(), nde: b.nde(), nide_var: n * nide_var, nde_var: n * fit.se[2].powi(2), boot: None })
}

fn run_test(
    data: &Dataset,
    config: &ModelConfig,
    req: &TestRequest,
    est: Option<&GEstimate>,
    classical: &Option<(TestOutcome, TestOutcome)>,
) -> Option<TestOutcome> {
    match req.method {
        TestMethod::SobelOls => classical.as_ref().map(|c| c.0.clone()),
        TestMethod::LrOls => classical.as_ref().map(|c| c.1.clone()),
        TestMethod::RobustSobel => robust_sobel(est?).ok(),
        TestMethod::RobustWaldDirect => robust_wald_direct(est?).ok(),
        TestMethod::ScoreTwoStep | TestMethod::ScoreCue => {
            let hyp = HypothesisSpec::new(req.alpha).ok()?;
            score_test(data, config, &hyp, req.method, Some(est?), &ScoreOptions::default()).ok()
        }
    }
}

/// Runs `replicates` datasets of `spec` in parallel and aggregates in
/// replicate order, so the result does not depend on the thread count.
/// Failed fits and tests are excluded from their cell and counted.
pub fn run_experiment(
    spec: &DgpSpec,
    replicates: usize,
    estimators: &[Estimator],
    tests: &[TestRequest],
    level: f64,
) -> Result<ExperimentResult> {
    run_experiment_with(spec, replicates, estimators, tests, level, &ExperimentOptions::default())
}

pub fn run_experiment_with(
    spec: &DgpSpec,
    replicates: usize,
    estimators: &[Estimator],
    tests: &[TestRequest],
    level: f64,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    if replicates < MIN_EXPERIMENT_REPLICATES {
        return Err(GmedError::InvalidInput(format!(
            "experiments need at least {MIN_EXPERIMENT_REPLICATES} replicates, got {replicates}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(GmedError::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    if opts.analysis.nuisance == NuisanceStrategy::MaximumLikelihood && tests.iter().any(|t| t.method == TestMethod::ScoreCue) {
        return Err(GmedError::OrthogonalityRequired);
    }
    if opts.bootstrap > 0 && opts.bootstrap < crate::estimation::MIN_REPLICATES {
        return Err(GmedError::InvalidInput(format!(
            "bootstrap needs at least {} replicates",
            crate::estimation::MIN_REPLICATES
        )));
    }
    // validate the generator once up front
    generate_replicate(spec, 0)?;

    let needs_g = estimators.contains(&Estimator::GEstimation)
        || tests.iter().any(|t| !matches!(t.method, TestMethod::SobelOls | TestMethod::LrOls));
    let needs_classical = tests.iter().any(|t| matches!(t.method, TestMethod::SobelOls | TestMethod::LrOls));

    let reps: Vec<Replicate> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let Ok(data) = generate_replicate(spec, r) else {
                return Replicate { estimates: vec![None; estimators.len()], rejections: vec![None; tests.len()] };
            };
            let est = if needs_g { g_estimate(&data, &opts.analysis, None).ok() } else { None };
            let classical = if needs_classical { ols_sobel_lr(&data).ok() } else { None };
            let estimates = estimators
                .iter()
                .map(|e| match e {
                    Estimator::GEstimation => est.as_ref().and_then(|g| g_draw(&data, g, opts, bootstrap_seed(spec.seed, r))),
                    Estimator::Ols => ols_draw(&data),
                })
                .collect();
            let rejections = tests
                .iter()
                .map(|t| {
                    run_test(&data, &opts.analysis, t, est.as_ref(), &classical)
                        .filter(|o| o.p_value.is_finite())
                        .map(|o| o.rejects(level))
                })
                .collect();
            Replicate { estimates, rejections }
        })
        .collect();

    let estimator_summaries = estimators
        .iter()
        .enumerate()
        .map(|(k, &estimator)| {
            let draws: Vec<Draw> = reps.iter().filter_map(|r| r.estimates[k]).collect();
            let col = |f: fn(&Draw) -> f64| draws.iter().map(f).collect::<Vec<_>>();
            let boot = |f: fn(&(f64, f64)) -> f64| {
                (opts.bootstrap > 0 && estimator == Estimator::GEstimation)
                    .then(|| draws.iter().filter_map(|d| d.boot.as_ref().map(f)).collect::<Vec<_>>())
            };
            EstimatorSummary {
                estimator,
                successes: draws.len(),
                failures: replicates - draws.len(),
                nide: effect(spec.true_nide(), spec.n, &col(|d| d.nide), &col(|d| d.nide_var), boot(|b| b.0)),
                nde: effect(spec.true_nde(), spec.n, &col(|d| d.nde), &col(|d| d.nde_var), boot(|b| b.1)),
            }
        })
        .collect();

    let test_summaries = tests
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let outcomes: Vec<bool> = reps.iter().filter_map(|r| r.rejections[k]).collect();
            let s = outcomes.len();
            let p = outcomes.iter().filter(|&&b| b).count() as f64 / s as f64;
            TestSummary {
                method: t.method,
                alpha: t.alpha,
                rejection_rate: McCell { value: p, se: (p * (1.0 - p) / s as f64).sqrt() },
                successes: s,
                failures: replicates - s,
            }
        })
        .collect();

    Ok(ExperimentResult {
        spec: spec.clone(),
        replicates,
        level,
        estimators: estimator_summaries,
        tests: test_summaries,
        flags: spec.flags(),
    })
}
