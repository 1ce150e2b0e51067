//! Working-model fits for the exposure, mediator and outcome nuisance
//! coefficients.
//!
//! The exposure model does not involve `β`, so it is fitted once per
//! dataset; the mediator and outcome blocks are weighted regressions of
//! `β`-dependent offsets on `Z` whose Gram matrices are also fixed. The
//! fitter caches both, making a refit at a new `β` a handful of triangular
//! solves.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, ExposureFamily, ModelConfig, NuisanceStrategy};
use crate::error::{GmedError, Result};
use crate::moments::{exposure_link, moments_for, targets, NuisanceParams, TargetParams};
use crate::numerics::linalg::{invert_square, weighted_gram, PivotedCholesky};
use crate::numerics::{irls_logistic, weighted_least_squares, IrlsOptions};

/// Tolerance used for the exposure fit inside the estimator; tighter than
/// the IRLS default so that downstream orthogonality holds to 1e-8 with room
/// to spare.
const EXPOSURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Factor {
    Cholesky(PivotedCholesky),
    Inverse(DMatrix<f64>),
}

impl Factor {
    /// Factors `Zᵀ diag(v) Z`; `v` may carry negative entries.
    fn new(z: &DMatrix<f64>, v: &DVector<f64>) -> Result<Self> {
        let (gram, _) = weighted_gram(z, v, &DVector::zeros(z.nrows()));
        if v.iter().all(|&a| a >= 0.0) {
            Ok(Factor::Cholesky(PivotedCholesky::new(&gram)?))
        } else {
            let inv = invert_square(&gram).map_err(|_| GmedError::RankDeficient {
                rank: z.ncols().saturating_sub(1),
                columns: z.ncols(),
            })?;
            Ok(Factor::Inverse(inv))
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Cholesky(c) => c.solve(rhs),
            Factor::Inverse(inv) => inv * rhs,
        }
    }
}

/// Weighted regression `Zᵀ diag(v) (t − Zγ) = 0` with a cached factor.
#[derive(Debug, Clone)]
struct CachedRegression {
    weights: DVector<f64>,
    factor: Factor,
}

impl CachedRegression {
    fn new(z: &DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        let factor = Factor::new(z, &weights)?;
        Ok(Self { weights, factor })
    }

    fn fit(&self, z: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(&(z.transpose() * target.component_mul(&self.weights)))
    }
}

/// Fits the exposure working model: logistic IRLS or Gaussian WLS.
pub fn fit_exposure(data: &Dataset, family: ExposureFamily) -> Result<DVector<f64>> {
    let z = data.confounders();
    match family {
        ExposureFamily::Gaussian => Ok(weighted_least_squares(z, data.exposure(), data.weights())?.coefficients),
        ExposureFamily::Binomial => {
            let opts = IrlsOptions { tol: EXPOSURE_TOL, ..IrlsOptions::default() };
            Ok(irls_logistic(z, data.exposure(), data.weights(), &opts)?.coefficients)
        }
    }
}

/// Nuisance fitter bound to one dataset and configuration.
#[derive(Debug, Clone)]
pub struct NuisanceFitter {
    config: ModelConfig,
    gamma_x: DVector<f64>,
    plain: CachedRegression,
    link_weighted: Option<CachedRegression>,
    exposure_weighted: Option<CachedRegression>,
}

impl NuisanceFitter {
    pub fn new(data: &Dataset, config: &ModelConfig) -> Result<Self> {
        config.validate(data)?;
        let z = data.confounders();
        let w = data.weights();
        let gamma_x = fit_exposure(data, config.exposure_family)?;
        let plain = CachedRegression::new(z, w.clone())?;
        let bias_reduced = config.nuisance == NuisanceStrategy::BiasReduced;
        let link_weighted = if bias_reduced && config.exposure_family == ExposureFamily::Binomial {
            let eta = z * &gamma_x;
            let dh = eta.map(|e| exposure_link(config.exposure_family, e).1);
            Some(CachedRegression::new(z, w.component_mul(&dh))?)
        } else {
            None
        };
        let exposure_weighted = if bias_reduced && config.interaction {
            Some(CachedRegression::new(z, w.component_mul(data.exposure()))?)
        } else {
            None
        };
        Ok(Self { config: *config, gamma_x, plain, link_weighted, exposure_weighted })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn gamma_x(&self) -> &DVector<f64> {
        &self.gamma_x
    }

    /// Nuisance coefficients at `beta` under the configured strategy.
    pub fn fit(&self, data: &Dataset, beta: &TargetParams) -> NuisanceParams {
        let z = data.confounders();
        let beta = if self.config.interaction {
            TargetParams { theta: Some(beta.theta.unwrap_or(0.0)), ..*beta }
        } else {
            TargetParams { theta: None, ..*beta }
        };
        let (mt, yt) = targets(data, &beta);
        let gamma_m = self.plain.fit(z, &mt);
        let gamma_y = self.plain.fit(z, &yt);
        let mut out = NuisanceParams::aliased(self.gamma_x.clone(), gamma_m, gamma_y);
        if self.config.nuisance == NuisanceStrategy::MaximumLikelihood {
            return out;
        }
        // E_n[h'(Zγx) r_m1 Z] = 0 and E_n[h'(Zγx) r_y2 Z] = 0; h' = 1 for the identity link.
        if let Some(reg) = &self.link_weighted {
            out.gamma_m1 = reg.fit(z, &mt);
            out.gamma_y2 = reg.fit(z, &yt);
        }
        // U₄'s copies solve E_n[X r_y3 Z] = 0 and E_n[X r_m3 Z] = 0.
        if let Some(reg) = &self.exposure_weighted {
            out.gamma_m3 = Some(reg.fit(z, &mt));
            out.gamma_y3 = Some(reg.fit(z, &yt));
        }
        out
    }
}

impl NuisanceFitter {
    /// Exposure residuals `X − h(Zγ̂x)`.
    pub(crate) fn exposure_residuals(&self, data: &Dataset) -> DVector<f64> {
        let eta = data.confounders() * &self.gamma_x;
        DVector::from_fn(data.n(), |i, _| data.exposure()[i] - exposure_link(self.config.exposure_family, eta[i]).0)
    }

    /// `(M, X, Y)` residualised on `Z` by the regression behind the plain
    /// copies (`m2`, `y1`) or, with `link_weighted`, behind `m1`, `y2`.
    /// Mediator and outcome residuals are linear combinations of these, so
    /// the profiled moments become explicit polynomials in `β`.
    pub(crate) fn residualised(&self, data: &Dataset, link_weighted: bool) -> [DVector<f64>; 3] {
        let z = data.confounders();
        let reg = match (&self.link_weighted, link_weighted) {
            (Some(r), true) => r,
            _ => &self.plain,
        };
        let res = |t: &DVector<f64>| t - z * reg.fit(z, t);
        [res(data.mediator()), res(data.exposure()), res(data.outcome())]
    }
}

/// Maximum-likelihood working-model fits at `beta`; the two copies of each
/// block are identical.
pub fn fit_nuisance_ml(data: &Dataset, beta: &TargetParams, config: &ModelConfig) -> Result<NuisanceParams> {
    let cfg = ModelConfig { nuisance: NuisanceStrategy::MaximumLikelihood, ..*config };
    Ok(NuisanceFitter::new(data, &cfg)?.fit(data, beta))
}

/// Bias-reduced fits: the solution of `E_n[∂U/∂γ] = 0`.
///
/// The system decouples block by block. The exposure copies solve the
/// canonical-link likelihood score, the mediator/outcome copies paired with
/// an exposure residual are regressions weighted by `h'(Zγx)`, and the
/// remaining copies are ordinary (or, for `U₄`, exposure-weighted)
/// regressions. The result is checked against the orthogonality condition.
pub fn fit_nuisance_bias_reduced(data: &Dataset, beta: &TargetParams, config: &ModelConfig) -> Result<NuisanceParams> {
    let cfg = ModelConfig { nuisance: NuisanceStrategy::BiasReduced, ..*config };
    let gamma = NuisanceFitter::new(data, &cfg)?.fit(data, beta);
    let residual = orthogonality_residual(data, beta, &gamma, &cfg)?;
    if residual > 1e-8 {
        return Err(GmedError::NonConvergence { iterations: 1, residual });
    }
    Ok(gamma)
}

/// `‖E_n[∂U/∂γ]‖∞` at `(beta, gamma)`.
pub fn orthogonality_residual(data: &Dataset, beta: &TargetParams, gamma: &NuisanceParams, config: &ModelConfig) -> Result<f64> {
    Ok(moments_for(data, beta, gamma, config)?.du_dgamma.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::expit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simulated(n: usize, seed: u64, binary: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DVector::from_fn(n, |i, _| {
            let lin = 0.3 * z[(i, 0)] - 0.5 * z[(i, 1)];
            if binary {
                (rng.random::<f64>() < expit(lin)) as u8 as f64
            } else {
                lin + rng.sample::<f64, _>(StandardNormal)
            }
        });
        let m = DVector::from_fn(n, |i, _| 0.8 * x[i] + z[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 0.5 * m[i] + 0.2 * x[i] - z[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
        Dataset::new(y, m, x, z, None).unwrap()
    }

    /// Normal equations solved by an independent elimination routine.
    fn normal_equation_oracle(z: &DMatrix<f64>, w: &DVector<f64>, t: &DVector<f64>) -> Vec<f64> {
        let p = z.ncols();
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..z.nrows() {
            for r in 0..p {
                a[r][p] += w[i] * z[(i, r)] * t[i];
                for c in 0..p {
                    a[r][c] += w[i] * z[(i, r)] * z[(i, c)];
                }
            }
        }
        for col in 0..p {
            for row in 0..p {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in 0..=p {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..p).map(|r| a[r][p] / a[r][r]).collect()
    }

    #[test]
    fn exact_mediator_model_is_recovered() {
        let d0 = simulated(60, 1, true);
        let c = DVector::from_vec(vec![0.3, -1.1, 2.0]);
        let m = d0.exposure() * 0.7 + d0.confounders() * &c;
        let d = d0.with_outcome_mediator(d0.outcome().clone(), m).unwrap();
        let g = fit_nuisance_ml(&d, &TargetParams::new(0.7, 0.0, 0.0), &ModelConfig::default()).unwrap();
        assert!((&g.gamma_m1 - &c).amax() < 1e-10);
        assert_eq!(g.gamma_m1, g.gamma_m2);
    }

    #[test]
    fn zero_beta_gives_plain_regression_of_mediator() {
        let d = simulated(80, 2, true);
        let g = fit_nuisance_ml(&d, &TargetParams::new(0.0, 0.0, 0.0), &ModelConfig::default()).unwrap();
        let direct = weighted_least_squares(d.confounders(), d.mediator(), d.weights()).unwrap();
        assert!((&g.gamma_m2 - &direct.coefficients).amax() < 1e-12);
    }

    #[test]
    fn ml_blocks_match_normal_equation_oracle() {
        let d = simulated(120, 3, false);
        let b = TargetParams::new(0.4, 0.3, -0.2);
        let cfg = ModelConfig::new(ExposureFamily::Gaussian, NuisanceStrategy::MaximumLikelihood);
        let g = fit_nuisance_ml(&d, &b, &cfg).unwrap();
        let (mt, yt) = targets(&d, &b);
        for (got, t) in [(&g.gamma_x1, d.exposure().clone()), (&g.gamma_m1, mt), (&g.gamma_y1, yt)] {
            let oracle = normal_equation_oracle(d.confounders(), d.weights(), &t);
            for j in 0..oracle.len() {
                assert!((got[j] - oracle[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bias_reduced_fit_is_orthogonal() {
        for seed in 0..5 {
            let d = simulated(300, 10 + seed, true);
            let b = TargetParams::new(0.5, 0.4, 0.1);
            let cfg = ModelConfig::default();
            let g = fit_nuisance_bias_reduced(&d, &b, &cfg).unwrap();
            assert!(orthogonality_residual(&d, &b, &g, &cfg).unwrap() <= 1e-8);
            // the copies differ for a logistic exposure model
            assert!((&g.gamma_m1 - &g.gamma_m2).amax() > 1e-6);
        }
    }

    #[test]
    fn bias_reduced_interaction_fit_is_orthogonal() {
        let d = simulated(400, 21, true);
        let b = TargetParams::with_theta(0.5, 0.4, 0.1, 0.3);
        let cfg = ModelConfig::default().with_interaction(true);
        let g = fit_nuisance_bias_reduced(&d, &b, &cfg).unwrap();
        assert!(orthogonality_residual(&d, &b, &g, &cfg).unwrap() <= 1e-8);
    }

    #[test]
    fn intercept_only_reduces_to_weighted_means() {
        let full = simulated(50, 4, true);
        let d = Dataset::new(
            full.outcome().clone(),
            full.mediator().clone(),
            full.exposure().clone(),
            DMatrix::zeros(50, 0),
            Some(DVector::from_fn(50, |i, _| 1.0 + (i % 3) as f64)),
        )
        .unwrap();
        let b = TargetParams::new(0.6, 0.2, 0.3);
        let g = fit_nuisance_bias_reduced(&d, &b, &ModelConfig::default()).unwrap();
        let (mt, yt) = targets(&d, &b);
        let xbar = d.weighted_mean(d.exposure());
        assert!((g.gamma_x1[0] - (xbar / (1.0 - xbar)).ln()).abs() < 1e-10);
        // h' is constant when Z is the intercept, so every copy is a weighted mean
        assert!((g.gamma_m1[0] - d.weighted_mean(&mt)).abs() < 1e-12);
        assert!((g.gamma_m2[0] - d.weighted_mean(&mt)).abs() < 1e-12);
        assert!((g.gamma_y1[0] - d.weighted_mean(&yt)).abs() < 1e-12);
        assert!((g.gamma_y2[0] - d.weighted_mean(&yt)).abs() < 1e-12);
    }

    #[test]
    fn identity_link_bias_reduction_agrees_with_ml() {
        let d = simulated(10_000, 5, false);
        let b = TargetParams::new(0.8, 0.5, 0.2);
        let br = fit_nuisance_bias_reduced(&d, &b, &ModelConfig::new(ExposureFamily::Gaussian, NuisanceStrategy::BiasReduced)).unwrap();
        let ml = fit_nuisance_ml(&d, &b, &ModelConfig::new(ExposureFamily::Gaussian, NuisanceStrategy::MaximumLikelihood)).unwrap();
        // both consistent; with the identity link they solve the same equations
        assert!((br.to_vector(false) - ml.to_vector(false)).amax() < 1e-10);
    }
}
