use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nuisance::NuisanceFitter;
use super::ols::ols_product;
use crate::data::{Dataset, ModelConfig, NuisanceStrategy};
use crate::error::{GmedError, Result};
use crate::moments::{exposure_link, moments_for, targets, MomentEvaluation, NuisanceParams, TargetParams};
use crate::numerics::{finite_difference_jacobian, newton_solve, RootSolveReport};

/// Joint convergence requirement on `‖E_n[U]‖∞`.
pub const ESTIMATE_TOL: f64 = 1e-8;

/// Target for the inner Newton solve; well below `ESTIMATE_TOL`.
const INNER_TOL: f64 = 1e-12;

const MAX_ITER: usize = 100;

/// Fitted structural parameters with influence-function inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GEstimate {
    pub beta_hat: TargetParams,
    pub gamma_hat: NuisanceParams,
    /// Per-row influence values, `n × k`; weights already folded in.
    pub influence_rows: DMatrix<f64>,
    /// Covariance of `β̂` on the `1/n` scale.
    pub beta_cov: DMatrix<f64>,
    pub nide: f64,
    pub nide_se: f64,
    pub nde: f64,
    pub nde_se: f64,
    pub solver_report: RootSolveReport,
    /// Both `|β̂₁|/σ̂₁` and `|β̂₂|/σ̂₂` below 0.1: the first-order NIDE
    /// variance is unreliable near `(β₁, β₂) = (0, 0)`.
    pub near_singular_nide: bool,
    pub moment_residual: f64,
    pub orthogonality_residual: f64,
    pub config: ModelConfig,
}

impl GEstimate {
    pub fn beta_se(&self, j: usize) -> f64 {
        self.beta_cov[(j, j)].max(0.0).sqrt()
    }

    pub fn n(&self) -> usize {
        self.influence_rows.nrows()
    }
}

/// Options for [`g_estimate_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GEstimateOptions {
    pub start: Option<TargetParams>,
    /// Skip the influence-function step (bootstrap replicates only need `β̂`).
    pub skip_influence: bool,
}

/// G-estimation of `β` (and `θ` when interaction is enabled).
pub fn g_estimate(data: &Dataset, config: &ModelConfig, start: Option<TargetParams>) -> Result<GEstimate> {
    g_estimate_with(data, config, &GEstimateOptions { start, skip_influence: false })
}

/// Solves `E_n[U(β, γ̂(β))] = 0`.
///
/// The nuisance fit is profiled out: each Newton iterate refits `γ` at the
/// current `β`, which is the fixed point of alternating `β`-Newton and
/// `γ`-refit steps. Because `γ̂(β)` is affine in `β`, the profiled moments are
/// quadratic in `β` and central differences give their Jacobian exactly up
/// to rounding.
pub fn g_estimate_with(data: &Dataset, config: &ModelConfig, opts: &GEstimateOptions) -> Result<GEstimate> {
    let fitter = NuisanceFitter::new(data, config)?;
    let start = match opts.start {
        Some(s) => s,
        None => ols_product(data, config.interaction)?.beta,
    };
    let start = normalise(start, config);
    let profiled = |b: &DVector<f64>| -> DVector<f64> {
        let beta = TargetParams::from_slice(b.as_slice());
        let gamma = fitter.fit(data, &beta);
        match moments_for(data, &beta, &gamma, config) {
            Ok(ev) => ev.u_bar,
            Err(_) => DVector::from_element(b.len(), f64::NAN),
        }
    };
    let jac = |b: &DVector<f64>| finite_difference_jacobian(&profiled, b);
    let report = newton_solve(&profiled, Some(&jac), &start.to_vector(), INNER_TOL, MAX_ITER)?;
    let beta_hat = TargetParams::from_slice(report.solution.as_slice());
    let gamma_hat = fitter.fit(data, &beta_hat);
    let ev = moments_for(data, &beta_hat, &gamma_hat, config)?;
    let moment_residual = ev.u_bar.amax();
    if !(moment_residual <= ESTIMATE_TOL) {
        return Err(GmedError::NonConvergence { iterations: report.iterations, residual: moment_residual });
    }
    let solver_report = RootSolveReport {
        converged: true,
        final_residual_norm: moment_residual,
        ..report
    };
    let orthogonality_residual = ev.du_dgamma.amax();
    let k = beta_hat.dim();

    let (influence_rows, beta_cov) = if opts.skip_influence {
        (DMatrix::zeros(0, k), DMatrix::from_element(k, k, f64::NAN))
    } else {
        let rows = influence(data, config, &beta_hat, &gamma_hat, &ev)?;
        let n = data.n() as f64;
        let cov = rows.transpose() * &rows / (n * n);
        (rows, (&cov + cov.transpose()) * 0.5)
    };

    let (nide_se, near_singular_nide) = if opts.skip_influence {
        (f64::NAN, false)
    } else {
        let n = data.n() as f64;
        let omega = influence_rows.column(1) * beta_hat.beta1 + influence_rows.column(0) * beta_hat.beta2;
        let se = (omega.norm_squared() / (n * n)).sqrt();
        let s1 = beta_cov[(0, 0)].sqrt();
        let s2 = beta_cov[(1, 1)].sqrt();
        (se, beta_hat.beta1.abs() < 0.1 * s1 && beta_hat.beta2.abs() < 0.1 * s2)
    };
    let nde_se = beta_cov[(2, 2)].max(0.0).sqrt();

    Ok(GEstimate {
        nide: beta_hat.nide(),
        nde: beta_hat.nde(),
        nide_se,
        nde_se,
        beta_hat,
        gamma_hat,
        influence_rows,
        beta_cov,
        solver_report,
        near_singular_nide,
        moment_residual,
        orthogonality_residual,
        config: *config,
    })
}

fn normalise(beta: TargetParams, config: &ModelConfig) -> TargetParams {
    if config.interaction {
        TargetParams { theta: Some(beta.theta.unwrap_or(0.0)), ..beta }
    } else {
        TargetParams { theta: None, ..beta }
    }
}

/// Per-row influence values of `β̂`, scaled by the normalised weights so
/// that `beta_cov = Σ φᵢφᵢᵀ / n²`.
///
/// Bias-reduced nuisance: `φ = −E_n[∂U/∂β]⁻¹ U`. Maximum likelihood: the
/// `β` block of the stacked M-estimator `−J⁻¹ (U, S_x, S_m, S_y)` where the
/// `S` are the working-model scores.
pub fn influence(
    data: &Dataset,
    config: &ModelConfig,
    beta: &TargetParams,
    gamma: &NuisanceParams,
    ev: &MomentEvaluation,
) -> Result<DMatrix<f64>> {
    let n = data.n();
    let k = beta.dim();
    let w = data.weights();
    let wbar = w.mean();
    let raw = match config.nuisance {
        NuisanceStrategy::BiasReduced => {
            let a = &ev.du_dbeta;
            let mut out = DMatrix::zeros(n, k);
            let inv = crate::numerics::linalg::invert_square(a)?;
            for i in 0..n {
                let u = ev.u_rows.row(i).transpose();
                let phi = -(&inv * u);
                out.set_row(i, &phi.transpose());
            }
            out
        }
        NuisanceStrategy::MaximumLikelihood => stacked_influence(data, config, beta, gamma, ev)?,
    };
    let mut scaled = raw;
    for i in 0..n {
        let s = w[i] / wbar;
        for j in 0..k {
            scaled[(i, j)] *= s;
        }
    }
    Ok(scaled)
}

fn stacked_influence(
    data: &Dataset,
    config: &ModelConfig,
    beta: &TargetParams,
    gamma: &NuisanceParams,
    ev: &MomentEvaluation,
) -> Result<DMatrix<f64>> {
    let n = data.n();
    let k = beta.dim();
    let p = data.gamma_dim();
    let z = data.confounders();
    let (x, m) = (data.exposure(), data.mediator());
    let w = data.weights();
    let total = w.sum();
    let dim = k + 3 * p;

    let eta = z * &gamma.gamma_x1;
    let (h, dh): (Vec<f64>, Vec<f64>) = eta.iter().map(|&e| exposure_link(config.exposure_family, e)).unzip();
    let (mt, yt) = targets(data, beta);
    let rx = DVector::from_fn(n, |i, _| x[i] - h[i]);
    let rm = &mt - z * &gamma.gamma_m2;
    let ry = &yt - z * &gamma.gamma_y1;

    // stacked scores, one row per observation
    let mut s = DMatrix::zeros(n, dim);
    s.view_mut((0, 0), (n, k)).copy_from(&ev.u_rows);
    for i in 0..n {
        for j in 0..p {
            s[(i, k + j)] = rx[i] * z[(i, j)];
            s[(i, k + p + j)] = rm[i] * z[(i, j)];
            s[(i, k + 2 * p + j)] = ry[i] * z[(i, j)];
        }
    }

    let mut jac = DMatrix::zeros(dim, dim);
    jac.view_mut((0, 0), (k, k)).copy_from(&ev.du_dbeta);
    // collapse the copies: every copy of a block equals the same estimate
    let copies: [&[usize]; 3] = if k == 4 { [&[0, 1], &[2, 3, 6], &[4, 5, 7]] } else { [&[0, 1], &[2, 3], &[4, 5]] };
    for (b, blocks) in copies.iter().enumerate() {
        for &c in blocks.iter() {
            let src = ev.du_dgamma.view((0, c * p), (k, p)).into_owned();
            let mut dst = jac.view_mut((0, k + b * p), (k, p));
            dst += src;
        }
    }
    let mean_zz = |f: &dyn Fn(usize) -> f64| {
        let mut out = DMatrix::zeros(p, p);
        for i in 0..n {
            let c = w[i] * f(i);
            for a in 0..p {
                for b in 0..p {
                    out[(a, b)] += c * z[(i, a)] * z[(i, b)];
                }
            }
        }
        out / total
    };
    let mean_z = |f: &dyn Fn(usize) -> f64| {
        let c = DVector::from_fn(n, |i, _| w[i] * f(i));
        z.transpose() * c / total
    };
    jac.view_mut((k, k), (p, p)).copy_from(&(-mean_zz(&|i| dh[i])));
    let zz = mean_zz(&|_| 1.0);
    jac.view_mut((k + p, k + p), (p, p)).copy_from(&(-&zz));
    jac.view_mut((k + 2 * p, k + 2 * p), (p, p)).copy_from(&(-&zz));
    jac.view_mut((k + p, 0), (p, 1)).copy_from(&(-mean_z(&|i| x[i])));
    jac.view_mut((k + 2 * p, 1), (p, 1)).copy_from(&(-mean_z(&|i| m[i])));
    jac.view_mut((k + 2 * p, 2), (p, 1)).copy_from(&(-mean_z(&|i| x[i])));
    if k == 4 {
        jac.view_mut((k + 2 * p, 3), (p, 1)).copy_from(&(-mean_z(&|i| x[i] * m[i])));
    }

    let inv = crate::numerics::linalg::invert_square(&jac)?;
    let phi = -(s * inv.transpose());
    Ok(phi.columns(0, k).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExposureFamily;
    use crate::numerics::expit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simulated(n: usize, seed: u64, beta: [f64; 3], binary: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DVector::from_fn(n, |i, _| {
            if binary {
                (rng.random::<f64>() < expit(z[(i, 0)])) as u8 as f64
            } else {
                z[(i, 0)] + rng.sample::<f64, _>(StandardNormal)
            }
        });
        let m = DVector::from_fn(n, |i, _| beta[0] * x[i] + z[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| beta[1] * m[i] + beta[2] * x[i] + z[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        Dataset::new(y, m, x, z, None).unwrap()
    }

    #[test]
    fn fit_satisfies_moments_and_orthogonality() {
        let d = simulated(500, 1, [1.0, 0.5, 0.3], true);
        let est = g_estimate(&d, &ModelConfig::default(), None).unwrap();
        assert!(est.moment_residual <= 1e-8);
        assert!(est.orthogonality_residual <= 1e-8);
        assert_eq!(est.nide, est.beta_hat.beta1 * est.beta_hat.beta2);
        for j in 0..3 {
            assert!(est.influence_rows.column(j).mean().abs() <= 1e-8);
        }
    }

    #[test]
    fn nide_se_matches_recomputation() {
        let d = simulated(400, 2, [0.7, 0.6, 0.0], true);
        let est = g_estimate(&d, &ModelConfig::default(), None).unwrap();
        let n = d.n() as f64;
        let mut acc = 0.0;
        for i in 0..d.n() {
            let omega = est.beta_hat.beta1 * est.influence_rows[(i, 1)] + est.beta_hat.beta2 * est.influence_rows[(i, 0)];
            acc += omega * omega;
        }
        assert!((est.nide_se - (acc / n / n).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ml_influence_matches_finite_difference_sandwich() {
        // For ML nuisance the stacked influence equals -J⁻¹S where J is the
        // derivative of the stacked mean score; cross-check the β-block
        // covariance against a numerically differentiated stacked system.
        let d = simulated(300, 3, [0.8, 0.4, 0.2], false);
        let cfg = ModelConfig::new(ExposureFamily::Gaussian, NuisanceStrategy::MaximumLikelihood);
        let est = g_estimate(&d, &cfg, None).unwrap();
        let p = d.gamma_dim();
        let z = d.confounders().clone();
        let stacked_mean = |theta: &DVector<f64>| -> DVector<f64> {
            let b = TargetParams::from_slice(&theta.as_slice()[..3]);
            let gx = theta.rows(3, p).into_owned();
            let gm = theta.rows(3 + p, p).into_owned();
            let gy = theta.rows(3 + 2 * p, p).into_owned();
            let g = NuisanceParams::aliased(gx.clone(), gm.clone(), gy.clone());
            let ev = moments_for(&d, &b, &g, &cfg).unwrap();
            let (mt, yt) = targets(&d, &b);
            let sx = z.transpose() * (d.exposure() - &z * gx) / d.n() as f64;
            let sm = z.transpose() * (mt - &z * gm) / d.n() as f64;
            let sy = z.transpose() * (yt - &z * gy) / d.n() as f64;
            let mut out = ev.u_bar.as_slice().to_vec();
            out.extend(sx.iter());
            out.extend(sm.iter());
            out.extend(sy.iter());
            DVector::from_vec(out)
        };
        let g = &est.gamma_hat;
        let mut theta = est.beta_hat.to_vector().as_slice().to_vec();
        theta.extend(g.gamma_x1.iter());
        theta.extend(g.gamma_m1.iter());
        theta.extend(g.gamma_y1.iter());
        let theta = DVector::from_vec(theta);
        let jac = finite_difference_jacobian(stacked_mean, &theta);
        let ev = moments_for(&d, &est.beta_hat, g, &cfg).unwrap();
        let manual = stacked_influence(&d, &cfg, &est.beta_hat, g, &ev).unwrap();
        // rebuild scores row by row and apply the numeric Jacobian
        let inv = crate::numerics::linalg::invert_square(&jac).unwrap();
        let (mt, yt) = targets(&d, &est.beta_hat);
        for i in [0usize, 17, 123, 299] {
            let mut s = ev.u_rows.row(i).transpose().as_slice().to_vec();
            let zi = z.row(i).transpose();
            s.extend((zi.clone() * (d.exposure()[i] - (z.row(i) * &g.gamma_x1)[0])).iter());
            s.extend((zi.clone() * (mt[i] - (z.row(i) * &g.gamma_m1)[0])).iter());
            s.extend((zi * (yt[i] - (z.row(i) * &g.gamma_y1)[0])).iter());
            let phi = -(&inv * DVector::from_vec(s));
            for j in 0..3 {
                assert!((phi[j] - manual[(i, j)]).abs() < 1e-6 * phi[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn gaussian_ml_matches_ols_on_linear_data() {
        let d = simulated(2000, 4, [0.9, 0.5, 0.3], false);
        let cfg = ModelConfig::new(ExposureFamily::Gaussian, NuisanceStrategy::MaximumLikelihood);
        let est = g_estimate(&d, &cfg, None).unwrap();
        let ols = ols_product(&d, false).unwrap();
        assert!((est.beta_hat.beta1 - ols.beta.beta1).abs() < 1e-6);
        assert!((est.beta_hat.beta2 - ols.beta.beta2).abs() < 1e-6);
        assert!((est.beta_hat.beta3 - ols.beta.beta3).abs() < 1e-6);
    }

    #[test]
    fn shifting_outcome_or_mediator_leaves_beta_unchanged() {
        let d = simulated(300, 5, [0.6, 0.8, -0.4], true);
        let cfg = ModelConfig::default();
        let base = g_estimate(&d, &cfg, None).unwrap();
        let shifted_y = d.with_outcome_mediator(d.outcome().map(|v| v + 3.5), d.mediator().clone()).unwrap();
        let shifted_m = d.with_outcome_mediator(d.outcome().clone(), d.mediator().map(|v| v - 2.0)).unwrap();
        for other in [shifted_y, shifted_m] {
            let e = g_estimate(&other, &cfg, None).unwrap();
            assert!((e.beta_hat.to_vector() - base.beta_hat.to_vector()).amax() < 1e-8);
        }
    }

    #[test]
    fn weight_scale_does_not_matter() {
        let d = simulated(300, 6, [0.6, 0.8, -0.4], true);
        let cfg = ModelConfig::default();
        let a = g_estimate(&d, &cfg, None).unwrap();
        let b = g_estimate(&d.with_weights(DVector::from_element(300, 0.5)).unwrap(), &cfg, None).unwrap();
        assert!((a.beta_hat.to_vector() - b.beta_hat.to_vector()).amax() < 1e-10);
        assert!((a.nide_se - b.nide_se).abs() < 1e-10);
    }

    #[test]
    fn interaction_model_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2000;
        let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DVector::from_fn(n, |i, _| (rng.random::<f64>() < expit(z[(i, 0)])) as u8 as f64);
        let m = DVector::from_fn(n, |i, _| 0.8 * x[i] + z[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 0.5 * m[i] + 0.5 * x[i] * m[i] + 0.2 * x[i] + z[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let d = Dataset::new(y, m, x, z, None).unwrap();
        let cfg = ModelConfig::default().with_interaction(true);
        let est = g_estimate(&d, &cfg, None).unwrap();
        assert!(est.orthogonality_residual <= 1e-8);
        assert_eq!(est.influence_rows.ncols(), 4);
        let theta = est.beta_hat.theta.unwrap();
        assert!((theta - 0.5).abs() < 4.0 * est.beta_se(3), "{theta}");
    }
}
