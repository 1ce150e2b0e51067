//! G-moment conditions, their analytic derivatives and the empirical
//! moment covariance.
//!
//! Every empirical expectation is the weighted mean `Σ wᵢ(·)ᵢ / Σ wᵢ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ExposureFamily, ModelConfig};
use crate::error::{GmedError, Result};
use crate::numerics::expit;

/// Structural parameters `(β₁, β₂, β₃)` and the optional interaction `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub theta: Option<f64>,
}

impl TargetParams {
    pub fn new(beta1: f64, beta2: f64, beta3: f64) -> Self {
        Self { beta1, beta2, beta3, theta: None }
    }

    pub fn with_theta(beta1: f64, beta2: f64, beta3: f64, theta: f64) -> Self {
        Self { beta1, beta2, beta3, theta: Some(theta) }
    }

    pub fn dim(&self) -> usize {
        if self.theta.is_some() {
            4
        } else {
            3
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = vec![self.beta1, self.beta2, self.beta3];
        if let Some(t) = self.theta {
            v.push(t);
        }
        DVector::from_vec(v)
    }

    /// Inverse of [`TargetParams::to_vector`]; a length-4 slice carries `θ`.
    pub fn from_slice(v: &[f64]) -> Self {
        Self { beta1: v[0], beta2: v[1], beta3: v[2], theta: v.get(3).copied() }
    }

    pub fn nide(&self) -> f64 {
        self.beta1 * self.beta2
    }

    pub fn nde(&self) -> f64 {
        self.beta3
    }
}

/// Working-model coefficient blocks.
///
/// Each moment gets its own copy of the nuisance coefficients it uses:
/// `(x1, m1)` enter `U₁`, `(m2, y1)` enter `U₂`, `(x2, y2)` enter `U₃`, and
/// with interaction `(m3, y3)` enter `U₄`. Under maximum likelihood the
/// copies hold the same values. `None` for `m3`/`y3` aliases `m2`/`y1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceParams {
    pub gamma_x1: DVector<f64>,
    pub gamma_x2: DVector<f64>,
    pub gamma_m1: DVector<f64>,
    pub gamma_m2: DVector<f64>,
    pub gamma_y1: DVector<f64>,
    pub gamma_y2: DVector<f64>,
    pub gamma_m3: Option<DVector<f64>>,
    pub gamma_y3: Option<DVector<f64>>,
}

impl NuisanceParams {
    /// All copies set to the same three blocks.
    pub fn aliased(gamma_x: DVector<f64>, gamma_m: DVector<f64>, gamma_y: DVector<f64>) -> Self {
        Self {
            gamma_x1: gamma_x.clone(),
            gamma_x2: gamma_x,
            gamma_m1: gamma_m.clone(),
            gamma_m2: gamma_m,
            gamma_y1: gamma_y.clone(),
            gamma_y2: gamma_y,
            gamma_m3: None,
            gamma_y3: None,
        }
    }

    pub fn gamma_m3(&self) -> &DVector<f64> {
        self.gamma_m3.as_ref().unwrap_or(&self.gamma_m2)
    }

    pub fn gamma_y3(&self) -> &DVector<f64> {
        self.gamma_y3.as_ref().unwrap_or(&self.gamma_y1)
    }

    /// Blocks in the column order of `dU_dgamma`: x1, x2, m1, m2, y1, y2
    /// and, for the four-moment system, m3, y3.
    pub fn blocks(&self, four: bool) -> Vec<&DVector<f64>> {
        let mut b = vec![
            &self.gamma_x1,
            &self.gamma_x2,
            &self.gamma_m1,
            &self.gamma_m2,
            &self.gamma_y1,
            &self.gamma_y2,
        ];
        if four {
            b.push(self.gamma_m3());
            b.push(self.gamma_y3());
        }
        b
    }

    /// Stacks the blocks into one vector (same order as [`NuisanceParams::blocks`]).
    pub fn to_vector(&self, four: bool) -> DVector<f64> {
        let blocks = self.blocks(four);
        let total = blocks.iter().map(|b| b.len()).sum();
        DVector::from_iterator(total, blocks.into_iter().flat_map(|b| b.iter().copied()))
    }

    /// Inverse of [`NuisanceParams::to_vector`] for blocks of length `p`.
    pub fn from_vector(v: &DVector<f64>, p: usize) -> Self {
        let block = |k: usize| v.rows(k * p, p).into_owned();
        let four = v.len() == 8 * p;
        Self {
            gamma_x1: block(0),
            gamma_x2: block(1),
            gamma_m1: block(2),
            gamma_m2: block(3),
            gamma_y1: block(4),
            gamma_y2: block(5),
            gamma_m3: four.then(|| block(6)),
            gamma_y3: four.then(|| block(7)),
        }
    }
}

/// Moments and derivatives at one `(β, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEvaluation {
    /// Weighted sample mean of the per-row moments.
    pub u_bar: DVector<f64>,
    /// Per-row moments, `n × k`.
    pub u_rows: DMatrix<f64>,
    /// `E_n[∂U/∂β]`, `k × k` (columns β₁, β₂, β₃ and θ).
    pub du_dbeta: DMatrix<f64>,
    /// `E_n[∂U/∂γ]`, columns ordered as [`NuisanceParams::blocks`].
    pub du_dgamma: DMatrix<f64>,
    /// `E_n[U Uᵀ]`.
    pub i_hat: DMatrix<f64>,
}

/// Inverse link and its derivative at `η` for the exposure model.
pub fn exposure_link(family: ExposureFamily, eta: f64) -> (f64, f64) {
    match family {
        ExposureFamily::Gaussian => (eta, 1.0),
        ExposureFamily::Binomial => {
            let p = expit(eta);
            (p, p * (1.0 - p))
        }
    }
}

/// Residual columns shared by the moment evaluators and the nuisance fits.
pub(crate) struct Residuals {
    pub rx1: DVector<f64>,
    pub rx2: DVector<f64>,
    pub dh1: DVector<f64>,
    pub dh2: DVector<f64>,
    pub rm1: DVector<f64>,
    pub rm2: DVector<f64>,
    pub rm3: DVector<f64>,
    pub ry1: DVector<f64>,
    pub ry2: DVector<f64>,
    pub ry3: DVector<f64>,
}

/// `M − β₁X` and `Y − β₂M − β₃X − θXM`, the offsets the mediator and
/// outcome working models regress on `Z`.
pub(crate) fn targets(data: &Dataset, beta: &TargetParams) -> (DVector<f64>, DVector<f64>) {
    let (x, m, y) = (data.exposure(), data.mediator(), data.outcome());
    let theta = beta.theta.unwrap_or(0.0);
    let mt = m - x * beta.beta1;
    let yt = DVector::from_fn(data.n(), |i, _| {
        y[i] - beta.beta2 * m[i] - beta.beta3 * x[i] - theta * x[i] * m[i]
    });
    (mt, yt)
}

pub(crate) fn residuals(data: &Dataset, beta: &TargetParams, gamma: &NuisanceParams, family: ExposureFamily) -> Residuals {
    let z = data.confounders();
    let x = data.exposure();
    let (mt, yt) = targets(data, beta);
    let link = |g: &DVector<f64>| {
        let eta = z * g;
        let mut r = DVector::zeros(eta.len());
        let mut d = DVector::zeros(eta.len());
        for i in 0..eta.len() {
            let (h, dh) = exposure_link(family, eta[i]);
            r[i] = x[i] - h;
            d[i] = dh;
        }
        (r, d)
    };
    let (rx1, dh1) = link(&gamma.gamma_x1);
    let (rx2, dh2) = link(&gamma.gamma_x2);
    Residuals {
        rx1,
        rx2,
        dh1,
        dh2,
        rm1: &mt - z * &gamma.gamma_m1,
        rm2: &mt - z * &gamma.gamma_m2,
        rm3: &mt - z * gamma.gamma_m3(),
        ry1: &yt - z * &gamma.gamma_y1,
        ry2: &yt - z * &gamma.gamma_y2,
        ry3: &yt - z * gamma.gamma_y3(),
    }
}

fn check_dims(data: &Dataset, gamma: &NuisanceParams, four: bool) -> Result<()> {
    let p = data.gamma_dim();
    for (name, b) in ["x1", "x2", "m1", "m2", "y1", "y2", "m3", "y3"].iter().zip(gamma.blocks(four)) {
        if b.len() != p {
            return Err(GmedError::DimensionMismatch(format!(
                "gamma_{name} has {} entries but the confounder design has {p} columns",
                b.len()
            )));
        }
    }
    Ok(())
}

/// Weighted column means of `Zᵀ (w ∘ c)` scaled by `1/Σw`.
fn z_moment(z: &DMatrix<f64>, w: &DVector<f64>, total: f64, c: &DVector<f64>) -> DVector<f64> {
    z.transpose() * c.component_mul(w) / total
}

fn evaluate(data: &Dataset, beta: &TargetParams, gamma: &NuisanceParams, config: &ModelConfig, four: bool) -> Result<MomentEvaluation> {
    check_dims(data, gamma, four)?;
    let n = data.n();
    let p = data.gamma_dim();
    let k = if four { 4 } else { 3 };
    let (x, m) = (data.exposure(), data.mediator());
    let z = data.confounders();
    let w = data.weights();
    let total = w.sum();
    let beta = if four { *beta } else { TargetParams { theta: None, ..*beta } };
    let r = residuals(data, &beta, gamma, config.exposure_family);

    let mut u_rows = DMatrix::zeros(n, k);
    for i in 0..n {
        u_rows[(i, 0)] = r.rx1[i] * r.rm1[i];
        u_rows[(i, 1)] = r.rm2[i] * r.ry1[i];
        u_rows[(i, 2)] = r.rx2[i] * r.ry2[i];
        if four {
            u_rows[(i, 3)] = x[i] * r.rm3[i] * r.ry3[i];
        }
    }
    let u_bar = u_rows.transpose() * w / total;

    let mean = |f: &dyn Fn(usize) -> f64| (0..n).map(|i| w[i] * f(i)).sum::<f64>() / total;
    let mut du_dbeta = DMatrix::zeros(k, k);
    du_dbeta[(0, 0)] = mean(&|i| -r.rx1[i] * x[i]);
    du_dbeta[(1, 0)] = mean(&|i| -x[i] * r.ry1[i]);
    du_dbeta[(1, 1)] = mean(&|i| -r.rm2[i] * m[i]);
    du_dbeta[(1, 2)] = mean(&|i| -r.rm2[i] * x[i]);
    du_dbeta[(2, 1)] = mean(&|i| -r.rx2[i] * m[i]);
    du_dbeta[(2, 2)] = mean(&|i| -r.rx2[i] * x[i]);
    if four {
        du_dbeta[(1, 3)] = mean(&|i| -r.rm2[i] * x[i] * m[i]);
        du_dbeta[(2, 3)] = mean(&|i| -r.rx2[i] * x[i] * m[i]);
        du_dbeta[(3, 0)] = mean(&|i| -x[i] * x[i] * r.ry3[i]);
        du_dbeta[(3, 1)] = mean(&|i| -x[i] * r.rm3[i] * m[i]);
        du_dbeta[(3, 2)] = mean(&|i| -x[i] * r.rm3[i] * x[i]);
        du_dbeta[(3, 3)] = mean(&|i| -x[i] * r.rm3[i] * x[i] * m[i]);
    }

    let blocks = if four { 8 } else { 6 };
    let mut du_dgamma = DMatrix::zeros(k, blocks * p);
    let mut put = |row: usize, block: usize, c: DVector<f64>| {
        let v = z_moment(z, w, total, &c);
        du_dgamma.view_mut((row, block * p), (1, p)).copy_from(&v.transpose());
    };
    put(0, 0, -r.dh1.component_mul(&r.rm1));
    put(0, 2, -r.rx1.clone());
    put(1, 3, -r.ry1.clone());
    put(1, 4, -r.rm2.clone());
    put(2, 1, -r.dh2.component_mul(&r.ry2));
    put(2, 5, -r.rx2.clone());
    if four {
        put(3, 6, -x.component_mul(&r.ry3));
        put(3, 7, -x.component_mul(&r.rm3));
    }

    let i_hat = moment_covariance(&u_rows, w)?;
    Ok(MomentEvaluation { u_bar, u_rows, du_dbeta, du_dgamma, i_hat })
}

/// The three G-moment conditions `U₁ = (X−h)(M−β₁X−f)`,
/// `U₂ = (M−β₁X−f)(Y−β₂M−β₃X−g)`, `U₃ = (X−h)(Y−β₂M−β₃X−g)`.
///
/// Any `θ` in `beta` is ignored here.
pub fn g_moments(data: &Dataset, beta: &TargetParams, gamma: &NuisanceParams, config: &ModelConfig) -> Result<MomentEvaluation> {
    evaluate(data, beta, gamma, config, false)
}

/// Four-moment system with exposure–mediator interaction: the outcome
/// residual gains `−θXM` and `U₄ = X·(mediator residual)·(outcome residual)`.
pub fn g_moments_interaction(
    data: &Dataset,
    beta: &TargetParams,
    gamma: &NuisanceParams,
    config: &ModelConfig,
) -> Result<MomentEvaluation> {
    if !config.interaction {
        return Err(GmedError::InteractionDisabled);
    }
    let beta = TargetParams { theta: Some(beta.theta.unwrap_or(0.0)), ..*beta };
    evaluate(data, &beta, gamma, config, true)
}

/// Dispatches to the three- or four-moment system according to `config`.
pub fn moments_for(data: &Dataset, beta: &TargetParams, gamma: &NuisanceParams, config: &ModelConfig) -> Result<MomentEvaluation> {
    if config.interaction {
        g_moments_interaction(data, beta, gamma, config)
    } else {
        g_moments(data, beta, gamma, config)
    }
}

/// Weighted second-moment matrix `E_n[U Uᵀ]` of the rows of `u_rows`.
pub fn moment_covariance(u_rows: &DMatrix<f64>, weights: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = u_rows.shape();
    if weights.len() != n {
        return Err(GmedError::DimensionMismatch(format!("{n} moment rows but {} weights", weights.len())));
    }
    if n < k {
        return Err(GmedError::DimensionMismatch(format!("{n} rows for {k} moments")));
    }
    let total = weights.sum();
    let mut scaled = u_rows.clone();
    for j in 0..k {
        for (v, w) in scaled.column_mut(j).iter_mut().zip(weights.iter()) {
            *v *= w;
        }
    }
    let cov = u_rows.transpose() * scaled / total;
    Ok((&cov + cov.transpose()) * 0.5)
}
