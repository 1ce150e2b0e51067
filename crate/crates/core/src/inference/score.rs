//! Constrained-GMM score tests (Two-Step and continuously updated).
//!
//! For the three-moment system every per-row moment is a low-order
//! polynomial in `β` once the nuisance fit is fixed (Two-Step) or profiled
//! out (CUE, where `γ̂(β)` is affine in `β`):
//!
//! ```text
//! U₁ = a₁ (c₁ − β₁d₁)
//! U₂ = (c₂ − β₁d₂)(e₁ − β₂f₁ − β₃g₁)
//! U₃ = a₂ (e₂ − β₂f₂ − β₃g₂)
//! ```
//!
//! The columns `a, c, d, e, f, g` are precomputed once per dataset, which
//! makes the objective and its analytic gradient cheap to evaluate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{HypothesisSpec, TestMethod, TestOutcome};
use crate::data::{Dataset, ModelConfig, NuisanceStrategy};
use crate::error::{GmedError, Result};
use crate::estimation::{g_estimate, GEstimate, NuisanceFitter};
use crate::moments::{moments_for, NuisanceParams, TargetParams};
use crate::numerics::linalg::invert_symmetric;
use crate::numerics::{chi2_sf, newton_solve, RootSolveReport};

/// Target on the Lagrange residual and reduced gradient (objective scale,
/// i.e. before multiplying by `n`).
const SOLVE_TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;

/// Which constraint set a constrained solve used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `β₁ = 0`
    C1,
    /// `β₂ = 0`
    C2,
    /// `(α−1)β₁β₂ + αβ₃ = 0` with `α > 0`.
    General,
}

/// Constrained minimiser on one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSolveState {
    pub beta: TargetParams,
    pub gamma: NuisanceParams,
    pub lambda: f64,
    pub branch: Branch,
    /// `n · M_n` at the solution.
    pub statistic: f64,
    pub report: RootSolveReport,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreOptions {
    /// Run the CUE test even with maximum-likelihood nuisance fits.
    pub allow_non_orthogonal: bool,
}

struct Problem {
    a1: Vec<f64>,
    c1: Vec<f64>,
    d1: Vec<f64>,
    c2: Vec<f64>,
    d2: Vec<f64>,
    e1: Vec<f64>,
    f1: Vec<f64>,
    g1: Vec<f64>,
    a2: Vec<f64>,
    e2: Vec<f64>,
    f2: Vec<f64>,
    g2: Vec<f64>,
    /// Normalised weights `wᵢ / Σw`.
    omega: Vec<f64>,
    /// Frozen `Î⁻¹` for Two-Step; `None` means continuous updating.
    fixed_inverse: Option<DMatrix<f64>>,
}

impl Problem {
    fn two_step(data: &Dataset, config: &ModelConfig, estimate: &GEstimate) -> Result<Self> {
        let z = data.confounders();
        let (x, m, y) = (data.exposure(), data.mediator(), data.outcome());
        let g = &estimate.gamma_hat;
        let fitter = NuisanceFitter::new(data, config)?;
        let rx = fitter.exposure_residuals(data);
        let ev = moments_for(data, &estimate.beta_hat, g, config)?;
        let inv = invert_symmetric(&ev.i_hat)?;
        let v = |t: DVector<f64>| t.as_slice().to_vec();
        Ok(Self {
            a1: v(rx.clone()),
            c1: v(m - z * &g.gamma_m1),
            d1: v(x.clone()),
            c2: v(m - z * &g.gamma_m2),
            d2: v(x.clone()),
            e1: v(y - z * &g.gamma_y1),
            f1: v(m.clone()),
            g1: v(x.clone()),
            a2: v(rx),
            e2: v(y - z * &g.gamma_y2),
            f2: v(m.clone()),
            g2: v(x.clone()),
            omega: normalised(data),
            fixed_inverse: Some(inv.inverse),
        })
    }

    fn cue(data: &Dataset, fitter: &NuisanceFitter) -> Self {
        let rx = fitter.exposure_residuals(data);
        let [pm, px, py] = fitter.residualised(data, false);
        let [lm, lx, ly] = fitter.residualised(data, true);
        let v = |t: &DVector<f64>| t.as_slice().to_vec();
        Self {
            a1: v(&rx),
            c1: v(&lm),
            d1: v(&lx),
            c2: v(&pm),
            d2: v(&px),
            e1: v(&py),
            f1: v(&pm),
            g1: v(&px),
            a2: v(&rx),
            e2: v(&ly),
            f2: v(&lm),
            g2: v(&lx),
            omega: normalised(data),
            fixed_inverse: None,
        }
    }

    #[inline]
    fn row(&self, i: usize, b: &[f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let l1 = self.c1[i] - b[0] * self.d1[i];
        let l2 = self.c2[i] - b[0] * self.d2[i];
        let r1 = self.e1[i] - b[1] * self.f1[i] - b[2] * self.g1[i];
        let r2 = self.e2[i] - b[1] * self.f2[i] - b[2] * self.g2[i];
        let u = [self.a1[i] * l1, l2 * r1, self.a2[i] * r2];
        // du[j][l] = ∂U_j/∂β_l
        let du = [
            [-self.a1[i] * self.d1[i], 0.0, 0.0],
            [-self.d2[i] * r1, -l2 * self.f1[i], -l2 * self.g1[i]],
            [0.0, -self.a2[i] * self.f2[i], -self.a2[i] * self.g2[i]],
        ];
        (u, du)
    }

    fn moments(&self, b: &[f64; 3]) -> (DVector<f64>, DMatrix<f64>) {
        let mut ubar = DVector::zeros(3);
        let mut omega = DMatrix::zeros(3, 3);
        for i in 0..self.omega.len() {
            let (u, _) = self.row(i, b);
            let w = self.omega[i];
            for j in 0..3 {
                ubar[j] += w * u[j];
                for k in 0..3 {
                    omega[(j, k)] += w * u[j] * u[k];
                }
            }
        }
        (ubar, omega)
    }

    fn weight_inverse(&self, omega: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        match &self.fixed_inverse {
            Some(inv) => Some(inv.clone()),
            None => invert_symmetric(omega).ok().map(|s| s.inverse),
        }
    }

    /// `M_n(β) = Ūᵀ W⁻¹ Ū`.
    fn objective(&self, b: &[f64; 3]) -> Option<f64> {
        let (ubar, omega) = self.moments(b);
        let inv = self.weight_inverse(&omega)?;
        let m = ubar.dot(&(inv * &ubar));
        m.is_finite().then_some(m.max(0.0))
    }

    /// Analytic gradient of `M_n`; the CUE term differentiates `W(β)` too.
    fn gradient(&self, b: &[f64; 3]) -> Option<[f64; 3]> {
        let (ubar, omega) = self.moments(b);
        let inv = self.weight_inverse(&omega)?;
        let v = inv * &ubar;
        let cue = self.fixed_inverse.is_none();
        let mut g = [0.0; 3];
        for i in 0..self.omega.len() {
            let (u, du) = self.row(i, b);
            let uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            let factor = if cue { 1.0 - uv } else { 1.0 };
            for (l, gl) in g.iter_mut().enumerate() {
                let dv = du[0][l] * v[0] + du[1][l] * v[1] + du[2][l] * v[2];
                *gl += 2.0 * self.omega[i] * dv * factor;
            }
        }
        g.iter().all(|a| a.is_finite()).then_some(g)
    }
}

fn normalised(data: &Dataset) -> Vec<f64> {
    let total = data.weights().sum();
    data.weights().iter().map(|w| w / total).collect()
}

fn arr(b: &TargetParams) -> [f64; 3] {
    [b.beta1, b.beta2, b.beta3]
}

/// Constraint function and gradient for a branch.
fn constraint(branch: Branch, hyp: &HypothesisSpec, b: &[f64; 3]) -> (f64, [f64; 3]) {
    match branch {
        Branch::C1 => (b[0], [1.0, 0.0, 0.0]),
        Branch::C2 => (b[1], [0.0, 1.0, 0.0]),
        Branch::General => {
            let t = TargetParams::new(b[0], b[1], b[2]);
            (hyp.psi(&t), hyp.grad_psi(&t))
        }
    }
}

/// Elimination map: free coordinates `u` to a `β` on the constraint set,
/// together with `∂β/∂u`.
fn embed(branch: Branch, hyp: &HypothesisSpec, u: &[f64; 2]) -> ([f64; 3], [[f64; 2]; 3]) {
    match branch {
        Branch::C1 => ([0.0, u[0], u[1]], [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        Branch::C2 => ([u[0], 0.0, u[1]], [[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]),
        Branch::General => {
            let c = (1.0 - hyp.alpha) / hyp.alpha;
            ([u[0], u[1], c * u[0] * u[1]], [[1.0, 0.0], [0.0, 1.0], [c * u[1], c * u[0]]])
        }
    }
}

fn free_coords(branch: Branch, b: &[f64; 3]) -> [f64; 2] {
    match branch {
        Branch::C1 => [b[1], b[2]],
        Branch::C2 => [b[0], b[2]],
        Branch::General => [b[0], b[1]],
    }
}

/// Start on the constraint set: zero a coordinate for `C₁`/`C₂`, otherwise
/// a one-dimensional Newton solve of `ψ(β̂ + t∇ψ(β̂)) = 0`.
fn projected_start(branch: Branch, hyp: &HypothesisSpec, b: &[f64; 3]) -> [f64; 3] {
    match branch {
        Branch::C1 => [0.0, b[1], b[2]],
        Branch::C2 => [b[0], 0.0, b[2]],
        Branch::General => {
            let (_, dir) = constraint(branch, hyp, b);
            let at = |t: f64| [b[0] + t * dir[0], b[1] + t * dir[1], b[2] + t * dir[2]];
            let mut t = 0.0;
            for _ in 0..50 {
                let p = at(t);
                let (psi, grad) = constraint(branch, hyp, &p);
                if psi.abs() <= 1e-14 {
                    return p;
                }
                let slope = grad[0] * dir[0] + grad[1] * dir[1] + grad[2] * dir[2];
                if slope == 0.0 || !slope.is_finite() {
                    break;
                }
                t -= psi / slope;
            }
            let p = at(t);
            if constraint(branch, hyp, &p).0.abs() <= 1e-10 {
                p
            } else {
                embed(branch, hyp, &free_coords(branch, b)).0
            }
        }
    }
}

struct Candidate {
    beta: [f64; 3],
    objective: f64,
    iterations: usize,
}

/// Newton on the Lagrange conditions `∇M − λ∇ψ = 0, ψ = 0`.
fn lagrange_solve(problem: &Problem, branch: Branch, hyp: &HypothesisSpec, start: &[f64; 3], lambda0: f64) -> Option<Candidate> {
    let system = |x: &DVector<f64>| -> DVector<f64> {
        let b = [x[0], x[1], x[2]];
        let (psi, dpsi) = constraint(branch, hyp, &b);
        match problem.gradient(&b) {
            Some(g) => DVector::from_vec(vec![
                g[0] - x[3] * dpsi[0],
                g[1] - x[3] * dpsi[1],
                g[2] - x[3] * dpsi[2],
                psi,
            ]),
            None => DVector::from_element(4, f64::NAN),
        }
    };
    let x0 = DVector::from_vec(vec![start[0], start[1], start[2], lambda0]);
    let report = newton_solve(system, None, &x0, SOLVE_TOL, MAX_ITER).ok()?;
    if !report.converged {
        return None;
    }
    let beta = [report.solution[0], report.solution[1], report.solution[2]];
    let objective = problem.objective(&beta)?;
    Some(Candidate { beta, objective, iterations: report.iterations })
}

/// Damped Newton minimisation of `M` over the free coordinates of the
/// eliminated parametrisation, with an Armijo line search on `M`.
fn eliminated_solve(problem: &Problem, branch: Branch, hyp: &HypothesisSpec, start: &[f64; 3]) -> Option<Candidate> {
    let f = |u: &[f64; 2]| problem.objective(&embed(branch, hyp, u).0);
    let grad = |u: &[f64; 2]| -> Option<[f64; 2]> {
        let (b, p) = embed(branch, hyp, u);
        let g = problem.gradient(&b)?;
        let mut r = [0.0; 2];
        for (c, rc) in r.iter_mut().enumerate() {
            *rc = (0..3).map(|l| p[l][c] * g[l]).sum();
        }
        Some(r)
    };
    let mut u = free_coords(branch, start);
    let mut fu = f(&u)?;
    for iter in 0..MAX_ITER {
        let g = grad(&u)?;
        let gnorm = g[0].abs().max(g[1].abs());
        if gnorm <= SOLVE_TOL {
            return Some(Candidate { beta: embed(branch, hyp, &u).0, objective: fu, iterations: iter });
        }
        // Hessian by central differences of the analytic gradient
        let mut h = [[0.0; 2]; 2];
        for c in 0..2 {
            let step = (1e-6 * u[c].abs()).max(1e-6);
            let mut up = u;
            let mut dn = u;
            up[c] += step;
            dn[c] -= step;
            let (gp, gm) = (grad(&up)?, grad(&dn)?);
            for r in 0..2 {
                h[r][c] = (gp[r] - gm[r]) / (2.0 * step);
            }
        }
        let off = 0.5 * (h[0][1] + h[1][0]);
        let (a, d) = (h[0][0], h[1][1]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + off * off).sqrt();
        let (lo, hi) = (mean - rad, mean + rad);
        let shift = if lo <= 1e-10 * hi.abs().max(1e-300) { -lo + 1e-6 * hi.abs().max(1e-12) } else { 0.0 };
        let (a, d) = (a + shift, d + shift);
        let det = a * d - off * off;
        let mut dir = if det > 0.0 && det.is_finite() {
            [-(d * g[0] - off * g[1]) / det, -(a * g[1] - off * g[0]) / det]
        } else {
            [-g[0], -g[1]]
        };
        let mut accepted = false;
        for attempt in 0..2 {
            let slope = dir[0] * g[0] + dir[1] * g[1];
            let mut s = 1.0;
            for _ in 0..40 {
                let trial = [u[0] + s * dir[0], u[1] + s * dir[1]];
                if let Some(ft) = f(&trial) {
                    let armijo = ft <= fu + 1e-4 * s * slope;
                    // near the optimum the decrease in M drowns in rounding;
                    // accept a full step that shrinks the gradient instead
                    let flat = s == 1.0 && ft <= fu + 1e-13 * fu.abs().max(1e-300) && grad(&trial).map_or(false, |gt| gt[0].abs().max(gt[1].abs()) < 0.5 * gnorm);
                    if armijo || flat {
                        u = trial;
                        fu = ft;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if accepted || attempt == 1 {
                break;
            }
            dir = [-g[0], -g[1]];
        }
        if !accepted {
            return None;
        }
    }
    None
}

fn solve_on_branch(problem: &Problem, branch: Branch, hyp: &HypothesisSpec, beta_hat: &[f64; 3]) -> Option<(Candidate, f64, f64)> {
    let start = projected_start(branch, hyp, beta_hat);
    let lambda0 = {
        let (_, dpsi) = constraint(branch, hyp, &start);
        let g = problem.gradient(&start).unwrap_or([0.0; 3]);
        let num: f64 = (0..3).map(|l| g[l] * dpsi[l]).sum();
        let den: f64 = dpsi.iter().map(|v| v * v).sum();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let lagrange = lagrange_solve(problem, branch, hyp, &start, lambda0);
    let eliminated = eliminated_solve(problem, branch, hyp, &start);
    let best = match (lagrange, eliminated) {
        (Some(l), Some(e)) => {
            if e.objective < l.objective {
                e
            } else {
                l
            }
        }
        (Some(l), None) => l,
        (None, Some(e)) => e,
        (None, None) => return None,
    };
    let (psi, dpsi) = constraint(branch, hyp, &best.beta);
    let g = problem.gradient(&best.beta)?;
    let den: f64 = dpsi.iter().map(|v| v * v).sum();
    let lambda = if den > 0.0 { (0..3).map(|l| g[l] * dpsi[l]).sum::<f64>() / den } else { 0.0 };
    let stationarity = (0..3).map(|l| (g[l] - lambda * dpsi[l]).abs()).fold(psi.abs(), f64::max);
    Some((best, lambda, stationarity))
}

fn method_problem(
    data: &Dataset,
    config: &ModelConfig,
    method: TestMethod,
    estimate: &GEstimate,
    opts: &ScoreOptions,
) -> Result<(Problem, NuisanceFitter)> {
    if config.interaction {
        return Err(GmedError::InvalidInput("score tests are defined for the model without interaction".into()));
    }
    let fitter = NuisanceFitter::new(data, config)?;
    match method {
        TestMethod::ScoreTwoStep => Ok((Problem::two_step(data, config, estimate)?, fitter)),
        TestMethod::ScoreCue => {
            let orthogonal = config.nuisance == NuisanceStrategy::BiasReduced;
            if !orthogonal && !opts.allow_non_orthogonal {
                return Err(GmedError::OrthogonalityRequired);
            }
            Ok((Problem::cue(data, &fitter), fitter))
        }
        other => Err(GmedError::InvalidInput(format!("{} is not a score test", other.label()))),
    }
}

/// Constrained minimisation of `n·M_n` on one branch of `H_α`.
pub fn solve_constrained(
    data: &Dataset,
    config: &ModelConfig,
    hypothesis: &HypothesisSpec,
    method: TestMethod,
    estimate: &GEstimate,
    branch: Branch,
    opts: &ScoreOptions,
) -> Result<ConstrainedSolveState> {
    let (problem, fitter) = method_problem(data, config, method, estimate, opts)?;
    branch_state(data, &problem, &fitter, method, hypothesis, estimate, branch)
}

fn branch_state(
    data: &Dataset,
    problem: &Problem,
    fitter: &NuisanceFitter,
    method: TestMethod,
    hyp: &HypothesisSpec,
    estimate: &GEstimate,
    branch: Branch,
) -> Result<ConstrainedSolveState> {
    if branch == Branch::General && hyp.alpha == 0.0 {
        return Err(GmedError::InvalidInput("alpha = 0 is solved on the C1/C2 branches".into()));
    }
    let beta_hat = arr(&estimate.beta_hat);
    let (cand, lambda, residual) = solve_on_branch(problem, branch, hyp, &beta_hat)
        .ok_or(GmedError::NonConvergence { iterations: MAX_ITER, residual: f64::NAN })?;
    let beta = TargetParams::new(cand.beta[0], cand.beta[1], cand.beta[2]);
    let gamma = match method {
        TestMethod::ScoreCue => fitter.fit(data, &beta),
        _ => estimate.gamma_hat.clone(),
    };
    let report = RootSolveReport {
        solution: DVector::from_vec(vec![beta.beta1, beta.beta2, beta.beta3, lambda]),
        iterations: cand.iterations,
        final_residual_norm: residual,
        converged: true,
    };
    Ok(ConstrainedSolveState {
        beta,
        gamma,
        lambda,
        branch,
        statistic: data.n() as f64 * cand.objective,
        report,
    })
}

/// Score test of `H_α` by Two-Step or CUE GMM, reusing an unconstrained fit
/// when one is supplied.
pub fn score_test(
    data: &Dataset,
    config: &ModelConfig,
    hypothesis: &HypothesisSpec,
    method: TestMethod,
    estimate: Option<&GEstimate>,
    opts: &ScoreOptions,
) -> Result<TestOutcome> {
    let owned;
    let estimate = match estimate {
        Some(e) => e,
        None => {
            owned = g_estimate(data, config, None)?;
            &owned
        }
    };
    let (problem, fitter) = method_problem(data, config, method, estimate, opts)?;
    let branches: &[Branch] = if hypothesis.alpha == 0.0 { &[Branch::C1, Branch::C2] } else { &[Branch::General] };
    let mut solved = Vec::new();
    let mut warnings = Vec::new();
    for &b in branches {
        match branch_state(data, &problem, &fitter, method, hypothesis, estimate, b) {
            Ok(s) => solved.push(s),
            Err(e) if branches.len() > 1 => warnings.push(format!("branch {b:?} failed: {e}")),
            Err(e) => return Err(e),
        }
    }
    // first branch wins exact ties
    let best = solved
        .into_iter()
        .reduce(|a, b| if b.statistic < a.statistic { b } else { a })
        .ok_or(GmedError::NonConvergence { iterations: MAX_ITER, residual: f64::NAN })?;
    Ok(TestOutcome {
        statistic: best.statistic,
        df: 1,
        p_value: chi2_sf(best.statistic, 1),
        method,
        alpha: hypothesis.alpha,
        constrained_beta: Some(best.beta),
        lagrange_multiplier: Some(best.lambda),
        branch: Some(best.branch),
        solver_report: Some(best.report),
        warnings,
    })
}

/// Two-Step score test: nuisance and `Î` frozen at the unconstrained fit.
pub fn score_test_two_step(data: &Dataset, config: &ModelConfig, hypothesis: &HypothesisSpec) -> Result<TestOutcome> {
    score_test(data, config, hypothesis, TestMethod::ScoreTwoStep, None, &ScoreOptions::default())
}

/// CUE score test: nuisance and `Î` re-evaluated at every candidate `β`.
pub fn score_test_cue(data: &Dataset, config: &ModelConfig, hypothesis: &HypothesisSpec) -> Result<TestOutcome> {
    score_test(data, config, hypothesis, TestMethod::ScoreCue, None, &ScoreOptions::default())
}
