use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{GmedError, Result};
use crate::moments::TargetParams;
use crate::numerics::expit;
use crate::rng::{stream, stream_rng};

pub const MIN_SAMPLE_SIZE: usize = 20;

/// Flag raised for process C whenever `β₁ ≠ 0`: a binary mediator cannot
/// follow a partially linear mean in `X` then.
pub const MEDIATOR_STRUCTURAL_FLAG: &str = "mediator-model-structurally-misspecified";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Process {
    /// Gaussian mediator.
    A,
    /// Mediator noise from Student-t with 5 degrees of freedom.
    B,
    /// Binary mediator through a logistic link.
    C,
}

impl Process {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Process::A),
            "B" | "b" => Ok(Process::B),
            "C" | "c" => Ok(Process::C),
            _ => Err(GmedError::InvalidInput(format!("unknown process `{s}` (expected A, B or C)"))),
        }
    }
}

/// A simulation design. Data are generated with `Z²` terms switched on by
/// `s_x, s_m, s_y` and always analysed with a linear-`Z` design, so a set
/// flag means that working model is misspecified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub process: Process,
    pub beta_true: TargetParams,
    pub n: usize,
    pub s_x: bool,
    pub s_m: bool,
    pub s_y: bool,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(process: Process, beta_true: TargetParams, n: usize, seed: u64) -> Self {
        Self { process, beta_true, n, s_x: false, s_m: false, s_y: false, seed }
    }

    pub fn with_misspecification(mut self, s_x: bool, s_m: bool, s_y: bool) -> Self {
        self.s_x = s_x;
        self.s_m = s_m;
        self.s_y = s_y;
        self
    }

    /// Sets the flags from the letters of the correctly specified working
    /// models, e.g. `"XYM"` (all correct) or `"M"` (only the mediator).
    /// `""` and `"none"` mean nothing is correct.
    pub fn with_correct_models(self, letters: &str) -> Result<Self> {
        let letters = if letters.eq_ignore_ascii_case("none") { "" } else { letters };
        if let Some(bad) = letters.chars().find(|c| !matches!(c.to_ascii_uppercase(), 'X' | 'M' | 'Y')) {
            return Err(GmedError::InvalidInput(format!("unknown model letter `{bad}` (expected X, M, Y)")));
        }
        let has = |c: char| letters.chars().any(|l| l.to_ascii_uppercase() == c);
        Ok(self.with_misspecification(!has('X'), !has('M'), !has('Y')))
    }

    /// Letters of the correctly specified working models, in `XYM` order.
    pub fn correct_models(&self) -> String {
        let mut s = String::new();
        if !self.s_x {
            s.push('X');
        }
        if !self.s_y {
            s.push('Y');
        }
        if !self.s_m {
            s.push('M');
        }
        if s.is_empty() {
            s.push_str("none");
        }
        s
    }

    /// Natural indirect effect of the generating process at reference
    /// exposure 0. For process C it lives on the probability scale:
    /// `β₂ E_Z[expit(β₁ + Z + s_mZ²) − expit(Z + s_mZ²)]`.
    pub fn true_nide(&self) -> f64 {
        let b = &self.beta_true;
        match self.process {
            Process::A | Process::B => b.nide(),
            Process::C => {
                let sm = if self.s_m { 1.0 } else { 0.0 };
                b.beta2 * normal_expectation(|z| expit(b.beta1 + z + sm * z * z) - expit(z + sm * z * z))
            }
        }
    }

    /// Natural direct effect; `β₃` in every process.
    pub fn true_nde(&self) -> f64 {
        self.beta_true.nde()
    }

    pub fn flags(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.process == Process::C && self.beta_true.beta1 != 0.0 {
            out.push(MEDIATOR_STRUCTURAL_FLAG.to_string());
        }
        out
    }
}

/// `E[f(Z)]` for `Z ~ N(0, 1)` by the trapezoidal rule on `[−12, 12]`,
/// which converges geometrically for smooth integrands with Gaussian tails.
fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    const STEPS: usize = 4800;
    let h = 24.0 / STEPS as f64;
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    (0..=STEPS)
        .map(|k| {
            let z = -12.0 + k as f64 * h;
            let end = if k == 0 || k == STEPS { 0.5 } else { 1.0 };
            end * f(z) * (-0.5 * z * z).exp() / norm
        })
        .sum::<f64>()
        * h
}

/// First replicate of `spec`.
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    generate_replicate(spec, 0)
}

/// Replicate `r` of `spec`. Each variable draws from its own
/// `(seed, r, variable)` stream.
pub fn generate_replicate(spec: &DgpSpec, replicate: u64) -> Result<Dataset> {
    let n = spec.n;
    if n < MIN_SAMPLE_SIZE {
        return Err(GmedError::InvalidInput(format!("n must be at least {MIN_SAMPLE_SIZE}, got {n}")));
    }
    let b = &spec.beta_true;
    let flag = |s: bool| if s { 1.0 } else { 0.0 };
    let (sx, sm, sy) = (flag(spec.s_x), flag(spec.s_m), flag(spec.s_y));

    let mut rz = stream_rng(spec.seed, replicate, stream::CONFOUNDER);
    let z: Vec<f64> = (0..n).map(|_| rz.sample(StandardNormal)).collect();

    let mut rx = stream_rng(spec.seed, replicate, stream::EXPOSURE);
    let x: Vec<f64> = z
        .iter()
        .map(|&zi| if rx.random::<f64>() < expit(zi + sx * zi * zi) { 1.0 } else { 0.0 })
        .collect();

    let mut rm = stream_rng(spec.seed, replicate, stream::MEDIATOR);
    let t5 = StudentT::new(5.0).expect("valid degrees of freedom");
    let m: Vec<f64> = (0..n)
        .map(|i| {
            let mean = b.beta1 * x[i] + z[i] + sm * z[i] * z[i];
            match spec.process {
                Process::A => mean + rm.sample::<f64, _>(StandardNormal),
                Process::B => mean + rm.sample(t5),
                Process::C => {
                    if rm.random::<f64>() < expit(mean) {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect();

    let mut ry = stream_rng(spec.seed, replicate, stream::OUTCOME);
    let theta = b.theta.unwrap_or(0.0);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mean = b.beta2 * m[i] + b.beta3 * x[i] + theta * x[i] * m[i] + z[i] + sy * z[i] * z[i];
            mean + ry.sample::<f64, _>(StandardNormal)
        })
        .collect();

    Dataset::with_names(
        DVector::from_vec(y),
        DVector::from_vec(m),
        DVector::from_vec(x),
        DMatrix::from_vec(n, 1, z),
        None,
        vec!["z".to_string()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_letters_round_trip() {
        let base = DgpSpec::new(Process::A, TargetParams::new(0.0, 0.0, 0.0), 100, 1);
        for letters in ["XYM", "XY", "XM", "YM", "X", "Y", "M", "none"] {
            let spec = base.clone().with_correct_models(letters).unwrap();
            assert_eq!(spec.correct_models(), letters);
        }
        let m_only = base.clone().with_correct_models("M").unwrap();
        assert!(m_only.s_x && m_only.s_y && !m_only.s_m);
        assert!(base.with_correct_models("XQ").is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = DgpSpec::new(Process::B, TargetParams::new(1.0, 1.0, 1.0), 50, 9);
        let a = generate_replicate(&spec, 3).unwrap();
        let b = generate_replicate(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_replicate(&spec, 4).unwrap());
    }

    #[test]
    fn process_c_truth_matches_monte_carlo() {
        let spec = DgpSpec::new(Process::C, TargetParams::new(1.0, 1.0, 1.0), 20, 1).with_correct_models("XY").unwrap();
        let mut rng = stream_rng(42, 0, 0);
        let reps = 400_000;
        let sum: f64 = (0..reps)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                expit(1.0 + z + z * z) - expit(z + z * z)
            })
            .sum();
        let mc = sum / reps as f64;
        // each draw lies in [0, 1], so the MC SE is below 1/(2√reps) ≈ 8e-4
        assert!((spec.true_nide() - mc).abs() < 3e-3, "{} vs {mc}", spec.true_nide());
        let normal_mass = normal_expectation(|_| 1.0);
        assert!((normal_mass - 1.0).abs() < 1e-12);
        assert!((normal_expectation(|z| z * z) - 1.0).abs() < 1e-12);
        let a = DgpSpec::new(Process::A, TargetParams::new(0.7, 0.4, 0.1), 20, 1);
        assert_eq!(a.true_nide(), 0.7 * 0.4);
    }

    #[test]
    fn small_n_rejected() {
        let spec = DgpSpec::new(Process::A, TargetParams::new(0.0, 0.0, 0.0), 19, 1);
        assert!(matches!(generate(&spec), Err(GmedError::InvalidInput(_))));
    }

    #[test]
    fn process_c_is_binary_and_flagged() {
        let spec = DgpSpec::new(Process::C, TargetParams::new(1.0, 1.0, 1.0), 200, 2);
        let d = generate(&spec).unwrap();
        assert!(d.mediator().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(spec.flags(), vec![MEDIATOR_STRUCTURAL_FLAG.to_string()]);
        let null = DgpSpec::new(Process::C, TargetParams::new(0.0, 1.0, 1.0), 200, 2);
        assert!(null.flags().is_empty());
    }
}
