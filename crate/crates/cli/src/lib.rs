//! `gmed` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
//! Results are JSON (`"schema": "gmed/1"`) on stdout or `--out`; errors are
//! JSON on stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use gmed_core::estimation::{bootstrap_variance, g_estimate, GEstimate};
use gmed_core::inference::{ols_sobel_lr, robust_sobel, robust_wald_direct, score_test, HypothesisSpec, ScoreOptions, TestMethod};
use gmed_core::simulation::{
    emit_table, run_experiment_with, DgpSpec, Estimator, ExperimentOptions, Process, TableFormat, TestRequest,
};
use gmed_core::{load_csv, ColumnMap, ExposureFamily, GmedError, MissingPolicy, ModelConfig, NuisanceStrategy, TargetParams, SCHEMA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Normal quantile for two-sided 95% intervals.
const Z_95: f64 = 1.96;

#[derive(Debug, Parser)]
#[command(name = "gmed", version, about = "G-estimation of natural direct and indirect effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate NIDE, NDE and the structural coefficients.
    Estimate(EstimateArgs),
    /// Test H_alpha: (alpha-1) b1 b2 + alpha b3 = 0.
    Test(TestArgs),
    /// Run a Monte Carlo experiment and print its table.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NuisanceArg {
    Ml,
    BiasReduced,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MissingArg {
    Error,
    Drop,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub mediator: String,
    #[arg(long)]
    pub exposure: String,
    /// Comma-separated confounder columns.
    #[arg(long, value_delimiter = ',')]
    pub confounders: Vec<String>,
    /// Column of observation weights.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, value_enum, default_value = "error")]
    pub missing: MissingArg,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "binomial")]
    pub exposure_family: FamilyArg,
    #[arg(long, value_enum, default_value = "bias-reduced")]
    pub nuisance: NuisanceArg,
    /// Add an exposure-mediator interaction to the outcome model.
    #[arg(long)]
    pub interaction: bool,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Bootstrap replicates (0 skips the bootstrap).
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// no-mediation, no-direct or alpha=<v>.
    #[arg(long, default_value = "no-mediation")]
    pub hypothesis: String,
    /// sobel-ols, lr-ols, robust-sobel, robust-wald-direct, score-two-step or score-cue.
    #[arg(long, default_value = "score-cue")]
    pub method: String,
    /// Allow the CUE score test with maximum-likelihood nuisance fits.
    #[arg(long)]
    pub allow_non_orthogonal: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Data-generating process: A, B or C.
    #[arg(long)]
    pub dgp: String,
    /// b1,b2,b3 or b1,b2,b3,theta.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Vec<f64>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Correctly specified working models, e.g. XYM, XY, M or none.
    #[arg(long, default_value = "XYM")]
    pub spec: String,
    /// Comma-separated estimators: g, ols.
    #[arg(long, value_delimiter = ',', default_value = "g")]
    pub estimators: Vec<String>,
    /// Comma-separated tests, `method` or `method:alpha`.
    #[arg(long, value_delimiter = ',')]
    pub tests: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Bootstrap replicates per dataset (0 skips).
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Text destined for stdout (or `--out`) and stderr, plus the exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

fn error_json(kind: &str, message: &str) -> String {
    let v = json!({"schema": SCHEMA, "error": {"kind": kind, "message": message}});
    format!("{}\n", gmed_core::json::value_to_string(&v))
}

fn failure(err: &GmedError) -> Outcome {
    let code = if err.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
    Outcome { code, stdout: String::new(), stderr: error_json(err.kind(), &err.to_string()) }
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        let family = match self.exposure_family {
            FamilyArg::Gaussian => ExposureFamily::Gaussian,
            FamilyArg::Binomial => ExposureFamily::Binomial,
        };
        let nuisance = match self.nuisance {
            NuisanceArg::Ml => NuisanceStrategy::MaximumLikelihood,
            NuisanceArg::BiasReduced => NuisanceStrategy::BiasReduced,
        };
        ModelConfig::new(family, nuisance).with_interaction(self.interaction)
    }
}

impl DataArgs {
    fn load(&self) -> Result<gmed_core::Dataset, GmedError> {
        let conf: Vec<&str> = self.confounders.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
        let mut map = ColumnMap::new(&self.outcome, &self.mediator, &self.exposure, &conf);
        if let Some(w) = &self.weights {
            map = map.with_weights(w);
        }
        let policy = match self.missing {
            MissingArg::Error => MissingPolicy::Error,
            MissingArg::Drop => MissingPolicy::DropRows,
        };
        load_csv(&self.data, &map, policy)
    }
}

fn only_json(output: &OutputArgs) -> Result<(), GmedError> {
    match output.format {
        FormatArg::Json => Ok(()),
        _ => Err(GmedError::InvalidInput("estimate and test only emit json".into())),
    }
}

fn effect(estimate: f64, se: f64) -> Value {
    json!({
        "estimate": estimate,
        "se": se,
        "ci_lower": estimate - Z_95 * se,
        "ci_upper": estimate + Z_95 * se,
    })
}

fn config_json(config: &ModelConfig) -> Value {
    serde_json::to_value(config).expect("config serialises")
}

fn estimate_json(est: &GEstimate) -> Value {
    let b = &est.beta_hat;
    let mut estimates = Map::new();
    estimates.insert("nide".into(), effect(est.nide, est.nide_se));
    estimates.insert("nde".into(), effect(est.nde, est.nde_se));
    estimates.insert("beta1".into(), effect(b.beta1, est.beta_se(0)));
    estimates.insert("beta2".into(), effect(b.beta2, est.beta_se(1)));
    estimates.insert("beta3".into(), effect(b.beta3, est.beta_se(2)));
    if let Some(t) = b.theta {
        estimates.insert("theta".into(), effect(t, est.beta_se(3)));
    }
    json!({
        "schema": SCHEMA,
        "command": "estimate",
        "n": est.n(),
        "config": config_json(&est.config),
        "estimates": estimates,
        "near_singular_nide": est.near_singular_nide,
        "diagnostics": {
            "converged": est.solver_report.converged,
            "iterations": est.solver_report.iterations,
            "final_residual_norm": est.solver_report.final_residual_norm,
            "moment_residual": est.moment_residual,
            "orthogonality_residual": est.orthogonality_residual,
        },
    })
}

fn cmd_estimate(args: &EstimateArgs) -> Result<Outcome, GmedError> {
    only_json(&args.output)?;
    let data = args.data.load()?;
    let config = args.model.config();
    let est = match g_estimate(&data, &config, None) {
        Ok(e) => e,
        Err(e @ GmedError::NonConvergence { iterations, residual }) => {
            let v = json!({
                "schema": SCHEMA,
                "command": "estimate",
                "n": data.n(),
                "config": config_json(&config),
                "diagnostics": {"converged": false, "iterations": iterations, "final_residual_norm": residual},
            });
            return Ok(Outcome {
                code: EXIT_NUMERICAL,
                stdout: format!("{}\n", gmed_core::json::value_to_string(&v)),
                stderr: error_json(e.kind(), &e.to_string()),
            });
        }
        Err(e) => return Err(e),
    };
    let mut v = estimate_json(&est);
    if args.boot > 0 {
        let boot = bootstrap_variance(&data, &config, args.boot, args.seed)?;
        v["bootstrap"] = json!({
            "replicates": boot.replicates,
            "seed": args.seed,
            "nide_se": boot.nide_se_boot,
            "nde_se": boot.nde_se_boot,
            "failures": boot.failures,
            "degenerate": boot.degenerate,
        });
    }
    Ok(Outcome { code: EXIT_OK, stdout: format!("{}\n", gmed_core::json::value_to_string(&v)), stderr: String::new() })
}

/// `no-mediation`, `no-direct` (or `no-direct-effect`) or `alpha=<v>`.
pub fn parse_hypothesis(s: &str) -> Result<HypothesisSpec, GmedError> {
    match s {
        "no-mediation" => Ok(HypothesisSpec::no_mediation()),
        "no-direct" | "no-direct-effect" => Ok(HypothesisSpec::no_direct_effect()),
        _ => {
            let v = s
                .strip_prefix("alpha=")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| GmedError::InvalidInput(format!("unknown hypothesis `{s}`")))?;
            HypothesisSpec::new(v)
        }
    }
}

fn cmd_test(args: &TestArgs) -> Result<Outcome, GmedError> {
    only_json(&args.output)?;
    let hyp = parse_hypothesis(&args.hypothesis)?;
    let method = TestMethod::parse(&args.method)?;
    if let Some(fixed) = method.fixed_alpha() {
        if fixed != hyp.alpha {
            return Err(GmedError::InvalidInput(format!("{} only tests alpha = {fixed}", method.label())));
        }
    }
    let data = args.data.load()?;
    let config = args.model.config();
    let outcome = match method {
        TestMethod::SobelOls => ols_sobel_lr(&data)?.0,
        TestMethod::LrOls => ols_sobel_lr(&data)?.1,
        TestMethod::RobustSobel => robust_sobel(&g_estimate(&data, &config, None)?)?,
        TestMethod::RobustWaldDirect => robust_wald_direct(&g_estimate(&data, &config, None)?)?,
        TestMethod::ScoreTwoStep | TestMethod::ScoreCue => {
            let opts = ScoreOptions { allow_non_orthogonal: args.allow_non_orthogonal };
            score_test(&data, &config, &hyp, method, None, &opts)?
        }
    };
    let mut v = json!({
        "schema": SCHEMA,
        "command": "test",
        "method": method.label(),
        "alpha": outcome.alpha,
        "statistic": outcome.statistic,
        "df": outcome.df,
        "p_value": outcome.p_value,
    });
    if let Some(b) = outcome.branch {
        v["branch"] = serde_json::to_value(b).expect("branch serialises");
    }
    if let Some(b) = &outcome.constrained_beta {
        v["constrained_beta"] = json!([b.beta1, b.beta2, b.beta3]);
    }
    if let Some(l) = outcome.lagrange_multiplier {
        v["lagrange_multiplier"] = json!(l);
    }
    if !outcome.warnings.is_empty() {
        v["warnings"] = json!(outcome.warnings);
    }
    Ok(Outcome { code: EXIT_OK, stdout: format!("{}\n", gmed_core::json::value_to_string(&v)), stderr: String::new() })
}

/// `method` or `method:alpha`; fixed-alpha methods default to their own alpha.
pub fn parse_test_request(s: &str) -> Result<TestRequest, GmedError> {
    let (name, alpha) = match s.split_once(':') {
        Some((n, a)) => {
            let a = a.parse::<f64>().map_err(|_| GmedError::InvalidInput(format!("bad alpha in `{s}`")))?;
            (n, Some(a))
        }
        None => (s, None),
    };
    let method = TestMethod::parse(name)?;
    let alpha = alpha.or(method.fixed_alpha()).unwrap_or(0.0);
    TestRequest::new(method, alpha)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome, GmedError> {
    let process = Process::parse(&args.dgp)?;
    let beta = match args.beta.as_slice() {
        [b1, b2, b3] => TargetParams::new(*b1, *b2, *b3),
        [b1, b2, b3, t] => TargetParams::with_theta(*b1, *b2, *b3, *t),
        _ => return Err(GmedError::InvalidInput("--beta takes three or four comma-separated values".into())),
    };
    let spec = DgpSpec::new(process, beta, args.n, args.seed).with_correct_models(&args.spec)?;
    let estimators = args
        .estimators
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| Estimator::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    let tests = args
        .tests
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| parse_test_request(s))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = ExperimentOptions { analysis: args.model.config(), bootstrap: args.boot };
    let result = run_experiment_with(&spec, args.reps, &estimators, &tests, args.level, &opts)?;
    let format = match args.output.format {
        FormatArg::Json => TableFormat::Json,
        FormatArg::Csv => TableFormat::Csv,
        FormatArg::Markdown => TableFormat::Markdown,
    };
    Ok(Outcome { code: EXIT_OK, stdout: emit_table(&result, format), stderr: String::new() })
}

fn write_out(mut outcome: Outcome, out: Option<&PathBuf>) -> Outcome {
    if let Some(path) = out {
        if outcome.stdout.is_empty() {
            return outcome;
        }
        if let Err(e) = std::fs::write(path, &outcome.stdout) {
            return failure(&GmedError::from(e));
        }
        outcome.stdout.clear();
    }
    outcome
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Outcome {
    let (result, out) = match &cli.command {
        Command::Estimate(a) => (cmd_estimate(a), a.output.out.as_ref()),
        Command::Test(a) => (cmd_test(a), a.output.out.as_ref()),
        Command::Simulate(a) => (cmd_simulate(a), a.output.out.as_ref()),
    };
    match result {
        Ok(o) => write_out(o, out),
        Err(e) => failure(&e),
    }
}

/// Parses `args` (including the program name) and runs them. Usage errors
/// become error JSON with kind `Usage` and exit code 2.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Outcome { code: EXIT_OK, stdout: e.to_string(), stderr: String::new() }
                }
                _ => Outcome { code: EXIT_INPUT, stdout: String::new(), stderr: error_json("Usage", &e.to_string()) },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypotheses_parse() {
        assert_eq!(parse_hypothesis("no-mediation").unwrap().alpha, 0.0);
        assert_eq!(parse_hypothesis("no-direct").unwrap().alpha, 1.0);
        assert_eq!(parse_hypothesis("alpha=0.25").unwrap().alpha, 0.25);
        assert!(parse_hypothesis("alpha=1.5").is_err());
        assert!(parse_hypothesis("other").is_err());
    }

    #[test]
    fn test_requests_parse() {
        let r = parse_test_request("score-cue:0.5").unwrap();
        assert_eq!((r.method, r.alpha), (TestMethod::ScoreCue, 0.5));
        assert_eq!(parse_test_request("robust-wald-direct").unwrap().alpha, 1.0);
        assert!(parse_test_request("robust-sobel:1").is_err());
    }

    #[test]
    fn usage_errors_exit_two_with_json() {
        let out = run(["gmed", "estimate", "--data"]);
        assert_eq!(out.code, EXIT_INPUT);
        let v: Value = serde_json::from_str(&out.stderr).unwrap();
        assert_eq!(v["error"]["kind"], "Usage");
        assert_eq!(v["schema"], SCHEMA);
    }
}
