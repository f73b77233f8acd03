//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 singular information without
//! `--allow-singular`, 4 verification failure, 1 internal numerical failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crb::{CrbReport, ATTAINABILITY_TOL};
use crate::error::Error;
use crate::linalg::{commutator, trace, trace_of_product, ComplexMatrix, ComplexVector};
use crate::qfim::{
    monotonicity_gap, qfim_closed_form, qfim_fidelity_fd, qfim_from_slds, qfim_pure, qfim_spectral,
    ratio_xi, Qfim, DEFAULT_FD_STEP,
};
use crate::sampling::random_instance;
use crate::sld::{
    generating_coefficients, sld_closed_form, sld_coefficient, sld_eigenbasis, sld_series, SldSet,
    SERIES_ALPHA_LIMIT,
};
use crate::states::{
    finite_difference_derivatives, LudersFamily, PhaseModel, WhiteNoiseState, DERIVATIVE_STEP,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

pub const TOOL_NAME: &str = "phase-qfim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tolerances used by `verify` and `selftest`.
pub mod tolerances {
    pub const SLD_RESIDUAL: f64 = 1e-10;
    pub const SLD_HERMITICITY: f64 = 1e-10;
    pub const SLD_MEAN: f64 = 1e-10;
    pub const OPERATOR_ALGEBRA: f64 = 1e-12;
    pub const EXACT_METHODS: f64 = 1e-9;
    pub const FIDELITY_METHOD: f64 = 1e-4;
    pub const SERIES: f64 = 1e-8;
    pub const WEAK_COMMUTATIVITY: f64 = 1e-12;
    pub const PROPORTIONALITY: f64 = 1e-12;
    pub const MONOTONICITY: f64 = 1e-10;
    pub const COVARIANCE: f64 = 1e-9;
    pub const EXPECTED: f64 = 1e-9;
}

/// A real number serialized as a JSON number, or as `"inf"`, `"-inf"`,
/// `"nan"` when not finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(Real(x)),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(Real(f64::INFINITY)),
                "-inf" => Ok(Real(f64::NEG_INFINITY)),
                "nan" => Ok(Real(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("invalid real {other:?}"))),
            },
        }
    }
}

/// Shortest round-trip decimal; `inf`/`-inf`/`nan` otherwise.
pub fn format_real(x: f64) -> String {
    if x.is_finite() {
        serde_json::to_string(&x).expect("finite floats serialize")
    } else {
        serde_json::to_value(Real(x))
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

fn reals(xs: &[f64]) -> Vec<Real> {
    xs.iter().copied().map(Real).collect()
}

fn real_rows(m: &DMatrix<f64>) -> Vec<Vec<Real>> {
    m.row_iter()
        .map(|r| r.iter().copied().map(Real).collect())
        .collect()
}

fn complex_rows(m: &ComplexMatrix) -> Vec<Vec<[Real; 2]>> {
    m.row_iter()
        .map(|r| r.iter().map(|z| [Real(z.re), Real(z.im)]).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodSelector {
    Closed,
    Sld,
    Spectral,
    Fidelity,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LudersSpec {
    pub r: usize,
    /// `r` vectors of `d` complex entries given as `[re, im]`.
    pub basis: Vec<Vec<[f64; 2]>>,
}

/// Optional reference values checked by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedValues {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qfim: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_total_variance: Option<Real>,
}

/// Problem document as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub d: usize,
    pub eta: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub luders: Option<LudersSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodSelector>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub measurement_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedValues>,
}

impl ProblemSpec {
    pub fn measurement_count(&self) -> u64 {
        self.measurement_count.unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn internal(e: Error) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: e.to_string(),
        }
    }
}

/// A validated problem together with any warnings raised while parsing.
#[derive(Debug, Clone)]
pub struct ParsedProblem {
    pub spec: ProblemSpec,
    pub family: Family,
    pub warnings: Vec<String>,
}

/// The state family a problem describes, evaluated at the problem's phases.
#[derive(Debug, Clone)]
pub enum Family {
    WhiteNoise(WhiteNoiseState),
    Luders {
        family: LudersFamily,
        phases: Vec<f64>,
    },
}

impl Family {
    pub fn phases(&self) -> &[f64] {
        match self {
            Family::WhiteNoise(s) => s.model().phases(),
            Family::Luders { phases, .. } => phases,
        }
    }

    pub fn rho(&self) -> Result<ComplexMatrix, Error> {
        match self {
            Family::WhiteNoise(s) => Ok(s.rho().clone()),
            Family::Luders { family, phases } => family.rho_at(phases),
        }
    }

    pub fn rho_at(&self, phases: &[f64]) -> Result<ComplexMatrix, Error> {
        match self {
            Family::WhiteNoise(s) => Ok(s.at_phases(phases.to_vec())?.rho().clone()),
            Family::Luders { family, .. } => family.rho_at(phases),
        }
    }

    /// Analytic derivatives for white noise, central differences for Lüders states.
    pub fn derivatives(&self) -> Result<Vec<ComplexMatrix>, Error> {
        match self {
            Family::WhiteNoise(s) => Ok(s.derivatives()),
            Family::Luders { family, phases } => {
                finite_difference_derivatives(|p| family.rho_at(p), phases, DERIVATIVE_STEP)
            }
        }
    }

    pub fn is_luders(&self) -> bool {
        matches!(self, Family::Luders { .. })
    }
}

/// Parses and validates a problem document.
pub fn parse_problem(text: &str, normalize: bool) -> Result<ParsedProblem, CliError> {
    let mut spec: ProblemSpec =
        serde_json::from_str(text).map_err(|e| CliError::input(format!("schema error: {e}")))?;
    let mut warnings = Vec::new();
    let d = spec.d;
    if d < 2 {
        return Err(CliError::input(format!(
            "schema error: d must be at least 2, got {d}"
        )));
    }
    if spec.amplitudes.len() != d {
        return Err(CliError::input(format!(
            "schema error: amplitudes has length {}, expected d = {d}",
            spec.amplitudes.len()
        )));
    }
    if spec.phases.len() != d - 1 {
        return Err(CliError::input(format!(
            "schema error: phases has length {}, expected d - 1 = {}",
            spec.phases.len(),
            d - 1
        )));
    }
    if !(0.0..=1.0).contains(&spec.eta) {
        return Err(CliError::input(format!(
            "eta = {} is outside [0, 1]",
            spec.eta
        )));
    }
    if spec.measurement_count == Some(0) {
        return Err(CliError::input("schema error: M must be at least 1"));
    }
    if let Some(rows) = spec.expected.as_ref().and_then(|e| e.qfim.as_ref()) {
        if rows.len() != d - 1 || rows.iter().any(|r| r.len() != d - 1) {
            return Err(CliError::input(format!(
                "schema error: expected.qfim must be {0}x{0}",
                d - 1
            )));
        }
    }
    let model = if normalize {
        let (model, rescaled) =
            PhaseModel::normalized(spec.amplitudes.clone(), spec.phases.clone())
                .map_err(|e| CliError::input(e.to_string()))?;
        if rescaled {
            warnings.push("amplitudes rescaled to unit norm".to_owned());
            spec.amplitudes = model.amplitudes().to_vec();
        }
        model
    } else {
        PhaseModel::new(spec.amplitudes.clone(), spec.phases.clone())
            .map_err(|e| CliError::input(e.to_string()))?
    };
    let family = match &spec.luders {
        None => Family::WhiteNoise(
            WhiteNoiseState::new(model, spec.eta).map_err(|e| CliError::input(e.to_string()))?,
        ),
        Some(l) => {
            if l.r == 0 || l.r > d || l.basis.len() != l.r {
                return Err(CliError::input(format!(
                    "schema error: luders.r = {} with {} basis vectors in dimension {d}",
                    l.r,
                    l.basis.len()
                )));
            }
            if l.basis.iter().any(|v| v.len() != d) {
                return Err(CliError::input(format!(
                    "schema error: luders basis vectors must have {d} entries"
                )));
            }
            let basis = l
                .basis
                .iter()
                .map(|v| {
                    ComplexVector::from_iterator(
                        d,
                        v.iter().map(|[re, im]| crate::linalg::c(*re, *im)),
                    )
                })
                .collect();
            let family =
                LudersFamily::new(basis, spec.eta).map_err(|e| CliError::input(e.to_string()))?;
            warnings.push("amplitudes are not used by Lüders problems".to_owned());
            Family::Luders {
                family,
                phases: spec.phases.clone(),
            }
        }
    };
    Ok(ParsedProblem {
        spec,
        family,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub alpha: Real,
    pub beta: Real,
    pub xi: Real,
    pub sld_coefficient: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbSummary {
    pub qfim_method: String,
    pub attainable: bool,
    pub max_im_residual: Real,
    pub qfim_eigenvalues: Vec<Real>,
    pub rotation: Vec<Vec<Real>>,
    pub measurement_count: u64,
    pub min_total_variance: Real,
    pub singular_directions: Vec<Vec<Real>>,
    pub lambda_point: Vec<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator_covariance: Option<Vec<Vec<Real>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl CheckResult {
    fn bounded(name: &str, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_owned(),
            status: if residual <= tolerance {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            residual: Some(Real(residual)),
            tolerance: Some(Real(tolerance)),
            reason: None,
        }
    }

    fn skipped(name: &str, reason: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            status: CheckStatus::Skipped,
            residual: None,
            tolerance: None,
            reason: Some(reason.into()),
        }
    }

    fn error(name: &str, e: &Error) -> Self {
        Self {
            name: name.to_owned(),
            status: CheckStatus::Fail,
            residual: None,
            tolerance: None,
            reason: Some(e.to_string()),
        }
    }
}

/// Machine-readable output of every JSON-emitting command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSummary>,
    pub qfim: BTreeMap<String, Vec<Vec<Real>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_deviation: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crb: Option<CrbSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<Vec<Vec<[Real; 2]>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckResult>>,
}

impl ResultEnvelope {
    fn new(command: &str, problem: Option<&ParsedProblem>) -> Self {
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            command: command.to_owned(),
            problem: problem.map(|p| p.spec.clone()),
            seed: None,
            warnings: problem.map(|p| p.warnings.clone()).unwrap_or_default(),
            state: problem.and_then(|p| match &p.family {
                Family::WhiteNoise(s) => Some(StateSummary {
                    alpha: Real(s.alpha()),
                    beta: Real(s.beta()),
                    xi: Real(ratio_xi(s.eta(), s.dim())),
                    sld_coefficient: Real(sld_coefficient(s.eta(), s.dim())),
                }),
                Family::Luders { .. } => None,
            }),
            qfim: BTreeMap::new(),
            max_deviation: None,
            crb: None,
            estimators: None,
            checks: None,
        }
    }

    pub fn to_json(&self, pretty: bool) -> String {
        let mut s = if pretty {
            serde_json::to_string_pretty(self)
        } else {
            serde_json::to_string(self)
        }
        .expect("envelope serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "phase-qfim",
    version,
    about = "Quantum Fisher information for multiphase estimation under white noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the QFIM by one or more methods, with the Cramér–Rao summary.
    Qfim(QfimArgs),
    /// Check every identity of the model and report pass/fail per check.
    Verify(VerifyArgs),
    /// Sweep eta and emit CSV rows of xi, QFIM entries and minimal total variance.
    Scan(ScanArgs),
    /// Emit the rotation, rotated parameters, optimal estimators and their covariance.
    Estimators(EstimatorArgs),
    /// Run the cross-method checks on seeded random instances.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Problem document (JSON); `-` reads standard input.
    pub input: PathBuf,
    /// Rescale amplitudes to unit norm instead of rejecting them.
    #[arg(long)]
    pub normalize: bool,
    /// Pretty-print the JSON output.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct QfimArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum)]
    pub method: Option<MethodSelector>,
    /// Report a singular QFIM with exit code 0 instead of 3.
    #[arg(long)]
    pub allow_singular: bool,
    /// Finite-difference step for the fidelity method.
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Restrict the SLD/QFIM cross-checks to one method family.
    #[arg(long, value_enum)]
    pub method: Option<VerifyMethod>,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    pub step: f64,
    /// Even-order terms used by the series SLD.
    #[arg(long, default_value_t = 40)]
    pub series_terms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyMethod {
    Closed,
    Sld,
    Series,
    Spectral,
    Fidelity,
    All,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Scanned parameter; only `eta` is supported.
    #[arg(long, default_value = "eta")]
    pub parameter: String,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 8)]
    pub max_dim: usize,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    pub step: f64,
    #[arg(long)]
    pub pretty: bool,
}

/// Captured result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            stdout,
            stderr: String::new(),
            code: EXIT_OK,
        }
    }

    fn failure(e: CliError) -> Self {
        Self {
            stdout: String::new(),
            stderr: format!("error: {}\n", e.message),
            code: e.code,
        }
    }
}

/// Runs the CLI on the given arguments (including the program name).
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                Outcome {
                    stdout: String::new(),
                    stderr: rendered,
                    code: EXIT_INPUT,
                }
            } else {
                Outcome::ok(rendered)
            };
        }
    };
    match cli.command {
        Command::Qfim(a) => cmd_qfim(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Scan(a) => cmd_scan(&a),
        Command::Estimators(a) => cmd_estimators(&a),
        Command::Selftest(a) => cmd_selftest(&a),
    }
}

fn read_problem(args: &InputArgs) -> Result<ParsedProblem, CliError> {
    let text = if args.input.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())
            .map_err(|e| CliError::input(format!("cannot read standard input: {e}")))?
    } else {
        std::fs::read_to_string(&args.input)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", args.input.display())))?
    };
    parse_problem(&text, args.normalize)
}

fn with_warnings(mut outcome: Outcome, warnings: &[String]) -> Outcome {
    for w in warnings {
        outcome.stderr.push_str(&format!("warning: {w}\n"));
    }
    outcome
}

/// SLDs and QFIM used for the bound: closed forms for white noise, the
/// eigenbasis/spectral routes for Lüders problems.
fn reference_solution(family: &Family) -> Result<(ComplexMatrix, SldSet, Qfim), Error> {
    match family {
        Family::WhiteNoise(s) => Ok((s.rho().clone(), sld_closed_form(s), qfim_closed_form(s))),
        Family::Luders { .. } => {
            let rho = family.rho()?;
            let drho = family.derivatives()?;
            let slds = sld_eigenbasis(&rho, &drho, None)?;
            let q = qfim_spectral(&rho, &drho, None)?;
            Ok((rho, slds, q))
        }
    }
}

fn crb_summary(
    family: &Family,
    rho: &ComplexMatrix,
    slds: &SldSet,
    q: &Qfim,
    measurement_count: u64,
) -> Result<(CrbSummary, CrbReport), Error> {
    let report = CrbReport::build(rho, slds, q, family.phases(), measurement_count)?;
    let summary = CrbSummary {
        qfim_method: q.method.as_str().to_owned(),
        attainable: report.attainability.attainable,
        max_im_residual: Real(report.attainability.max_im_residual),
        qfim_eigenvalues: reals(&report.qfim_eigenvalues),
        rotation: real_rows(&report.rotation),
        measurement_count,
        min_total_variance: Real(report.min_total_variance.value),
        singular_directions: report
            .min_total_variance
            .singular_directions
            .iter()
            .map(|v| reals(v))
            .collect(),
        lambda_point: reals(&report.lambda_point),
        estimator_covariance: report.estimator_covariance.as_ref().map(real_rows),
        caveat: family.is_luders().then(|| {
            "rotation may depend on the phases for Lüders states; estimators are local to this point"
                .to_owned()
        }),
    };
    Ok((summary, report))
}

fn qfim_by_method(
    family: &Family,
    selector: MethodSelector,
    step: f64,
) -> Result<Vec<Qfim>, CliError> {
    let wanted = |m: MethodSelector| selector == MethodSelector::All || selector == m;
    let mut out = Vec::new();
    if wanted(MethodSelector::Closed) {
        match family {
            Family::WhiteNoise(s) => out.push(qfim_closed_form(s)),
            Family::Luders { .. } if selector == MethodSelector::Closed => {
                return Err(CliError::input("no closed form exists for Lüders problems"));
            }
            Family::Luders { .. } => {}
        }
    }
    let rho = family.rho().map_err(CliError::internal)?;
    if wanted(MethodSelector::Sld) || wanted(MethodSelector::Spectral) {
        let drho = family.derivatives().map_err(CliError::internal)?;
        if wanted(MethodSelector::Sld) {
            let slds = sld_eigenbasis(&rho, &drho, None).map_err(CliError::internal)?;
            out.push(qfim_from_slds(&rho, &slds).map_err(CliError::internal)?);
        }
        if wanted(MethodSelector::Spectral) {
            out.push(qfim_spectral(&rho, &drho, None).map_err(CliError::internal)?);
        }
    }
    if wanted(MethodSelector::Fidelity) {
        let q =
            qfim_fidelity_fd(|p| family.rho_at(p), family.phases(), step).map_err(|e| match e {
                Error::StepOutOfRange(_) => CliError::input(e.to_string()),
                other => CliError::internal(other),
            })?;
        out.push(q);
    }
    Ok(out)
}

/// Largest relative Frobenius deviation over all pairs.
fn max_pairwise_deviation(qs: &[Qfim]) -> Option<f64> {
    if qs.len() < 2 {
        return None;
    }
    let mut worst = 0.0_f64;
    for (i, a) in qs.iter().enumerate() {
        for b in &qs[i + 1..] {
            worst = worst
                .max(a.relative_deviation(b))
                .max(b.relative_deviation(a));
        }
    }
    Some(worst)
}

pub fn cmd_qfim(args: &QfimArgs) -> Outcome {
    let problem = match read_problem(&args.input) {
        Ok(p) => p,
        Err(e) => return Outcome::failure(e),
    };
    let selector = args
        .method
        .or(problem.spec.method)
        .unwrap_or(MethodSelector::All);
    let result = (|| -> Result<Outcome, CliError> {
        let qs = qfim_by_method(&problem.family, selector, args.step)?;
        let mut env = ResultEnvelope::new("qfim", Some(&problem));
        for q in &qs {
            env.qfim
                .insert(q.method.as_str().to_owned(), real_rows(&q.entries));
        }
        env.max_deviation = max_pairwise_deviation(&qs).map(Real);
        let (rho, slds, reference) =
            reference_solution(&problem.family).map_err(CliError::internal)?;
        let (summary, report) = crb_summary(
            &problem.family,
            &rho,
            &slds,
            &reference,
            problem.spec.measurement_count(),
        )
        .map_err(CliError::internal)?;
        env.crb = Some(summary);
        let mut outcome = Outcome::ok(env.to_json(args.input.pretty));
        if report.is_singular() && !args.allow_singular {
            outcome.code = EXIT_SINGULAR;
            outcome.stderr.push_str(
                "error: QFIM is singular; the total-variance bound is infinite (use --allow-singular)\n",
            );
        }
        Ok(outcome)
    })();
    match result {
        Ok(o) => with_warnings(o, &problem.warnings),
        Err(e) => Outcome::failure(e),
    }
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Largest operator-algebra defect: the two commutation relations and the
/// nested commutator `[P, [P, Ṗ_k]] = Ṗ_k`, plus `Tr Ṗ_k` and `Tr(P Ṗ_k)`.
pub fn operator_algebra_defect(model: &PhaseModel) -> f64 {
    let p = model.projector();
    let mut worst = 0.0_f64;
    for k in 1..model.dim() {
        let ck2 = model.amplitudes()[k].powi(2);
        let a = model.derivative_operator(k).expect("index in range");
        let ad = a.adjoint();
        let pd = &a + &ad;
        let ip = p.map(|z| z * crate::linalg::c(0.0, ck2));
        let r1 = (commutator(&p, &a).expect("same size") - (&ip - &a)).norm();
        let r2 = (commutator(&p, &ad).expect("same size") - (&ip + &ad)).norm();
        let nested = commutator(&p, &commutator(&p, &pd).expect("same size")).expect("same size");
        let r3 = (nested - &pd).norm();
        let r4 = trace(&pd).norm();
        let r5 = trace_of_product(&p, &pd).norm();
        worst = worst.max(r1).max(r2).max(r3).max(r4).max(r5);
    }
    worst
}

fn sld_checks(
    label: &str,
    rho: &ComplexMatrix,
    drho: &[ComplexMatrix],
    slds: &SldSet,
    checks: &mut Vec<CheckResult>,
) {
    use tolerances::*;
    match slds.max_residual(rho, drho) {
        Ok(r) => checks.push(CheckResult::bounded(
            &format!("sld_residual_{label}"),
            r,
            SLD_RESIDUAL,
        )),
        Err(e) => checks.push(CheckResult::error(&format!("sld_residual_{label}"), &e)),
    }
    checks.push(CheckResult::bounded(
        &format!("sld_hermiticity_{label}"),
        slds.max_hermiticity_defect(),
        SLD_HERMITICITY,
    ));
    checks.push(CheckResult::bounded(
        &format!("sld_zero_mean_{label}"),
        slds.max_mean(rho),
        SLD_MEAN,
    ));
}

/// Runs every applicable identity check on a parsed problem.
pub fn verification_checks(
    problem: &ParsedProblem,
    method: VerifyMethod,
    step: f64,
    series_terms: usize,
) -> Result<(Vec<CheckResult>, BTreeMap<String, Qfim>), CliError> {
    use tolerances::*;
    let wanted = |m: VerifyMethod| method == VerifyMethod::All || method == m;
    let family = &problem.family;
    let rho = family.rho().map_err(CliError::internal)?;
    let drho = family.derivatives().map_err(CliError::internal)?;
    let mut checks = Vec::new();
    let mut qfims: BTreeMap<String, Qfim> = BTreeMap::new();

    let (_, ref_slds, reference) = reference_solution(family).map_err(CliError::internal)?;
    qfims.insert(reference.method.as_str().to_owned(), reference.clone());

    if let Family::WhiteNoise(s) = family {
        checks.push(CheckResult::bounded(
            "operator_algebra",
            operator_algebra_defect(s.model()),
            OPERATOR_ALGEBRA,
        ));
        if wanted(VerifyMethod::Closed) {
            sld_checks("closed_form", &rho, &drho, &ref_slds, &mut checks);
        }
        if wanted(VerifyMethod::Series) {
            match generating_coefficients(series_terms) {
                Err(e) => checks.push(CheckResult::error("sld_series_agreement", &e)),
                Ok(spec) => match sld_series(s, &spec) {
                    Ok(series) => {
                        let dev = series
                            .operators
                            .iter()
                            .zip(&ref_slds.operators)
                            .map(|(a, b)| (a - b).norm())
                            .fold(0.0, f64::max);
                        checks.push(CheckResult::bounded("sld_series_agreement", dev, SERIES));
                        sld_checks("series", &rho, &drho, &series, &mut checks);
                    }
                    Err(Error::AlphaOutOfConvergenceDomain(_)) | Err(Error::EtaEndpoint(_))
                        if s.eta() > 0.0 =>
                    {
                        checks.push(CheckResult::skipped(
                            "sld_series_agreement",
                            format!(
                                "alpha out of convergence domain (alpha = {}, limit {})",
                                format_real(s.alpha()),
                                format_real(SERIES_ALPHA_LIMIT)
                            ),
                        ));
                    }
                    Err(e) => {
                        checks.push(CheckResult::skipped("sld_series_agreement", e.to_string()))
                    }
                },
            }
        }
        let pure = qfim_pure(s.model());
        let scaled = &pure.entries * ratio_xi(s.eta(), s.dim());
        checks.push(CheckResult::bounded(
            "qfim_proportional_to_pure",
            (&reference.entries - scaled).norm(),
            PROPORTIONALITY,
        ));
        checks.push(CheckResult::bounded(
            "monotonicity_gap",
            (-monotonicity_gap(s)).max(0.0),
            MONOTONICITY,
        ));
    }

    if wanted(VerifyMethod::Sld) || wanted(VerifyMethod::Spectral) {
        match sld_eigenbasis(&rho, &drho, None) {
            Ok(eig_slds) => {
                sld_checks("eigenbasis", &rho, &drho, &eig_slds, &mut checks);
                if wanted(VerifyMethod::Sld) {
                    match qfim_from_slds(&rho, &eig_slds) {
                        Ok(q) => {
                            qfims.insert(q.method.as_str().to_owned(), q);
                        }
                        Err(e) => checks.push(CheckResult::error("qfim_from_slds", &e)),
                    }
                }
            }
            Err(e) => checks.push(CheckResult::error("sld_eigenbasis", &e)),
        }
        if wanted(VerifyMethod::Spectral) {
            match qfim_spectral(&rho, &drho, None) {
                Ok(q) => {
                    qfims.insert(q.method.as_str().to_owned(), q);
                }
                Err(e) => checks.push(CheckResult::error("qfim_spectral", &e)),
            }
        }
    }
    if wanted(VerifyMethod::Fidelity) {
        match qfim_fidelity_fd(|p| family.rho_at(p), family.phases(), step) {
            Ok(q) => {
                qfims.insert(q.method.as_str().to_owned(), q);
            }
            Err(e) => checks.push(CheckResult::error("qfim_fidelity_fd", &e)),
        }
    }
    for (name, q) in &qfims {
        if name == reference.method.as_str() {
            continue;
        }
        let tol = if q.method == crate::qfim::QfimMethod::FidelityFd {
            FIDELITY_METHOD
        } else {
            EXACT_METHODS
        };
        let dev = if reference.entries.norm() > 0.0 {
            q.relative_deviation(&reference)
        } else {
            q.entries.norm()
        };
        checks.push(CheckResult::bounded(
            &format!("qfim_{name}_vs_{}", reference.method.as_str()),
            dev,
            tol,
        ));
    }

    let attain = crate::crb::attainability_check(&rho, &ref_slds, ATTAINABILITY_TOL)
        .map_err(CliError::internal)?;
    if family.is_luders() {
        checks.push(CheckResult::skipped(
            "weak_commutativity",
            format!(
                "not guaranteed for Lüders states (residual {})",
                format_real(attain.max_im_residual)
            ),
        ));
    } else {
        checks.push(CheckResult::bounded(
            "weak_commutativity",
            attain.max_im_residual,
            WEAK_COMMUTATIVITY,
        ));
    }

    let report = CrbReport::build(
        &rho,
        &ref_slds,
        &reference,
        family.phases(),
        problem.spec.measurement_count(),
    )
    .map_err(CliError::internal)?;
    match &report.estimator_covariance {
        Some(cov) => {
            let n = cov.nrows();
            let mut diag_defect = 0.0_f64;
            let mut off_diag = 0.0_f64;
            for j in 0..n {
                let target = 1.0 / report.qfim_eigenvalues[j];
                diag_defect = diag_defect.max((cov[(j, j)] - target).abs() / target.max(1.0));
                for k in 0..n {
                    if j != k {
                        let scale = (cov[(j, j)] * cov[(k, k)]).sqrt().max(1.0);
                        off_diag = off_diag.max(cov[(j, k)].abs() / scale);
                    }
                }
            }
            checks.push(CheckResult::bounded(
                "covariance_diagonal",
                diag_defect,
                COVARIANCE,
            ));
            checks.push(CheckResult::bounded(
                "covariance_uncorrelated",
                off_diag,
                COVARIANCE,
            ));
            // Tr(cov) is the single-shot variance; the bound divides by M.
            let m = report.measurement_count as f64;
            let tv = report.min_total_variance.value * m;
            checks.push(CheckResult::bounded(
                "covariance_saturates_bound",
                (cov.trace() - tv).abs() / tv.max(1.0),
                COVARIANCE,
            ));
        }
        None => checks.push(CheckResult::skipped(
            "covariance_diagonal",
            "singular information: estimators undefined",
        )),
    }

    if let Some(expected) = &problem.spec.expected {
        if let Some(rows) = &expected.qfim {
            let n = rows.len();
            let target = DMatrix::from_fn(n, n, |j, k| rows[j][k]);
            checks.push(CheckResult::bounded(
                "expected_qfim",
                relative_frobenius(&reference.entries, &target),
                EXPECTED,
            ));
        }
        if let Some(Real(tv)) = expected.min_total_variance {
            let actual = report.min_total_variance.value;
            let residual = if tv.is_infinite() || actual.is_infinite() {
                if tv == actual {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (actual - tv).abs() / tv.abs().max(1.0)
            };
            checks.push(CheckResult::bounded(
                "expected_min_total_variance",
                residual,
                EXPECTED,
            ));
        }
    }
    Ok((checks, qfims))
}

pub fn cmd_verify(args: &VerifyArgs) -> Outcome {
    let problem = match read_problem(&args.input) {
        Ok(p) => p,
        Err(e) => return Outcome::failure(e),
    };
    let method = args.method.unwrap_or(match problem.spec.method {
        Some(MethodSelector::Closed) => VerifyMethod::Closed,
        Some(MethodSelector::Sld) => VerifyMethod::Sld,
        Some(MethodSelector::Spectral) => VerifyMethod::Spectral,
        Some(MethodSelector::Fidelity) => VerifyMethod::Fidelity,
        Some(MethodSelector::All) | None => VerifyMethod::All,
    });
    if !(1e-4..=1e-1).contains(&args.step) {
        return Outcome::failure(CliError::input(
            Error::StepOutOfRange(args.step).to_string(),
        ));
    }
    let (checks, qfims) = match verification_checks(&problem, method, args.step, args.series_terms)
    {
        Ok(x) => x,
        Err(e) => return Outcome::failure(e),
    };
    let mut env = ResultEnvelope::new("verify", Some(&problem));
    for (name, q) in &qfims {
        env.qfim.insert(name.clone(), real_rows(&q.entries));
    }
    let all: Vec<Qfim> = qfims.values().cloned().collect();
    env.max_deviation = max_pairwise_deviation(&all).map(Real);
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| c.status == CheckStatus::Fail)
        .map(|c| c.name.as_str())
        .collect();
    let mut stderr = String::new();
    let code = if failed.is_empty() {
        EXIT_OK
    } else {
        let _ = writeln!(stderr, "verification failed: {}", failed.join(", "));
        EXIT_VERIFY
    };
    env.checks = Some(checks);
    with_warnings(
        Outcome {
            stdout: env.to_json(args.input.pretty),
            stderr,
            code,
        },
        &problem.warnings,
    )
}

pub fn cmd_scan(args: &ScanArgs) -> Outcome {
    if args.parameter != "eta" {
        return Outcome::failure(CliError::input(format!(
            "unsupported scan parameter {:?}; only eta is available",
            args.parameter
        )));
    }
    if !(0.0 <= args.from && args.from < args.to && args.to <= 1.0) {
        return Outcome::failure(CliError::input(format!(
            "range error: need 0 <= from < to <= 1, got from = {}, to = {}",
            args.from, args.to
        )));
    }
    if args.steps < 2 {
        return Outcome::failure(CliError::input("range error: steps must be at least 2"));
    }
    let problem = match read_problem(&args.input) {
        Ok(p) => p,
        Err(e) => return Outcome::failure(e),
    };
    let model = match &problem.family {
        Family::WhiteNoise(s) => s.model().clone(),
        Family::Luders { .. } => {
            return Outcome::failure(CliError::input("scan supports white-noise problems only"))
        }
    };
    match scan_csv(
        &model,
        args.from,
        args.to,
        args.steps,
        problem.spec.measurement_count(),
    ) {
        Ok(csv) => with_warnings(Outcome::ok(csv), &problem.warnings),
        Err(e) => Outcome::failure(CliError::internal(e)),
    }
}

/// CSV rows `eta, xi, F_11..F_nn, min_total_variance` in ascending eta.
pub fn scan_csv(
    model: &PhaseModel,
    from: f64,
    to: f64,
    steps: usize,
    measurement_count: u64,
) -> Result<String, Error> {
    let n = model.num_params();
    let mut out = String::from("eta,xi");
    for j in 1..=n {
        for k in 1..=n {
            // indices run together as in F_12 unless they could be misread
            if n < 10 {
                let _ = write!(out, ",F_{j}{k}");
            } else {
                let _ = write!(out, ",F_{j}_{k}");
            }
        }
    }
    out.push_str(",min_total_variance\n");
    for i in 0..steps {
        let eta = if i == steps - 1 {
            to
        } else {
            from + (to - from) * i as f64 / (steps - 1) as f64
        };
        let state = WhiteNoiseState::new(model.clone(), eta)?;
        let q = qfim_closed_form(&state);
        let tv = crate::crb::min_total_variance(&q, measurement_count)?;
        let _ = write!(
            out,
            "{},{}",
            format_real(eta),
            format_real(ratio_xi(eta, model.dim()))
        );
        for x in q
            .entries
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        {
            let _ = write!(out, ",{}", format_real(x));
        }
        let _ = writeln!(out, ",{}", format_real(tv.value));
    }
    Ok(out)
}

pub fn cmd_estimators(args: &EstimatorArgs) -> Outcome {
    let problem = match read_problem(&args.input) {
        Ok(p) => p,
        Err(e) => return Outcome::failure(e),
    };
    let result = (|| -> Result<Outcome, CliError> {
        let (rho, slds, reference) =
            reference_solution(&problem.family).map_err(CliError::internal)?;
        let (summary, report) = crb_summary(
            &problem.family,
            &rho,
            &slds,
            &reference,
            problem.spec.measurement_count(),
        )
        .map_err(CliError::internal)?;
        let Some(estimators) = &report.estimators else {
            return Err(CliError {
                code: EXIT_SINGULAR,
                message: "singular information: some phase combinations are unidentifiable".into(),
            });
        };
        let mut env = ResultEnvelope::new("estimators", Some(&problem));
        env.qfim.insert(
            reference.method.as_str().to_owned(),
            real_rows(&reference.entries),
        );
        env.estimators = Some(estimators.iter().map(complex_rows).collect());
        env.crb = Some(summary);
        Ok(Outcome::ok(env.to_json(args.input.pretty)))
    })();
    match result {
        Ok(o) => with_warnings(o, &problem.warnings),
        Err(e) => Outcome::failure(e),
    }
}

pub fn cmd_selftest(args: &SelftestArgs) -> Outcome {
    use tolerances::*;
    if args.max_dim < 2 {
        return Outcome::failure(CliError::input("max-dim must be at least 2"));
    }
    if !(1e-4..=1e-1).contains(&args.step) {
        return Outcome::failure(CliError::input(
            Error::StepOutOfRange(args.step).to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, value: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(value);
    };
    for _ in 0..args.instances {
        let (model, eta) = random_instance(&mut rng, 2..=args.max_dim, 0.05..=0.95);
        let s = match WhiteNoiseState::new(model, eta) {
            Ok(s) => s,
            Err(e) => return Outcome::failure(CliError::internal(e)),
        };
        let run = || -> Result<Vec<(&'static str, f64)>, Error> {
            let closed = qfim_closed_form(&s);
            let slds = sld_eigenbasis(s.rho(), &s.derivatives(), None)?;
            let from = qfim_from_slds(s.rho(), &slds)?;
            let spectral = qfim_spectral(s.rho(), &s.derivatives(), None)?;
            let fidelity = qfim_fidelity_fd(
                |p| Ok(s.at_phases(p.to_vec())?.rho().clone()),
                s.model().phases(),
                args.step,
            )?;
            let closed_slds = sld_closed_form(&s);
            let sld_dev = slds
                .operators
                .iter()
                .zip(&closed_slds.operators)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            Ok(vec![
                (
                    "qfim_from_slds_vs_closed_form",
                    from.relative_deviation(&closed),
                ),
                (
                    "qfim_spectral_vs_closed_form",
                    spectral.relative_deviation(&closed),
                ),
                (
                    "qfim_fidelity_fd_vs_closed_form",
                    fidelity.relative_deviation(&closed),
                ),
                ("sld_eigenbasis_vs_closed_form", sld_dev),
                (
                    "sld_residual",
                    slds.max_residual(s.rho(), &s.derivatives())?,
                ),
                ("sld_zero_mean", slds.max_mean(s.rho())),
                ("operator_algebra", operator_algebra_defect(s.model())),
                ("monotonicity_gap", (-monotonicity_gap(&s)).max(0.0)),
            ])
        };
        match run() {
            Ok(values) => values.into_iter().for_each(|(n, v)| record(n, v)),
            Err(e) => return Outcome::failure(CliError::internal(e)),
        }
    }
    let tolerance = |name: &str| match name {
        "qfim_fidelity_fd_vs_closed_form" => FIDELITY_METHOD,
        "sld_residual" => SLD_RESIDUAL,
        "sld_zero_mean" => SLD_MEAN,
        "operator_algebra" => OPERATOR_ALGEBRA,
        "monotonicity_gap" => MONOTONICITY,
        _ => EXACT_METHODS,
    };
    let checks: Vec<CheckResult> = worst
        .iter()
        .map(|(name, &v)| CheckResult::bounded(name, v, tolerance(name)))
        .collect();
    let code = if checks.iter().any(|c| c.status == CheckStatus::Fail) {
        EXIT_VERIFY
    } else {
        EXIT_OK
    };
    let mut env = ResultEnvelope::new("selftest", None);
    env.seed = Some(args.seed);
    env.checks = Some(checks);
    Outcome {
        stdout: env.to_json(args.pretty),
        stderr: String::new(),
        code,
    }
}
