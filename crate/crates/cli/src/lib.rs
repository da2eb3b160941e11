//! Command-line front end for the Potts spin glass experiments.
//!
//! Every subcommand reads its parameters from flags, optionally merged over a
//! JSON config file (flags win), runs one computation and renders the report
//! as JSON or CSV.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use potts_core::cascade::{estimate_coincidence, coincidence_targets, verify_y_identity, CascadeSpec, McParams};
use potts_core::diagnostics::{
    cascade_arrays, gg_residual, interpolation_curve, legendre_gap, path_generator, sync_fit, Bootstrap,
    Replicas,
};
use potts_core::functional::{eval_f2, eval_lower_bound, eval_parisi, eval_phi, eval_phi_cascade_mc};
use potts_core::linalg::{self, Mat};
use potts_core::model::{
    enumerate_free_energy, mcmc_free_energy, ass_covariance_check, Constraint, PerturbationSpec, SamplerParams,
};
use potts_core::optimize::{inner_minimize, outer_maximize, OptimizerConfig};
use potts_core::paths::{
    random_path, round_distribution, LagrangeMultipliers, MonotonePath, StateDistribution,
};
use potts_core::quadrature::QuadratureSpec;
use potts_core::rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Budget(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Budget(m) => write!(f, "budget exceeded: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Budget(_) => EXIT_BUDGET,
        }
    }
}

impl From<potts_core::Error> for CliError {
    fn from(e: potts_core::Error) -> Self {
        if e.is_budget() {
            CliError::Budget(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Parser, Debug)]
#[command(name = "potts", version, about = "Potts spin glass free energy experiments")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Evaluate the Parisi functional at one point.
    EvalParisi(EvalParisiArgs),
    /// Minimize over paths at fixed d, or maximize the infimum over d.
    Optimize(OptimizeArgs),
    /// Disorder-averaged finite-N free energy.
    FreeEnergy(FreeEnergyArgs),
    /// Compare lower bound, finite-N free energy and upper bound.
    BoundCheck(BoundCheckArgs),
    /// Check cascade identities by Monte Carlo.
    CascadeVerify(CascadeVerifyArgs),
    /// Ghirlanda–Guerra residual on cascade overlap arrays.
    DiagGg(DiagGgArgs),
    /// Fit blocks of cascade overlap arrays as a function of their trace.
    DiagSync(DiagSyncArgs),
    /// Interpolation between the model and the cascade functional.
    DiagInterp(DiagInterpArgs),
    /// Duality gap of the restricted-set functional.
    DiagLegendre(DiagLegendreArgs),
    /// Covariances of the cavity decomposition.
    AssCheck(AssCheckArgs),
}

impl Command {
    fn key(&self) -> &'static str {
        match self {
            Command::EvalParisi(_) => "eval-parisi",
            Command::Optimize(_) => "optimize",
            Command::FreeEnergy(_) => "free-energy",
            Command::BoundCheck(_) => "bound-check",
            Command::CascadeVerify(_) => "cascade-verify",
            Command::DiagGg(_) => "diag-gg",
            Command::DiagSync(_) => "diag-sync",
            Command::DiagInterp(_) => "diag-interp",
            Command::DiagLegendre(_) => "diag-legendre",
            Command::AssCheck(_) => "ass-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    Quadrature,
    CascadeMc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeEnergyMethod {
    Enumerate,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CascadeCheck {
    All,
    YIdentity,
    Coincidence,
    DualPhi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    /// `f ≡ 1`.
    One,
    /// `f = tr(R_{1,2})²`.
    TracePoly,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalParisiArgs {
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Multipliers `λ_1..λ_{κ−1}`; a single value is repeated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<f64>>,
    /// `uniform-r<r>`, `random-r<r>`, inline JSON or a JSON file.
    #[arg(long)]
    pub path: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<EvalMethod>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Fix `d` and only minimize over paths.
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<f64>>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub max_evals: Option<usize>,
    #[arg(long)]
    pub grid_mesh: Option<f64>,
    #[arg(long)]
    pub refine_evals: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub nonneg_gamma: Option<bool>,
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FreeEnergyArgs {
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Disorder draws.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Restrict to configurations with state proportions `d`.
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<f64>>,
    /// Allow proportions within `eps` of `d`.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<FreeEnergyMethod>,
    #[arg(long)]
    pub ladder: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BoundCheckArgs {
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Sites of the restricted-set lower bound.
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub grid_mesh: Option<f64>,
    #[arg(long)]
    pub refine_evals: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CascadeVerifyArgs {
    #[arg(long, value_enum)]
    pub check: Option<CascadeCheck>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Random paths per check.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
    /// Cascades for the coincidence check.
    #[arg(long)]
    pub cascades: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiagGgArgs {
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub arrays: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<u32>,
    /// Exponents `n_1..n_m`.
    #[arg(long, value_delimiter = ',')]
    pub powers: Option<Vec<u32>>,
    /// `λ^1;λ^2;…` with comma-separated entries.
    #[arg(long, allow_hyphen_values = true)]
    pub lambdas: Option<String>,
    #[arg(long, value_enum)]
    pub f: Option<TestFunction>,
    #[arg(long)]
    pub atoms: Option<usize>,
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiagSyncArgs {
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub arrays: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiagInterpArgs {
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<f64>>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub path: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiagLegendreArgs {
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<f64>>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub path: Option<String>,
    #[arg(long = "M", value_delimiter = ',')]
    #[serde(rename = "M")]
    pub m: Option<Vec<usize>>,
    /// Multipliers range over `[−lambda-max, lambda-max]`.
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub lambda_steps: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AssCheckArgs {
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
}

/// Fully resolved run: global settings plus the merged subcommand block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub command: Command,
}

/// Top level of a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    format: Option<Format>,
    out: Option<PathBuf>,
    #[serde(flatten)]
    blocks: serde_json::Map<String, Value>,
}

/// Values set on the command line replace those in `file`.
fn overlay<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Value>) -> CliResult<T> {
    let mut base = match file {
        None => serde_json::Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(invalid("config blocks must be JSON objects")),
    };
    if let Value::Object(f) = serde_json::to_value(flags)? {
        for (k, v) in f {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    Ok(serde_json::from_value(Value::Object(base))?)
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> CliResult<Self> {
        let file: ConfigFile = match &cli.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => ConfigFile::default(),
        };
        let block = file.blocks.get(cli.command.key());
        let command = match &cli.command {
            Command::EvalParisi(a) => Command::EvalParisi(overlay(a, block)?),
            Command::Optimize(a) => Command::Optimize(overlay(a, block)?),
            Command::FreeEnergy(a) => Command::FreeEnergy(overlay(a, block)?),
            Command::BoundCheck(a) => Command::BoundCheck(overlay(a, block)?),
            Command::CascadeVerify(a) => Command::CascadeVerify(overlay(a, block)?),
            Command::DiagGg(a) => Command::DiagGg(overlay(a, block)?),
            Command::DiagSync(a) => Command::DiagSync(overlay(a, block)?),
            Command::DiagInterp(a) => Command::DiagInterp(overlay(a, block)?),
            Command::DiagLegendre(a) => Command::DiagLegendre(overlay(a, block)?),
            Command::AssCheck(a) => Command::AssCheck(overlay(a, block)?),
        };
        Ok(RunConfig {
            seed: cli.seed.or(file.seed).unwrap_or(0),
            threads: cli.threads.or(file.threads),
            format: cli.format.or(file.format).unwrap_or_default(),
            out: cli.out.or(file.out),
            command,
        })
    }
}

/// A rendered report: JSON always, a table when the subcommand has one.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub json: Value,
    pub table: Option<Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    fn json(json: Value) -> Self {
        Report { json, table: None }
    }

    /// The report in the requested format, newline terminated.
    pub fn render(&self, format: Format) -> CliResult<Vec<u8>> {
        match format {
            Format::Json => {
                let mut s = serde_json::to_vec_pretty(&self.json)?;
                s.push(b'\n');
                Ok(s)
            }
            Format::Csv => {
                let t = self
                    .table
                    .as_ref()
                    .ok_or_else(|| invalid("this subcommand has no CSV form"))?;
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&t.headers)?;
                for r in &t.rows {
                    w.write_record(r)?;
                }
                w.into_inner().map_err(|e| invalid(e.to_string()))
            }
        }
    }
}

/// Floats in CSV carry 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(";")
}

fn distribution(d: Option<&Vec<f64>>, kappa: usize) -> CliResult<StateDistribution> {
    match d {
        Some(v) => {
            if v.len() != kappa {
                return Err(invalid(format!("d has {} entries but kappa = {kappa}", v.len())));
            }
            Ok(StateDistribution::new(v.clone())?)
        }
        None => Ok(StateDistribution::uniform(kappa)),
    }
}

fn uniform_levels(d: &StateDistribution, r: usize) -> potts_core::Result<MonotonePath> {
    let x: Vec<f64> = (0..=r)
        .map(|p| if p == r { 1.0 } else { (p + 1) as f64 / (r + 1) as f64 })
        .collect();
    let gammas: Vec<Mat> = (0..=r).map(|p| d.diag() * (p as f64 / r as f64)).collect();
    MonotonePath::new(d.clone(), x, gammas)
}

/// Resolves `uniform-r<r>`, `random-r<r>`, inline JSON or a JSON file.
pub fn resolve_path(spec: &str, d: &StateDistribution, seed: u64) -> CliResult<MonotonePath> {
    let levels = |prefix: &str| -> CliResult<Option<usize>> {
        match spec.strip_prefix(prefix) {
            None => Ok(None),
            Some(r) => r
                .parse::<usize>()
                .ok()
                .filter(|&r| r >= 1)
                .map(Some)
                .ok_or_else(|| invalid(format!("bad level count in path spec {spec:?}"))),
        }
    };
    if let Some(r) = levels("uniform-r")? {
        return Ok(uniform_levels(d, r)?);
    }
    if let Some(r) = levels("random-r")? {
        let mut g = rng::stream(seed, "path", 0);
        return Ok(random_path(d, r, &mut g)?);
    }
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        fs::read_to_string(spec)?
    };
    let path: MonotonePath = serde_json::from_str(&text)?;
    if !path.d().approx_eq(d, potts_core::paths::CONSTRAINT_TOL) {
        return Err(invalid("path endpoint does not match d"));
    }
    Ok(path)
}

fn quadrature(nodes: Option<usize>) -> CliResult<QuadratureSpec> {
    let q = nodes.map_or_else(QuadratureSpec::default, QuadratureSpec::with_nodes);
    q.validate()?;
    Ok(q)
}

fn mc_params(reps: Option<usize>, atoms: Option<usize>, seed: u64) -> McParams {
    let base = McParams::default();
    McParams {
        reps: reps.unwrap_or(base.reps),
        atoms: atoms.unwrap_or(base.atoms),
        seed,
        tail: base.tail,
    }
}

fn check_beta(beta: f64) -> CliResult<f64> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(beta)
    } else {
        Err(invalid("beta must be finite and nonnegative"))
    }
}

fn positive(v: Option<usize>, default: usize, name: &str) -> CliResult<usize> {
    let v = v.unwrap_or(default);
    if v == 0 {
        return Err(invalid(format!("{name} must be positive")));
    }
    Ok(v)
}

/// Runs the configured subcommand on the current thread pool.
pub fn execute(cfg: &RunConfig) -> CliResult<Report> {
    let seed = cfg.seed;
    match &cfg.command {
        Command::EvalParisi(a) => eval_parisi_cmd(a, seed),
        Command::Optimize(a) => optimize_cmd(a, seed),
        Command::FreeEnergy(a) => free_energy_cmd(a, seed),
        Command::BoundCheck(a) => bound_check_cmd(a, seed),
        Command::CascadeVerify(a) => cascade_verify_cmd(a, seed),
        Command::DiagGg(a) => diag_gg_cmd(a, seed),
        Command::DiagSync(a) => diag_sync_cmd(a, seed),
        Command::DiagInterp(a) => diag_interp_cmd(a, seed),
        Command::DiagLegendre(a) => diag_legendre_cmd(a, seed),
        Command::AssCheck(a) => ass_check_cmd(a, seed),
    }
}

/// [`execute`] on a pool with the configured number of threads.
pub fn execute_with_threads(cfg: &RunConfig) -> CliResult<Report> {
    match cfg.threads {
        None => execute(cfg),
        Some(0) => Err(invalid("threads must be positive")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            pool.install(|| execute(cfg))
        }
    }
}

fn eval_parisi_cmd(a: &EvalParisiArgs, seed: u64) -> CliResult<Report> {
    let kappa = positive(a.kappa, 2, "kappa")?;
    let beta = check_beta(a.beta.unwrap_or(1.0))?;
    let d = distribution(a.d.as_ref(), kappa)?;
    let path = resolve_path(a.path.as_deref().unwrap_or("uniform-r1"), &d, seed)?;
    let lam = match a.lambda.as_deref() {
        None => vec![0.0; kappa - 1],
        Some([v]) if kappa > 2 => vec![*v; kappa - 1],
        Some(v) => v.to_vec(),
    };
    let lambda = LagrangeMultipliers::new(kappa, lam)?;
    let f2 = eval_f2(&path, beta);
    let lagrange = lambda.dot(&d);
    let (value, std_error, phi, method, diagnostics) = match a.method.unwrap_or(EvalMethod::Quadrature) {
        EvalMethod::Quadrature => {
            let r = eval_parisi(&lambda, &d, &path, beta, &quadrature(a.nodes)?)?;
            let phi = r.diagnostics["phi"];
            (r.value, 0.0, phi, "quadrature", r.diagnostics)
        }
        EvalMethod::CascadeMc => {
            let mc = mc_params(a.reps, a.atoms, seed);
            let r = eval_phi_cascade_mc(&lambda, &path, beta, &mc)?;
            (r.value - lagrange - f2, r.std_error, r.value, "cascade-mc", r.diagnostics)
        }
    };
    Ok(Report::json(json!({
        "value": value,
        "std_error": std_error,
        "method": method,
        "phi": phi,
        "f2": f2,
        "lagrange": lagrange,
        "kappa": kappa,
        "beta": beta,
        "lambda": lambda,
        "path": path,
        "diagnostics": diagnostics,
    })))
}

fn optimizer_config(
    starts: Option<usize>,
    max_evals: Option<usize>,
    grid_mesh: Option<f64>,
    refine_evals: Option<usize>,
    nonneg: Option<bool>,
    nodes: Option<usize>,
) -> CliResult<OptimizerConfig> {
    let base = OptimizerConfig::default();
    let cfg = OptimizerConfig {
        starts: starts.unwrap_or(base.starts),
        max_evals: max_evals.unwrap_or(base.max_evals),
        grid_mesh: grid_mesh.unwrap_or(base.grid_mesh),
        refine_evals: refine_evals.unwrap_or(base.refine_evals),
        nonneg_gamma: nonneg.unwrap_or(base.nonneg_gamma),
        quadrature: quadrature(nodes)?,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn optimize_cmd(a: &OptimizeArgs, seed: u64) -> CliResult<Report> {
    let kappa = positive(a.kappa, 2, "kappa")?;
    let beta = check_beta(a.beta.unwrap_or(1.0))?;
    let r = positive(a.r, 1, "r")?;
    let cfg = optimizer_config(a.starts, a.max_evals, a.grid_mesh, a.refine_evals, a.nonneg_gamma, a.nodes)?;
    let rep = match &a.d {
        Some(_) => inner_minimize(&distribution(a.d.as_ref(), kappa)?, r, beta, &cfg, seed)?,
        None => outer_maximize(kappa, beta, r, &cfg, seed)?,
    };
    let mut headers: Vec<String> = (1..=kappa).map(|k| format!("d{k}")).collect();
    headers.push("value".into());
    let rows = if rep.grid.is_empty() {
        vec![rep.d.iter().chain([&rep.value]).map(|v| fmt_float(*v)).collect()]
    } else {
        rep.grid
            .iter()
            .map(|g| g.d.iter().chain([&g.value]).map(|v| fmt_float(*v)).collect())
            .collect()
    };
    Ok(Report {
        json: serde_json::to_value(&rep)?,
        table: Some(Table { headers, rows }),
    })
}

fn free_energy_row(n: usize, kappa: usize, beta: f64, d: Option<&[f64]>, est: f64, se: f64, method: &str) -> Vec<String> {
    vec![
        n.to_string(),
        kappa.to_string(),
        fmt_float(beta),
        d.map(fmt_list).unwrap_or_default(),
        fmt_float(est),
        fmt_float(se),
        method.to_string(),
    ]
}

fn free_energy_table(row: Vec<String>) -> Table {
    Table {
        headers: ["N", "kappa", "beta", "d", "estimate", "se", "method"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: vec![row],
    }
}

fn free_energy_cmd(a: &FreeEnergyArgs, seed: u64) -> CliResult<Report> {
    let n = positive(a.n, 8, "N")?;
    let kappa = positive(a.kappa, 2, "kappa")?;
    let beta = check_beta(a.beta.unwrap_or(1.0))?;
    let samples = positive(a.samples, 100, "samples")?;
    let d = match &a.d {
        Some(_) => Some(distribution(a.d.as_ref(), kappa)?),
        None => None,
    };
    match a.method.unwrap_or(FreeEnergyMethod::Enumerate) {
        FreeEnergyMethod::Enumerate => {
            let constraint = match (&d, a.eps) {
                (None, _) => Constraint::None,
                (Some(d), None) => Constraint::Exact { d: d.clone() },
                (Some(d), Some(eps)) => Constraint::Relaxed { d: d.clone(), eps },
            };
            let rep = enumerate_free_energy(n, kappa, beta, samples, seed, &constraint)?;
            let row = free_energy_row(n, kappa, beta, rep.d.as_deref(), rep.estimate, rep.se, &rep.method);
            Ok(Report {
                json: serde_json::to_value(&rep)?,
                table: Some(free_energy_table(row)),
            })
        }
        FreeEnergyMethod::Mcmc => {
            let d = d.ok_or_else(|| invalid("the mcmc method needs --d"))?;
            let base = SamplerParams::default();
            let params = SamplerParams {
                ladder: a.ladder.unwrap_or(base.ladder),
                sweeps: a.sweeps.unwrap_or(base.sweeps),
                burn_in: a.burn_in.unwrap_or(base.burn_in),
                n_disorder: samples,
                seed,
            };
            let rep = mcmc_free_energy(n, kappa, beta, &d, &params)?;
            let row = free_energy_row(n, kappa, beta, Some(&rep.d), rep.estimate, rep.se, &rep.method);
            Ok(Report {
                json: serde_json::to_value(&rep)?,
                table: Some(free_energy_table(row)),
            })
        }
    }
}

/// Lower bound, finite-N free energy and upper bound for one `(N, κ, β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub kappa: usize,
    pub beta: f64,
    pub lower: f64,
    pub lower_se: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub delta: Vec<f64>,
    pub middle: f64,
    pub middle_se: f64,
    pub upper: f64,
    /// `κ log(N+1)/N`.
    pub correction: f64,
    pub d: Vec<f64>,
    pub r: usize,
    pub path: MonotonePath,
    pub lambda: LagrangeMultipliers,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub pass: bool,
}

/// Runs the three computations of `bound-check`.
pub fn bound_check(a: &BoundCheckArgs, seed: u64) -> CliResult<BoundReport> {
    let n = positive(a.n, 8, "N")?;
    let kappa = positive(a.kappa, 2, "kappa")?;
    let beta = check_beta(a.beta.unwrap_or(1.0))?;
    let samples = positive(a.samples, 200, "samples")?;
    let r = positive(a.r, 1, "r")?;
    let m = positive(a.m, 8, "M")?;
    let cfg = optimizer_config(a.starts, None, a.grid_mesh, a.refine_evals, None, a.nodes)?;
    let middle = enumerate_free_energy(n, kappa, beta, samples, seed, &Constraint::None)?;
    let upper = outer_maximize(kappa, beta, r, &cfg, rng::derive_seed(seed, "upper", 0))?;
    let d = StateDistribution::new(upper.d.clone())?;
    let delta = round_distribution(&d, m)?;
    let mc = mc_params(a.reps, a.atoms, rng::derive_seed(seed, "lower", 0));
    let lower = eval_lower_bound(m, &delta, &upper.path, beta, &mc)?;
    let correction = kappa as f64 * ((n + 1) as f64).ln() / n as f64;
    let lower_ok = lower.value - 3.0 * lower.std_error.hypot(middle.se) <= middle.estimate;
    let upper_ok = middle.estimate <= upper.value + correction + 3.0 * middle.se;
    Ok(BoundReport {
        n,
        kappa,
        beta,
        lower: lower.value,
        lower_se: lower.std_error,
        m,
        delta: delta.d().to_vec(),
        middle: middle.estimate,
        middle_se: middle.se,
        upper: upper.value,
        correction,
        d: upper.d,
        r,
        path: upper.path,
        lambda: upper.lambda,
        lower_ok,
        upper_ok,
        pass: lower_ok && upper_ok,
    })
}

fn bound_check_cmd(a: &BoundCheckArgs, seed: u64) -> CliResult<Report> {
    let rep = bound_check(a, seed)?;
    let table = Table {
        headers: ["N", "kappa", "beta", "lower", "lower_se", "middle", "middle_se", "upper", "correction", "pass"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: vec![vec![
            rep.n.to_string(),
            rep.kappa.to_string(),
            fmt_float(rep.beta),
            fmt_float(rep.lower),
            fmt_float(rep.lower_se),
            fmt_float(rep.middle),
            fmt_float(rep.middle_se),
            fmt_float(rep.upper),
            fmt_float(rep.correction),
            rep.pass.to_string(),
        ]],
    };
    Ok(Report {
        json: serde_json::to_value(&rep)?,
        table: Some(table),
    })
}

fn random_paths(kappa: usize, r: usize, count: usize, seed: u64, label: &str) -> CliResult<Vec<MonotonePath>> {
    (0..count)
        .map(|i| {
            let mut g = rng::stream(seed, label, i as u64);
            let d = potts_core::paths::random_distribution(kappa, &mut g);
            Ok(random_path(&d, r, &mut g)?)
        })
        .collect()
}

fn cascade_verify_cmd(a: &CascadeVerifyArgs, seed: u64) -> CliResult<Report> {
    let check = a.check.unwrap_or(CascadeCheck::All);
    let kappa = positive(a.kappa, 2, "kappa")?;
    let r = positive(a.r, 2, "r")?;
    let beta = check_beta(a.beta.unwrap_or(1.0))?;
    let count = positive(a.paths, 5, "paths")?;
    let mc = mc_params(a.reps, a.atoms, seed);
    let mut out = serde_json::Map::new();
    let mut pass = true;
    if matches!(check, CascadeCheck::All | CascadeCheck::YIdentity) {
        let mut rows = Vec::new();
        for (i, path) in random_paths(kappa, r, count, seed, "y-paths")?.iter().enumerate() {
            let rep = verify_y_identity(path, beta, 1, &McParams { seed: rng::derive_seed(seed, "y", i as u64), ..mc })?;
            pass &= rep.pass;
            rows.push(json!({"path": path, "report": rep}));
        }
        out.insert("y_identity".into(), Value::Array(rows));
    }
    if matches!(check, CascadeCheck::All | CascadeCheck::Coincidence) {
        let path = &random_paths(kappa, r, 1, seed, "coincidence-path")?[0];
        let spec = CascadeSpec::for_path(path, mc.atoms)?;
        let cascades = positive(a.cascades, 10_000, "cascades")?;
        let est = estimate_coincidence(&spec, cascades, seed)?;
        let target = coincidence_targets(&spec);
        let ok = est
            .iter()
            .zip(&target)
            .all(|(e, t)| (e.value - t).abs() <= 3.0 * e.std_error);
        pass &= ok;
        out.insert(
            "coincidence".into(),
            json!({"x": spec.xs(), "estimates": est, "targets": target, "pass": ok}),
        );
    }
    if matches!(check, CascadeCheck::All | CascadeCheck::DualPhi) {
        let q = quadrature(a.nodes)?;
        let mut rows = Vec::new();
        for (i, path) in random_paths(kappa, r, count, seed, "phi-paths")?.iter().enumerate() {
            let mut g = rng::stream(seed, "phi-lambda", i as u64);
            let lam: Vec<f64> = (0..kappa - 1).map(|_| rand::Rng::random_range(&mut g, -1.0..1.0)).collect();
            let lambda = LagrangeMultipliers::new(kappa, lam)?;
            let exact = eval_phi(&lambda, path, beta, &q)?.value;
            let mci = McParams { seed: rng::derive_seed(seed, "phi-mc", i as u64), ..mc };
            let base = eval_phi_cascade_mc(&lambda, path, beta, &mci)?;
            let doubled = eval_phi_cascade_mc(&lambda, path, beta, &mci.doubled())?;
            let allowance = (base.value - doubled.value).abs();
            let ok = (base.value - exact).abs() <= 3.0 * base.std_error + allowance;
            pass &= ok;
            rows.push(json!({
                "path": path, "lambda": lambda, "quadrature": exact,
                "mc": base.value, "mc_se": base.std_error, "allowance": allowance, "pass": ok,
            }));
        }
        out.insert("dual_phi".into(), Value::Array(rows));
    }
    out.insert("pass".into(), Value::Bool(pass));
    Ok(Report::json(Value::Object(out)))
}

fn parse_lambdas(s: &str) -> CliResult<Vec<Vec<f64>>> {
    s.split(';')
        .map(|part| {
            part.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| invalid(format!("bad lambda entry {v:?}: {e}"))))
                .collect()
        })
        .collect()
}

fn diag_gg_cmd(a: &DiagGgArgs, seed: u64) -> CliResult<Report> {
    let kappa = positive(a.kappa, 2, "kappa")?;
    let r = positive(a.r, 2, "r")?;
    let n = a.n.unwrap_or(2);
    let lambdas = match &a.lambdas {
        Some(s) => parse_lambdas(s)?,
        None => vec![(0..kappa).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect()],
    };
    let powers = a.powers.clone().unwrap_or_else(|| vec![1; lambdas.len()]);
    let spec = PerturbationSpec::new(a.p.unwrap_or(1), powers, lambdas)?;
    let d = StateDistribution::uniform(kappa);
    let path = resolve_path(&format!("random-r{r}"), &d, seed)?;
    let arrays = cascade_arrays(
        &path,
        positive(a.arrays, 2000, "arrays")?,
        n + 1,
        positive(a.atoms, 200, "atoms")?,
        rng::derive_seed(seed, "gg-arrays", 0),
    )?;
    let boot = Bootstrap {
        resamples: a.resamples.unwrap_or(200),
        seed: rng::derive_seed(seed, "gg-bootstrap", 0),
    };
    let f: Box<dyn Fn(&Replicas<'_>) -> f64 + Sync> = match a.f.unwrap_or(TestFunction::TracePoly) {
        TestFunction::One => Box::new(|_| 1.0),
        TestFunction::TracePoly => Box::new(|r| r.trace(0, 1).powi(2)),
    };
    let res = gg_residual(&arrays, &*f, n, &spec, &boot)?;
    Ok(Report::json(json!({
        "residual": res,
        "spec": spec,
        "path": path,
        "min_entry": potts_core::diagnostics::min_block_entry(&arrays),
    })))
}

fn diag_sync_cmd(a: &DiagSyncArgs, seed: u64) -> CliResult<Report> {
    let kappa = positive(a.kappa, 2, "kappa")?;
    let r = positive(a.r, 3, "r")?;
    let d = StateDistribution::uniform(kappa);
    let path = resolve_path(&format!("random-r{r}"), &d, seed)?;
    let arrays = cascade_arrays(
        &path,
        positive(a.arrays, 200, "arrays")?,
        positive(a.replicas, 10, "replicas")?,
        positive(a.atoms, 200, "atoms")?,
        rng::derive_seed(seed, "sync-arrays", 0),
    )?;
    let fit = sync_fit(&arrays, positive(a.bins, 20, "bins")?)?;
    let (_, phi) = path_generator(&path)?;
    let generator_error = fit
        .grid
        .iter()
        .zip(&fit.phi_hat)
        .map(|(t, m)| linalg::l1_norm(&(m - phi(*t))))
        .fold(0.0, f64::max);
    let rows = fit
        .grid
        .iter()
        .zip(&fit.phi_hat)
        .map(|(t, m)| std::iter::once(*t).chain(m.iter().copied()).map(fmt_float).collect())
        .collect();
    let mut headers = vec!["t".to_string()];
    for j in 0..kappa {
        for i in 0..kappa {
            headers.push(format!("phi_{}_{}", i + 1, j + 1));
        }
    }
    Ok(Report {
        json: json!({"fit": fit, "generator_error": generator_error, "path": path}),
        table: Some(Table { headers, rows }),
    })
}

fn diag_interp_cmd(a: &DiagInterpArgs, seed: u64) -> CliResult<Report> {
    let n = positive(a.n, 4, "N")?;
    let kappa = positive(a.kappa, 2, "kappa")?;
    let beta = check_beta(a.beta.unwrap_or(1.0))?;
    let d = distribution(a.d.as_ref(), kappa)?;
    let r = positive(a.r, 1, "r")?;
    let spec = a.path.clone().unwrap_or_else(|| format!("random-r{r}"));
    let path = resolve_path(&spec, &d, seed)?;
    let t = a
        .t_grid
        .clone()
        .unwrap_or_else(|| (0..6).map(|i| i as f64 / 5.0).collect());
    let mc = McParams {
        reps: a.reps.unwrap_or(2000),
        atoms: a.atoms.unwrap_or(100),
        ..mc_params(None, None, seed)
    };
    let rep = interpolation_curve(n, &d, beta, &path, &t, &mc)?;
    let rows = rep
        .t
        .iter()
        .zip(rep.estimate.iter().zip(&rep.se))
        .map(|(t, (e, s))| vec![fmt_float(*t), fmt_float(*e), fmt_float(*s)])
        .collect();
    Ok(Report {
        json: json!({"curve": rep, "path": path}),
        table: Some(Table {
            headers: vec!["t".into(), "estimate".into(), "se".into()],
            rows,
        }),
    })
}

/// Tensor grid of `κ−1` multipliers with `steps` values in `[−max, max]`.
pub fn lambda_box(kappa: usize, max: f64, steps: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if steps <= 1 {
        vec![0.0]
    } else {
        (0..steps).map(|i| -max + 2.0 * max * i as f64 / (steps - 1) as f64).collect()
    };
    let mut out = vec![Vec::new()];
    for _ in 1..kappa {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}

fn diag_legendre_cmd(a: &DiagLegendreArgs, seed: u64) -> CliResult<Report> {
    let kappa = positive(a.kappa, 2, "kappa")?;
    let beta = check_beta(a.beta.unwrap_or(1.0))?;
    let d = distribution(a.d.as_ref(), kappa)?;
    let r = positive(a.r, 1, "r")?;
    let spec = a.path.clone().unwrap_or_else(|| format!("uniform-r{r}"));
    let path = resolve_path(&spec, &d, seed)?;
    let ms = a.m.clone().unwrap_or_else(|| vec![2, 4, 8]);
    let grid = lambda_box(kappa, a.lambda_max.unwrap_or(1.0), a.lambda_steps.unwrap_or(9));
    let mc = mc_params(a.reps, a.atoms, seed);
    let rep = legendre_gap(&d, &path, beta, &grid, &ms, &mc, &quadrature(a.nodes)?)?;
    let rows = rep
        .rows
        .iter()
        .map(|row| vec![row.m.to_string(), fmt_float(row.gap), fmt_float(row.gap_se)])
        .collect();
    Ok(Report {
        json: json!({"gap": rep, "path": path}),
        table: Some(Table {
            headers: vec!["M".into(), "estimate".into(), "se".into()],
            rows,
        }),
    })
}

fn ass_check_cmd(a: &AssCheckArgs, seed: u64) -> CliResult<Report> {
    let rep = ass_covariance_check(
        positive(a.n, 4, "N")?,
        a.m.unwrap_or(2),
        positive(a.kappa, 2, "kappa")?,
        positive(a.pairs, 2, "pairs")?,
        a.draws.unwrap_or(10_000),
        seed,
    )?;
    Ok(Report::json(serde_json::to_value(&rep)?))
}

/// Parses `args`, runs, writes the report and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::from_cli(cli)?;
    let report = execute_with_threads(&cfg)?;
    let bytes = report.render(cfg.format)?;
    match &cfg.out {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}
