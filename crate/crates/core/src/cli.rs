//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on data errors, 2 on usage errors. Failures
//! are reported as one JSON object on stderr. Feature and group numbers on
//! the command line and in outputs count from 1.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::diagnostics::{decay_check, max_split_rhat, sign_cov, DecayReport};
use crate::error::KnockoffError;
use crate::filter::threshold;
use crate::gibbs::GibbsConfig;
use crate::io;
use crate::knockoffs::{build_fixed_x, build_model_x, shrinkage_covariance, SMatrixSpec};
use crate::model::{
    mask, Dataset, FeatureStatVector, GibbsTrace, KnockoffKind, KnockoffModel, Partition,
    PointMass, PriorConfig, ResponseKind, Scaling, StatMethod,
};
use crate::sim::{run_experiment_with, summarize, ExperimentConfig, RunOptions};
use crate::statistics::{compute_statistic, StatSettings};

#[derive(Debug, Parser)]
#[command(name = "knockoff-mlr", version, about = "Knockoff feature selection with masked likelihood ratio statistics")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "KNOCKOFF_MLR_THREADS")]
    threads: Option<usize>,
    /// Target false discovery rate.
    #[arg(long, global = true, default_value_t = 0.1)]
    q: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build knockoffs for a design matrix; writes X̃ and the S matrix.
    Knockoffs(KnockoffArgs),
    /// Compute feature statistics W from X, X̃ and y.
    Stats(StatsArgs),
    /// Apply the knockoff filter to a W vector.
    Filter(FilterArgs),
    /// X and y to rejections, end to end.
    Pipeline(PipelineArgs),
    /// Run a simulation described by a JSON config; writes JSONL records.
    Simulate(SimulateArgs),
    /// Sign-covariance report for a saved Gibbs trace.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FrameworkArg {
    FixedX,
    ModelX,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SMethodArg {
    Equi,
    Mvr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Lcd,
    Lsm,
    Mlr,
    Oracle,
}

impl From<MethodArg> for StatMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Lcd => StatMethod::Lcd,
            MethodArg::Lsm => StatMethod::Lsm,
            MethodArg::Mlr => StatMethod::Mlr,
            MethodArg::Oracle => StatMethod::OracleMlr,
        }
    }
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Design matrix CSV.
    #[arg(long)]
    x: PathBuf,
    /// Input CSVs start with a header row.
    #[arg(long)]
    header: bool,
    /// Use X as given instead of centring columns and scaling them to unit norm.
    #[arg(long)]
    raw: bool,
    #[arg(long, value_enum, default_value = "fixed-x")]
    framework: FrameworkArg,
    /// JSON list of groups of feature numbers, e.g. [[1,2],[3]] (model-X only).
    #[arg(long)]
    groups: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ResponseArgs {
    /// Response file with a single column.
    #[arg(long, conflicts_with = "y_col")]
    y: Option<PathBuf>,
    /// Name (with --header) or number, counting from 1, of the response column inside the X file.
    #[arg(long)]
    y_col: Option<String>,
    /// The response is 0/1.
    #[arg(long)]
    binary: bool,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    /// Prior as JSON (default: spike-and-slab with hyperpriors).
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value_t = GibbsConfig::default().n_sample)]
    n_sample: usize,
    #[arg(long, default_value_t = GibbsConfig::default().burn_in)]
    burn_in: usize,
    #[arg(long, default_value_t = GibbsConfig::default().chains)]
    chains: usize,
    /// Known coefficients (one column) for the oracle statistic.
    #[arg(long)]
    oracle_beta: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    oracle_sigma2: f64,
}

#[derive(Debug, Args)]
struct KnockoffArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, value_enum, default_value = "mvr")]
    s_method: SMethodArg,
    /// Feature covariance CSV for model-X (default: shrunken sample covariance).
    #[arg(long)]
    sigma: Option<PathBuf>,
    #[arg(long)]
    out_xk: PathBuf,
    #[arg(long)]
    out_s: Option<PathBuf>,
    /// Also write the preprocessed X that X̃ refers to.
    #[arg(long)]
    out_x: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    response: ResponseArgs,
    /// Knockoff matrix CSV, matching the preprocessed X.
    #[arg(long)]
    xk: PathBuf,
    #[arg(long, value_enum, default_value = "mlr")]
    method: MethodArg,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Write W here as JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the Gibbs trace here as JSON.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// W as JSON from `stats`, or a one-column CSV.
    #[arg(long)]
    w: PathBuf,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    response: ResponseArgs,
    #[arg(long, value_enum, default_value = "mvr")]
    s_method: SMethodArg,
    #[arg(long)]
    sigma: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mlr")]
    method: MethodArg,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// JSONL output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-statistic summary JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Record wall-clock runtimes (output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Trace JSON written by `stats --trace-out`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Also write the sign covariance matrix as CSV.
    #[arg(long)]
    cov_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(KnockoffError),
}

impl From<KnockoffError> for Failure {
    fn from(e: KnockoffError) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report("usage", &e.kind().to_string(), &e.to_string(), None);
            return 2;
        }
    };
    let outcome = match cli.threads {
        Some(0) => usage("--threads must be at least 1"),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => usage(format!("cannot start {n} threads: {e}")),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            report("usage", "usage", &msg, None);
            2
        }
        Err(Failure::Data(e)) => {
            let loc = match &e {
                KnockoffError::Data { row, col, .. } => Some((*row, *col)),
                _ => None,
            };
            report("data", e.kind(), &e.to_string(), loc);
            1
        }
    }
}

fn report(class: &str, kind: &str, message: &str, loc: Option<(usize, usize)>) {
    let mut v = json!({ "error": class, "kind": kind, "message": message.trim() });
    if let Some((row, col)) = loc {
        v["row"] = row.into();
        v["col"] = col.into();
    }
    eprintln!("{v}");
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if !(cli.q > 0.0 && cli.q <= 1.0) {
        return usage(format!("--q must lie in (0, 1], got {}", cli.q));
    }
    match &cli.command {
        Command::Knockoffs(a) => cmd_knockoffs(cli, a),
        Command::Stats(a) => cmd_stats(cli, a),
        Command::Filter(a) => cmd_filter(cli, a),
        Command::Pipeline(a) => cmd_pipeline(cli, a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(KnockoffError::from)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(KnockoffError::from)?,
        None => {
            let mut so = std::io::stdout().lock();
            if let Err(e) = writeln!(so, "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(KnockoffError::from(e).into());
                }
            }
        }
    }
    Ok(())
}

fn scaling(design: &DesignArgs) -> Scaling {
    if design.raw {
        Scaling::Raw
    } else {
        Scaling::UnitNorm
    }
}

/// Dataset from the design file and, when given, the response.
fn load_dataset(design: &DesignArgs, response: Option<&ResponseArgs>) -> CliResult<Dataset> {
    let table = io::read_csv(&design.x, design.header)?;
    let kind = match response {
        Some(r) if r.binary => ResponseKind::Binary,
        _ => ResponseKind::Continuous,
    };
    let (x, y) = match response {
        None => {
            let n = table.data.nrows();
            (table.data, DVector::zeros(n))
        }
        Some(r) => match (&r.y, &r.y_col) {
            (Some(path), None) => (table.data, io::read_vector(path, design.header)?),
            (None, Some(col)) => {
                let named = table.header.as_ref().is_some_and(|h| h.iter().any(|c| c == col));
                match col.parse::<usize>() {
                    Ok(0) if !named => return usage("--y-col counts columns from 1"),
                    Ok(k) if !named => table.split_column(&(k - 1).to_string())?,
                    _ => table.split_column(col)?,
                }
            }
            _ => return usage("give the response with exactly one of --y or --y-col"),
        },
    };
    Ok(Dataset::new(x, y, kind, scaling(design))?)
}

fn load_groups(design: &DesignArgs, p: usize) -> CliResult<Option<Partition>> {
    let Some(path) = &design.groups else { return Ok(None) };
    if matches!(design.framework, FrameworkArg::FixedX) {
        return usage("--groups needs --framework model-x");
    }
    let raw: Vec<Vec<usize>> = io::read_json(path)?;
    let mut groups = Vec::with_capacity(raw.len());
    for g in raw {
        let mut members = Vec::with_capacity(g.len());
        for j in g {
            if j == 0 || j > p {
                return Err(KnockoffError::IndexOutOfRange { index: j, dim: p }.into());
            }
            members.push(j - 1);
        }
        groups.push(members);
    }
    Ok(Some(Partition::new(groups, p)?))
}

fn s_spec(m: SMethodArg) -> SMatrixSpec {
    match m {
        SMethodArg::Equi => SMatrixSpec::equicorrelated(),
        SMethodArg::Mvr => SMatrixSpec::mvr(),
    }
}

fn build_knockoffs(
    ds: &Dataset,
    design: &DesignArgs,
    method: SMethodArg,
    sigma: Option<&PathBuf>,
    seed: u64,
) -> CliResult<KnockoffModel> {
    let spec = s_spec(method);
    let groups = load_groups(design, ds.p())?;
    match design.framework {
        FrameworkArg::FixedX => {
            if sigma.is_some() {
                return usage("--sigma applies to model-X knockoffs only");
            }
            Ok(build_fixed_x(ds, &spec)?)
        }
        FrameworkArg::ModelX => {
            let cov = match sigma {
                Some(p) => io::read_csv(p, false)?.data,
                None => shrinkage_covariance(ds.x())?,
            };
            Ok(build_model_x(ds, &cov, &spec, groups, seed)?)
        }
    }
}

fn cmd_knockoffs(cli: &Cli, a: &KnockoffArgs) -> CliResult<()> {
    let ds = load_dataset(&a.design, None)?;
    let ko = build_knockoffs(&ds, &a.design, a.s_method, a.sigma.as_ref(), cli.seed)?;
    io::write_csv(&a.out_xk, &ko.x_tilde, None)?;
    if let Some(p) = &a.out_s {
        io::write_csv(p, &ko.s, None)?;
    }
    if let Some(p) = &a.out_x {
        io::write_csv(p, ds.x(), None)?;
    }
    Ok(())
}

/// Knockoff model for a supplied X̃. Fixed-X recovers `Σ = XᵀX` and
/// `S = diag(XᵀX − XᵀX̃)`; model-X masking needs only X̃.
fn supplied_knockoffs(ds: &Dataset, xk: DMatrix<f64>, design: &DesignArgs) -> CliResult<KnockoffModel> {
    let p = ds.p();
    if xk.shape() != ds.x().shape() {
        return Err(KnockoffError::DimensionMismatch(format!(
            "X is {:?} but X̃ is {:?}",
            ds.x().shape(),
            xk.shape()
        ))
        .into());
    }
    match design.framework {
        FrameworkArg::FixedX => {
            let x = ds.x();
            let sigma = x.transpose() * x;
            let cross = x.transpose() * &xk;
            let s = DMatrix::from_diagonal(&DVector::from_fn(p, |j, _| sigma[(j, j)] - cross[(j, j)]));
            let ko = KnockoffModel { x_tilde: xk, sigma, s, kind: KnockoffKind::FixedX, groups: None };
            ko.validate(ds.x())?;
            Ok(ko)
        }
        FrameworkArg::ModelX => Ok(KnockoffModel {
            x_tilde: xk,
            sigma: DMatrix::identity(p, p),
            s: DMatrix::zeros(p, p),
            kind: KnockoffKind::ModelXGaussian,
            groups: load_groups(design, p)?,
        }),
    }
}

fn settings(cli: &Cli, s: &SamplerArgs, method: StatMethod, p: usize) -> CliResult<StatSettings> {
    let prior = match &s.prior {
        Some(path) => io::read_json::<PriorConfig>(path)?,
        None => PriorConfig::default(),
    };
    let oracle = match (&s.oracle_beta, method) {
        (Some(path), _) => {
            let beta = io::read_vector(path, false)?;
            if beta.len() != p {
                return Err(KnockoffError::DimensionMismatch(format!(
                    "oracle β has {} entries, p = {p}",
                    beta.len()
                ))
                .into());
            }
            Some(PointMass { beta: beta.iter().copied().collect(), sigma2: s.oracle_sigma2, transform: None })
        }
        (None, StatMethod::OracleMlr) => return usage("--method oracle needs --oracle-beta"),
        (None, _) => None,
    };
    let gibbs = GibbsConfig {
        n_sample: s.n_sample,
        burn_in: s.burn_in,
        chains: s.chains,
        seed: cli.seed,
        ..GibbsConfig::default()
    };
    Ok(StatSettings { prior, gibbs, oracle, ..StatSettings::default() })
}

fn cmd_stats(cli: &Cli, a: &StatsArgs) -> CliResult<()> {
    let ds = load_dataset(&a.design, Some(&a.response))?;
    let xk = io::read_csv(&a.xk, a.design.header)?.data;
    let ko = supplied_knockoffs(&ds, xk, &a.design)?;
    let masked = mask(&ds, &ko, cli.seed)?;
    let method = StatMethod::from(a.method);
    let st = settings(cli, &a.sampler, method, ds.p())?;
    let (w, trace) = compute_statistic(&masked, method, &st)?;
    if let Some(p) = &a.trace_out {
        match &trace {
            Some(t) => emit(t, Some(p))?,
            None => return usage(format!("{} produces no Gibbs trace", method.name())),
        }
    }
    emit(&w, a.out.as_deref())
}

#[derive(Serialize)]
struct Rejections {
    q: f64,
    threshold: Option<f64>,
    /// Feature (or group) numbers, counting from 1.
    rejected: Vec<usize>,
}

fn rejections(w: &FeatureStatVector, q: f64) -> CliResult<Rejections> {
    let r = threshold(w, q)?;
    Ok(Rejections {
        q,
        threshold: r.threshold.is_finite().then_some(r.threshold),
        rejected: r.rejected.iter().map(|j| j + 1).collect(),
    })
}

fn read_w(path: &Path, header: bool) -> CliResult<FeatureStatVector> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        Ok(io::read_json(path)?)
    } else {
        let v = io::read_vector(path, header)?;
        Ok(FeatureStatVector::new(v.iter().copied().collect(), StatMethod::Supplied))
    }
}

fn cmd_filter(cli: &Cli, a: &FilterArgs) -> CliResult<()> {
    let w = read_w(&a.w, a.header)?;
    emit(&rejections(&w, cli.q)?, a.out.as_deref())
}

#[derive(Serialize)]
struct PipelineOutput {
    #[serde(flatten)]
    rejections: Rejections,
    statistics: FeatureStatVector,
}

fn cmd_pipeline(cli: &Cli, a: &PipelineArgs) -> CliResult<()> {
    let ds = load_dataset(&a.design, Some(&a.response))?;
    let ko = build_knockoffs(&ds, &a.design, a.s_method, a.sigma.as_ref(), cli.seed)?;
    let masked = mask(&ds, &ko, cli.seed)?;
    let method = StatMethod::from(a.method);
    let st = settings(cli, &a.sampler, method, ds.p())?;
    let (w, _) = compute_statistic(&masked, method, &st)?;
    let out = PipelineOutput { rejections: rejections(&w, cli.q)?, statistics: w };
    emit(&out, a.out.as_deref())
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let cfg: ExperimentConfig = match io::read_json(&a.config) {
        Ok(c) => c,
        Err(KnockoffError::Json(e)) => return usage(format!("config: {e}")),
        Err(e) => return Err(e.into()),
    };
    if let Err(e) = cfg.validate() {
        return usage(format!("config: {e}"));
    }
    let records = run_experiment_with(&cfg, RunOptions { record_runtime: a.timing })?;
    match &a.out {
        Some(p) => io::write_results(p, &records)?,
        None => match io::write_jsonl_to(std::io::stdout().lock(), &records) {
            Err(KnockoffError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
            other => other?,
        },
    }
    if let Some(p) = &a.summary {
        emit(&summarize(&cfg, &records), Some(p))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseOutput {
    samples: usize,
    chains: usize,
    max_split_rhat: f64,
    c: f64,
    rho: f64,
    #[serde(flatten)]
    decay: DecayReport,
}

fn cmd_diagnose(a: &DiagnoseArgs) -> CliResult<()> {
    if !(a.rho > 0.0 && a.rho < 1.0) || !(a.c >= 0.0) {
        return usage("--rho must lie in (0, 1) and --c must be ≥ 0");
    }
    let trace: GibbsTrace = io::read_json(&a.trace)?;
    let cov = sign_cov(&trace)?;
    if let Some(p) = &a.cov_out {
        io::write_csv(p, &cov, None)?;
    }
    let out = DiagnoseOutput {
        samples: trace.n_sample(),
        chains: trace.chains,
        max_split_rhat: max_split_rhat(&trace),
        c: a.c,
        rho: a.rho,
        decay: decay_check(&cov, a.c, a.rho),
    };
    emit(&out, a.out.as_deref())
}
