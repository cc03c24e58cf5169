use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use smartsizer::covproject::{frobenius_matrix, project_block_exchangeable_matrix, project_exchangeable_matrix, StructureParams};
use smartsizer::mvn::{io, CovarianceSpec, MonteCarloConfig};
use smartsizer::power::PowerEngine;
use smartsizer::rng::GENERATOR;
use smartsizer::sizing::{sizers, SizingProblem};
use smartsizer::sweeps::{run_sweep, SweepSpec};
use smartsizer::trialsim::{designs, empirical_power, estimate_sigma_true, estimators, EmpiricalSetup, DEFAULT_CRITICAL_REPS};
use smartsizer::{compute_power, Direction, EffectConfig, Error};

const SCHEMA_VERSION: u32 = 1;
const DEFAULT_SEED: u64 = 20_190_417;

#[derive(Parser, Serialize)]
#[command(name = "smartsizer", version, about = "Power and sample size for SMARTs with multiple comparisons with the best")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Power to exclude every regime at least delta-min worse than the best
    Power(PowerArgs),
    /// Smallest total sample size reaching power 1 - beta
    Size(SizeArgs),
    /// Nearest structured covariance in Frobenius norm
    Project(ProjectArgs),
    /// Simulated trials: empirical power curve or averaged covariance
    Simulate(SimulateArgs),
    /// Power over a parameter grid described by a JSON file
    Sweep(SweepArgs),
}

#[derive(Args, Serialize, Clone)]
struct EffectArgs {
    /// Effect sizes (best minus each regime), inline comma list or file
    #[arg(long, conflicts_with = "theta", allow_hyphen_values = true)]
    delta: Option<String>,
    /// Regime means, inline comma list or file
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long, value_enum, default_value_t = DirectionArg::Higher)]
    direction: DirectionArg,
    #[arg(long)]
    delta_min: f64,
    /// 0-based index of the best regime when --delta is given
    #[arg(long)]
    best: Option<usize>,
    /// Effects are standardized (multiples of the pair standard deviation)
    #[arg(long)]
    standardized: bool,
}

#[derive(Args, Serialize, Clone)]
struct McArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Monte Carlo repetitions
    #[arg(long, default_value_t = MonteCarloConfig::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct PowerArgs {
    /// Covariance of √n·θ̂ (CSV or JSON)
    #[arg(long)]
    sigma: PathBuf,
    #[command(flatten)]
    effects: EffectArgs,
    #[arg(long)]
    n: u64,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SizeArgs {
    #[arg(long)]
    sigma: PathBuf,
    #[command(flatten)]
    effects: EffectArgs,
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long, default_value = "quantile")]
    sizer: String,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DirectionArg {
    Higher,
    Lower,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Higher => Direction::HigherIsBetter,
            DirectionArg::Lower => Direction::LowerIsBetter,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Structure {
    Exchangeable,
    Block,
}

#[derive(Args, Serialize)]
struct ProjectArgs {
    #[arg(long)]
    sigma: PathBuf,
    #[arg(long, value_enum)]
    structure: Structure,
    /// 0-based index where the block starts; the arm before it is the singleton
    #[arg(long, default_value_t = 1)]
    block_start: usize,
    /// Projected matrix (CSV, or JSON for a .json extension)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value = "1")]
    design: String,
    /// Sample sizes: comma list or lo..hi[:step]
    #[arg(long)]
    n_grid: Option<String>,
    /// Simulated trials per grid point (or per average with --estimate-sigma)
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value = "aipw")]
    method: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    delta_min: f64,
    /// Treatment effect parameter of the generative model (design default if absent)
    #[arg(long)]
    effect: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CRITICAL_REPS)]
    critical_reps: usize,
    /// Covariance used to add predicted power to the curve
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Average the sandwich covariance instead of computing a power curve
    #[arg(long)]
    estimate_sigma: bool,
    /// Trial size for --estimate-sigma
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    params: Value,
    seed: Option<u64>,
    generator: &'static str,
    version: &'static str,
    wall_time_seconds: f64,
}

/// A failure with its exit code and machine-readable kind.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::EmptyExclusionSet => (3, "empty_exclusion_set"),
            Error::NotReachedWithin(_) => (3, "not_reached"),
            Error::VerificationFailed { .. } => (4, "verification_failed"),
            Error::SingularSystem(_) | Error::SingularGamma => (4, "singular_system"),
            Error::NotSquare { .. } => (2, "not_square"),
            Error::NotSymmetric { .. } => (2, "not_symmetric"),
            Error::NotPositiveDefinite { .. } => (2, "not_positive_definite"),
            Error::DimensionTooSmall { .. } => (2, "dimension_too_small"),
            Error::DimensionMismatch { .. } => (2, "dimension_mismatch"),
            Error::NonFinite { .. } => (2, "non_finite"),
            Error::EmptyInput => (2, "empty_input"),
            Error::ProbabilityOutOfRange(_) | Error::AlphaOutOfRange(_) | Error::BetaOutOfRange(_) => {
                (2, "out_of_range")
            }
            Error::TooFewRepetitions(_) => (2, "too_few_repetitions"),
            Error::DegeneratePair { .. } => (2, "degenerate_pair"),
            Error::InvalidEffects(_) | Error::ZeroEffect(_) => (2, "invalid_effects"),
            Error::UnknownStrategy { .. } => (2, "unknown_strategy"),
            Error::InvalidArgument(_) => (2, "invalid_argument"),
            Error::Parse(_) => (2, "parse"),
            Error::Io(_) => (2, "io"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 2, kind: "invalid_argument", message: message.into() }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_numbers(text: &str) -> CliResult<Vec<f64>> {
    let t = text.trim();
    if t.starts_with('[') {
        return serde_json::from_str(t).map_err(|e| invalid(format!("bad number list: {e}")));
    }
    t.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| invalid(format!("'{s}' is not a number"))))
        .collect()
}

/// Inline comma list, or a path to a file holding one.
fn read_vector(arg: &str) -> CliResult<Vec<f64>> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io(format!("{arg}: {e}"))))?;
        parse_numbers(&text)
    } else {
        parse_numbers(arg)
    }
}

fn resolve_effects(a: &EffectArgs) -> CliResult<EffectConfig> {
    let e = match (&a.delta, &a.theta) {
        (Some(d), None) => {
            let d = read_vector(d)?;
            match a.best {
                Some(b) => EffectConfig::new(d, a.delta_min, b)?,
                None => EffectConfig::from_delta(d, a.delta_min)?,
            }
        }
        (None, Some(t)) => {
            if a.best.is_some() {
                return Err(invalid("--best applies to --delta only"));
            }
            EffectConfig::from_theta(&read_vector(t)?, a.direction.into(), a.delta_min)?
        }
        _ => return Err(invalid("give exactly one of --delta or --theta")),
    };
    Ok(if a.standardized { e.standardized() } else { e })
}

fn parse_grid(text: &str) -> CliResult<Vec<usize>> {
    if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step),
            None => (rest, "50"),
        };
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| invalid(format!("bad n grid '{text}'")));
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if step == 0 || lo == 0 || hi < lo {
            return Err(invalid(format!("bad n grid '{text}'")));
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    text.split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(invalid(format!("bad sample size '{s}' in n grid"))),
        })
        .collect()
}

fn mc_config(a: &McArgs) -> CliResult<MonteCarloConfig> {
    Ok(MonteCarloConfig::new(a.reps, a.seed)?)
}

fn write_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::from(Error::Io(format!("{}: {e}", p.display())))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, mut report: Value, manifest: RunManifest) -> CliResult<()> {
    report["schema_version"] = json!(SCHEMA_VERSION);
    report["manifest"] = serde_json::to_value(manifest).expect("manifest serializes");
    write_text(out, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))
}

/// Tabular outputs carry the manifest beside them: `<out>.manifest.json`,
/// or on stderr when the table goes to stdout.
fn emit_table(out: Option<&Path>, csv: &str, manifest: RunManifest) -> CliResult<()> {
    write_text(out, csv)?;
    let m = json!({ "schema_version": SCHEMA_VERSION, "manifest": manifest });
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    match out {
        Some(p) => {
            let mut name = p.as_os_str().to_owned();
            name.push(".manifest.json");
            write_text(Some(Path::new(&name)), &text)
        }
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn manifest<P: Serialize>(command: &'static str, params: &P, seed: Option<u64>, start: Instant) -> RunManifest {
    RunManifest {
        command,
        params: serde_json::to_value(params).expect("params serialize"),
        seed,
        generator: GENERATOR,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
}

fn cmd_power(a: &PowerArgs, start: Instant) -> CliResult<()> {
    let spec = io::read_matrix(&a.sigma)?;
    let effects = resolve_effects(&a.effects)?;
    let r = compute_power(&spec, &effects, a.n, a.mc.alpha, &mc_config(&a.mc)?)?;
    let report = json!({
        "power": r.estimate.value,
        "mc_se": r.estimate.mc_se,
        "n": r.n,
        "alpha": a.mc.alpha,
        "critical_values": r.criticals.values,
        "exclusion_indices": r.exclusion,
        "effects": r.effects,
        "warnings": r.warnings,
    });
    emit_json(a.out.as_deref(), report, manifest("power", a, Some(a.mc.seed), start))
}

fn cmd_size(a: &SizeArgs, start: Instant) -> CliResult<()> {
    let spec = io::read_matrix(&a.sigma)?;
    let effects = resolve_effects(&a.effects)?;
    let registry = sizers();
    let sizer = registry.get(&a.sizer)?;
    let problem = SizingProblem { spec: &spec, effects: &effects, alpha: a.mc.alpha, beta: a.beta, mc: mc_config(&a.mc)? };
    let r = sizer.size(&problem)?;
    let report = json!({
        "n": r.n,
        "c_star": r.c_star,
        "verified_power": r.verified_power.value,
        "verified_mc_se": r.verified_power.mc_se,
        "verification_reps": r.mc.m,
        "method": r.method,
        "alpha": a.mc.alpha,
        "beta": a.beta,
        "critical_values": r.criticals.values,
        "exclusion_indices": r.exclusion,
        "warnings": r.warnings,
    });
    emit_json(a.out.as_deref(), report, manifest("size", a, Some(a.mc.seed), start))
}

/// Square symmetric matrix with finite entries; definiteness is not required
/// since projection may repair a slightly indefinite estimate.
fn read_symmetric(path: &Path) -> CliResult<nalgebra::DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io(format!("{}: {e}", path.display()))))?;
    let rows: Vec<Vec<f64>> = if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
        serde_json::from_value(v["rows"].clone()).map_err(Error::from)?
    } else {
        io::parse_csv_rows(&text)?
    };
    let n = rows.len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSquare { rows: n, row: r, cols: row.len() }.into());
        }
        if let Some(c) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: r, col: c }.into());
        }
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    for i in 0..n {
        for j in 0..i {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > 1e-9 * (1.0 + m[(i, j)].abs().max(m[(j, i)].abs())) {
                return Err(Error::NotSymmetric { i, j, gap }.into());
            }
        }
    }
    Ok(m)
}

fn cmd_project(a: &ProjectArgs, start: Instant) -> CliResult<()> {
    let m = read_symmetric(&a.sigma)?;
    let (params, matrix, pd) = match a.structure {
        Structure::Exchangeable => {
            if m.nrows() < 2 {
                return Err(Error::DimensionTooSmall { dim: m.nrows(), min: 2 }.into());
            }
            let p = project_exchangeable_matrix(&m);
            (StructureParams::Exchangeable(p.params), p.matrix, p.positive_definite)
        }
        Structure::Block => {
            let p = project_block_exchangeable_matrix(&m, a.block_start)?;
            (StructureParams::BlockExchangeable(p.params), p.matrix, p.positive_definite)
        }
    };
    let distance = frobenius_matrix(&m, &matrix)?;
    let rows: Vec<Vec<f64>> = matrix.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut warnings = Vec::new();
    if pd {
        if let Some(out) = &a.out {
            io::write_matrix(out, &CovarianceSpec::from_matrix(matrix)?)?;
        }
    } else {
        // not written: every matrix file must re-validate on read
        warnings.push("projection_not_positive_definite");
    }
    let report = json!({
        "params": params,
        "frobenius_distance": distance,
        "positive_definite": pd,
        "matrix": rows,
        "written_to": if pd { a.out.as_ref().map(|p| p.display().to_string()) } else { None },
        "warnings": warnings,
    });
    let mut report = report;
    report["schema_version"] = json!(SCHEMA_VERSION);
    report["manifest"] = serde_json::to_value(manifest("project", a, None, start)).expect("manifest serializes");
    print!("{}", serde_json::to_string_pretty(&report).expect("report serializes") + "\n");
    if pd {
        Ok(())
    } else {
        Err(Failure { code: 3, kind: "not_positive_definite", message: "projected matrix is not positive definite".into() })
    }
}

fn cmd_simulate(a: &SimulateArgs, start: Instant) -> CliResult<()> {
    let design_registry = designs();
    let design = design_registry.get(&a.design)?;
    let estimator_registry = estimators();
    let estimator = estimator_registry.get(&a.method)?;
    let effect = a.effect.unwrap_or(design.default_delta());
    if !effect.is_finite() || effect < 0.0 {
        return Err(invalid("--effect must be a non-negative number"));
    }
    if a.estimate_sigma {
        let sigma = estimate_sigma_true(design, estimator, effect, a.n, a.reps, a.seed)?;
        let text = match a.out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("json") => io::to_json(&sigma) + "\n",
            _ => io::to_csv(&sigma),
        };
        return emit_table(a.out.as_deref(), &text, manifest("simulate", a, Some(a.seed), start));
    }
    let grid = parse_grid(a.n_grid.as_deref().ok_or_else(|| invalid("--n-grid is required without --estimate-sigma"))?)?;
    let effects = EffectConfig::from_theta(&design.true_theta(effect), Direction::HigherIsBetter, a.delta_min)?;
    let predicted = match &a.sigma {
        Some(p) => {
            let spec = io::read_matrix(p)?;
            let engine = PowerEngine::new(&spec, &effects, a.alpha, &MonteCarloConfig { m: MonteCarloConfig::DEFAULT_REPS, seed: a.seed })?;
            Some(engine)
        }
        None => None,
    };
    let setup = EmpiricalSetup {
        design,
        estimator,
        delta: effect,
        alpha: a.alpha,
        effects,
        critical_reps: a.critical_reps,
        seed: a.seed,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["n", "power", "mc_se", "valid", "singular", "not_positive_definite"];
    if predicted.is_some() {
        header.extend(["predicted_power", "predicted_mc_se"]);
    }
    w.write_record(&header).map_err(|e| Failure::from(Error::from(e)))?;
    for &n in &grid {
        let p = empirical_power(&setup, n, a.reps)?;
        let mut rec = vec![
            n.to_string(),
            format!("{:?}", p.estimate.value),
            format!("{:?}", p.estimate.mc_se),
            p.valid.to_string(),
            p.singular.to_string(),
            p.not_positive_definite.to_string(),
        ];
        if let Some(engine) = &predicted {
            let e = engine.power_at(n as u64);
            rec.extend([format!("{:?}", e.value), format!("{:?}", e.mc_se)]);
        }
        w.write_record(&rec).map_err(|e| Failure::from(Error::from(e)))?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Failure::from(Error::Io(e.to_string())))?)
        .expect("csv output is utf-8");
    emit_table(a.out.as_deref(), &text, manifest("simulate", a, Some(a.seed), start))
}

fn cmd_sweep(a: &SweepArgs, start: Instant) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.spec)
        .map_err(|e| Failure::from(Error::Io(format!("{}: {e}", a.spec.display()))))?;
    let spec = SweepSpec::from_json(&text)?;
    let table = run_sweep(&spec, a.spec.parent())?;
    let seed = match &spec {
        SweepSpec::Grid { seed, .. } | SweepSpec::DeltaMin { seed, .. } | SweepSpec::UniformDelta { seed, .. } => *seed,
    };
    let params = json!({ "spec_file": a.spec, "spec": spec, "out": a.out });
    emit_table(a.out.as_deref(), &table.to_csv()?, manifest("sweep", &params, Some(seed), start))
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("SMARTSIZER_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            invalid(format!("SMARTSIZER_THREADS must be a positive integer, got '{v}'"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 4, kind: "thread_pool", message: e.to_string() })?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    let start = Instant::now();
    match &cli.command {
        Command::Power(a) => cmd_power(a, start),
        Command::Size(a) => cmd_size(a, start),
        Command::Project(a) => cmd_project(a, start),
        Command::Simulate(a) => cmd_simulate(a, start),
        Command::Sweep(a) => cmd_sweep(a, start),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = json!({ "error": f.kind, "exit_code": f.code, "message": f.message });
            eprintln!("{line}");
            ExitCode::from(f.code)
        }
    }
}
