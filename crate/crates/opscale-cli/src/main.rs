//! Batch CLI for matrix, frame and operator scaling.
//!
//! Instances are auto-detected: JSON objects carry a `"type"` discriminator
//! (`"operator"` or `"frame"`), anything else is parsed as a dense
//! non-negative matrix in CSV form. All floating-point output is printed with
//! 17 significant digits and every run is byte-reproducible given
//! (input, flags, seed).
//!
//! Exit codes: 0 success, 1 input/usage error, 2 certificate negative or
//! refused, 3 iteration budget exhausted, 4 divergence or singular instance,
//! 5 experiment criterion failure.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use opscale::capacity::{
    capacity_bounds_from, matrix_capacity_exact, permanent, permanent_lower_bound, CapacityReport,
    PERMANENT_LIMIT,
};
use opscale::error::Error as CoreError;
use opscale::experiments::{run_experiment, EXPERIMENT_NAMES};
use opscale::moments::{random_gaussian_squared_matrix, random_unit_frame};
use opscale::reduce::{matrix_balance_report, Frame, FrameSchema};
use opscale::solver::{
    run_alternating, run_frame_alternating, run_frame_fast_path, run_gradient_descent,
    run_matrix_alternating, run_matrix_fast_path, ScalingResult, SolverConfig,
};
use opscale::spectral::{certify_frame, certify_matrix, certify_operator, GapOptions};
use opscale::{Operator, OperatorSchema};

use output::{atomic_write, instance_json, matrix_to_csv, to_json_17};

#[derive(Parser)]
#[command(name = "opscale", version, about = "Matrix, frame and operator scaling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every randomized component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory for output files (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Output format for stdout payloads.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    GradientDescent,
    Alternating,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenerateKind {
    /// Random unit vectors on the sphere (frame JSON).
    UnitFrame,
    /// Entrywise squared Gaussian matrix (CSV).
    GaussianMatrix,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the spectral gap of an instance.
    Certify {
        input: PathBuf,
        /// Constant C in the gap condition lambda^2 >= C * eps * ln m.
        #[arg(long, default_value_t = 1.0)]
        gap_constant: f64,
    },
    /// Scale an instance to doubly balanced.
    Scale {
        input: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 200_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        eta: f64,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::GradientDescent)]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 100)]
        record_every: usize,
    },
    /// Capacity bounds (and the exact value for square matrices).
    Capacity {
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gap_constant: f64,
        #[arg(long, default_value_t = 1e-8)]
        eta: f64,
        #[arg(long, default_value_t = 2_000_000)]
        max_iters: usize,
    },
    /// Van der Waerden-type permanent lower bound for a square matrix.
    PermanentBound {
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gap_constant: f64,
    },
    /// Generate a random instance.
    Generate {
        kind: GenerateKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment batch.
    Experiment { name: String },
}

enum Instance {
    Operator(Operator),
    Frame(Frame),
    Matrix(DMatrix<f64>),
}

fn fail(msg: String) -> (u8, String) {
    (1, msg)
}

fn load_instance(path: &Path) -> Result<Instance, (u8, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(format!("cannot read {}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(trimmed)
            .map_err(|e| fail(format!("invalid JSON in {}: {e}", path.display())))?;
        match value.get("type").and_then(|t| t.as_str()) {
            Some("operator") => {
                let schema: OperatorSchema = serde_json::from_value(value)
                    .map_err(|e| fail(format!("bad operator schema: {e}")))?;
                let op = Operator::try_from(schema)
                    .map_err(|e| fail(format!("invalid operator: {e}")))?;
                Ok(Instance::Operator(op))
            }
            Some("frame") => {
                let schema: FrameSchema = serde_json::from_value(value)
                    .map_err(|e| fail(format!("bad frame schema: {e}")))?;
                let frame =
                    Frame::try_from(schema).map_err(|e| fail(format!("invalid frame: {e}")))?;
                Ok(Instance::Frame(frame))
            }
            other => Err(fail(format!(
                "unknown or missing \"type\" discriminator {other:?} (expected \"operator\" or \"frame\")"
            ))),
        }
    } else {
        parse_matrix_csv(&text).map(Instance::Matrix).map_err(fail)
    }
}

fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(format!(
                    "line {}: expected {} columns, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("empty matrix".into());
    }
    let m = rows.len();
    let n = rows[0].len();
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Diverged { .. } | CoreError::SingularMap { .. } | CoreError::NoScaling(_) => 4,
        CoreError::CertificateRefused(_) => 2,
        CoreError::NoConvergence { .. } => 3,
        _ => 1,
    }
}

fn cmd_certify(cli: &Cli, input: &Path, gap_constant: f64) -> Result<u8, (u8, String)> {
    let opts = GapOptions { c: gap_constant, seed: cli.seed, ..Default::default() };
    let instance = load_instance(input)?;
    let report = match &instance {
        Instance::Operator(op) => certify_operator(op, &opts),
        Instance::Frame(frame) => certify_frame(frame, &opts),
        Instance::Matrix(b) => certify_matrix(b, &opts),
    }
    .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    match cli.format {
        Format::Json => println!("{}", to_json_17(&report).map_err(fail)?),
        Format::Csv => {
            println!("sigma1,sigma2,s,delta,lambda,epsilon,gap_condition_holds,C");
            println!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                report.sigma1,
                report.sigma2,
                report.s,
                report.delta,
                report.lambda,
                report.epsilon,
                report.gap_condition_holds,
                report.c
            );
        }
    }
    Ok(if report.gap_condition_holds { 0 } else { 2 })
}

#[derive(serde::Serialize)]
struct ScaleOutput {
    #[serde(rename = "type")]
    kind: &'static str,
    converged: bool,
    iterations: usize,
    #[serde(rename = "kappa_L")]
    kappa_left: f64,
    #[serde(rename = "kappa_R")]
    kappa_right: f64,
    movement_sq: f64,
    #[serde(rename = "L")]
    left: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    right: Vec<Vec<f64>>,
    trace_file: String,
    final_instance: serde_json::Value,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_scale(
    cli: &Cli,
    input: &Path,
    alpha: Option<f64>,
    max_iters: usize,
    eta: f64,
    algorithm: AlgorithmArg,
    record_every: usize,
) -> Result<u8, (u8, String)> {
    let cfg = SolverConfig {
        alpha,
        max_iters,
        eta,
        algorithm: match algorithm {
            AlgorithmArg::GradientDescent => opscale::Algorithm::GradientDescent,
            AlgorithmArg::Alternating => opscale::Algorithm::Alternating,
        },
        record_every,
        seed: cli.seed,
    };
    let instance = load_instance(input)?;
    let map_err = |e: CoreError| (exit_code_for(&e), e.to_string());

    let (result, final_instance): (ScalingResult, serde_json::Value) = match &instance {
        Instance::Matrix(b) => {
            let run = match cfg.algorithm {
                opscale::Algorithm::GradientDescent => run_matrix_fast_path(b, &cfg),
                opscale::Algorithm::Alternating => run_matrix_alternating(b, &cfg),
            }
            .map_err(map_err)?;
            let value = serde_json::json!({
                "type": "matrix_csv",
                "rows": matrix_rows(&run.final_matrix),
            });
            (run.to_scaling_result().map_err(map_err)?, value)
        }
        Instance::Frame(frame) => {
            let run = match cfg.algorithm {
                opscale::Algorithm::GradientDescent => run_frame_fast_path(frame, &cfg),
                opscale::Algorithm::Alternating => run_frame_alternating(frame, &cfg),
            }
            .map_err(map_err)?;
            let value = instance_json(&FrameSchema::from(&run.final_frame)).map_err(fail)?;
            (run.to_scaling_result().map_err(map_err)?, value)
        }
        Instance::Operator(op) => {
            let run = match cfg.algorithm {
                opscale::Algorithm::GradientDescent => run_gradient_descent(op, &cfg),
                opscale::Algorithm::Alternating => run_alternating(op, &cfg),
            }
            .map_err(map_err)?;
            let value = instance_json(&OperatorSchema::from(&run.final_operator)).map_err(fail)?;
            (run, value)
        }
    };

    fs::create_dir_all(&cli.out_dir)
        .map_err(|e| fail(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    let trace_path = cli.out_dir.join("scale_trace.csv");
    atomic_write(&trace_path, result.trace.to_csv().as_bytes()).map_err(fail)?;
    let output = ScaleOutput {
        kind: "scaling_result",
        converged: result.converged,
        iterations: result.iterations,
        kappa_left: result.kappa_left,
        kappa_right: result.kappa_right,
        movement_sq: result.movement_sq,
        left: matrix_rows(&result.left),
        right: matrix_rows(&result.right),
        trace_file: "scale_trace.csv".into(),
        final_instance,
    };
    let json = to_json_17(&output).map_err(fail)?;
    atomic_write(&cli.out_dir.join("scale_result.json"), json.as_bytes()).map_err(fail)?;
    println!("{json}");
    Ok(if result.converged { 0 } else { 3 })
}

fn cmd_capacity(
    cli: &Cli,
    input: &Path,
    gap_constant: f64,
    eta: f64,
    max_iters: usize,
) -> Result<u8, (u8, String)> {
    let opts = GapOptions { c: gap_constant, seed: cli.seed, ..Default::default() };
    let instance = load_instance(input)?;
    let map_err = |e: CoreError| (exit_code_for(&e), e.to_string());
    let report: CapacityReport = match &instance {
        Instance::Matrix(b) => {
            let cert = certify_matrix(b, &opts).map_err(map_err)?;
            let balance = matrix_balance_report(b).map_err(map_err)?;
            let mut rep = capacity_bounds_from(&balance, &cert, b.nrows(), b.ncols());
            if b.nrows() == b.ncols() {
                let cfg = SolverConfig { eta, max_iters, record_every: max_iters, ..Default::default() };
                match matrix_capacity_exact(b, &cfg) {
                    Ok(cap) => rep.log_exact = Some(cap.ln()),
                    Err(CoreError::NoConvergence { .. }) => {}
                    Err(e) => return Err(map_err(e)),
                }
            }
            rep
        }
        Instance::Frame(frame) => {
            let cert = certify_frame(frame, &opts).map_err(map_err)?;
            let balance = frame.balance_report();
            capacity_bounds_from(&balance, &cert, frame.dim(), frame.len())
        }
        Instance::Operator(op) => {
            let cert = certify_operator(op, &opts).map_err(map_err)?;
            capacity_bounds_from(&op.balance_report(), &cert, op.out_dim(), op.in_dim())
        }
    };
    println!("{}", to_json_17(&report).map_err(fail)?);
    Ok(0)
}

fn cmd_permanent_bound(cli: &Cli, input: &Path, gap_constant: f64) -> Result<u8, (u8, String)> {
    let opts = GapOptions { c: gap_constant, seed: cli.seed, ..Default::default() };
    let instance = load_instance(input)?;
    let b = match instance {
        Instance::Matrix(b) => b,
        _ => return Err(fail("permanent-bound expects a matrix CSV instance".into())),
    };
    let n = b.nrows();
    if n != b.ncols() {
        return Err(fail(format!("matrix must be square, got {}x{}", n, b.ncols())));
    }
    let s: f64 = b.iter().sum();
    if s <= 0.0 {
        return Err(fail("matrix must have positive size".into()));
    }
    // the bound is stated in the s(B) = n normalization
    let normalized = &b * (n as f64 / s);
    let map_err = |e: CoreError| (exit_code_for(&e), e.to_string());
    let report = certify_matrix(&normalized, &opts).map_err(map_err)?;
    let log_bound = permanent_lower_bound(&normalized, &report).map_err(map_err)?;
    let log_permanent = if n <= PERMANENT_LIMIT {
        Some(permanent(&normalized).map_err(map_err)?.ln())
    } else {
        None
    };
    let payload = serde_json::json!({
        "type": "permanent_bound",
        "n": n,
        "epsilon": report.epsilon,
        "lambda": report.lambda,
        "gap_condition_holds": report.gap_condition_holds,
        "log_bound": log_bound,
        "log_permanent": log_permanent,
    });
    println!("{}", to_json_17(&payload).map_err(fail)?);
    Ok(0)
}

fn cmd_generate(
    cli: &Cli,
    kind: GenerateKind,
    n: usize,
    d: Option<usize>,
    out: Option<&Path>,
) -> Result<u8, (u8, String)> {
    let payload: String = match kind {
        GenerateKind::UnitFrame => {
            let d = d.ok_or_else(|| fail("--d is required for unit-frame".into()))?;
            if n == 0 || d == 0 {
                return Err(fail("--n and --d must be positive".into()));
            }
            let frame = random_unit_frame(n, d, cli.seed);
            to_json_17(&FrameSchema::from(&frame)).map_err(fail)?
        }
        GenerateKind::GaussianMatrix => {
            if n == 0 {
                return Err(fail("--n must be positive".into()));
            }
            let b = random_gaussian_squared_matrix(n, cli.seed);
            matrix_to_csv(&b)
        }
    };
    match out {
        Some(path) => atomic_write(path, payload.as_bytes()).map_err(fail)?,
        None => println!("{payload}"),
    }
    Ok(0)
}

fn cmd_experiment(cli: &Cli, name: &str) -> Result<u8, (u8, String)> {
    if !EXPERIMENT_NAMES.contains(&name) {
        return Err(fail(format!(
            "unknown experiment {name:?}; expected one of {EXPERIMENT_NAMES:?}"
        )));
    }
    let report = run_experiment(name, cli.seed).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    fs::create_dir_all(&cli.out_dir)
        .map_err(|e| fail(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    for (file, contents) in &report.artifacts {
        atomic_write(&cli.out_dir.join(file), contents.as_bytes()).map_err(fail)?;
    }
    let mut criteria = Vec::new();
    for c in &report.criteria {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.details);
        criteria.push(serde_json::json!({
            "name": c.name,
            "passed": c.passed,
            "details": c.details,
        }));
    }
    let summary = serde_json::json!({
        "type": "experiment_summary",
        "experiment": report.name,
        "seed": report.seed,
        "passed": report.passed(),
        "criteria": criteria,
    });
    let json = to_json_17(&summary).map_err(fail)?;
    atomic_write(&cli.out_dir.join(format!("{name}_summary.json")), json.as_bytes())
        .map_err(fail)?;
    Ok(if report.passed() { 0 } else { 5 })
}

fn run(cli: &Cli) -> Result<u8, (u8, String)> {
    match &cli.command {
        Command::Certify { input, gap_constant } => cmd_certify(cli, input, *gap_constant),
        Command::Scale { input, alpha, max_iters, eta, algorithm, record_every } => cmd_scale(
            cli,
            input,
            *alpha,
            *max_iters,
            *eta,
            *algorithm,
            *record_every,
        ),
        Command::Capacity { input, gap_constant, eta, max_iters } => {
            cmd_capacity(cli, input, *gap_constant, *eta, *max_iters)
        }
        Command::PermanentBound { input, gap_constant } => {
            cmd_permanent_bound(cli, input, *gap_constant)
        }
        Command::Generate { kind, n, d, out } => {
            cmd_generate(cli, *kind, *n, *d, out.as_deref())
        }
        Command::Experiment { name } => cmd_experiment(cli, name),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
