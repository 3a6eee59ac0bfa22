use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tensoropt::distsim::Sigma;
use tensoropt::stochastic::{plan_batches, PlanInputs, Schedule};
use tensoropt_cli::bench::{parse_suite, run_suite, threads_from_env, BenchOptions};
use tensoropt_cli::run::{solve, DeltaSource, HChoice, Method, SolveRequest};
use tensoropt_cli::traces::{write_atomic, write_dist_trace, write_trace};
use tensoropt_cli::{
    check_problem, format_check, format_plan, run_distsim, CliError, DistRequest, EXIT_ERROR, EXIT_INCOMPLETE,
    EXIT_OK,
};

#[derive(Parser)]
#[command(name = "tensoropt", version, about = "High-order methods for smooth convex problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver on a problem spec and write its trace.
    Solve(SolveArgs),
    /// Run a suite of solves and print a JSON report.
    Bench(BenchArgs),
    /// Print mini-batch sizes for the stochastic methods.
    Plan(PlanArgs),
    /// Simulate distributed optimization under statistical similarity.
    Distsim(DistArgs),
    /// Compare a problem's derivatives with finite differences.
    Check(CheckArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value = "msn")]
    method: Method,
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Regularization: a number, or `auto` for (p+1)·L_p.
    #[arg(long = "H", default_value = "auto")]
    h: HChoice,
    /// Stop once the gradient norm is at most this.
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Third derivatives by finite differences of gradients.
    #[arg(long)]
    superfast: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace CSV; printed to standard error when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write zeros in the elapsed_s column.
    #[arg(long)]
    no_timing: bool,
    /// Stochastic method: batch sizes n_1,..,n_p (default: planned).
    #[arg(long, value_delimiter = ',')]
    batch: Option<Vec<usize>>,
    /// Stochastic method: audited, bound or zero.
    #[arg(long, default_value = "audited")]
    deltas: DeltaSource,
    /// Stochastic method: accuracy target for the batch planner.
    #[arg(long, default_value_t = 0.1)]
    plan_eps: f64,
}

#[derive(Args)]
struct BenchArgs {
    suite: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Directory for per-row trace files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    p: usize,
    #[arg(long, default_value = "plain", value_parser = parse_schedule)]
    schedule: Schedule,
    /// Noise bounds M_1,..,M_p.
    #[arg(long = "M", value_delimiter = ',', required = true)]
    m: Vec<f64>,
    /// Lipschitz constants L_0,..,L_p.
    #[arg(long = "L", value_delimiter = ',', required = true)]
    l: Vec<f64>,
    #[arg(long = "H")]
    h: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    radius: f64,
    /// Failure probability.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DistArgs {
    #[arg(long, default_value_t = 8)]
    workers: usize,
    /// Samples per worker.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// `auto` or a nonnegative number.
    #[arg(long, default_value = "auto", value_parser = parse_sigma)]
    sigma: Sigma,
    #[arg(long, default_value_t = 2)]
    inner_p: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    /// Ridge weight, which is also the global strong convexity.
    #[arg(long, default_value_t = 0.1)]
    lambda2: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 500)]
    rounds_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Give every worker the same data.
    #[arg(long)]
    identical: bool,
    #[arg(long)]
    superfast: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    match s {
        "plain" => Ok(Schedule::Plain),
        "accelerated" => Ok(Schedule::Accelerated),
        _ => Err(format!("expected plain or accelerated, got `{s}`")),
    }
}

fn parse_sigma(s: &str) -> Result<Sigma, String> {
    if s == "auto" {
        return Ok(Sigma::Auto { samples: 10 });
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(Sigma::Fixed(v)),
        _ => Err(format!("sigma must be `auto` or a nonnegative number, got `{s}`")),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<i32, CliError> {
    let req = SolveRequest {
        problem: a.problem,
        method: a.method,
        p: a.p,
        h: a.h,
        eps: a.eps,
        max_iter: a.max_iter,
        superfast: a.superfast,
        seed: a.seed,
        timing: !a.no_timing,
        batch: a.batch,
        deltas: a.deltas,
        plan_eps: a.plan_eps,
    };
    let out = solve(&req)?;
    let csv = write_trace(&out.trace.rows);
    match &a.out {
        Some(path) => write_atomic(path, &csv)?,
        None => eprint!("{csv}"),
    }
    print_json(&out.summary)?;
    Ok(if out.summary.converged() { EXIT_OK } else { EXIT_INCOMPLETE })
}

fn cmd_bench(a: BenchArgs) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&a.suite).map_err(|e| CliError::Io {
        path: a.suite.display().to_string(),
        source: e,
    })?;
    let base = a.suite.parent().map(PathBuf::from).unwrap_or_default();
    let rows = parse_suite(&text, &base)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    let opts = BenchOptions {
        seed: a.seed,
        eps: a.eps,
        threads: threads_from_env()?,
        out_dir: a.out_dir,
        timing: !a.no_timing,
    };
    let results = run_suite(&rows, &opts)?;
    println!("{}", serde_json::to_string_pretty(&results)?);
    Ok(if results.iter().any(|r| r.error.is_some()) { EXIT_ERROR } else { EXIT_OK })
}

fn cmd_plan(a: PlanArgs) -> Result<i32, CliError> {
    let plan = plan_batches(PlanInputs {
        p: a.p,
        schedule: a.schedule,
        m: a.m,
        l: a.l,
        h: a.h,
        eps: a.eps,
        radius: a.radius,
        confidence: a.delta,
    })?;
    if a.json {
        print_json(&serde_json::json!({ "n": plan.n, "raw": plan.raw }))?;
    } else {
        print!("{}", format_plan(&plan));
    }
    Ok(EXIT_OK)
}

fn cmd_distsim(a: DistArgs) -> Result<i32, CliError> {
    let req = DistRequest {
        workers: a.workers,
        samples: a.samples,
        d: a.d,
        lambda2: a.lambda2,
        sigma: a.sigma,
        inner_p: a.inner_p,
        superfast: a.superfast,
        eps: a.eps,
        rounds_max: a.rounds_max,
        seed: a.seed,
        identical: a.identical,
        timing: !a.no_timing,
    };
    let (trace, summary) = run_distsim(&req)?;
    let csv = write_dist_trace(&trace.rows);
    match &a.out {
        Some(path) => write_atomic(path, &csv)?,
        None => eprint!("{csv}"),
    }
    print_json(&summary)?;
    Ok(if summary.converged { EXIT_OK } else { EXIT_INCOMPLETE })
}

fn cmd_check(a: CheckArgs) -> Result<i32, CliError> {
    let spec = tensoropt_cli::run::load_spec(&a.problem)?;
    let lines = check_problem(&spec, a.points, a.seed)?;
    print!("{}", format_check(&lines));
    Ok(if lines.iter().all(|l| l.passed) { EXIT_OK } else { EXIT_INCOMPLETE })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR as u8 } else { EXIT_OK as u8 });
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Distsim(a) => cmd_distsim(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
