//! Library side of the `tensoropt` command: trace files, summaries, the solve
//! pipeline, benchmark suites and the plan/check/distsim reports.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use tensoropt::distsim::{make_workers, run_distributed, DistConfig, DistTrace, GlobalLoss, Sigma};
use tensoropt::driver::{default_h, msn_run, SolverConfig};
use tensoropt::linalg::Vector;
use tensoropt::oracle::{Objective, Oracle};
use tensoropt::problems::{check_derivatives, make_problem, DerivativeCheck, ProblemSpec};
use tensoropt::stochastic::BatchPlan;
use tensoropt::OptError;
use thiserror::Error;

pub mod bench;
pub mod run;
pub mod summary;
pub mod traces;

/// Converged, or finished with every check passing.
pub const EXIT_OK: i32 = 0;
/// Any error: bad input, I/O, solver failure.
pub const EXIT_ERROR: i32 = 1;
/// Finished without reaching the target (iteration budget, failed check).
pub const EXIT_INCOMPLETE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn format_plan(plan: &BatchPlan) -> String {
    let inp = &plan.inputs;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "schedule {:?}  p {}  H {}  eps {}  radius {}  delta {}",
        inp.schedule, inp.p, inp.h, inp.eps, inp.radius, inp.confidence
    );
    let _ = writeln!(out, "{:>3} {:>12} {:>24}", "i", "n_i", "unrounded");
    for (i, (n, raw)) in plan.n.iter().zip(&plan.raw).enumerate() {
        let _ = writeln!(out, "{:>3} {:>12} {:>24.6}", i + 1, n, raw);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub order: usize,
    pub quantity: &'static str,
    pub max_error: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference check of the problem's derivatives, one line per order.
pub fn check_problem(spec: &ProblemSpec, points: usize, seed: u64) -> Result<Vec<CheckLine>, CliError> {
    let problem = make_problem(spec)?;
    let chk = check_derivatives(problem.objective.as_ref(), points, seed)?;
    let order = problem.objective.meta().order_available;
    let passed = chk.passed();
    let mut lines = vec![CheckLine {
        order: 1,
        quantity: "gradient",
        max_error: Some(chk.gradient),
        tolerance: DerivativeCheck::GRADIENT_TOL,
        passed: passed[0],
    }];
    if order >= 2 {
        lines.push(CheckLine {
            order: 2,
            quantity: "hessian_action",
            max_error: Some(chk.hessian_action),
            tolerance: DerivativeCheck::HESSIAN_TOL,
            passed: passed[1],
        });
    }
    if order >= 3 {
        lines.push(CheckLine {
            order: 3,
            quantity: "third_action",
            max_error: chk.third_action,
            tolerance: DerivativeCheck::THIRD_TOL,
            passed: passed[2],
        });
    }
    Ok(lines)
}

pub fn format_check(lines: &[CheckLine]) -> String {
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(
            out,
            "order {} {:<15} max_error {:<12.3e} tol {:<8.0e} {}",
            l.order,
            l.quantity,
            l.max_error.unwrap_or(f64::NAN),
            l.tolerance,
            if l.passed { "PASS" } else { "FAIL" }
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct DistRequest {
    pub workers: usize,
    pub samples: usize,
    pub d: usize,
    /// Ridge weight; also the strong-convexity modulus of the global loss.
    pub lambda2: f64,
    pub sigma: Sigma,
    pub inner_p: usize,
    pub superfast: bool,
    pub eps: f64,
    pub rounds_max: usize,
    pub seed: u64,
    pub identical: bool,
    pub timing: bool,
}

impl Default for DistRequest {
    fn default() -> Self {
        Self {
            workers: 8,
            samples: 200,
            d: 5,
            lambda2: 0.1,
            sigma: Sigma::Auto { samples: 10 },
            inner_p: 2,
            superfast: false,
            eps: 1e-8,
            rounds_max: 500,
            seed: 0,
            identical: false,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistSummary {
    pub workers: usize,
    pub samples: usize,
    pub d: usize,
    pub sigma: f64,
    pub kappa_rho: f64,
    pub outer_rounds: usize,
    pub comm_rounds: usize,
    pub converged: bool,
    pub final_grad: f64,
    pub f_star: f64,
}

/// Builds the workers, computes the global optimum for the gap column and
/// runs the simulator.
pub fn run_distsim(req: &DistRequest) -> Result<(DistTrace, DistSummary), CliError> {
    if req.workers == 0 || req.samples == 0 || req.d == 0 {
        return Err(CliError::Usage("workers, samples and d must be positive".into()));
    }
    if !(req.lambda2 > 0.0) {
        return Err(CliError::Usage("lambda2 must be positive (it is the strong convexity of the global loss)".into()));
    }
    let workers = make_workers(req.workers, req.samples, req.d, req.lambda2, req.seed, req.identical);
    let x0 = Vector::zeros(req.d);
    let global: Arc<dyn Objective> = Arc::new(GlobalLoss {
        workers: workers.clone(),
    });
    let l2 = global.meta().lipschitz(2).unwrap_or(1.0);
    let mut reference = SolverConfig::new(2, default_h(2, l2).max(1e-12));
    reference.eps_grad = Some(1e-13);
    reference.max_outer = 500;
    reference.record_timing = false;
    let f_star = global.value(&msn_run(&reference, &Oracle::new(Arc::clone(&global)), None, &x0)?.x_final);

    let mut cfg = DistConfig::new(req.lambda2);
    cfg.sigma = req.sigma;
    cfg.inner_p = req.inner_p;
    cfg.superfast = req.superfast;
    cfg.eps = req.eps;
    cfg.rounds_max = req.rounds_max;
    cfg.seed = req.seed;
    cfg.record_timing = req.timing;
    let trace = run_distributed(&cfg, &workers, &x0, Some(f_star))?;
    let last = trace.rows.last().expect("a trace has its starting row");
    let summary = DistSummary {
        workers: req.workers,
        samples: req.samples,
        d: req.d,
        sigma: trace.sigma,
        kappa_rho: trace.kappa_rho,
        outer_rounds: trace.outer_rounds(),
        comm_rounds: last.comm_rounds,
        converged: trace.converged,
        final_grad: last.grad_norm,
        f_star,
    };
    Ok((trace, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensoropt::problems::Family;
    use tensoropt::stochastic::{plan_batches, PlanInputs, Schedule};

    #[test]
    fn plan_table_lists_sizes() {
        let plan = plan_batches(PlanInputs {
            p: 2,
            schedule: Schedule::Plain,
            m: vec![1.0, 1.0],
            l: vec![1.0, 1.0, 1.0],
            h: 3.0,
            eps: 0.1,
            radius: 1.0,
            confidence: 0.1,
        })
        .unwrap();
        let text = format_plan(&plan);
        assert!(text.contains(" 922 "));
        assert!(text.contains(" 14 "));
    }

    #[test]
    fn check_reports_each_order() {
        let spec = ProblemSpec::new(Family::QuarticQuadratic, 3, 3);
        let lines = check_problem(&spec, 5, 1).unwrap();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.passed));
        assert_eq!(format_check(&lines).matches("PASS").count(), 3);
    }

    #[test]
    fn identical_workers_converge_in_one_round() {
        let req = DistRequest {
            workers: 3,
            samples: 60,
            d: 3,
            sigma: Sigma::Fixed(0.0),
            identical: true,
            ..DistRequest::default()
        };
        let (trace, summary) = run_distsim(&req).unwrap();
        assert!(summary.converged);
        assert_eq!(summary.outer_rounds, 1);
        assert_eq!(summary.comm_rounds, 2);
        assert!(trace.rows[1].f_gap.unwrap().abs() < 1e-12);
    }
}
