//! The `solve` pipeline shared by the command line and the bench runner.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tensoropt::driver::{basic_tensor_run, msn_run, restart_schedule, restarted_run, SolverConfig, Trace};
use tensoropt::linalg::Vector;
use tensoropt::oracle::Objective;
use tensoropt::problems::{make_problem, reference_solution, Problem, ProblemSpec};
use tensoropt::stochastic::{audited_deltas, bound_deltas, plan_batches, stochastic_tensor_run, PlanInputs, Schedule};
use tensoropt::OptError;

use crate::summary::{summarize, RunEcho, RunSummary};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Msn,
    Basic,
    Restart,
    Stochastic,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Msn => "msn",
            Method::Basic => "basic",
            Method::Restart => "restart",
            Method::Stochastic => "stochastic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "msn" => Ok(Method::Msn),
            "basic" => Ok(Method::Basic),
            "restart" => Ok(Method::Restart),
            "stochastic" => Ok(Method::Stochastic),
            _ => Err(format!("unknown method `{s}` (expected msn, basic, restart or stochastic)")),
        }
    }
}

/// `--H`: a number or `auto` for `(p+1)·L_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HChoice {
    Auto,
    Value(f64),
}

impl FromStr for HChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(HChoice::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(HChoice::Value(v)),
            _ => Err(format!("H must be a positive number or `auto`, got `{s}`")),
        }
    }
}

/// Where the stochastic method takes its inexactness levels from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaSource {
    /// Largest audited error over 30 draws at the start point, times 1.5.
    Audited,
    /// Concentration bound from the noise constants.
    Bound,
    Zero,
}

impl FromStr for DeltaSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "audited" => Ok(DeltaSource::Audited),
            "bound" => Ok(DeltaSource::Bound),
            "zero" => Ok(DeltaSource::Zero),
            _ => Err(format!("unknown delta source `{s}` (expected audited, bound or zero)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveRequest {
    pub problem: PathBuf,
    pub method: Method,
    pub p: usize,
    pub h: HChoice,
    pub eps: f64,
    pub max_iter: usize,
    pub superfast: bool,
    pub seed: u64,
    pub timing: bool,
    /// Stochastic method: explicit batch sizes, else planned.
    pub batch: Option<Vec<usize>>,
    pub deltas: DeltaSource,
    /// Target accuracy handed to the batch planner.
    pub plan_eps: f64,
}

impl SolveRequest {
    pub fn new(problem: impl Into<PathBuf>, method: Method, p: usize) -> Self {
        Self {
            problem: problem.into(),
            method,
            p,
            h: HChoice::Auto,
            eps: 1e-8,
            max_iter: 100,
            superfast: false,
            seed: 0,
            timing: true,
            batch: None,
            deltas: DeltaSource::Audited,
            plan_eps: 0.1,
        }
    }
}

pub struct SolveOutcome {
    pub trace: Trace,
    pub summary: RunSummary,
}

pub fn load_spec(path: &Path) -> Result<ProblemSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(ProblemSpec::parse(&text)?)
}

fn resolve_h(choice: HChoice, p: usize, problem: &Problem) -> Result<f64, CliError> {
    match choice {
        HChoice::Value(v) => Ok(v),
        HChoice::Auto => match problem.lipschitz(p) {
            Some(l) if l > 0.0 => Ok((p + 1) as f64 * l),
            Some(_) => Err(CliError::Opt(OptError::Domain(format!(
                "L{p} is zero, so H auto would be zero; pass --H"
            )))),
            None => Err(CliError::Opt(OptError::MissingKey(format!("L{p}")))),
        },
    }
}

pub fn solve(req: &SolveRequest) -> Result<SolveOutcome, CliError> {
    let spec = load_spec(&req.problem)?;
    solve_spec(req, &spec)
}

pub fn solve_spec(req: &SolveRequest, spec: &ProblemSpec) -> Result<SolveOutcome, CliError> {
    if !(1..=3).contains(&req.p) {
        return Err(CliError::Opt(OptError::Domain(format!("--p {} outside 1..=3", req.p))));
    }
    let growth = if req.method == Method::Restart { Some(spec.growth()?) } else { None };
    let problem = make_problem(spec)?;
    let h = resolve_h(req.h, req.p, &problem)?;
    let x0 = spec.start_point();
    let reference = if spec.reference {
        Some(reference_solution(&problem, spec.ref_tol)?)
    } else {
        None
    };

    let mut cfg = SolverConfig::new(req.p, h);
    cfg.eps_grad = Some(req.eps);
    cfg.max_outer = req.max_iter;
    cfg.superfast = req.superfast;
    cfg.seed = req.seed;
    cfg.record_timing = req.timing;
    cfg.f_star = reference.as_ref().map(|r| r.f_star);

    let oracle = problem.oracle();
    let trace = match req.method {
        Method::Msn => msn_run(&cfg, &oracle, None, &x0)?,
        Method::Basic => basic_tensor_run(&cfg, &[], &oracle, None, &x0)?,
        Method::Restart => {
            let (r, sigma) = growth.expect("growth is read for restarts");
            let r0 = match &reference {
                Some(rf) => (&x0 - &rf.x_star).norm(),
                None => growth_radius(problem.objective.as_ref(), &x0, r, sigma),
            };
            if r0 == 0.0 {
                restarted_run(&cfg, r, sigma, 1.0, 0, &oracle, None, &x0, None)?
            } else {
                let phases = restart_phases(req.p, r, sigma, h, r0, req.max_iter)?;
                let x_star = reference.as_ref().map(|rf| &rf.x_star);
                restarted_run(&cfg, r, sigma, r0, phases, &oracle, None, &x0, x_star)?
            }
        }
        Method::Stochastic => stochastic(req, &cfg, &problem, &x0, reference.as_ref().map(|r| &r.x_star))?,
    };
    let echo = RunEcho {
        problem: req.problem.display().to_string(),
        family: spec.family.name().into(),
        d: spec.d,
        method: req.method.name().into(),
        p: req.p,
        h,
        eps: req.eps,
        max_iter: req.max_iter,
        seed: req.seed,
        superfast: req.superfast,
        radius: reference.as_ref().map(|r| (&x0 - &r.x_star).norm()),
        f_star: reference.as_ref().map(|r| r.f_star),
    };
    let summary = summarize(echo, &trace.rows)?;
    Ok(SolveOutcome { trace, summary })
}

/// `‖x − x*‖ ≤ (‖∇F(x)‖/σ_r)^{1/(r−1)}` under the growth condition and convexity.
fn growth_radius(obj: &dyn Objective, x0: &Vector, r: f64, sigma: f64) -> f64 {
    (obj.gradient(x0).norm() / sigma).powf(1.0 / (r - 1.0))
}

/// Number of phases whose cumulative budget stays within `max_iter`, at least one.
fn restart_phases(p: usize, r: f64, sigma: f64, h: f64, r0: f64, max_iter: usize) -> Result<usize, CliError> {
    let budgets = restart_schedule(p, r, sigma, h, r0, 64)?;
    let mut total = 0;
    let mut phases = 0;
    for n in budgets {
        if phases > 0 && total + n > max_iter {
            break;
        }
        total += n;
        phases += 1;
    }
    Ok(phases)
}

fn stochastic(
    req: &SolveRequest,
    cfg: &SolverConfig,
    problem: &Problem,
    x0: &Vector,
    x_star: Option<&Vector>,
) -> Result<Trace, CliError> {
    let p = req.p;
    let sum = problem.finite_sum.clone().ok_or_else(|| {
        CliError::Opt(OptError::Capability(format!(
            "the stochastic method needs a finite-sum family, not {}",
            problem.spec.family.name()
        )))
    })?;
    let meta = sum.meta();
    let noise: Vec<f64> = (1..=p)
        .map(|i| meta.noise_bound(i).ok_or_else(|| OptError::MissingKey(format!("M{i}"))))
        .collect::<Result<_, _>>()?;
    let batch = match &req.batch {
        Some(b) if b.len() >= p => b[..p].to_vec(),
        Some(b) => {
            return Err(CliError::Usage(format!("--batch needs {p} sizes, got {}", b.len())));
        }
        None => {
            let l: Vec<f64> = (0..=p)
                .map(|i| meta.lipschitz(i).unwrap_or(0.0))
                .collect();
            let radius = x_star.map_or(1.0, |xs| (x0 - xs).norm().max(1e-12));
            plan_batches(PlanInputs {
                p,
                schedule: Schedule::Plain,
                m: noise.clone(),
                l,
                h: cfg.h,
                eps: req.plan_eps,
                radius,
                confidence: 0.1,
            })?
            .n
        }
    };
    let deltas = match req.deltas {
        DeltaSource::Audited => audited_deltas(&sum, x0, &batch, p, 30, 1.5, req.seed)?,
        DeltaSource::Bound => bound_deltas(&noise, &batch, sum.n_components(), 0.1),
        DeltaSource::Zero => vec![0.0; p],
    };
    Ok(stochastic_tensor_run(cfg, &batch, &deltas, &sum, x0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_choices() {
        assert_eq!("auto".parse::<HChoice>().unwrap(), HChoice::Auto);
        assert_eq!("2.5".parse::<HChoice>().unwrap(), HChoice::Value(2.5));
        assert!("-1".parse::<HChoice>().is_err());
        assert!("nan".parse::<HChoice>().is_err());
        assert_eq!("restart".parse::<Method>().unwrap(), Method::Restart);
        assert!("newton".parse::<Method>().is_err());
        assert_eq!("bound".parse::<DeltaSource>().unwrap(), DeltaSource::Bound);
    }

    #[test]
    fn phases_respect_budget() {
        let n = restart_schedule(2, 2.0, 1.0, 6.0, 1.0, 3).unwrap();
        assert_eq!(restart_phases(2, 2.0, 1.0, 6.0, 1.0, n[0] + n[1]).unwrap(), 2);
        assert_eq!(restart_phases(2, 2.0, 1.0, 6.0, 1.0, 1).unwrap(), 1);
    }
}
