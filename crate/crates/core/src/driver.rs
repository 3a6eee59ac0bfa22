//! Outer loops: the accelerated large-step scheme with its λ search, its
//! restarted variant under a growth condition, and the plain (possibly
//! inexact) tensor method.

use std::time::Instant;

use crate::error::{OptError, Result};
use crate::linalg::Vector;
use crate::model::{build_model, QuadraticComposite};
use crate::oracle::{CallCounters, DerivativeBundle, Oracle, ThirdOrderMode};
use crate::subsolve::{solve_model, SubsolveOptions, SubsolveResult};

/// `c_p = 2^{p−1}(p+1)^{(3p+1)/2}/p!`.
pub fn rate_constant(p: usize) -> f64 {
    let pf = p as f64;
    let fact: f64 = (1..=p).map(|k| k as f64).product();
    2f64.powi(p as i32 - 1) * (pf + 1.0).powf((3.0 * pf + 1.0) / 2.0) / fact
}

/// Right-hand side of the accelerated rate bound, with the factor `12/5` for
/// inexact subproblem solutions: `(12/5)·c_p·H·R^{p+1}/k^{(3p+1)/2}`.
pub fn rate_bound(p: usize, h: f64, r: f64, k: usize) -> f64 {
    let pf = p as f64;
    2.4 * rate_constant(p) * h * r.powi(p as i32 + 1) / (k as f64).powf((3.0 * pf + 1.0) / 2.0)
}

/// `λH‖s‖^{p−1}/p!`, the quantity the λ search keeps in `[1/2, p/(p+1)]`.
pub fn bracket_ratio(lambda: f64, h: f64, step_norm: f64, p: usize) -> f64 {
    let fact: f64 = (1..=p).map(|k| k as f64).product();
    lambda * h * step_norm.powi(p as i32 - 1) / fact
}

/// Acceptance window of the λ search.
pub fn bracket_window(p: usize) -> (f64, f64) {
    (0.5, p as f64 / (p as f64 + 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub p: usize,
    pub h: f64,
    pub max_outer: usize,
    /// Stop once `‖∇F‖ ≤ eps_grad`.
    pub eps_grad: Option<f64>,
    /// Stop once `F − f_star ≤ eps_gap`; needs `f_star`.
    pub eps_gap: Option<f64>,
    /// Reference optimal value used for gap columns.
    pub f_star: Option<f64>,
    pub lambda_bracket_max_iter: usize,
    /// Replace exact third derivatives by gradient differences.
    pub superfast: bool,
    pub fd_tau: Option<f64>,
    pub seed: u64,
    pub subsolve: SubsolveOptions,
    /// Double `H` and retry when an accepted step breaks the model upper bound.
    pub h_safeguard: bool,
    pub record_timing: bool,
    /// Initial λ for the search.
    pub lambda0: f64,
}

impl SolverConfig {
    pub fn new(p: usize, h: f64) -> Self {
        Self {
            p,
            h,
            max_outer: 100,
            eps_grad: Some(1e-8),
            eps_gap: None,
            f_star: None,
            lambda_bracket_max_iter: 64,
            superfast: false,
            fd_tau: None,
            seed: 0,
            subsolve: SubsolveOptions::default(),
            h_safeguard: true,
            record_timing: true,
            lambda0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.p) {
            return Err(OptError::Domain(format!("order p = {} outside 1..=3", self.p)));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(OptError::Domain(format!("H = {} must be positive", self.h)));
        }
        if self.eps_grad.is_none() && self.eps_gap.is_none() && self.max_outer == usize::MAX {
            return Err(OptError::Domain("no termination criterion".into()));
        }
        if self.eps_gap.is_some() && self.f_star.is_none() {
            return Err(OptError::Domain("gap termination needs a reference value".into()));
        }
        Ok(())
    }
}

/// Default regularization: `(p+1)·L_p`, and `6·L₃` for `p = 3`.
pub fn default_h(p: usize, l_p: f64) -> f64 {
    if p == 3 {
        6.0 * l_p
    } else {
        (p + 1) as f64 * l_p
    }
}

/// One trace line. `k = 0` describes the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub f_value: f64,
    pub f_gap: Option<f64>,
    pub grad_norm: f64,
    pub lambda: Option<f64>,
    pub step_norm: f64,
    pub inner_iters: u64,
    pub counters: CallCounters,
    pub elapsed_s: f64,
}

/// Quantities of one outer iteration that do not go to the trace file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IterationDetail {
    /// Regularization used for the accepted step.
    pub h: f64,
    /// `a_{k+1}` and `A_{k+1}`.
    pub a: f64,
    pub big_a: f64,
    /// Subproblem solves spent in this iteration.
    pub solves: usize,
    /// The step landed in the λ window (false on a degenerate stationary exit).
    pub bracketed: bool,
    /// `F(y_{k+1}) > F(y_k)`, beyond round-off.
    pub increased: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    Budget,
}

/// One phase of a restarted run.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub phase: usize,
    pub budget: usize,
    pub iterations: usize,
    pub solves: usize,
    /// `R_k`.
    pub radius: f64,
    pub start: Vector,
    pub end: Vector,
    /// `‖z_{k+1} − x*‖`, when a minimizer is supplied.
    pub distance: Option<f64>,
    /// `‖z_{k+1} − x*‖ ≤ R_k/2`.
    pub halved: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub p: usize,
    pub rows: Vec<TraceRow>,
    /// Aligned with `rows`.
    pub details: Vec<IterationDetail>,
    pub status: RunStatus,
    pub x_final: Vector,
    pub h_doublings: usize,
    pub phases: Vec<PhaseRecord>,
}

impl Trace {
    fn new(p: usize, x: &Vector) -> Self {
        Self {
            p,
            rows: Vec::new(),
            details: Vec::new(),
            status: RunStatus::Budget,
            x_final: x.clone(),
            h_doublings: 0,
            phases: Vec::new(),
        }
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace always has its starting row")
    }

    pub fn total_solves(&self) -> usize {
        self.details.iter().map(|d| d.solves).sum()
    }

    pub fn outer_iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.k)
    }

    /// Indices of rows where the objective went up.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        self.details
            .iter()
            .enumerate()
            .filter(|(_, d)| d.increased)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `F = f + g` evaluated through the counting oracle.
struct Composite<'a> {
    oracle: &'a Oracle,
    g: Option<&'a QuadraticComposite>,
}

impl Composite<'_> {
    fn value(&self, x: &Vector) -> Result<f64> {
        let v = self.oracle.value(x)?;
        Ok(v + self.g.map_or(0.0, |g| g.value(x)))
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        let mut v = self.oracle.gradient(x)?;
        if let Some(g) = self.g {
            v += g.gradient(x);
        }
        Ok(v)
    }
}

fn effective_oracle(config: &SolverConfig, oracle: &Oracle) -> Oracle {
    if config.superfast {
        oracle
            .clone()
            .with_third_order(ThirdOrderMode::FiniteDifference { tau: config.fd_tau })
    } else {
        oracle.clone()
    }
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Self {
            start: Instant::now(),
            enabled,
        }
    }

    fn elapsed(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

fn gap(config: &SolverConfig, f: f64) -> Option<f64> {
    config.f_star.map(|fs| f - fs)
}

fn done(config: &SolverConfig, grad_norm: f64, f_gap: Option<f64>) -> bool {
    config.eps_grad.is_some_and(|e| grad_norm <= e)
        || matches!((config.eps_gap, f_gap), (Some(e), Some(g)) if g <= e)
}

/// Round-off allowance when comparing objective values.
fn value_slack(f: f64) -> f64 {
    1e-12 * f.abs().max(1.0)
}

struct Solved {
    result: SubsolveResult,
    center: Vector,
}

/// Builds the model at `center` and minimizes it.
fn solve_at(
    config: &SolverConfig,
    oracle: &Oracle,
    f: &Composite<'_>,
    g: Option<&QuadraticComposite>,
    center: &Vector,
    h: f64,
) -> Result<Solved> {
    let bundle = oracle.eval_bundle(center, config.p)?;
    let state = build_model(&bundle, config.p, h, &[], g)?;
    let grad = |y: &Vector| f.gradient(y);
    let result = solve_model(&state, Some(&grad), &config.subsolve)?;
    Ok(Solved {
        result,
        center: center.clone(),
    })
}

/// Accelerated large-step scheme with tensor steps.
///
/// Each iteration finds `λ` such that the model step `s` from
/// `x̃ = (A y + a x)/(A + a)`, `a = (λ + √(λ² + 4λA))/2`, satisfies
/// `1/2 ≤ λH‖s‖^{p−1}/p! ≤ p/(p+1)`, sets `y ← x̃ + s` and
/// `x ← x − a∇F(y)`. For `p = 1` the window is the single point `λ = 1/(2H)`.
pub fn msn_run(
    config: &SolverConfig,
    oracle: &Oracle,
    g: Option<&QuadraticComposite>,
    x0: &Vector,
) -> Result<Trace> {
    config.validate()?;
    let oracle = effective_oracle(config, oracle);
    if oracle.order_available() < config.p {
        return Err(OptError::Capability(format!(
            "order {} method on an oracle of order {}",
            config.p,
            oracle.order_available()
        )));
    }
    let clock = Clock::new(config.record_timing);
    let f = Composite { oracle: &oracle, g };
    let mut trace = Trace::new(config.p, x0);

    let mut x = x0.clone();
    let mut y = x0.clone();
    let mut big_a = 0.0_f64;
    let mut h = config.h;
    let mut lambda_prev = config.lambda0;

    let f0 = f.value(&y)?;
    let g0 = f.gradient(&y)?.norm();
    let gap0 = gap(config, f0);
    trace.rows.push(TraceRow {
        k: 0,
        f_value: f0,
        f_gap: gap0,
        grad_norm: g0,
        lambda: None,
        step_norm: 0.0,
        inner_iters: 0,
        counters: oracle.counters(),
        elapsed_s: clock.elapsed(),
    });
    trace.details.push(IterationDetail::default());
    if done(config, g0, gap0) {
        trace.status = RunStatus::Converged;
        return Ok(trace);
    }
    let mut f_prev = f0;

    for k in 1..=config.max_outer {
        let (step, y_next, f_next) = loop {
            let step = lambda_search(config, &oracle, &f, g, &x, &y, big_a, h, lambda_prev, k)?;
            let y_next = &step.solved.center + &step.solved.result.step;
            let f_next = f.value(&y_next)?;
            let violated = f_next > step.solved.result.model_value + 1e3 * value_slack(f_next);
            if config.h_safeguard && violated && step.bracketed {
                if trace.h_doublings >= MAX_H_DOUBLINGS {
                    return Err(doubling_error(h));
                }
                h *= 2.0;
                trace.h_doublings += 1;
                continue;
            }
            break (step, y_next, f_next);
        };
        let SearchOutcome {
            solved,
            lambda,
            a,
            solves,
            inner,
            bracketed,
        } = step;
        let grad_next = f.gradient(&y_next)?;
        if bracketed {
            x -= &grad_next * a;
            big_a += a;
            lambda_prev = lambda;
        }
        y = y_next;
        let gn = grad_next.norm();
        let fg = gap(config, f_next);
        trace.rows.push(TraceRow {
            k,
            f_value: f_next,
            f_gap: fg,
            grad_norm: gn,
            lambda: if bracketed { Some(lambda) } else { None },
            step_norm: solved.result.step.norm(),
            inner_iters: inner as u64,
            counters: oracle.counters(),
            elapsed_s: clock.elapsed(),
        });
        trace.details.push(IterationDetail {
            h,
            a,
            big_a,
            solves,
            bracketed,
            increased: f_next > f_prev + value_slack(f_prev),
        });
        f_prev = f_next;
        if done(config, gn, fg) || !bracketed {
            trace.status = RunStatus::Converged;
            break;
        }
    }
    trace.x_final = y;
    Ok(trace)
}

struct SearchOutcome {
    solved: Solved,
    lambda: f64,
    a: f64,
    solves: usize,
    inner: usize,
    /// False when the search stopped at a stationary `x̃` instead.
    bracketed: bool,
}

/// Finds the first λ whose model step lands in the acceptance window:
/// warm start, doubling or halving until the window is bracketed, then
/// geometric bisection.
#[allow(clippy::too_many_arguments)]
fn lambda_search(
    config: &SolverConfig,
    oracle: &Oracle,
    f: &Composite<'_>,
    g: Option<&QuadraticComposite>,
    x: &Vector,
    y: &Vector,
    big_a: f64,
    h: f64,
    lambda_start: f64,
    outer: usize,
) -> Result<SearchOutcome> {
    let p = config.p;
    let (lo_bound, hi_bound) = bracket_window(p);
    let trial = |lambda: f64| -> Result<(Solved, f64)> {
        let a = (lambda + (lambda * lambda + 4.0 * lambda * big_a).sqrt()) / 2.0;
        let total = big_a + a;
        let center = y * (big_a / total) + x * (a / total);
        let solved = solve_at(config, oracle, f, g, &center, h)?;
        Ok((solved, a))
    };

    if p == 1 {
        let lambda = 1.0 / (2.0 * h);
        let (solved, a) = trial(lambda)?;
        let inner = solved.result.inner_iterations;
        return Ok(SearchOutcome {
            solved,
            lambda,
            a,
            solves: 1,
            inner,
            bracketed: true,
        });
    }

    let mut lambda = lambda_start;
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let mut observed = Vec::new();
    let mut inner = 0;
    for solves in 1..=config.lambda_bracket_max_iter {
        let (solved, a) = trial(lambda)?;
        inner += solved.result.inner_iterations;
        let s_norm = solved.result.step.norm();
        let phi = bracket_ratio(lambda, h, s_norm, p);
        observed.push((lambda, phi));
        if (lo_bound..=hi_bound).contains(&phi) {
            return Ok(SearchOutcome {
                solved,
                lambda,
                a,
                solves,
                inner,
                bracketed: true,
            });
        }
        if s_norm == 0.0 {
            // The model is minimized at its center, so x̃ is stationary for F.
            let gn = f.gradient(&solved.center)?.norm();
            if gn <= config.eps_grad.unwrap_or(0.0).max(solved.result.model_grad_norm) {
                return Ok(SearchOutcome {
                    solved,
                    lambda,
                    a,
                    solves,
                    inner,
                    bracketed: false,
                });
            }
        }
        if phi < lo_bound {
            lo = Some(lambda);
        } else {
            hi = Some(lambda);
        }
        lambda = match (lo, hi) {
            (Some(l), Some(u)) => (l * u).sqrt(),
            (Some(l), None) => 2.0 * l,
            (None, Some(u)) => 0.5 * u,
            (None, None) => unreachable!(),
        };
    }
    let (last_lambda, last_ratio) = observed.last().copied().unwrap_or((lambda, f64::NAN));
    Err(OptError::BracketFailure {
        outer,
        iterations: config.lambda_bracket_max_iter,
        last_lambda,
        last_ratio,
        observed,
    })
}

/// Iteration budgets of the restarted scheme:
/// `N_k = max(⌈(r·c_p·H·2^r·R_k^{p+1−r}/σ_r)^{2/(3p+1)}⌉, 1)` with `R_k = R₀2^{−k}`.
pub fn restart_schedule(p: usize, r: f64, sigma_r: f64, h: f64, r0: f64, phases: usize) -> Result<Vec<usize>> {
    if !(1..=3).contains(&p) {
        return Err(OptError::Domain(format!("order p = {p} outside 1..=3")));
    }
    if !(2.0..=(p as f64 + 1.0)).contains(&r) {
        return Err(OptError::Domain(format!("growth exponent r = {r} outside [2, p+1]")));
    }
    if !(sigma_r > 0.0) || !(h > 0.0) || !(r0 > 0.0) {
        return Err(OptError::Domain("sigma_r, H and R0 must be positive".into()));
    }
    let cp = rate_constant(p);
    let expo = 2.0 / (3.0 * p as f64 + 1.0);
    Ok((0..phases)
        .map(|k| {
            let rk = r0 * 0.5f64.powi(k as i32);
            let base = r * cp * h * 2f64.powf(r) * rk.powf(p as f64 + 1.0 - r) / sigma_r;
            (base.powf(expo).ceil() as usize).max(1)
        })
        .collect())
}

/// Restarted scheme: phase `k` runs [`msn_run`] for `N_k` iterations from the
/// previous phase's end point. Rows are renumbered consecutively and phases
/// are recorded, with the halving check when `x_star` is given.
#[allow(clippy::too_many_arguments)]
pub fn restarted_run(
    config: &SolverConfig,
    r: f64,
    sigma_r: f64,
    r0: f64,
    phases: usize,
    oracle: &Oracle,
    g: Option<&QuadraticComposite>,
    x0: &Vector,
    x_star: Option<&Vector>,
) -> Result<Trace> {
    config.validate()?;
    let schedule = restart_schedule(config.p, r, sigma_r, config.h, r0, phases)?;
    let mut trace = Trace::new(config.p, x0);
    let mut z = x0.clone();
    let mut elapsed_offset = 0.0;
    if phases == 0 {
        let f = Composite { oracle, g };
        let fv = f.value(&z)?;
        let gn = f.gradient(&z)?.norm();
        trace.rows.push(TraceRow {
            k: 0,
            f_value: fv,
            f_gap: gap(config, fv),
            grad_norm: gn,
            lambda: None,
            step_norm: 0.0,
            inner_iters: 0,
            counters: oracle.counters(),
            elapsed_s: 0.0,
        });
        trace.details.push(IterationDetail::default());
        trace.status = if done(config, gn, gap(config, fv)) { RunStatus::Converged } else { RunStatus::Budget };
        return Ok(trace);
    }
    for (k, &budget) in schedule.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.max_outer = budget;
        let phase = msn_run(&cfg, oracle, g, &z)?;
        let offset = trace.rows.last().map_or(0, |r| r.k);
        let skip = if trace.rows.is_empty() { 0 } else { 1 };
        for (row, detail) in phase.rows.iter().zip(&phase.details).skip(skip) {
            let mut row = row.clone();
            row.k += offset;
            row.elapsed_s += elapsed_offset;
            trace.rows.push(row);
            trace.details.push(*detail);
        }
        elapsed_offset = trace.last().elapsed_s;
        trace.h_doublings += phase.h_doublings;
        let radius = r0 * 0.5f64.powi(k as i32);
        let distance = x_star.map(|xs| (&phase.x_final - xs).norm());
        trace.phases.push(PhaseRecord {
            phase: k,
            budget,
            iterations: phase.outer_iterations(),
            solves: phase.total_solves(),
            radius,
            start: z.clone(),
            end: phase.x_final.clone(),
            distance,
            halved: distance.map(|dist| dist <= radius / 2.0),
        });
        z = phase.x_final;
        if phase.status == RunStatus::Converged {
            trace.status = RunStatus::Converged;
            break;
        }
    }
    trace.x_final = z;
    Ok(trace)
}

/// Source of derivative bundles for the plain tensor method.
pub type BundleSource<'a> = dyn FnMut(&Vector, usize) -> Result<DerivativeBundle> + 'a;

/// Plain tensor method `x_{t+1} = x_t + argmin_s model(x_t; s)`, with the
/// inexact model when `deltas` are nonzero. Iterations where `F` increases
/// are flagged in the details.
pub fn basic_tensor_run(
    config: &SolverConfig,
    deltas: &[f64],
    oracle: &Oracle,
    g: Option<&QuadraticComposite>,
    x0: &Vector,
) -> Result<Trace> {
    let fd = effective_oracle(config, oracle);
    let mut source = |x: &Vector, p: usize| fd.eval_bundle(x, p);
    tensor_loop(config, deltas, &fd, g, x0, &mut source, true)
}

/// Upper limit on safeguard doublings of `H` within one run.
pub const MAX_H_DOUBLINGS: usize = 60;

fn doubling_error(h: f64) -> OptError {
    OptError::Numerical(format!("model upper bound still violated after {MAX_H_DOUBLINGS} doublings (H = {h:e})"))
}

/// Shared loop of the plain and stochastic tensor methods. `oracle` is used
/// for the reported objective values and gradients only; model derivatives
/// come from `source`. The `H` safeguard runs only when `exact_source` says
/// the derivatives are exact.
pub(crate) fn tensor_loop(
    config: &SolverConfig,
    deltas: &[f64],
    oracle: &Oracle,
    g: Option<&QuadraticComposite>,
    x0: &Vector,
    source: &mut BundleSource<'_>,
    exact_source: bool,
) -> Result<Trace> {
    config.validate()?;
    let clock = Clock::new(config.record_timing);
    let f = Composite { oracle, g };
    let mut trace = Trace::new(config.p, x0);
    let mut x = x0.clone();
    let mut h = config.h;

    let mut fx = f.value(&x)?;
    let gn0 = f.gradient(&x)?.norm();
    let gap0 = gap(config, fx);
    trace.rows.push(TraceRow {
        k: 0,
        f_value: fx,
        f_gap: gap0,
        grad_norm: gn0,
        lambda: None,
        step_norm: 0.0,
        inner_iters: 0,
        counters: oracle.counters(),
        elapsed_s: clock.elapsed(),
    });
    trace.details.push(IterationDetail::default());
    if done(config, gn0, gap0) {
        trace.status = RunStatus::Converged;
        trace.x_final = x;
        return Ok(trace);
    }

    for k in 1..=config.max_outer {
        let bundle = source(&x, config.p)?;
        let result = loop {
            let state = build_model(&bundle, config.p, h, deltas, g)?;
            let result = solve_model(&state, None, &config.subsolve)?;
            if config.h_safeguard && exact_source && state.is_exact() {
                let fy = f.value(&(&x + &result.step))?;
                if fy > result.model_value + 1e3 * value_slack(fy) {
                    if trace.h_doublings >= MAX_H_DOUBLINGS {
                        return Err(doubling_error(h));
                    }
                    h *= 2.0;
                    trace.h_doublings += 1;
                    continue;
                }
            }
            break result;
        };
        x += &result.step;
        let fnext = f.value(&x)?;
        let gn = f.gradient(&x)?.norm();
        let fg = gap(config, fnext);
        trace.rows.push(TraceRow {
            k,
            f_value: fnext,
            f_gap: fg,
            grad_norm: gn,
            lambda: None,
            step_norm: result.step.norm(),
            inner_iters: result.inner_iterations as u64,
            counters: oracle.counters(),
            elapsed_s: clock.elapsed(),
        });
        trace.details.push(IterationDetail {
            h,
            a: 0.0,
            big_a: 0.0,
            solves: 1,
            bracketed: false,
            increased: fnext > fx + value_slack(fx),
        });
        fx = fnext;
        if done(config, gn, fg) {
            trace.status = RunStatus::Converged;
            break;
        }
    }
    trace.x_final = x;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, Family, ProblemSpec};

    fn quadratic(d: usize) -> crate::problems::Problem {
        make_problem(&ProblemSpec::new(Family::Quadratic, d, 2)).unwrap()
    }

    #[test]
    fn rate_constants() {
        assert!((rate_constant(2) - 3f64.powf(3.5)).abs() < 1e-12);
        assert!((rate_constant(3) - 2048.0 / 3.0).abs() < 1e-9);
        assert_eq!(rate_constant(1), 4.0);
        let b = rate_bound(2, 6.0, 1.0, 1);
        assert!((b - 2.4 * 6.0 * 3f64.powf(3.5)).abs() < 1e-9);
    }

    #[test]
    fn windows() {
        assert_eq!(bracket_window(2), (0.5, 2.0 / 3.0));
        assert_eq!(bracket_window(3), (0.5, 0.75));
        assert_eq!(bracket_window(1), (0.5, 0.5));
        assert_eq!(bracket_ratio(0.05, 10.0, 123.0, 1), 0.5);
    }

    #[test]
    fn schedule_examples() {
        let n = restart_schedule(2, 2.0, 1.0, 6.0, 1.0, 2).unwrap();
        assert_eq!(n, vec![10, 8]);
        let n = restart_schedule(3, 2.0, 1e9, 6.0, 1.0, 4).unwrap();
        assert_eq!(n, vec![1; 4]);
        assert!(restart_schedule(2, 4.0, 1.0, 6.0, 1.0, 2).is_err());
        assert!(restart_schedule(2, 2.0, 0.0, 6.0, 1.0, 2).is_err());
        assert!(restart_schedule(2, 2.0, 1.0, 6.0, 1.0, 0).unwrap().is_empty());
    }

    #[test]
    fn p1_lambda_is_half_inverse_h() {
        let prob = quadratic(4);
        let mut cfg = SolverConfig::new(1, 10.0);
        cfg.max_outer = 30;
        let tr = msn_run(&cfg, &prob.oracle(), None, &Vector::zeros(4)).unwrap();
        assert!(tr.rows.len() > 1);
        for row in &tr.rows[1..] {
            assert_eq!(row.lambda, Some(0.05));
        }
    }

    #[test]
    fn start_at_optimum() {
        let prob = quadratic(3);
        let xs = prob.closed_form.clone().unwrap();
        let cfg = SolverConfig::new(2, 1.0);
        let tr = msn_run(&cfg, &prob.oracle(), None, &xs).unwrap();
        assert_eq!(tr.rows.len(), 1);
        assert_eq!(tr.status, RunStatus::Converged);
        assert!(tr.rows[0].grad_norm <= 1e-8);
    }

    #[test]
    fn zero_phases_returns_start() {
        let prob = quadratic(3);
        let x0 = Vector::from_element(3, 0.7);
        let cfg = SolverConfig::new(2, 1.0);
        let tr = restarted_run(&cfg, 2.0, 0.05, 1.0, 0, &prob.oracle(), None, &x0, None).unwrap();
        assert_eq!(tr.x_final, x0);
        assert_eq!(tr.rows.len(), 1);
    }

    #[test]
    fn accepted_steps_lie_in_window() {
        let prob = make_problem(&ProblemSpec::new(Family::WorstCase, 6, 2)).unwrap();
        let h = 3.0 * prob.lipschitz(2).unwrap();
        let mut cfg = SolverConfig::new(2, h);
        cfg.max_outer = 40;
        let tr = msn_run(&cfg, &prob.oracle(), None, &Vector::from_element(6, 1.0)).unwrap();
        let (lo, hi) = bracket_window(2);
        for (row, det) in tr.rows.iter().zip(&tr.details).skip(1) {
            if det.bracketed {
                let phi = bracket_ratio(row.lambda.unwrap(), det.h, row.step_norm, 2);
                assert!(phi >= lo && phi <= hi, "phi = {phi}");
            }
        }
    }

    #[test]
    fn quadratic_single_basic_step() {
        let prob = quadratic(5);
        let xs = prob.closed_form.clone().unwrap();
        let mut cfg = SolverConfig::new(2, 1e-10);
        cfg.max_outer = 1;
        cfg.eps_grad = None;
        let tr = basic_tensor_run(&cfg, &[], &prob.oracle(), None, &Vector::zeros(5)).unwrap();
        assert!((&tr.x_final - &xs).norm() < 1e-6);
    }

    #[test]
    fn basic_run_is_monotone() {
        let prob = quadratic(5);
        let mut cfg = SolverConfig::new(2, 3.0);
        cfg.max_outer = 50;
        let tr = basic_tensor_run(&cfg, &[], &prob.oracle(), None, &Vector::from_element(5, 3.0)).unwrap();
        assert!(tr.monotonicity_violations().is_empty());
        assert_eq!(tr.status, RunStatus::Converged);
    }

    #[test]
    fn restart_meets_budget_on_quadratic() {
        let prob = quadratic(6);
        let xs = prob.closed_form.clone().unwrap();
        let f_star = prob.objective.value(&xs);
        let x0 = Vector::from_element(6, 1.0);
        let (r, sigma) = prob.spec.certified_growth().unwrap();
        let r0 = (&x0 - &xs).norm();
        let mut cfg = SolverConfig::new(2, 1.0);
        cfg.eps_grad = None;
        cfg.f_star = Some(f_star);
        cfg.eps_gap = Some(1e-8);
        let phases = 20;
        let budget: usize = restart_schedule(2, r, sigma, 1.0, r0, phases).unwrap().iter().sum();
        let tr = restarted_run(&cfg, r, sigma, r0, phases, &prob.oracle(), None, &x0, Some(&xs)).unwrap();
        assert_eq!(tr.status, RunStatus::Converged);
        assert!(tr.outer_iterations() <= budget);
        assert!(tr.phases.iter().all(|p| p.halved == Some(true)));
        for (i, row) in tr.rows.iter().enumerate() {
            assert_eq!(row.k, i);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(4, 1.0).validate().is_err());
        assert!(SolverConfig::new(2, 0.0).validate().is_err());
        let mut c = SolverConfig::new(2, 1.0);
        c.eps_gap = Some(1e-3);
        assert!(c.validate().is_err());
        assert_eq!(default_h(3, 2.0), 12.0);
        assert_eq!(default_h(2, 2.0), 6.0);
    }

    #[test]
    fn no_timing_zeroes_elapsed() {
        let prob = quadratic(3);
        let mut cfg = SolverConfig::new(2, 1.0);
        cfg.record_timing = false;
        let tr = msn_run(&cfg, &prob.oracle(), None, &Vector::zeros(3)).unwrap();
        assert!(tr.rows.iter().all(|r| r.elapsed_s == 0.0));
    }
}
