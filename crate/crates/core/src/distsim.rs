//! In-process simulation of distributed empirical risk minimization under
//! statistical similarity.
//!
//! Worker 1 doubles as the master. With `ρ(x) = f₁(x) + σ/2‖x‖²` the global
//! loss `f = (1/m)Σ f_j` is 1-smooth and `μ_f/(μ_f + 2σ)`-strongly convex
//! relative to `ρ` whenever `‖∇²f − ∇²f₁‖ ≤ σ`, so the Bregman gradient step
//!
//! ```text
//! y_{t+1} = argmin_y ⟨∇f(y_t), y⟩ + β_ρ(y_t, y)
//!         = argmin_y f₁(y) + σ/2‖y‖² − ⟨∇f₁(y_t) + σy_t − ∇f(y_t), y⟩
//! ```
//!
//! converges linearly with rate `1 − 1/κ_ρ`, `κ_ρ = 1 + 2σ/μ_f`. The master
//! solves its local problem with the tensor solvers of this crate.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::driver::{default_h, msn_run, SolverConfig};
use crate::error::{OptError, Result};
use crate::linalg::{normal_vector, seeded_rng, sym_spectral_norm, Matrix, Vector};
use crate::model::QuadraticComposite;
use crate::oracle::{Objective, Oracle, OracleMeta};
use crate::problems::{logistic_data, Logistic};

/// Regularized logistic workers sharing one ground-truth weight vector.
/// With `identical`, every worker holds worker 1's data.
pub fn make_workers(workers: usize, n: usize, d: usize, lambda2: f64, seed: u64, identical: bool) -> Vec<Arc<Logistic>> {
    let mut rng = seeded_rng(seed);
    let w = normal_vector(&mut rng, d);
    let mut out = Vec::with_capacity(workers);
    for j in 0..workers {
        if identical && j > 0 {
            out.push(Arc::clone(&out[0]));
            continue;
        }
        let mut local = seeded_rng(seed.wrapping_mul(0x9e37_79b9).wrapping_add(j as u64 + 1));
        let (a, y) = logistic_data(&w, n, &mut local);
        out.push(Arc::new(Logistic::new(a, y, lambda2)));
    }
    out
}

/// `f = (1/m) Σ f_j`; worker gradients are computed concurrently and summed in worker order.
pub struct GlobalLoss {
    pub workers: Vec<Arc<Logistic>>,
}

impl GlobalLoss {
    fn mean<T, F>(&self, f: F, zero: T) -> T
    where
        T: Send + std::ops::Add<Output = T> + std::ops::Div<f64, Output = T>,
        F: Fn(&Logistic) -> T + Sync + Send,
    {
        let parts: Vec<T> = self.workers.par_iter().map(|w| f(w)).collect();
        let n = parts.len() as f64;
        parts.into_iter().fold(zero, |acc, v| acc + v) / n
    }
}

impl Objective for GlobalLoss {
    fn dim(&self) -> usize {
        self.workers[0].dim()
    }

    fn meta(&self) -> OracleMeta {
        let mut meta = OracleMeta::new(3);
        for i in 0..4 {
            meta.lipschitz[i] = self
                .workers
                .iter()
                .map(|w| w.meta().lipschitz(i))
                .try_fold(0.0_f64, |acc, v| v.map(|v| acc.max(v)));
        }
        meta
    }

    fn value(&self, x: &Vector) -> f64 {
        self.mean(|w| w.value(x), 0.0)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.mean(|w| w.gradient(x), Vector::zeros(x.len()))
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        let d = x.len();
        Ok(self.mean(|w| w.hessian(x).expect("logistic has a Hessian"), Matrix::zeros(d, d)))
    }

    fn third_directional(&self, x: &Vector, h: &Vector) -> Result<Vector> {
        Ok(self.mean(
            |w| w.third_directional(x, h).expect("logistic has third derivatives"),
            Vector::zeros(x.len()),
        ))
    }
}

/// `max_x ‖∇²f(x) − ∇²f₁(x)‖₂` over the given points.
pub fn similarity_at(workers: &[Arc<Logistic>], points: &[Vector]) -> Result<f64> {
    if workers.is_empty() {
        return Err(OptError::Domain("no workers".into()));
    }
    let global = GlobalLoss {
        workers: workers.to_vec(),
    };
    let mut best = 0.0_f64;
    for x in points {
        let diff = global.hessian(x)? - workers[0].hessian(x)?;
        best = best.max(sym_spectral_norm(&diff));
    }
    Ok(best)
}

/// Similarity estimate over `samples` points: the origin followed by
/// `N(0, I/d)` draws from `seed`.
pub fn estimate_similarity(workers: &[Arc<Logistic>], samples: usize, seed: u64) -> Result<f64> {
    let d = workers.first().map(|w| w.dim()).unwrap_or(0);
    let mut rng = seeded_rng(seed);
    let points: Vec<Vector> = (0..samples.max(1))
        .map(|i| {
            if i == 0 {
                Vector::zeros(d)
            } else {
                normal_vector(&mut rng, d) / (d as f64).sqrt()
            }
        })
        .collect();
    similarity_at(workers, &points)
}

/// Safety factor applied to the similarity estimate when `σ` is automatic.
pub const SIGMA_SAFETY: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    /// `SIGMA_SAFETY × estimate_similarity`.
    Auto { samples: usize },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistConfig {
    pub sigma: Sigma,
    /// Strong convexity of the global loss.
    pub mu_f: f64,
    /// Order of the master's local tensor solver.
    pub inner_p: usize,
    pub inner_eps: f64,
    pub inner_max_outer: usize,
    /// Finite-difference third derivatives in the local solver.
    pub superfast: bool,
    pub rounds_max: usize,
    pub eps: f64,
    pub seed: u64,
    pub record_timing: bool,
}

impl DistConfig {
    pub fn new(mu_f: f64) -> Self {
        Self {
            sigma: Sigma::Auto { samples: 10 },
            mu_f,
            inner_p: 2,
            inner_eps: 1e-11,
            inner_max_outer: 200,
            superfast: false,
            rounds_max: 500,
            eps: 1e-8,
            seed: 0,
            record_timing: true,
        }
    }
}

/// `κ_ρ = 1 + 2σ/μ_f`.
pub fn kappa_rho(sigma: f64, mu_f: f64) -> f64 {
    1.0 + 2.0 * sigma / mu_f
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistRow {
    pub round: usize,
    pub f_gap: Option<f64>,
    pub grad_norm: f64,
    pub comm_rounds: usize,
    pub inner_iters: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistTrace {
    pub rows: Vec<DistRow>,
    pub sigma: f64,
    pub kappa_rho: f64,
    pub converged: bool,
    pub x_final: Vector,
}

impl DistTrace {
    pub fn outer_rounds(&self) -> usize {
        self.rows.last().map_or(0, |r| r.round)
    }
}

/// Runs the master's Bregman gradient loop until `‖∇f‖ ≤ eps` or `rounds_max`.
/// Every outer round costs two communication rounds: gathering worker
/// gradients and broadcasting the new iterate.
pub fn run_distributed(
    cfg: &DistConfig,
    workers: &[Arc<Logistic>],
    x0: &Vector,
    f_star: Option<f64>,
) -> Result<DistTrace> {
    if workers.is_empty() {
        return Err(OptError::Domain("no workers".into()));
    }
    if !(cfg.mu_f > 0.0) {
        return Err(OptError::Domain(format!("mu_f = {} must be positive", cfg.mu_f)));
    }
    let start = Instant::now();
    let elapsed = || if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let sigma = match cfg.sigma {
        Sigma::Auto { samples } => SIGMA_SAFETY * estimate_similarity(workers, samples, cfg.seed)?,
        Sigma::Fixed(s) if s >= 0.0 && s.is_finite() => s,
        Sigma::Fixed(s) => return Err(OptError::Domain(format!("sigma = {s} must be nonnegative"))),
    };
    let global = GlobalLoss {
        workers: workers.to_vec(),
    };
    let master = Arc::clone(&workers[0]);
    let local = Oracle::new(master.clone() as Arc<dyn Objective>);
    let d = x0.len();
    let l_p = master
        .meta()
        .lipschitz(cfg.inner_p)
        .ok_or_else(|| OptError::Capability(format!("local loss has no L_{} bound", cfg.inner_p)))?;
    let mut inner = SolverConfig::new(cfg.inner_p, default_h(cfg.inner_p, l_p).max(1e-12));
    inner.eps_grad = Some(cfg.inner_eps);
    inner.max_outer = cfg.inner_max_outer;
    inner.superfast = cfg.superfast;
    inner.record_timing = false;
    inner.seed = cfg.seed;

    let mut y = x0.clone();
    let mut grad = global.gradient(&y);
    let mut rows = vec![DistRow {
        round: 0,
        f_gap: f_star.map(|fs| global.value(&y) - fs),
        grad_norm: grad.norm(),
        comm_rounds: 0,
        inner_iters: 0,
        elapsed_s: elapsed(),
    }];
    let mut converged = grad.norm() <= cfg.eps;
    let mut comm = 0;
    for round in 1..=cfg.rounds_max {
        if converged {
            break;
        }
        let v = master.gradient(&y) + &y * sigma - &grad;
        let g = QuadraticComposite::new(Matrix::identity(d, d) * sigma, -v);
        let trace = msn_run(&inner, &local, Some(&g), &y).map_err(|e| {
            OptError::Numerical(format!("local solve failed in round {round}: {e}"))
        })?;
        y = trace.x_final.clone();
        comm += 1;
        grad = global.gradient(&y);
        comm += 1;
        let gn = grad.norm();
        rows.push(DistRow {
            round,
            f_gap: f_star.map(|fs| global.value(&y) - fs),
            grad_norm: gn,
            comm_rounds: comm,
            inner_iters: trace.outer_iterations(),
            elapsed_s: elapsed(),
        });
        converged = gn <= cfg.eps;
    }
    Ok(DistTrace {
        rows,
        sigma,
        kappa_rho: kappa_rho(sigma, cfg.mu_f),
        converged,
        x_final: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(row: [f64; 2]) -> Arc<Logistic> {
        Arc::new(Logistic::new(
            Matrix::from_row_slice(1, 2, &row),
            Vector::from_element(1, 1.0),
            0.0,
        ))
    }

    #[test]
    fn identical_workers_have_zero_similarity() {
        let w = make_workers(4, 50, 3, 0.1, 2, true);
        assert_eq!(estimate_similarity(&w, 5, 0).unwrap(), 0.0);
    }

    #[test]
    fn hand_built_similarity() {
        // Hessians at the origin: ¼[[1,1],[1,1]] and ¼[[1,−1],[−1,1]]; the
        // mean minus the first is ¼[[0,−1],[−1,0]] with eigenvalues ±¼.
        let w = vec![single([1.0, 1.0]), single([1.0, -1.0])];
        let s = estimate_similarity(&w, 1, 0).unwrap();
        assert!((s - 0.25).abs() < 1e-14);
    }

    #[test]
    fn identical_data_converges_in_one_round() {
        let w = make_workers(3, 80, 4, 0.1, 5, true);
        let mut cfg = DistConfig::new(0.1);
        cfg.sigma = Sigma::Fixed(0.0);
        let tr = run_distributed(&cfg, &w, &Vector::zeros(4), None).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.outer_rounds(), 1);
        assert_eq!(tr.kappa_rho, 1.0);
    }

    #[test]
    fn two_comm_rounds_per_iteration() {
        let w = make_workers(4, 100, 3, 0.1, 1, false);
        let mut cfg = DistConfig::new(0.1);
        cfg.eps = 1e-7;
        let tr = run_distributed(&cfg, &w, &Vector::zeros(3), None).unwrap();
        assert!(tr.converged);
        for row in &tr.rows {
            assert_eq!(row.comm_rounds, 2 * row.round);
        }
        assert!(tr.sigma > 0.0);
    }

    #[test]
    fn single_worker_matches_direct_solve() {
        let w = make_workers(1, 120, 3, 0.1, 4, false);
        let mut cfg = DistConfig::new(0.1);
        cfg.sigma = Sigma::Fixed(0.05);
        cfg.eps = 1e-9;
        let tr = run_distributed(&cfg, &w, &Vector::zeros(3), None).unwrap();
        let l2 = w[0].meta().lipschitz(2).unwrap();
        let mut direct = SolverConfig::new(2, default_h(2, l2));
        direct.eps_grad = Some(1e-11);
        let oracle = Oracle::new(w[0].clone() as Arc<dyn Objective>);
        let d = msn_run(&direct, &oracle, None, &Vector::zeros(3)).unwrap();
        assert!((&tr.x_final - &d.x_final).norm() < 1e-7);
    }

    #[test]
    fn rounds_grow_with_sigma() {
        let w = make_workers(6, 150, 4, 0.1, 3, false);
        let rounds: Vec<usize> = [0.01, 0.1, 1.0]
            .iter()
            .map(|&s| {
                let mut cfg = DistConfig::new(0.1);
                cfg.sigma = Sigma::Fixed(s);
                cfg.eps = 1e-6;
                run_distributed(&cfg, &w, &Vector::zeros(4), None).unwrap().outer_rounds()
            })
            .collect();
        assert!(rounds[0] < rounds[1] && rounds[1] < rounds[2], "{rounds:?}");
    }

    #[test]
    fn global_loss_is_worker_mean() {
        let w = make_workers(3, 20, 2, 0.0, 8, false);
        let g = GlobalLoss { workers: w.clone() };
        let x = Vector::from_row_slice(&[0.3, -0.7]);
        let mean = w.iter().map(|wk| wk.value(&x)).sum::<f64>() / 3.0;
        assert!((g.value(&x) - mean).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        let w = make_workers(2, 10, 2, 0.1, 0, false);
        let mut cfg = DistConfig::new(0.0);
        assert!(run_distributed(&cfg, &w, &Vector::zeros(2), None).is_err());
        cfg.mu_f = 0.1;
        cfg.sigma = Sigma::Fixed(-1.0);
        assert!(run_distributed(&cfg, &w, &Vector::zeros(2), None).is_err());
        assert!(run_distributed(&cfg, &[], &Vector::zeros(2), None).is_err());
    }
}
