//! Mini-batch derivatives for finite sums, batch-size planning and the
//! stochastic tensor method.

use std::sync::Arc;

use rand::Rng;

use crate::driver::{tensor_loop, SolverConfig, Trace};
use crate::error::{OptError, Result};
use crate::linalg::{seeded_rng, symmetrize, Vector};
use crate::oracle::{audit_inexactness, Counters, DerivativeBundle, Objective, Oracle, Provenance, ThirdAction};
use crate::problems::{mean_matrix, mean_scalar, mean_vector, FiniteSum};

/// Draws `n` indices uniformly with replacement, or all `m` indices in order when `n ≥ m`.
fn draw<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    if n >= m {
        (0..m).collect()
    } else {
        (0..n).map(|_| rng.random_range(0..m)).collect()
    }
}

/// Mini-batch derivative bundle through order `order`, with a fresh sample
/// set for each order. `batch[i−1]` is the size for order `i`; the value is
/// averaged over the gradient sample.
pub fn sample_derivatives<R: Rng + ?Sized>(
    sum: &Arc<dyn FiniteSum>,
    counters: &Arc<Counters>,
    x: &Vector,
    batch: &[usize],
    order: usize,
    rng: &mut R,
) -> Result<DerivativeBundle> {
    if !(1..=3).contains(&order) {
        return Err(OptError::Capability(format!("order {order} is not supported")));
    }
    if batch.len() < order {
        return Err(OptError::Domain(format!("{} batch sizes for order {order}", batch.len())));
    }
    if batch[..order].contains(&0) {
        return Err(OptError::Domain("batch size 0".into()));
    }
    if x.len() != sum.dim() {
        return Err(OptError::Dimension {
            expected: sum.dim(),
            got: x.len(),
        });
    }
    let m = sum.n_components();
    let d = x.len();
    let s1 = draw(batch[0], m, rng);
    counters.add_component(s1.len() as u64);
    let value = mean_scalar(&s1, |j| sum.component_value(j, x));
    let gradient = mean_vector(d, &s1, |j| sum.component_gradient(j, x));
    let hessian = if order >= 2 {
        let s2 = draw(batch[1], m, rng);
        counters.add_component(s2.len() as u64);
        Some(symmetrize(&mean_matrix(d, &s2, |j| sum.component_hessian(j, x))))
    } else {
        None
    };
    let d3_action = if order >= 3 {
        let s3 = draw(batch[2], m, rng);
        let sum = Arc::clone(sum);
        let counters = Arc::clone(counters);
        let point = x.clone();
        Some(ThirdAction::new(move |h| {
            counters.add_component(s3.len() as u64);
            mean_vector(point.len(), &s3, |j| sum.component_third(j, &point, h))
        }))
    } else {
        None
    };
    Ok(DerivativeBundle {
        point: x.clone(),
        value,
        gradient,
        hessian,
        d3_action,
        provenance: Provenance::Sampled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Batch sizes for the plain stochastic tensor method.
    Plain,
    /// Batch sizes for the accelerated stochastic tensor method.
    Accelerated,
}

/// Inputs of [`plan_batches`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanInputs {
    pub p: usize,
    pub schedule: Schedule,
    /// `M_1..M_p`.
    pub m: Vec<f64>,
    /// `L_0..L_p`.
    pub l: Vec<f64>,
    pub h: f64,
    pub eps: f64,
    /// `D` for the plain schedule, `R` (and `R̄`) for the accelerated one.
    pub radius: f64,
    /// Failure probability `δ`.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub inputs: PlanInputs,
    /// `n_1..n_p`, rounded up and at least 1.
    pub n: Vec<usize>,
    /// The same sizes before rounding.
    pub raw: Vec<f64>,
}

/// Batch sizes with every hidden constant set to one.
///
/// Plain: `n_i = (M_i + L_{i−1})²/(L_p + pH)^{2(i−1)/p} · (ε/D)^{−2(p−i+1)/p} · ln(1/δ)`.
///
/// Accelerated: `n_1 = (L_0 + M_1)² (ε/R)^{−2} ln(1/δ)` and, for `i ≥ 2`,
/// `n_i = (L_{i−1} + M_i)²/(L_p + pH)^{2i/(p+1)} · (ε/R)^{−2(p−i+1)/(p+1)} · ln(1/δ)`.
pub fn plan_batches(inputs: PlanInputs) -> Result<BatchPlan> {
    let p = inputs.p;
    if !(1..=3).contains(&p) {
        return Err(OptError::Domain(format!("order p = {p} outside 1..=3")));
    }
    if inputs.m.len() != p || inputs.l.len() != p + 1 {
        return Err(OptError::Domain(format!(
            "need {p} noise bounds and {} Lipschitz constants, got {} and {}",
            p + 1,
            inputs.m.len(),
            inputs.l.len()
        )));
    }
    let nonneg = inputs.m.iter().chain(&inputs.l).all(|v| *v >= 0.0 && v.is_finite());
    if !nonneg || !(inputs.h > 0.0) || !(inputs.eps > 0.0) || !(inputs.radius > 0.0) {
        return Err(OptError::Domain("constants must be nonnegative; H, eps and radius positive".into()));
    }
    if !(inputs.confidence > 0.0 && inputs.confidence < 1.0) {
        return Err(OptError::Domain(format!("confidence {} outside (0, 1)", inputs.confidence)));
    }
    let pf = p as f64;
    let log = (1.0 / inputs.confidence).ln();
    let ratio = inputs.eps / inputs.radius;
    let big = inputs.l[p] + pf * inputs.h;
    let raw: Vec<f64> = (1..=p)
        .map(|i| {
            let fi = i as f64;
            let c = (inputs.m[i - 1] + inputs.l[i - 1]).powi(2);
            match inputs.schedule {
                Schedule::Plain => {
                    c / big.powf(2.0 * (fi - 1.0) / pf) * ratio.powf(-2.0 * (pf - fi + 1.0) / pf) * log
                }
                Schedule::Accelerated if i == 1 => c * ratio.powi(-2) * log,
                Schedule::Accelerated => {
                    c / big.powf(2.0 * fi / (pf + 1.0)) * ratio.powf(-2.0 * (pf - fi + 1.0) / (pf + 1.0)) * log
                }
            }
        })
        .collect();
    let n = raw.iter().map(|v| (v.ceil() as usize).max(1)).collect();
    Ok(BatchPlan { inputs, n, raw })
}

/// `δ_i = M_i(1 + √(2 ln(1/δ)))/√n_i`, the bounded-differences deviation of a
/// mean of `n_i` terms each within `M_i` of the truth; zero for full batches.
pub fn bound_deltas(noise: &[f64], batch: &[usize], m: usize, confidence: f64) -> Vec<f64> {
    let t = 1.0 + (2.0 * (1.0 / confidence).ln()).sqrt();
    noise
        .iter()
        .zip(batch)
        .map(|(&mi, &n)| if n >= m { 0.0 } else { mi * t / (n as f64).sqrt() })
        .collect()
}

/// Inexactness levels of mini-batch derivatives at `x`: the largest audited
/// error over `draws` independent samples, scaled by `safety`.
pub fn audited_deltas(
    sum: &Arc<dyn FiniteSum>,
    x: &Vector,
    batch: &[usize],
    p: usize,
    draws: usize,
    safety: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let exact = Oracle::new(Arc::clone(sum) as Arc<dyn Objective>).eval_bundle(x, p)?;
    let counters = Arc::new(Counters::default());
    let mut rng = seeded_rng(seed);
    let mut out = vec![0.0_f64; p];
    for draw_idx in 0..draws {
        let approx = sample_derivatives(sum, &counters, x, batch, p, &mut rng)?;
        for (i, slot) in out.iter_mut().enumerate() {
            let e = audit_inexactness(&approx, &exact, i + 1, 50, seed.wrapping_add(draw_idx as u64))?;
            *slot = (*slot).max(e);
        }
    }
    Ok(out.into_iter().map(|v| v * safety).collect())
}

/// Plain tensor method on mini-batch models: each iteration draws fresh
/// samples with `batch`, builds the inexact model with `deltas` and steps to
/// its minimizer. Objective values in the trace are exact; `n_comp` counts
/// sampled component evaluations. The sampler is seeded with `config.seed`.
pub fn stochastic_tensor_run(
    config: &SolverConfig,
    batch: &[usize],
    deltas: &[f64],
    sum: &Arc<dyn FiniteSum>,
    x0: &Vector,
) -> Result<Trace> {
    let oracle = Oracle::new(Arc::clone(sum) as Arc<dyn Objective>);
    let counters = oracle.shared_counters();
    let mut rng = seeded_rng(config.seed);
    let full = batch.iter().take(config.p).all(|&n| n >= sum.n_components());
    let mut source = |x: &Vector, p: usize| sample_derivatives(sum, &counters, x, batch, p, &mut rng);
    tensor_loop(config, deltas, &oracle, None, x0, &mut source, full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::basic_tensor_run;
    use crate::linalg::Matrix;
    use crate::problems::Logistic;

    fn sum(m: usize, seed: u64) -> Arc<dyn FiniteSum> {
        Arc::new(Logistic::synthetic(4, m, 0.05, seed))
    }

    fn plain(eps: f64, p: usize) -> PlanInputs {
        PlanInputs {
            p,
            schedule: Schedule::Plain,
            m: vec![1.0; p],
            l: vec![1.0; p + 1],
            h: 3.0,
            eps,
            radius: 1.0,
            confidence: 0.1,
        }
    }

    #[test]
    fn worked_plan() {
        let plan = plan_batches(plain(0.1, 2)).unwrap();
        assert_eq!(plan.n, vec![922, 14]);
    }

    #[test]
    fn last_order_exponent() {
        let a = plan_batches(plain(0.1, 2)).unwrap().raw[1];
        let b = plan_batches(plain(0.01, 2)).unwrap().raw[1];
        assert!((b / a - 10.0).abs() < 1e-12);
        let a = plan_batches(plain(1.0, 2)).unwrap().raw[1];
        let b = plan_batches(plain(0.1, 2)).unwrap().raw[1];
        assert!((b / a - 10.0).abs() < 1e-12);
    }

    #[test]
    fn unit_log_factor() {
        let mut inputs = plain(1.0, 1);
        inputs.confidence = (-1.0f64).exp();
        let plan = plan_batches(inputs).unwrap();
        assert!((plan.raw[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn plan_monotone_in_eps_and_order() {
        for p in 1..=3 {
            let mut prev = vec![0usize; p];
            for eps in [0.5, 0.1, 0.05, 0.01] {
                let plan = plan_batches(plain(eps, p)).unwrap();
                assert!(plan.n.iter().zip(&prev).all(|(a, b)| a >= b));
                assert!(plan.n.windows(2).all(|w| w[0] >= w[1]));
                prev = plan.n;
            }
        }
    }

    #[test]
    fn accelerated_first_size_ignores_h() {
        let mut inputs = plain(0.1, 2);
        inputs.schedule = Schedule::Accelerated;
        let a = plan_batches(inputs.clone()).unwrap();
        inputs.h = 300.0;
        let b = plan_batches(inputs).unwrap();
        assert_eq!(a.raw[0], b.raw[0]);
        assert!(b.raw[1] < a.raw[1]);
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        let mut bad = plain(0.1, 2);
        bad.confidence = 1.0;
        assert!(plan_batches(bad).is_err());
        let mut bad = plain(0.1, 2);
        bad.m = vec![1.0];
        assert!(plan_batches(bad).is_err());
        assert!(plan_batches(plain(-1.0, 2)).is_err());
    }

    #[test]
    fn identical_components_are_exact() {
        let a = Matrix::from_fn(12, 3, |_, j| 0.3 * j as f64 - 0.2);
        let y = Vector::from_element(12, 1.0);
        let s: Arc<dyn FiniteSum> = Arc::new(Logistic::new(a, y, 0.0));
        let x = Vector::from_row_slice(&[0.5, -1.0, 2.0]);
        let exact = Oracle::new(Arc::clone(&s) as Arc<dyn Objective>).eval_bundle(&x, 3).unwrap();
        let c = Arc::new(Counters::default());
        let b = sample_derivatives(&s, &c, &x, &[2, 3, 1], 3, &mut seeded_rng(1)).unwrap();
        assert!((b.gradient - &exact.gradient).norm() < 1e-14);
        assert!((b.hessian.unwrap() - exact.hessian.unwrap()).norm() < 1e-14);
        let h = Vector::from_row_slice(&[1.0, 0.0, -1.0]);
        let t = b.d3_action.unwrap().apply(&h);
        assert!((t - exact.d3_action.unwrap().apply(&h)).norm() < 1e-14);
    }

    #[test]
    fn full_batch_is_exact() {
        let s = sum(40, 2);
        let x = Vector::from_row_slice(&[0.1, 0.2, -0.3, 0.4]);
        let exact = Oracle::new(Arc::clone(&s) as Arc<dyn Objective>).eval_bundle(&x, 2).unwrap();
        let c = Arc::new(Counters::default());
        let b = sample_derivatives(&s, &c, &x, &[40, 40], 2, &mut seeded_rng(0)).unwrap();
        assert!((b.gradient - exact.gradient).norm() <= 1e-12);
        assert!((b.hessian.unwrap() - exact.hessian.unwrap()).norm() <= 1e-12);
        assert_eq!(b.provenance, Provenance::Sampled);
        assert_eq!(c.snapshot().n_component, 80);
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = sum(50, 3);
        let x = Vector::from_row_slice(&[0.1, 0.2, -0.3, 0.4]);
        let c = Arc::new(Counters::default());
        let a = sample_derivatives(&s, &c, &x, &[5, 5], 2, &mut seeded_rng(9)).unwrap();
        let b = sample_derivatives(&s, &c, &x, &[5, 5], 2, &mut seeded_rng(9)).unwrap();
        assert_eq!(a.gradient, b.gradient);
        assert_eq!(a.hessian, b.hessian);
        assert!(sample_derivatives(&s, &c, &x, &[0, 5], 2, &mut seeded_rng(9)).is_err());
        assert!(sample_derivatives(&s, &c, &x, &[5], 2, &mut seeded_rng(9)).is_err());
    }

    #[test]
    fn sampled_gradient_is_unbiased() {
        let s = sum(60, 4);
        let x = Vector::from_row_slice(&[0.3, -0.1, 0.2, 0.5]);
        let exact = s.gradient(&x);
        let c = Arc::new(Counters::default());
        let mut rng = seeded_rng(17);
        let draws = 10_000;
        let samples: Vec<Vector> = (0..draws)
            .map(|_| sample_derivatives(&s, &c, &x, &[1], 1, &mut rng).unwrap().gradient)
            .collect();
        for i in 0..4 {
            let mean = samples.iter().map(|g| g[i]).sum::<f64>() / draws as f64;
            let var = samples.iter().map(|g| (g[i] - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let se = (var / draws as f64).sqrt();
            assert!((mean - exact[i]).abs() <= 3.0 * se, "coordinate {i}");
        }
    }

    #[test]
    fn audited_error_shrinks_with_batch() {
        let s = sum(10, 5);
        let x = Vector::from_row_slice(&[0.4, 0.1, -0.6, 0.2]);
        let median = |batch: usize| {
            let mut v: Vec<f64> = (0..20)
                .map(|seed| audited_deltas(&s, &x, &[batch, batch], 2, 1, 1.0, seed).unwrap()[1])
                .collect();
            v.sort_by(f64::total_cmp);
            (v[9] + v[10]) / 2.0
        };
        let (small, mid, full) = (median(2), median(5), median(10));
        assert!(small >= mid && mid >= full);
        assert!(mid > 0.0);
        assert_eq!(full, 0.0);
    }

    #[test]
    fn bound_deltas_vanish_for_full_batches() {
        let d = bound_deltas(&[1.0, 2.0], &[100, 4], 100, 0.1);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - (1.0 + (2.0 * 10f64.ln()).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn full_batch_reduction_is_bitwise() {
        let s = sum(30, 6);
        let x0 = Vector::from_element(4, 0.5);
        let mut cfg = SolverConfig::new(2, 1.0);
        cfg.max_outer = 15;
        cfg.record_timing = false;
        let a = stochastic_tensor_run(&cfg, &[30, 30], &[0.0, 0.0], &s, &x0).unwrap();
        let oracle = Oracle::new(Arc::clone(&s) as Arc<dyn Objective>);
        let b = basic_tensor_run(&cfg, &[0.0, 0.0], &oracle, None, &x0).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.f_value.to_bits(), rb.f_value.to_bits());
            assert_eq!(ra.grad_norm.to_bits(), rb.grad_norm.to_bits());
            assert_eq!(ra.step_norm.to_bits(), rb.step_norm.to_bits());
        }
        assert_eq!(a.x_final, b.x_final);
    }
}
