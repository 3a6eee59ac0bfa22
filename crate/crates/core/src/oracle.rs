//! Uniform access to function values and derivatives up to order three.
//!
//! Third derivatives are only ever exposed through the directional action
//! `h ↦ D³f(x)[h]²`; the full tensor is never formed. The action is either
//! exact (built-in problems) or a finite difference of gradients, which is what
//! lets a third-order method run on a second-order oracle.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{OptError, Result};
use crate::linalg::{seeded_rng, symmetrize, unit_vector, Matrix, Vector};

/// A smooth convex objective with analytic derivatives.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn meta(&self) -> OracleMeta;

    fn value(&self, x: &Vector) -> f64;

    fn gradient(&self, x: &Vector) -> Vector;

    fn hessian(&self, _x: &Vector) -> Result<Matrix> {
        Err(OptError::Capability("hessian not available".into()))
    }

    /// `D³f(x)[h]²`.
    fn third_directional(&self, _x: &Vector, _h: &Vector) -> Result<Vector> {
        Err(OptError::Capability("third derivative not available".into()))
    }
}

/// Capabilities and smoothness constants of an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMeta {
    pub order_available: usize,
    /// `L_0..L_p`; `None` marks an unknown constant.
    pub lipschitz: Vec<Option<f64>>,
    /// `M_1..M_p` for stochastic component oracles.
    pub noise_bounds: Vec<Option<f64>>,
}

impl OracleMeta {
    pub fn new(order_available: usize) -> Self {
        Self {
            order_available,
            lipschitz: vec![None; 4],
            noise_bounds: vec![None; 3],
        }
    }

    /// Lipschitz constant of the `i`-th derivative, if known.
    pub fn lipschitz(&self, i: usize) -> Option<f64> {
        self.lipschitz.get(i).copied().flatten()
    }

    pub fn noise_bound(&self, i: usize) -> Option<f64> {
        i.checked_sub(1)
            .and_then(|j| self.noise_bounds.get(j).copied().flatten())
    }
}

/// Where the derivatives in a bundle came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Exact,
    FiniteDifference,
    Sampled,
}

/// Snapshot of oracle call counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounters {
    pub n_value: u64,
    pub n_grad: u64,
    pub n_hess: u64,
    pub n_d3: u64,
    pub n_component: u64,
}

impl CallCounters {
    /// Componentwise `self >= earlier`.
    pub fn dominates(&self, earlier: &CallCounters) -> bool {
        self.n_value >= earlier.n_value
            && self.n_grad >= earlier.n_grad
            && self.n_hess >= earlier.n_hess
            && self.n_d3 >= earlier.n_d3
            && self.n_component >= earlier.n_component
    }
}

/// Shared, thread-safe call counter owned by one solver run.
#[derive(Debug, Default)]
pub struct Counters {
    value: AtomicU64,
    grad: AtomicU64,
    hess: AtomicU64,
    d3: AtomicU64,
    component: AtomicU64,
}

impl Counters {
    pub fn add_value(&self, n: u64) {
        self.value.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_grad(&self, n: u64) {
        self.grad.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_hess(&self, n: u64) {
        self.hess.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_d3(&self, n: u64) {
        self.d3.fetch_add(n, Ordering::Relaxed);
    }
    pub fn add_component(&self, n: u64) {
        self.component.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CallCounters {
        CallCounters {
            n_value: self.value.load(Ordering::Relaxed),
            n_grad: self.grad.load(Ordering::Relaxed),
            n_hess: self.hess.load(Ordering::Relaxed),
            n_d3: self.d3.load(Ordering::Relaxed),
            n_component: self.component.load(Ordering::Relaxed),
        }
    }
}

/// Directional third-derivative action `h ↦ D³f(x)[h]²` frozen at a point.
#[derive(Clone)]
pub struct ThirdAction(Arc<dyn Fn(&Vector) -> Vector + Send + Sync>);

impl ThirdAction {
    pub fn new(f: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn apply(&self, h: &Vector) -> Vector {
        (self.0)(h)
    }
}

impl fmt::Debug for ThirdAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ThirdAction(..)")
    }
}

/// Value and derivatives of an objective at one point.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub point: Vector,
    pub value: f64,
    pub gradient: Vector,
    pub hessian: Option<Matrix>,
    pub d3_action: Option<ThirdAction>,
    pub provenance: Provenance,
}

impl DerivativeBundle {
    /// Highest derivative order carried by the bundle.
    pub fn order(&self) -> usize {
        match (&self.hessian, &self.d3_action) {
            (Some(_), Some(_)) => 3,
            (Some(_), None) => 2,
            _ => 1,
        }
    }
}

/// How the oracle produces third-derivative actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThirdOrderMode {
    Exact,
    /// Second differences of gradients; `tau: None` selects [`default_fd_step`].
    FiniteDifference { tau: Option<f64> },
}

/// Counting front end over an [`Objective`].
#[derive(Clone)]
pub struct Oracle {
    objective: Arc<dyn Objective>,
    counters: Arc<Counters>,
    third: ThirdOrderMode,
}

impl fmt::Debug for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Oracle")
            .field("dim", &self.objective.dim())
            .field("third", &self.third)
            .field("counters", &self.counters.snapshot())
            .finish()
    }
}

fn check_finite(x: &Vector) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OptError::Domain("non-finite input point".into()))
    }
}

impl Oracle {
    pub fn new(objective: Arc<dyn Objective>) -> Self {
        Self {
            objective,
            counters: Arc::new(Counters::default()),
            third: ThirdOrderMode::Exact,
        }
    }

    /// Oracle that synthesizes `D³f[h]²` from gradient differences.
    pub fn with_third_order(mut self, mode: ThirdOrderMode) -> Self {
        self.third = mode;
        self
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }

    pub fn counters(&self) -> CallCounters {
        self.counters.snapshot()
    }

    pub fn shared_counters(&self) -> Arc<Counters> {
        Arc::clone(&self.counters)
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn meta(&self) -> OracleMeta {
        self.objective.meta()
    }

    /// Highest order this oracle can serve, counting finite-difference third derivatives.
    pub fn order_available(&self) -> usize {
        let native = self.objective.meta().order_available;
        match self.third {
            ThirdOrderMode::FiniteDifference { .. } if native >= 2 => 3,
            _ => native,
        }
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(OptError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        check_finite(x)
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        self.counters.add_value(1);
        Ok(self.objective.value(x))
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        self.counters.add_grad(1);
        Ok(self.objective.gradient(x))
    }

    pub fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.check_dim(x)?;
        let h = self.objective.hessian(x)?;
        self.counters.add_hess(1);
        Ok(symmetrize(&h))
    }

    /// Fills value, gradient and, as requested, the Hessian and third-order action at `x`.
    pub fn eval_bundle(&self, x: &Vector, order: usize) -> Result<DerivativeBundle> {
        if order == 0 || order > self.order_available() {
            return Err(OptError::Capability(format!(
                "order {order} requested, oracle provides {}",
                self.order_available()
            )));
        }
        self.check_dim(x)?;
        let value = self.value(x)?;
        let gradient = self.gradient(x)?;
        let hessian = if order >= 2 {
            Some(self.hessian(x)?)
        } else {
            None
        };
        let mut provenance = Provenance::Exact;
        let d3_action = if order >= 3 {
            let point = x.clone();
            let objective = Arc::clone(&self.objective);
            let counters = Arc::clone(&self.counters);
            Some(match self.third {
                ThirdOrderMode::Exact if self.objective.meta().order_available >= 3 => {
                    ThirdAction::new(move |h| {
                        counters.add_d3(1);
                        objective
                            .third_directional(&point, h)
                            .expect("order checked when the bundle was built")
                    })
                }
                ThirdOrderMode::Exact => {
                    return Err(OptError::Capability("exact third derivative".into()))
                }
                ThirdOrderMode::FiniteDifference { tau } => {
                    provenance = Provenance::FiniteDifference;
                    let g0 = gradient.clone();
                    ThirdAction::new(move |h| {
                        let step = tau.unwrap_or_else(|| default_fd_step(&point, h));
                        let grad = |y: &Vector| {
                            counters.add_grad(1);
                            objective.gradient(y)
                        };
                        fd_third_directional(&grad, &point, h, step, Some(&g0))
                            .expect("finite-difference step is positive")
                    })
                }
            })
        } else {
            None
        };
        Ok(DerivativeBundle {
            point: x.clone(),
            value,
            gradient,
            hessian,
            d3_action,
            provenance,
        })
    }
}

/// Default step for [`fd_third_directional`]:
/// `ε^{1/4}·max(1,‖x‖)/max(1,‖h‖)`, the balance point between the `O(τ²)`
/// truncation error and the `O(ε/τ²)` round-off of a second difference.
pub fn default_fd_step(x: &Vector, h: &Vector) -> f64 {
    f64::EPSILON.powf(0.25) * x.norm().max(1.0) / h.norm().max(1.0)
}

/// `(∇f(x+τh) − 2∇f(x) + ∇f(x−τh))/τ²`, an `O(τ²)` approximation of `D³f(x)[h]²`.
///
/// Uses three gradient calls, or two when `grad_at_x` is supplied. The stencil
/// is evaluated as `(g₊ + g₋) − 2g₀` so that `h ↦ −h` gives a bitwise-equal result.
pub fn fd_third_directional(
    gradient: &dyn Fn(&Vector) -> Vector,
    x: &Vector,
    h: &Vector,
    tau: f64,
    grad_at_x: Option<&Vector>,
) -> Result<Vector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(OptError::Domain(format!("finite-difference step {tau} must be positive")));
    }
    if h.iter().all(|v| *v == 0.0) {
        return Ok(Vector::zeros(x.len()));
    }
    let plus = gradient(&(x + h * tau));
    let minus = gradient(&(x - h * tau));
    let center = match grad_at_x {
        Some(g) => g.clone(),
        None => gradient(x),
    };
    Ok(((plus + minus) - center * 2.0) / (tau * tau))
}

/// Empirical inexactness level of `approx` relative to `exact` for derivative
/// order `order`: the largest `‖(G − ∇ⁱf)[h]^{i−1}‖` over `trials` random unit
/// directions (direction free for `order = 1`). A lower estimate of the true level.
pub fn audit_inexactness(
    approx: &DerivativeBundle,
    exact: &DerivativeBundle,
    order: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(OptError::Domain("audit needs at least one trial".into()));
    }
    if approx.order() < order || exact.order() < order {
        return Err(OptError::Capability(format!(
            "audit of order {order} needs both sources to carry it"
        )));
    }
    if approx.point.len() != exact.point.len() {
        return Err(OptError::Dimension {
            expected: exact.point.len(),
            got: approx.point.len(),
        });
    }
    let d = exact.point.len();
    match order {
        1 => Ok((&approx.gradient - &exact.gradient).norm()),
        2 => {
            let diff = approx.hessian.as_ref().unwrap() - exact.hessian.as_ref().unwrap();
            let mut rng = seeded_rng(seed);
            Ok((0..trials)
                .map(|_| (&diff * unit_vector(&mut rng, d)).norm())
                .fold(0.0, f64::max))
        }
        3 => {
            let (a, e) = (
                approx.d3_action.as_ref().unwrap(),
                exact.d3_action.as_ref().unwrap(),
            );
            let mut rng = seeded_rng(seed);
            Ok((0..trials)
                .map(|_| {
                    let h = unit_vector(&mut rng, d);
                    (a.apply(&h) - e.apply(&h)).norm()
                })
                .fold(0.0, f64::max))
        }
        _ => Err(OptError::Capability(format!("order {order} is not supported"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(t) = t⁴`.
    struct Quartic1d;

    impl Objective for Quartic1d {
        fn dim(&self) -> usize {
            1
        }
        fn meta(&self) -> OracleMeta {
            OracleMeta::new(3)
        }
        fn value(&self, x: &Vector) -> f64 {
            x[0].powi(4)
        }
        fn gradient(&self, x: &Vector) -> Vector {
            Vector::from_element(1, 4.0 * x[0].powi(3))
        }
        fn hessian(&self, x: &Vector) -> Result<Matrix> {
            Ok(Matrix::from_element(1, 1, 12.0 * x[0] * x[0]))
        }
        fn third_directional(&self, x: &Vector, h: &Vector) -> Result<Vector> {
            Ok(Vector::from_element(1, 24.0 * x[0] * h[0] * h[0]))
        }
    }

    struct HalfSquare(usize);

    impl Objective for HalfSquare {
        fn dim(&self) -> usize {
            self.0
        }
        fn meta(&self) -> OracleMeta {
            OracleMeta::new(2)
        }
        fn value(&self, x: &Vector) -> f64 {
            0.5 * x.norm_squared()
        }
        fn gradient(&self, x: &Vector) -> Vector {
            x.clone()
        }
        fn hessian(&self, _x: &Vector) -> Result<Matrix> {
            Ok(Matrix::identity(self.0, self.0))
        }
    }

    #[test]
    fn half_square_bundle() {
        let oracle = Oracle::new(Arc::new(HalfSquare(2)));
        let b = oracle.eval_bundle(&Vector::from_vec(vec![1.0, 2.0]), 2).unwrap();
        assert_eq!(b.value, 2.5);
        assert_eq!(b.gradient, Vector::from_vec(vec![1.0, 2.0]));
        assert_eq!(b.hessian.unwrap(), Matrix::identity(2, 2));
        let c = oracle.counters();
        assert_eq!((c.n_value, c.n_grad, c.n_hess, c.n_d3), (1, 1, 1, 0));
    }

    #[test]
    fn quartic_bundle_through_order_three() {
        let oracle = Oracle::new(Arc::new(Quartic1d));
        let b = oracle.eval_bundle(&Vector::from_element(1, 1.0), 3).unwrap();
        assert_eq!(b.value, 1.0);
        assert_eq!(b.gradient[0], 4.0);
        assert_eq!(b.hessian.as_ref().unwrap()[(0, 0)], 12.0);
        let t = b.d3_action.as_ref().unwrap();
        assert_eq!(t.apply(&Vector::from_element(1, 0.5))[0], 6.0);
        assert_eq!(oracle.counters().n_d3, 1);
    }

    #[test]
    fn unavailable_order_is_a_capability_error() {
        let oracle = Oracle::new(Arc::new(HalfSquare(2)));
        let err = oracle.eval_bundle(&Vector::zeros(2), 3).unwrap_err();
        assert!(matches!(err, OptError::Capability(_)));
    }

    #[test]
    fn non_finite_point_is_a_domain_error() {
        let oracle = Oracle::new(Arc::new(HalfSquare(2)));
        let err = oracle
            .eval_bundle(&Vector::from_vec(vec![f64::NAN, 0.0]), 1)
            .unwrap_err();
        assert!(matches!(err, OptError::Domain(_)));
    }

    #[test]
    fn fd_third_of_quadratic_vanishes() {
        let g = |y: &Vector| y.clone();
        let x = Vector::from_vec(vec![0.3, -1.2, 4.0]);
        let h = Vector::from_vec(vec![1.0, 2.0, -0.5]);
        let t = fd_third_directional(&g, &x, &h, 1e-4, None).unwrap();
        assert!(t.norm() < 1e-8, "{}", t.norm());
    }

    #[test]
    fn fd_third_of_quartic_is_exact_up_to_roundoff() {
        // (4(1+τ)³ + 4(1−τ)³ − 8)/τ² = 24 exactly: odd powers cancel, no τ⁴ term.
        let g = |y: &Vector| Vector::from_element(1, 4.0 * y[0].powi(3));
        let t = fd_third_directional(
            &g,
            &Vector::from_element(1, 1.0),
            &Vector::from_element(1, 1.0),
            1e-3,
            None,
        )
        .unwrap();
        assert!((t[0] - 24.0).abs() < 1e-5, "{}", t[0]);
    }

    #[test]
    fn fd_third_zero_direction_and_bad_step() {
        let g = |y: &Vector| y.map(|v| v.powi(3));
        let x = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(
            fd_third_directional(&g, &x, &Vector::zeros(2), 1e-3, None).unwrap(),
            Vector::zeros(2)
        );
        assert!(matches!(
            fd_third_directional(&g, &x, &x, 0.0, None),
            Err(OptError::Domain(_))
        ));
    }

    #[test]
    fn fd_call_counts() {
        let calls = std::cell::Cell::new(0);
        let g = |y: &Vector| {
            calls.set(calls.get() + 1);
            y.clone()
        };
        let x = Vector::from_vec(vec![1.0]);
        fd_third_directional(&g, &x, &x, 1e-3, None).unwrap();
        assert_eq!(calls.get(), 3);
        fd_third_directional(&g, &x, &x, 1e-3, Some(&x)).unwrap();
        assert_eq!(calls.get(), 5);
    }

    #[test]
    fn finite_difference_mode_tags_provenance() {
        let oracle = Oracle::new(Arc::new(Quartic1d))
            .with_third_order(ThirdOrderMode::FiniteDifference { tau: Some(1e-3) });
        let b = oracle.eval_bundle(&Vector::from_element(1, 1.0), 3).unwrap();
        assert_eq!(b.provenance, Provenance::FiniteDifference);
        let t = b.d3_action.unwrap().apply(&Vector::from_element(1, 1.0));
        assert!((t[0] - 24.0).abs() < 1e-5);
        // two extra gradients, the center one is cached
        assert_eq!(oracle.counters().n_grad, 3);
        assert_eq!(oracle.counters().n_d3, 0);
    }

    #[test]
    fn audit_identical_and_offset_sources() {
        let oracle = Oracle::new(Arc::new(HalfSquare(3)));
        let x = Vector::from_vec(vec![1.0, -1.0, 2.0]);
        let exact = oracle.eval_bundle(&x, 2).unwrap();
        assert_eq!(audit_inexactness(&exact, &exact, 2, 10, 1).unwrap(), 0.0);
        let mut shifted = exact.clone();
        shifted.gradient[0] += 0.25;
        assert_eq!(audit_inexactness(&shifted, &exact, 1, 1, 1).unwrap(), 0.25);
        assert!(matches!(
            audit_inexactness(&exact, &exact, 3, 1, 1),
            Err(OptError::Capability(_))
        ));
    }
}
