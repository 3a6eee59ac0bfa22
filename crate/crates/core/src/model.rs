//! Regularized Taylor models of order `p ≤ 3`.
//!
//! With `s = y − x` the exact model is
//!
//! ```text
//! Ω̃(s) = f(x) + ⟨g₀, s⟩ + ½⟨A s, s⟩ + ⅙ D³f(x)[s]³ + H/(p+1)! ‖s‖^{p+1}
//! ```
//!
//! and the inexact model built from approximate derivatives with error levels
//! `δ_i` is
//!
//! ```text
//! Φ̃(s) = Φ_p(s) + δ₁‖s‖ + Σ_{i≥2} δ_i/(i (i−2)!) ‖s‖^i + H/((p+1)(p−1)!) ‖s‖^{p+1}.
//! ```
//!
//! A twice-differentiable quadratic composite term is folded into `g₀` and `A`.

use crate::error::{OptError, Result};
use crate::linalg::{ball_vector, seeded_rng, sym_spectral_norm, unit_vector, Matrix, Vector};
use crate::oracle::{DerivativeBundle, Provenance, ThirdAction};

/// `g(y) = ½ yᵀQy + bᵀy`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticComposite {
    pub q: Matrix,
    pub b: Vector,
}

impl QuadraticComposite {
    pub fn new(q: Matrix, b: Vector) -> Self {
        Self { q, b }
    }

    /// `μ/2 ‖y‖²`.
    pub fn ridge(mu: f64, d: usize) -> Self {
        Self {
            q: Matrix::identity(d, d) * mu,
            b: Vector::zeros(d),
        }
    }

    pub fn value(&self, y: &Vector) -> f64 {
        0.5 * y.dot(&(&self.q * y)) + self.b.dot(y)
    }

    pub fn gradient(&self, y: &Vector) -> Vector {
        &self.q * y + &self.b
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Coefficient of `δ_i ‖s‖^i` in the inexact model. For `i = 1` the formula
/// `1/(i (i−2)!)` is undefined and the coefficient is taken to be 1.
pub fn delta_coefficient(i: usize) -> f64 {
    match i {
        0 => 0.0,
        1 => 1.0,
        _ => 1.0 / (i as f64 * factorial(i - 2)),
    }
}

/// Frozen Taylor data defining a regularized model around `center`.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub center: Vector,
    pub p: usize,
    pub g0: Vector,
    /// `∇²f(x)` plus the composite Hessian. For `p = 1` only the composite part.
    pub curvature: Option<Matrix>,
    pub third: Option<ThirdAction>,
    pub h: f64,
    pub deltas: Vec<f64>,
    pub f_center: f64,
    pub provenance: Provenance,
}

/// Builds the model of order `p` from a derivative bundle.
pub fn build_model(
    bundle: &DerivativeBundle,
    p: usize,
    h: f64,
    deltas: &[f64],
    composite: Option<&QuadraticComposite>,
) -> Result<ModelState> {
    if !(1..=3).contains(&p) {
        return Err(OptError::Domain(format!("model order {p} outside 1..=3")));
    }
    if bundle.order() < p {
        return Err(OptError::Capability(format!(
            "model of order {p} needs derivatives through order {p}, bundle has {}",
            bundle.order()
        )));
    }
    if !(h >= 0.0) || !h.is_finite() {
        return Err(OptError::Domain(format!("regularization H = {h} must be nonnegative")));
    }
    let mut ds = vec![0.0; p];
    if !deltas.is_empty() {
        if deltas.len() != p {
            return Err(OptError::Domain(format!(
                "expected {p} inexactness levels, got {}",
                deltas.len()
            )));
        }
        for (slot, &d) in ds.iter_mut().zip(deltas) {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(OptError::Domain(format!("inexactness level {d} must be nonnegative")));
            }
            *slot = d;
        }
    }

    let mut g0 = bundle.gradient.clone();
    let mut f_center = bundle.value;
    let mut curvature = if p >= 2 { bundle.hessian.clone() } else { None };
    if let Some(g) = composite {
        g0 += g.gradient(&bundle.point);
        f_center += g.value(&bundle.point);
        curvature = Some(match curvature {
            Some(a) => a + &g.q,
            None => g.q.clone(),
        });
    }
    Ok(ModelState {
        center: bundle.point.clone(),
        p,
        g0,
        curvature,
        third: if p == 3 { bundle.d3_action.clone() } else { None },
        h,
        deltas: ds,
        f_center,
        provenance: bundle.provenance,
    })
}

impl ModelState {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// All inexactness levels are zero.
    pub fn is_exact(&self) -> bool {
        self.deltas.iter().all(|&d| d == 0.0)
    }

    pub fn delta(&self, i: usize) -> f64 {
        i.checked_sub(1)
            .and_then(|j| self.deltas.get(j).copied())
            .unwrap_or(0.0)
    }

    /// Coefficient `c` of the regularizer `c‖s‖^{p+1}`.
    pub fn regularizer_coefficient(&self) -> f64 {
        let p = self.p;
        if self.is_exact() {
            self.h / factorial(p + 1)
        } else {
            self.h / ((p + 1) as f64 * factorial(p - 1))
        }
    }

    fn check(&self, s: &Vector) -> Result<()> {
        if s.len() != self.dim() {
            return Err(OptError::Dimension {
                expected: self.dim(),
                got: s.len(),
            });
        }
        Ok(())
    }

    /// `D³f(x)[s]²` for `p = 3`; one action call.
    pub fn third_term(&self, s: &Vector) -> Option<Vector> {
        self.third.as_ref().map(|t| t.apply(s))
    }

    /// Model value given a precomputed `D³f(x)[s]²`.
    pub(crate) fn value_with(&self, s: &Vector, t3: Option<&Vector>) -> f64 {
        let r = s.norm();
        let mut v = self.f_center + self.g0.dot(s);
        if let Some(a) = &self.curvature {
            v += 0.5 * s.dot(&(a * s));
        }
        if let Some(t) = t3 {
            v += s.dot(t) / 6.0;
        }
        for i in 1..=self.p {
            let d = self.delta(i);
            if d > 0.0 {
                v += d * delta_coefficient(i) * r.powi(i as i32);
            }
        }
        v + self.regularizer_coefficient() * r.powi(self.p as i32 + 1)
    }

    /// Gradient of every term except `δ₁‖s‖`.
    pub(crate) fn smooth_gradient_with(&self, s: &Vector, t3: Option<&Vector>) -> Vector {
        let r = s.norm();
        let mut g = self.g0.clone();
        if let Some(a) = &self.curvature {
            g += a * s;
        }
        if let Some(t) = t3 {
            g += t * 0.5;
        }
        let mut radial = 0.0;
        for i in 2..=self.p {
            let d = self.delta(i);
            if d > 0.0 {
                radial += d * delta_coefficient(i) * i as f64 * r.powi(i as i32 - 2);
            }
        }
        radial += self.regularizer_coefficient() * (self.p + 1) as f64 * r.powi(self.p as i32 - 1);
        g + s * radial
    }

    pub(crate) fn gradient_with(&self, s: &Vector, t3: Option<&Vector>) -> Result<Vector> {
        let d1 = self.delta(1);
        let mut g = self.smooth_gradient_with(s, t3);
        if d1 > 0.0 {
            let r = s.norm();
            if r == 0.0 {
                return Err(OptError::NonsmoothPoint);
            }
            g += s * (d1 / r);
        }
        Ok(g)
    }

    /// Norm of the minimum-norm subgradient; equals `‖∇model(s)‖` wherever the model is smooth.
    pub(crate) fn stationarity_with(&self, s: &Vector, t3: Option<&Vector>) -> f64 {
        let d1 = self.delta(1);
        if d1 > 0.0 && s.norm() == 0.0 {
            (self.smooth_gradient_with(s, t3).norm() - d1).max(0.0)
        } else {
            self.gradient_with(s, t3)
                .map(|g| g.norm())
                .unwrap_or(f64::INFINITY)
        }
    }

    /// Model value at `center + s`.
    pub fn value(&self, s: &Vector) -> Result<f64> {
        self.check(s)?;
        let t3 = self.third_term(s);
        Ok(self.value_with(s, t3.as_ref()))
    }

    /// Model gradient at `center + s`.
    pub fn gradient(&self, s: &Vector) -> Result<Vector> {
        self.check(s)?;
        let t3 = self.third_term(s);
        self.gradient_with(s, t3.as_ref())
    }

    /// Value and gradient sharing one third-derivative action.
    pub fn value_and_gradient(&self, s: &Vector) -> Result<(f64, Vector)> {
        self.check(s)?;
        let t3 = self.third_term(s);
        Ok((self.value_with(s, t3.as_ref()), self.gradient_with(s, t3.as_ref())?))
    }

    /// `hᵀ∇²model(s)h` from central differences of the gradient, Richardson-extrapolated.
    pub fn curvature_along(&self, s: &Vector, h: &Vector) -> Result<f64> {
        let eps = 1e-3 * s.norm().max(1.0);
        let q = |e: f64| -> Result<f64> {
            let gp = self.gradient(&(s + h * e))?;
            let gm = self.gradient(&(s - h * e))?;
            Ok(h.dot(&(gp - gm)) / (2.0 * e))
        };
        let coarse = q(eps)?;
        let fine = q(eps / 2.0)?;
        Ok((4.0 * fine - coarse) / 3.0)
    }
}

/// Outcome of [`convexity_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub samples: usize,
    /// Minimum of `hᵀ∇²model(s)h` over the probed pairs, `‖h‖ = 1`.
    pub min_quadratic_form: f64,
    /// Absolute tolerance the minimum is compared against.
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative tolerance of [`convexity_probe`].
pub const CONVEXITY_TOL: f64 = 1e-9;

/// Samples the model Hessian along random directions at random points of the
/// ball `‖s‖ ≤ radius`.
pub fn convexity_probe(state: &ModelState, samples: usize, radius: f64, seed: u64) -> ConvexityReport {
    let d = state.dim();
    let mut rng = seeded_rng(seed);
    let mut min_q = f64::INFINITY;
    let mut scale = 1.0_f64;
    if let Some(a) = &state.curvature {
        scale = scale.max(sym_spectral_norm(a));
    }
    for _ in 0..samples.max(1) {
        let mut s = ball_vector(&mut rng, d, radius);
        if state.delta(1) > 0.0 && s.norm() < 1e-6 {
            s = unit_vector(&mut rng, d) * radius.max(1e-6);
        }
        let h = unit_vector(&mut rng, d);
        let q = state.curvature_along(&s, &h).unwrap_or(f64::NEG_INFINITY);
        let reg = state.regularizer_coefficient()
            * (state.p * (state.p + 1)) as f64
            * s.norm().powi(state.p as i32 - 1);
        scale = scale.max(reg);
        min_q = min_q.min(q);
    }
    let tolerance = CONVEXITY_TOL * scale;
    ConvexityReport {
        samples: samples.max(1),
        min_quadratic_form: min_q,
        tolerance,
        passed: min_q >= -tolerance,
    }
}
