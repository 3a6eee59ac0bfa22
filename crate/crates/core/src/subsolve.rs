//! Minimization of the regularized model.
//!
//! Every solver reduces to the radial problem
//! `(A + c(‖s‖)·I) s = −g`, solved in the eigenbasis of `A` by a 1-D root
//! search on `r = ‖s‖` ([`radial_root_solve`]). For `p = 1` this is a single
//! linear solve, for `p = 2` the full cubic model, and for `p = 3` the inner
//! step of a Bregman-distance gradient method whose reference function
//! `ρ(s) = ½⟨As, s⟩ + L/4‖s‖⁴` makes the quartic model relatively smooth and
//! relatively strongly convex with condition number `(1+√2)²`.

use crate::error::{OptError, Result};
use crate::linalg::{Spectral, Vector};
use crate::model::ModelState;

/// Eigenvalues below `-PSD_TOL·max(1, λ_max)` are treated as genuine negative curvature.
const PSD_TOL: f64 = 1e-10;

/// Relative smoothness constants of the quartic model with respect to `ρ` when `H = 6L₃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdgmConstants {
    pub l_rho: f64,
    pub mu_rho: f64,
    pub condition: f64,
}

impl BdgmConstants {
    pub fn new() -> Self {
        let l_rho = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
        let mu_rho = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        Self {
            l_rho,
            mu_rho,
            condition: l_rho / mu_rho,
        }
    }
}

impl Default for BdgmConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// `c(r) = inverse/r + constant + linear·r + quadratic·r²`, all coefficients nonnegative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RadialCoefficient {
    pub inverse: f64,
    pub constant: f64,
    pub linear: f64,
    pub quadratic: f64,
}

impl RadialCoefficient {
    pub fn eval(&self, r: f64) -> f64 {
        let inv = if self.inverse > 0.0 { self.inverse / r } else { 0.0 };
        inv + self.constant + r * (self.linear + r * self.quadratic)
    }

    /// `r·c(r)`, finite at `r = 0`.
    fn scaled(&self, r: f64) -> f64 {
        self.inverse + r * (self.constant + r * (self.linear + r * self.quadratic))
    }

    fn scaled_derivative(&self, r: f64) -> f64 {
        self.constant + r * (2.0 * self.linear + 3.0 * r * self.quadratic)
    }

    fn is_constant(&self) -> bool {
        self.inverse == 0.0 && self.linear == 0.0 && self.quadratic == 0.0
    }

    fn validate(&self) -> Result<()> {
        let all = [self.inverse, self.constant, self.linear, self.quadratic];
        if all.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(OptError::Domain(format!("radial coefficient {self:?} must be nonnegative")));
        }
        if self.scaled(1.0) == 0.0 {
            return Err(OptError::Numerical("radial coefficient is identically zero".into()));
        }
        Ok(())
    }
}

/// Solution of the radial problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSolution {
    pub s: Vector,
    pub r: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `(A + c(r)·I) s = −g` subject to `‖s‖ = r`.
///
/// `spectral = None` stands for `A = 0`. The root is bracketed in
/// `[0, r_hi]` with `r_hi` doubled until `‖s(r_hi)‖ ≤ r_hi`, then located by
/// Newton steps on `r/‖s(r)‖ − 1` safeguarded by bisection. With a `1/r` term
/// in `c`, `s = 0` whenever `‖g‖ ≤ inverse`.
pub fn radial_root_solve(
    spectral: Option<&Spectral>,
    g: &Vector,
    coeff: &RadialCoefficient,
    tol: f64,
    max_iter: usize,
) -> Result<RadialSolution> {
    coeff.validate()?;
    let d = g.len();
    let zero = |iterations| RadialSolution {
        s: Vector::zeros(d),
        r: 0.0,
        iterations,
        converged: true,
    };
    let gnorm = g.norm();
    if gnorm == 0.0 || gnorm <= coeff.inverse {
        return Ok(zero(0));
    }

    // Coordinates in the eigenbasis; the isotropic case has a single zero eigenvalue.
    let (lambdas, gt): (Vec<f64>, Vec<f64>) = match spectral {
        Some(sp) => (
            sp.values.iter().copied().collect(),
            sp.to_eigenbasis(g).iter().copied().collect(),
        ),
        None => (vec![0.0], vec![gnorm]),
    };

    let build = |r: f64| -> Vector {
        let m = coeff.scaled(r);
        match spectral {
            Some(sp) => {
                let st = Vector::from_iterator(
                    d,
                    lambdas.iter().zip(&gt).map(|(l, gi)| -gi * r / (r * l + m)),
                );
                sp.from_eigenbasis(&st)
            }
            None => g * (-r / m),
        }
    };

    if coeff.is_constant() {
        // no dependence on r: a single linear solve
        let c = coeff.constant;
        let s = match spectral {
            Some(sp) => {
                let st = Vector::from_iterator(d, lambdas.iter().zip(&gt).map(|(l, gi)| -gi / (l + c)));
                sp.from_eigenbasis(&st)
            }
            None => g * (-1.0 / c),
        };
        let r = s.norm();
        return Ok(RadialSolution {
            s,
            r,
            iterations: 0,
            converged: true,
        });
    }

    // ratio(r) = ‖s(r)‖/r, strictly decreasing in r.
    let ratio_and_slope = |r: f64| -> (f64, f64) {
        let m = coeff.scaled(r);
        let dm = coeff.scaled_derivative(r);
        let mut sq = 0.0;
        let mut dsq = 0.0;
        for (l, gi) in lambdas.iter().zip(&gt) {
            let den = r * l + m;
            let t = gi * gi / (den * den);
            sq += t;
            dsq -= 2.0 * t * (l + dm) / den;
        }
        let ratio = sq.sqrt();
        (ratio, dsq / (2.0 * ratio))
    };

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut doublings = 0;
    while ratio_and_slope(hi).0 > 1.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 64 {
            return Err(OptError::Numerical(format!(
                "radial bracket failed after 64 doublings (last bracket [{lo:e}, {hi:e}])"
            )));
        }
    }

    let mut r = hi;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let (ratio, slope) = ratio_and_slope(r);
        if (r * (ratio - 1.0)).abs() <= tol * r.max(1.0) {
            converged = true;
            break;
        }
        if ratio > 1.0 {
            lo = r;
        } else {
            hi = r;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            converged = true;
            break;
        }
        // w(r) = 1/ratio − 1, w'(r) = −ratio'/ratio²
        let w = 1.0 / ratio - 1.0;
        let dw = -slope / (ratio * ratio);
        let newton = r - w / dw;
        r = if dw > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(RadialSolution {
        s: build(r),
        r,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsolveStatus {
    /// `‖∇model‖ ≤ ‖∇F‖/(4p(p+1))` at the returned point.
    ConvergedRelative,
    ConvergedAbsolute,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsolveResult {
    /// Minimizer offset from the model center.
    pub step: Vector,
    pub model_value: f64,
    pub model_grad_norm: f64,
    /// `‖∇F(center + step)‖`, when the solver evaluated it.
    pub objective_grad_norm: Option<f64>,
    pub inner_iterations: usize,
    pub status: SubsolveStatus,
}

/// Constant of the relative inexactness criterion, `1/(4p(p+1))`.
pub fn relative_criterion(p: usize) -> f64 {
    1.0 / (4.0 * (p * (p + 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsolveOptions {
    pub tol_abs: f64,
    pub max_iter: usize,
    /// Relative criterion is checked every this many BDGM iterations.
    pub check_every: usize,
    pub radial_tol: f64,
}

impl Default for SubsolveOptions {
    fn default() -> Self {
        Self {
            tol_abs: 1e-12,
            max_iter: 500,
            check_every: 5,
            radial_tol: 1e-14,
        }
    }
}

/// Gradient of the full objective `F` at a point, used by the relative criterion.
pub type ObjectiveGradient<'a> = &'a dyn Fn(&Vector) -> Result<Vector>;

fn spectral_of(state: &ModelState) -> Result<Option<Spectral>> {
    match &state.curvature {
        None => Ok(None),
        Some(a) => Spectral::psd(a, PSD_TOL).map(Some).map_err(|min| {
            OptError::ModelConvexity(format!(
                "curvature matrix has eigenvalue {min:e}; the regularization cannot dominate it"
            ))
        }),
    }
}

/// Radial coefficient of the whole model when it has no third-order term.
fn model_radial(state: &ModelState) -> RadialCoefficient {
    let c = state.regularizer_coefficient() * (state.p + 1) as f64;
    let mut k = RadialCoefficient {
        inverse: state.delta(1),
        constant: state.delta(2),
        linear: state.delta(3),
        quadratic: 0.0,
    };
    match state.p {
        1 => k.constant += c,
        2 => k.linear += c,
        _ => k.quadratic += c,
    }
    k
}

fn finish_direct(state: &ModelState, sol: RadialSolution) -> SubsolveResult {
    let t3 = state.third_term(&sol.s);
    SubsolveResult {
        model_value: state.value_with(&sol.s, t3.as_ref()),
        model_grad_norm: state.stationarity_with(&sol.s, t3.as_ref()),
        objective_grad_norm: None,
        inner_iterations: sol.iterations,
        status: if sol.converged {
            SubsolveStatus::ConvergedAbsolute
        } else {
            SubsolveStatus::MaxIter
        },
        step: sol.s,
    }
}

/// `p = 1`: `(H·I + A_g) s = −g₀`, with soft thresholding when `δ₁ > 0`.
pub fn solve_p1(state: &ModelState) -> Result<SubsolveResult> {
    if state.p != 1 {
        return Err(OptError::Domain(format!("solve_p1 called on a model of order {}", state.p)));
    }
    if !(state.h > 0.0) {
        return Err(OptError::Domain("H must be positive".into()));
    }
    let sp = spectral_of(state)?;
    let sol = radial_root_solve(sp.as_ref(), &state.g0, &model_radial(state), 1e-14, 200)?;
    Ok(finish_direct(state, sol))
}

/// `p = 2`: cubic-regularized Newton step through the secular equation in `r = ‖s‖`.
pub fn solve_p2(state: &ModelState, tol: f64, max_iter: usize) -> Result<SubsolveResult> {
    if state.p != 2 {
        return Err(OptError::Domain(format!("solve_p2 called on a model of order {}", state.p)));
    }
    if !(state.h > 0.0) {
        return Err(OptError::Domain("H must be positive".into()));
    }
    let sp = spectral_of(state)?;
    let sol = radial_root_solve(sp.as_ref(), &state.g0, &model_radial(state), tol, max_iter)?;
    Ok(finish_direct(state, sol))
}

/// `p = 3`: Bregman-distance gradient method with reference
/// `ρ(s) = ½⟨(A+δ₂I)s, s⟩ + δ₃/3‖s‖³ + L/4‖s‖⁴`, where `L/4` matches the
/// model's quartic coefficient (`L = H/6` for the exact model).
///
/// One third-derivative action per iteration. Stops on the relative criterion
/// against `grad_f` (checked every `check_every` iterations and once more at the
/// end), or when the model stationarity measure drops below `tol_abs`. The
/// method takes steps with `L_ρ = 1 + 1/√2`; if a step fails to decrease the
/// model, which cannot happen when `H ≥ 6L₃`, `L_ρ` is doubled for that step.
pub fn solve_p3_bdgm(
    state: &ModelState,
    grad_f: Option<ObjectiveGradient<'_>>,
    opts: &SubsolveOptions,
) -> Result<SubsolveResult> {
    if state.p != 3 {
        return Err(OptError::Domain(format!("solve_p3_bdgm called on a model of order {}", state.p)));
    }
    if !(state.h > 0.0) {
        return Err(OptError::Domain("H must be positive".into()));
    }
    if state.third.is_none() || state.curvature.is_none() {
        return Err(OptError::Capability("third-order model needs a Hessian and a third-derivative action".into()));
    }
    let sp = spectral_of(state)?;
    let a = state.curvature.as_ref().unwrap();
    let d = state.dim();
    let (d1, d2, d3) = (state.delta(1), state.delta(2), state.delta(3));
    let quartic = 4.0 * state.regularizer_coefficient();
    let l_rho = BdgmConstants::new().l_rho;
    let p = 3;
    let crit = relative_criterion(p);

    let grad_rho = |s: &Vector| -> Vector {
        let r = s.norm();
        a * s + s * (d2 + d3 * r + quartic * r * r)
    };

    let mut s = Vector::zeros(d);
    let mut t3 = Vector::zeros(d);
    let mut value = state.value_with(&s, Some(&t3));
    let mut objective_grad_norm = None;

    let stat0 = state.stationarity_with(&s, Some(&t3));
    if stat0 <= opts.tol_abs || state.g0.norm() == 0.0 {
        return Ok(SubsolveResult {
            step: s,
            model_value: value,
            model_grad_norm: stat0,
            objective_grad_norm: None,
            inner_iterations: 0,
            status: SubsolveStatus::ConvergedAbsolute,
        });
    }

    let relative_holds = |s: &Vector, stat: f64, last: &mut Option<f64>| -> Result<bool> {
        match grad_f {
            Some(gf) => {
                let n = gf(&(&state.center + s))?.norm();
                *last = Some(n);
                Ok(stat <= crit * n)
            }
            None => Ok(false),
        }
    };

    let mut iter = 0;
    let mut stat = stat0;
    let status = loop {
        if iter >= opts.max_iter {
            break if iter > 0 && relative_holds(&s, stat, &mut objective_grad_norm)? {
                SubsolveStatus::ConvergedRelative
            } else {
                SubsolveStatus::MaxIter
            };
        }
        let smooth = state.smooth_gradient_with(&s, Some(&t3));
        let gr = grad_rho(&s);
        let mut scale = l_rho;
        let mut backtracks = 0;
        let (s_new, t3_new, v_new) = loop {
            let c = &smooth - &gr * scale;
            let k = RadialCoefficient {
                inverse: d1 / scale,
                constant: d2,
                linear: d3,
                quadratic: quartic,
            };
            let sol = radial_root_solve(sp.as_ref(), &(c / scale), &k, opts.radial_tol, 200)?;
            let t3n = state.third_term(&sol.s).unwrap();
            let vn = state.value_with(&sol.s, Some(&t3n));
            if vn <= value + 1e-13 * value.abs().max(1.0) || backtracks >= 40 {
                break (sol.s, t3n, vn);
            }
            scale *= 2.0;
            backtracks += 1;
        };
        s = s_new;
        t3 = t3_new;
        value = v_new;
        iter += 1;
        stat = state.stationarity_with(&s, Some(&t3));
        if stat <= opts.tol_abs {
            break SubsolveStatus::ConvergedAbsolute;
        }
        if opts.check_every > 0
            && iter % opts.check_every == 0
            && relative_holds(&s, stat, &mut objective_grad_norm)?
        {
            break SubsolveStatus::ConvergedRelative;
        }
    };
    Ok(SubsolveResult {
        step: s,
        model_value: value,
        model_grad_norm: stat,
        objective_grad_norm,
        inner_iterations: iter,
        status,
    })
}

/// Dispatches on the model order.
pub fn solve_model(
    state: &ModelState,
    grad_f: Option<ObjectiveGradient<'_>>,
    opts: &SubsolveOptions,
) -> Result<SubsolveResult> {
    match state.p {
        1 => solve_p1(state),
        2 => solve_p2(state, opts.radial_tol, 200),
        3 => solve_p3_bdgm(state, grad_f, opts),
        p => Err(OptError::Domain(format!("model order {p} outside 1..=3"))),
    }
}
