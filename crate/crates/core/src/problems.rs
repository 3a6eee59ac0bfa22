//! Built-in test objectives with exact derivatives through order three.
//!
//! Families:
//!
//! * `worst_case`: `F_p(x) = Σ |(Bx)_i|^{p+1}` with `B` the lower-bidiagonal
//!   difference matrix (`(Bx)_1 = x_1`, `(Bx)_i = x_i − x_{i−1}`).
//! * `logistic`: mean logistic loss over bounded features plus `λ₂/2‖x‖²`.
//! * `log_sum_exp`: `μ log Σ exp((a_jᵀx − b_j)/μ) + λ₂/2‖x‖²`.
//! * `quadratic`: `½xᵀQx − bᵀx`.
//! * `quartic_quadratic`: `½uᵀQu + β/4‖u‖⁴` with `u = x − c`.
//!
//! A [`ProblemSpec`] is stored as `key = value` lines; see [`ProblemSpec::parse`].

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Cholesky;
use rand::Rng;

use crate::driver::{basic_tensor_run, msn_run, restarted_run, SolverConfig};
use crate::error::{OptError, Result};
use crate::linalg::{normal_vector, seeded_rng, spectral_norm, sym_spectral_norm, unit_vector, Matrix, Vector};
use crate::model::ModelState;
use crate::oracle::{default_fd_step, fd_third_directional, Objective, Oracle, OracleMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    WorstCase,
    Logistic,
    LogSumExp,
    Quadratic,
    QuarticQuadratic,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::WorstCase => "worst_case",
            Family::Logistic => "logistic",
            Family::LogSumExp => "log_sum_exp",
            Family::Quadratic => "quadratic",
            Family::QuarticQuadratic => "quartic_quadratic",
        }
    }

    pub fn all() -> [Family; 5] {
        [
            Family::WorstCase,
            Family::Logistic,
            Family::LogSumExp,
            Family::Quadratic,
            Family::QuarticQuadratic,
        ]
    }
}

impl FromStr for Family {
    type Err = OptError;

    fn from_str(s: &str) -> Result<Self> {
        Family::all()
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| OptError::Parse {
                key: "family".into(),
                message: format!("unknown family `{s}`"),
            })
    }
}

/// Starting point rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPoint {
    Zeros,
    Ones,
    /// `N(0, I/d)` drawn from the data seed.
    Random,
}

impl StartPoint {
    fn name(&self) -> &'static str {
        match self {
            StartPoint::Zeros => "zeros",
            StartPoint::Ones => "ones",
            StartPoint::Random => "random",
        }
    }
}

/// Declarative description of a test objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub family: Family,
    pub d: usize,
    pub p_target: usize,
    pub seed: u64,
    /// Number of data rows (logistic, log_sum_exp).
    pub m: usize,
    pub lambda2: f64,
    /// Smoothing of log_sum_exp.
    pub mu: f64,
    pub beta: f64,
    /// Spectrum range of `Q` (quadratic families).
    pub eig_min: f64,
    pub eig_max: f64,
    /// User-supplied `L_1..L_3`; override the derived values.
    pub lipschitz: [Option<f64>; 3],
    /// Growth exponent for restarts; only meaningful with `sigma_r`.
    pub r: f64,
    pub sigma_r: Option<f64>,
    pub x0: StartPoint,
    pub x0_scale: f64,
    /// Compute a reference solution for gap reporting.
    pub reference: bool,
    pub ref_tol: f64,
}

impl ProblemSpec {
    pub fn new(family: Family, d: usize, p_target: usize) -> Self {
        Self {
            family,
            d,
            p_target,
            seed: 0,
            m: 100,
            lambda2: if family == Family::Logistic || family == Family::LogSumExp { 0.01 } else { 0.0 },
            mu: 0.5,
            beta: 1.0,
            eig_min: 0.1,
            eig_max: 1.0,
            lipschitz: [None; 3],
            r: 2.0,
            sigma_r: None,
            x0: if family == Family::WorstCase { StartPoint::Ones } else { StartPoint::Zeros },
            x0_scale: 1.0,
            reference: true,
            ref_tol: 1e-10,
        }
    }

    /// `(r, σ_r)` from the spec file; errors when `sigma_r` is absent.
    pub fn growth(&self) -> Result<(f64, f64)> {
        match self.sigma_r {
            Some(s) => Ok((self.r, s)),
            None => Err(OptError::MissingKey("sigma_r".into())),
        }
    }

    /// Quadratic growth constant implied by the problem data, when it is known
    /// without user input.
    pub fn certified_growth(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::Quadratic | Family::QuarticQuadratic => Some((2.0, self.eig_min / 2.0)),
            Family::Logistic | Family::LogSumExp if self.lambda2 > 0.0 => Some((2.0, self.lambda2 / 2.0)),
            _ => None,
        }
    }

    pub fn start_point(&self) -> Vector {
        let d = self.d;
        let base = match self.x0 {
            StartPoint::Zeros => Vector::zeros(d),
            StartPoint::Ones => Vector::from_element(d, 1.0),
            StartPoint::Random => {
                let mut rng = seeded_rng(self.seed ^ 0x5eed_0001);
                normal_vector(&mut rng, d) / (d as f64).sqrt()
            }
        };
        base * self.x0_scale
    }

    /// Serializes to the `key = value` format. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("family", self.family.name().into());
        kv("d", self.d.to_string());
        kv("p", self.p_target.to_string());
        kv("seed", self.seed.to_string());
        kv("m", self.m.to_string());
        kv("lambda2", format!("{:?}", self.lambda2));
        kv("mu", format!("{:?}", self.mu));
        kv("beta", format!("{:?}", self.beta));
        kv("eig_min", format!("{:?}", self.eig_min));
        kv("eig_max", format!("{:?}", self.eig_max));
        for (i, l) in self.lipschitz.iter().enumerate() {
            if let Some(v) = l {
                kv(&format!("L{}", i + 1), format!("{v:?}"));
            }
        }
        kv("r", format!("{:?}", self.r));
        if let Some(s) = self.sigma_r {
            kv("sigma_r", format!("{s:?}"));
        }
        kv("x0", self.x0.name().into());
        kv("x0_scale", format!("{:?}", self.x0_scale));
        kv("reference", if self.reference { "auto" } else { "none" }.into());
        kv("ref_tol", format!("{:?}", self.ref_tol));
        out
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// `family` and `d` are required, every other key has a default.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| OptError::Parse {
                key: line.to_string(),
                message: format!("line {} is not `key = value`", lineno + 1),
            })?;
            let k = k.trim().to_string();
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(OptError::Parse {
                    key: k,
                    message: "duplicate key".into(),
                });
            }
            pairs.push((k, v.trim().to_string()));
        }
        let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let family: Family = get("family")
            .ok_or_else(|| OptError::MissingKey("family".into()))?
            .parse()?;
        let d: usize = parse_value("d", get("d").ok_or_else(|| OptError::MissingKey("d".into()))?)?;
        let p: usize = match get("p") {
            Some(v) => parse_value("p", v)?,
            None => 2,
        };
        let mut spec = ProblemSpec::new(family, d, p);
        for (k, v) in &pairs {
            let v = v.as_str();
            match k.as_str() {
                "family" | "d" | "p" => {}
                "seed" => spec.seed = parse_value(k, v)?,
                "m" => spec.m = parse_value(k, v)?,
                "lambda2" => spec.lambda2 = parse_nonneg(k, v)?,
                "mu" => spec.mu = parse_nonneg(k, v)?,
                "beta" => spec.beta = parse_nonneg(k, v)?,
                "eig_min" => spec.eig_min = parse_nonneg(k, v)?,
                "eig_max" => spec.eig_max = parse_nonneg(k, v)?,
                "L1" => spec.lipschitz[0] = Some(parse_nonneg(k, v)?),
                "L2" => spec.lipschitz[1] = Some(parse_nonneg(k, v)?),
                "L3" => spec.lipschitz[2] = Some(parse_nonneg(k, v)?),
                "r" => spec.r = parse_nonneg(k, v)?,
                "sigma_r" => spec.sigma_r = Some(parse_nonneg(k, v)?),
                "x0" => {
                    spec.x0 = match v {
                        "zeros" => StartPoint::Zeros,
                        "ones" => StartPoint::Ones,
                        "random" => StartPoint::Random,
                        _ => {
                            return Err(OptError::Parse {
                                key: k.clone(),
                                message: format!("expected zeros, ones or random, got `{v}`"),
                            })
                        }
                    }
                }
                "x0_scale" => spec.x0_scale = parse_value(k, v)?,
                "reference" => {
                    spec.reference = match v {
                        "auto" => true,
                        "none" => false,
                        _ => {
                            return Err(OptError::Parse {
                                key: k.clone(),
                                message: format!("expected auto or none, got `{v}`"),
                            })
                        }
                    }
                }
                "ref_tol" => spec.ref_tol = parse_nonneg(k, v)?,
                _ => {
                    return Err(OptError::Parse {
                        key: k.clone(),
                        message: "unknown key".into(),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(OptError::Parse { key: key.into(), message });
        if self.d == 0 {
            return bad("d", "dimension must be positive".into());
        }
        if !(1..=3).contains(&self.p_target) {
            return bad("p", format!("order {} outside 1..=3", self.p_target));
        }
        if matches!(self.family, Family::Logistic | Family::LogSumExp) && self.m == 0 {
            return bad("m", "needs at least one data row".into());
        }
        if self.family == Family::LogSumExp && !(self.mu > 0.0) {
            return bad("mu", "smoothing must be positive".into());
        }
        if matches!(self.family, Family::Quadratic | Family::QuarticQuadratic)
            && !(self.eig_min > 0.0 && self.eig_min <= self.eig_max)
        {
            return bad("eig_min", "need 0 < eig_min <= eig_max".into());
        }
        if !(self.ref_tol > 0.0) {
            return bad("ref_tol", "must be positive".into());
        }
        Ok(())
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| OptError::Parse {
        key: key.into(),
        message: format!("`{v}`: {e}"),
    })
}

fn parse_nonneg(key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_value(key, v)?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(OptError::Parse {
            key: key.into(),
            message: format!("`{v}` must be a finite nonnegative number"),
        });
    }
    Ok(x)
}

/// An objective that is the mean of `m` components, each with exact derivatives.
pub trait FiniteSum: Objective {
    fn n_components(&self) -> usize;
    fn component_value(&self, j: usize, x: &Vector) -> f64;
    fn component_gradient(&self, j: usize, x: &Vector) -> Vector;
    fn component_hessian(&self, j: usize, x: &Vector) -> Matrix;
    fn component_third(&self, j: usize, x: &Vector, h: &Vector) -> Vector;
}

/// Means over index lists, summed in list order. The full objective and a
/// full-batch sample both go through these, so they agree bitwise.
pub fn mean_scalar(idx: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for &j in idx {
        acc += f(j);
    }
    acc / idx.len() as f64
}

pub fn mean_vector(d: usize, idx: &[usize], f: impl Fn(usize) -> Vector) -> Vector {
    let mut acc = Vector::zeros(d);
    for &j in idx {
        acc += f(j);
    }
    acc / idx.len() as f64
}

pub fn mean_matrix(d: usize, idx: &[usize], f: impl Fn(usize) -> Matrix) -> Matrix {
    let mut acc = Matrix::zeros(d, d);
    for &j in idx {
        acc += f(j);
    }
    acc / idx.len() as f64
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{−z})` without overflow.
fn logistic_loss(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `(1/m) Σ log(1 + exp(−y_j a_jᵀx)) + λ₂/2 ‖x‖²`; the ridge is part of every component.
#[derive(Debug, Clone)]
pub struct Logistic {
    /// One sample per row.
    pub features: Matrix,
    pub labels: Vector,
    pub lambda2: f64,
    all: Vec<usize>,
    meta: OracleMeta,
}

impl Logistic {
    pub fn new(features: Matrix, labels: Vector, lambda2: f64) -> Self {
        let m = features.nrows();
        let rmax = (0..m).map(|j| features.row(j).norm()).fold(0.0, f64::max);
        let cov = features.tr_mul(&features) / m.max(1) as f64;
        let lc = sym_spectral_norm(&cov);
        let mut meta = OracleMeta::new(3);
        meta.lipschitz[1] = Some(0.25 * lc + lambda2);
        meta.lipschitz[2] = Some(rmax * lc / (6.0 * 3f64.sqrt()));
        meta.lipschitz[3] = Some(rmax * rmax * lc / 8.0);
        meta.noise_bounds[0] = Some(2.0 * rmax);
        meta.noise_bounds[1] = Some(0.25 * rmax * rmax);
        meta.noise_bounds[2] = Some(rmax.powi(3) / (6.0 * 3f64.sqrt()));
        if lambda2 == 0.0 {
            meta.lipschitz[0] = Some(rmax);
        }
        Self {
            features,
            labels,
            lambda2,
            all: (0..m).collect(),
            meta,
        }
    }

    /// Features uniform in `[−1, 1]`, labels `sign(a_jᵀw + noise)` for a
    /// Gaussian `w`. Several datasets sharing `w` come from [`logistic_data`].
    pub fn synthetic(d: usize, m: usize, lambda2: f64, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let w = normal_vector(&mut rng, d);
        let (a, y) = logistic_data(&w, m, &mut rng);
        Self::new(a, y, lambda2)
    }

    fn margin(&self, j: usize, x: &Vector) -> f64 {
        self.labels[j] * self.features.row(j).transpose().dot(x)
    }

    fn row(&self, j: usize) -> Vector {
        self.features.row(j).transpose()
    }
}

/// `m` rows of bounded features and noisy labels generated from the weight vector `w`.
pub fn logistic_data<R: Rng + ?Sized>(w: &Vector, m: usize, rng: &mut R) -> (Matrix, Vector) {
    let d = w.len();
    let a = Matrix::from_fn(m, d, |_, _| rng.random_range(-1.0..=1.0));
    let noise = normal_vector(rng, m);
    let y = Vector::from_fn(m, |j, _| {
        let z = a.row(j).transpose().dot(w) + noise[j];
        if z >= 0.0 {
            1.0
        } else {
            -1.0
        }
    });
    (a, y)
}

impl FiniteSum for Logistic {
    fn n_components(&self) -> usize {
        self.features.nrows()
    }

    fn component_value(&self, j: usize, x: &Vector) -> f64 {
        logistic_loss(self.margin(j, x)) + 0.5 * self.lambda2 * x.norm_squared()
    }

    fn component_gradient(&self, j: usize, x: &Vector) -> Vector {
        let z = self.margin(j, x);
        self.row(j) * (-sigmoid(-z) * self.labels[j]) + x * self.lambda2
    }

    fn component_hessian(&self, j: usize, x: &Vector) -> Matrix {
        let s = sigmoid(self.margin(j, x));
        let a = self.row(j);
        let d = x.len();
        &a * a.transpose() * (s * (1.0 - s)) + Matrix::identity(d, d) * self.lambda2
    }

    fn component_third(&self, j: usize, x: &Vector, h: &Vector) -> Vector {
        let s = sigmoid(self.margin(j, x));
        let a = self.row(j);
        let ah = a.dot(h);
        a * (s * (1.0 - s) * (1.0 - 2.0 * s) * self.labels[j] * ah * ah)
    }
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn meta(&self) -> OracleMeta {
        self.meta.clone()
    }

    fn value(&self, x: &Vector) -> f64 {
        mean_scalar(&self.all, |j| self.component_value(j, x))
    }

    fn gradient(&self, x: &Vector) -> Vector {
        mean_vector(self.dim(), &self.all, |j| self.component_gradient(j, x))
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        Ok(mean_matrix(self.dim(), &self.all, |j| self.component_hessian(j, x)))
    }

    fn third_directional(&self, x: &Vector, h: &Vector) -> Result<Vector> {
        Ok(mean_vector(self.dim(), &self.all, |j| self.component_third(j, x, h)))
    }
}

/// `Σ |(Bx)_i|^{p+1}`.
#[derive(Debug, Clone)]
pub struct WorstCase {
    d: usize,
    q: i32,
    meta: OracleMeta,
}

impl WorstCase {
    pub fn new(d: usize, p: usize) -> Result<Self> {
        if !(1..=3).contains(&p) || d == 0 {
            return Err(OptError::Capability(format!("worst_case needs 1 <= p <= 3 and d >= 1, got p = {p}, d = {d}")));
        }
        let b = difference_matrix(d);
        let bn = spectral_norm(&b);
        // ‖B(x−y)‖_∞ ≤ max_i ‖row_i(B)‖ ‖x−y‖
        let row_max = if d >= 2 { 2f64.sqrt() } else { 1.0 };
        let fact: f64 = (1..=p + 1).map(|k| k as f64).product();
        let mut meta = OracleMeta::new(3);
        meta.lipschitz[p] = Some(if p == 1 { 2.0 * bn * bn } else { fact * row_max * bn.powi(p as i32) });
        Ok(Self { d, q: p as i32 + 1, meta })
    }

    fn diffs(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.d, |i, _| if i == 0 { x[0] } else { x[i] - x[i - 1] })
    }

    /// `Bᵀv`.
    fn bt(&self, v: &Vector) -> Vector {
        Vector::from_fn(self.d, |i, _| if i + 1 < self.d { v[i] - v[i + 1] } else { v[i] })
    }

    fn phi_derivative(&self, t: f64, k: i32) -> f64 {
        let q = self.q;
        if k > q {
            return 0.0;
        }
        let coef: f64 = (0..k).map(|j| (q - j) as f64).product();
        let mag = if q == k { 1.0 } else { t.abs().powi(q - k) };
        // each derivative of |t|^n contributes a factor sign(t); sign(0) is taken as 0
        let sign = if t > 0.0 {
            1.0
        } else if t < 0.0 {
            -1.0
        } else {
            0.0
        };
        if k % 2 == 1 {
            coef * mag * sign
        } else {
            coef * mag
        }
    }
}

/// Lower-bidiagonal difference matrix.
pub fn difference_matrix(d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else if j + 1 == i {
            -1.0
        } else {
            0.0
        }
    })
}

impl Objective for WorstCase {
    fn dim(&self) -> usize {
        self.d
    }

    fn meta(&self) -> OracleMeta {
        self.meta.clone()
    }

    fn value(&self, x: &Vector) -> f64 {
        self.diffs(x).iter().map(|u| u.abs().powi(self.q)).sum()
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let u = self.diffs(x);
        self.bt(&u.map(|t| self.phi_derivative(t, 1)))
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        let w = self.diffs(x).map(|t| self.phi_derivative(t, 2));
        let b = difference_matrix(self.d);
        Ok(b.transpose() * Matrix::from_diagonal(&w) * b)
    }

    fn third_directional(&self, x: &Vector, h: &Vector) -> Result<Vector> {
        let u = self.diffs(x);
        let bh = self.diffs(h);
        let v = Vector::from_fn(self.d, |i, _| self.phi_derivative(u[i], 3) * bh[i] * bh[i]);
        Ok(self.bt(&v))
    }
}

/// `μ log Σ_j exp((a_jᵀx − b_j)/μ) + λ₂/2 ‖x‖²`.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    pub a: Matrix,
    pub b: Vector,
    pub mu: f64,
    pub lambda2: f64,
    meta: OracleMeta,
}

impl LogSumExp {
    pub fn new(a: Matrix, b: Vector, mu: f64, lambda2: f64) -> Self {
        let rmax = (0..a.nrows()).map(|j| a.row(j).norm()).fold(0.0, f64::max);
        let mut meta = OracleMeta::new(3);
        meta.lipschitz[1] = Some(rmax * rmax / mu + lambda2);
        meta.lipschitz[2] = Some(2.0 * rmax.powi(3) / (mu * mu));
        meta.lipschitz[3] = Some(4.0 * rmax.powi(4) / mu.powi(3));
        Self { a, b, mu, lambda2, meta }
    }

    fn weights(&self, x: &Vector) -> Vector {
        let z = (&self.a * x - &self.b) / self.mu;
        let zmax = z.max();
        let e = z.map(|v| (v - zmax).exp());
        let s = e.sum();
        e / s
    }
}

impl Objective for LogSumExp {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn meta(&self) -> OracleMeta {
        self.meta.clone()
    }

    fn value(&self, x: &Vector) -> f64 {
        let z = (&self.a * x - &self.b) / self.mu;
        let zmax = z.max();
        let s: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        self.mu * (zmax + s.ln()) + 0.5 * self.lambda2 * x.norm_squared()
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.a.tr_mul(&self.weights(x)) + x * self.lambda2
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        let pi = self.weights(x);
        let d = self.dim();
        let cov = Matrix::from_diagonal(&pi) - &pi * pi.transpose();
        Ok(self.a.transpose() * cov * &self.a / self.mu + Matrix::identity(d, d) * self.lambda2)
    }

    fn third_directional(&self, x: &Vector, h: &Vector) -> Result<Vector> {
        let pi = self.weights(x);
        let v = &self.a * h;
        let c = pi.dot(&v);
        let centered = v.map(|t| t - c);
        let second = pi.dot(&v.component_mul(&v)) - c * c;
        let t = pi.component_mul(&centered.component_mul(&centered)) - &pi * second;
        Ok(self.a.tr_mul(&t) / (self.mu * self.mu))
    }
}

/// `½(x−c)ᵀQ(x−c) + β/4 ‖x−c‖⁴ − ⟨b, x⟩` with either `b = 0` (quartic) or `β = 0, c = 0` (quadratic).
#[derive(Debug, Clone)]
pub struct QuarticQuadratic {
    pub q: Matrix,
    pub center: Vector,
    pub linear: Vector,
    pub beta: f64,
    meta: OracleMeta,
}

impl QuarticQuadratic {
    pub fn new(q: Matrix, center: Vector, linear: Vector, beta: f64) -> Self {
        let mut meta = OracleMeta::new(3);
        let qn = sym_spectral_norm(&q);
        if beta == 0.0 {
            meta.lipschitz[1] = Some(qn);
            meta.lipschitz[2] = Some(0.0);
        }
        meta.lipschitz[3] = Some(6.0 * beta);
        Self {
            q,
            center,
            linear,
            beta,
            meta,
        }
    }
}

impl Objective for QuarticQuadratic {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn meta(&self) -> OracleMeta {
        self.meta.clone()
    }

    fn value(&self, x: &Vector) -> f64 {
        let u = x - &self.center;
        let n2 = u.norm_squared();
        0.5 * u.dot(&(&self.q * &u)) + 0.25 * self.beta * n2 * n2 - self.linear.dot(x)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let u = x - &self.center;
        &self.q * &u + &u * (self.beta * u.norm_squared()) - &self.linear
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        let u = x - &self.center;
        let d = self.dim();
        Ok(&self.q + (Matrix::identity(d, d) * u.norm_squared() + &u * u.transpose() * 2.0) * self.beta)
    }

    fn third_directional(&self, x: &Vector, h: &Vector) -> Result<Vector> {
        let u = x - &self.center;
        Ok((h * (4.0 * u.dot(h)) + &u * (2.0 * h.norm_squared())) * self.beta)
    }
}

fn random_spd(d: usize, eig_min: f64, eig_max: f64, rng: &mut impl Rng) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let qr = g.qr().q();
    let eig = Vector::from_fn(d, |i, _| {
        if d == 1 {
            eig_min
        } else {
            eig_min * (eig_max / eig_min).powf(i as f64 / (d - 1) as f64)
        }
    });
    let q = &qr * Matrix::from_diagonal(&eig) * qr.transpose();
    (&q + q.transpose()) * 0.5
}

/// Built objective together with its finite-sum view, when it has one.
#[derive(Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub objective: Arc<dyn Objective>,
    pub finite_sum: Option<Arc<dyn FiniteSum>>,
    /// Minimizer when it is known in closed form.
    pub closed_form: Option<Vector>,
}

impl Problem {
    pub fn oracle(&self) -> Oracle {
        Oracle::new(Arc::clone(&self.objective))
    }

    pub fn lipschitz(&self, i: usize) -> Option<f64> {
        self.objective.meta().lipschitz(i)
    }
}

/// Overrides derived constants with user-supplied ones.
struct WithConstants {
    inner: Arc<dyn Objective>,
    meta: OracleMeta,
}

impl Objective for WithConstants {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn meta(&self) -> OracleMeta {
        self.meta.clone()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.inner.value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.inner.gradient(x)
    }
    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.inner.hessian(x)
    }
    fn third_directional(&self, x: &Vector, h: &Vector) -> Result<Vector> {
        self.inner.third_directional(x, h)
    }
}

/// Instantiates the objective described by `spec`.
pub fn make_problem(spec: &ProblemSpec) -> Result<Problem> {
    spec.validate().map_err(|e| match e {
        OptError::Parse { key, message } => OptError::Capability(format!("{key}: {message}")),
        other => other,
    })?;
    let d = spec.d;
    let mut rng = seeded_rng(spec.seed);
    let mut finite_sum: Option<Arc<dyn FiniteSum>> = None;
    let mut closed_form = None;
    let objective: Arc<dyn Objective> = match spec.family {
        Family::WorstCase => {
            closed_form = Some(Vector::zeros(d));
            Arc::new(WorstCase::new(d, spec.p_target)?)
        }
        Family::Logistic => {
            let l = Arc::new(Logistic::synthetic(d, spec.m, spec.lambda2, spec.seed));
            finite_sum = Some(l.clone());
            l
        }
        Family::LogSumExp => {
            let a = Matrix::from_fn(spec.m, d, |_, _| rng.random_range(-1.0..=1.0));
            let b = normal_vector(&mut rng, spec.m) * 0.5;
            Arc::new(LogSumExp::new(a, b, spec.mu, spec.lambda2))
        }
        Family::Quadratic => {
            let q = random_spd(d, spec.eig_min, spec.eig_max, &mut rng);
            let b = normal_vector(&mut rng, d);
            let x = Cholesky::new(q.clone())
                .ok_or_else(|| OptError::Numerical("quadratic matrix is not positive definite".into()))?
                .solve(&b);
            closed_form = Some(x);
            Arc::new(QuarticQuadratic::new(q, Vector::zeros(d), b, 0.0))
        }
        Family::QuarticQuadratic => {
            let q = random_spd(d, spec.eig_min, spec.eig_max, &mut rng);
            let c = normal_vector(&mut rng, d) / (d as f64).sqrt();
            closed_form = Some(c.clone());
            Arc::new(QuarticQuadratic::new(q, c, Vector::zeros(d), spec.beta))
        }
    };
    let objective: Arc<dyn Objective> = if spec.lipschitz.iter().any(|l| l.is_some()) {
        let mut meta = objective.meta();
        for (i, l) in spec.lipschitz.iter().enumerate() {
            if l.is_some() {
                meta.lipschitz[i + 1] = *l;
            }
        }
        Arc::new(WithConstants { inner: objective, meta })
    } else {
        objective
    };
    Ok(Problem {
        spec: spec.clone(),
        objective,
        finite_sum,
        closed_form,
    })
}

/// A minimizer with the evidence that certifies it.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x_star: Vector,
    pub f_star: f64,
    pub grad_norm: f64,
    /// `|f_a − f_b|` between the two certifying runs; zero for closed forms.
    pub disagreement: f64,
}

/// Minimizer of `problem`: the closed form when there is one, otherwise the
/// better of a restarted accelerated run and a basic tensor run, which must
/// agree on the optimal value to `tol`.
pub fn reference_solution(problem: &Problem, tol: f64) -> Result<Reference> {
    let obj = &problem.objective;
    if let Some(x) = &problem.closed_form {
        let g = obj.gradient(x).norm();
        if g > tol.max(1e-8) {
            return Err(OptError::Certification(format!("closed-form minimizer has gradient norm {g:e}")));
        }
        return Ok(Reference {
            f_star: obj.value(x),
            x_star: x.clone(),
            grad_norm: g,
            disagreement: 0.0,
        });
    }
    let x0 = problem.spec.start_point();
    let l2 = problem
        .lipschitz(2)
        .ok_or_else(|| OptError::Certification("second-order Lipschitz constant unknown".into()))?;
    let h = 3.0 * l2.max(1e-12);
    let eps = (tol * 1e-3).max(1e-13);
    let mut cfg = SolverConfig::new(2, h);
    cfg.eps_grad = Some(eps);
    cfg.max_outer = 3000;
    cfg.record_timing = false;

    let first = match problem.spec.certified_growth() {
        Some((r, sigma)) => {
            let g0 = obj.gradient(&x0).norm();
            let r0 = (g0 / sigma).powf(1.0 / (r - 1.0)).max(1e-12);
            let l1 = problem.lipschitz(1).unwrap_or(1.0).max(1.0);
            let phases = ((r0 * l1 / eps).log2().ceil().max(1.0) as usize).min(60);
            restarted_run(&cfg, r, sigma, r0, phases, &problem.oracle(), None, &x0, None)?
        }
        None => msn_run(&cfg, &problem.oracle(), None, &x0)?,
    };
    let mut basic = cfg.clone();
    basic.max_outer = 500;
    let second = basic_tensor_run(&basic, &[], &problem.oracle(), None, &x0)?;

    let (xa, xb) = (&first.x_final, &second.x_final);
    let (fa, fb) = (obj.value(xa), obj.value(xb));
    let (ga, gb) = (obj.gradient(xa).norm(), obj.gradient(xb).norm());
    let disagreement = (fa - fb).abs();
    if disagreement > tol {
        return Err(OptError::Certification(format!(
            "solvers disagree on the optimal value by {disagreement:e} (tolerance {tol:e})"
        )));
    }
    let (x, f, g) = if ga <= gb { (xa, fa, ga) } else { (xb, fb, gb) };
    if g > tol {
        return Err(OptError::Certification(format!("best gradient norm {g:e} exceeds {tol:e}")));
    }
    Ok(Reference {
        x_star: x.clone(),
        f_star: f.min(fa).min(fb),
        grad_norm: g,
        disagreement,
    })
}

/// Grid search of the model over `[−w, w]^d` (odd `points_per_axis`, so the
/// origin is on the grid), then one pass on a grid of one tenth the spacing
/// centered at the incumbent.
pub fn brute_force_min_model(state: &ModelState, halfwidth: f64, points_per_axis: usize) -> Result<(Vector, f64)> {
    let d = state.dim();
    if d > 3 {
        return Err(OptError::Capability(format!("grid search needs d <= 3, got {d}")));
    }
    if points_per_axis % 2 == 0 || points_per_axis < 3 {
        return Err(OptError::Domain("points_per_axis must be odd and at least 3".into()));
    }
    let n = points_per_axis;
    let spacing = 2.0 * halfwidth / (n - 1) as f64;
    let search = |center: &Vector, step: f64, per_axis: usize| -> Result<(Vector, f64)> {
        let half = (per_axis / 2) as f64;
        let total = per_axis.pow(d as u32);
        let mut best = (center.clone(), f64::INFINITY);
        let mut s = Vector::zeros(d);
        for idx in 0..total {
            let mut rem = idx;
            for i in 0..d {
                s[i] = center[i] + ((rem % per_axis) as f64 - half) * step;
                rem /= per_axis;
            }
            let v = state.value(&s)?;
            if v < best.1 {
                best = (s.clone(), v);
            }
        }
        Ok(best)
    };
    let (coarse, _) = search(&Vector::zeros(d), spacing, n)?;
    search(&coarse, spacing / 10.0, 21)
}

/// Worst relative discrepancies found by [`check_derivatives`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub points: usize,
    pub gradient: f64,
    pub hessian_action: f64,
    pub third_action: Option<f64>,
}

impl DerivativeCheck {
    pub const GRADIENT_TOL: f64 = 1e-6;
    pub const HESSIAN_TOL: f64 = 1e-5;
    pub const THIRD_TOL: f64 = 1e-3;

    pub fn passed(&self) -> [bool; 3] {
        [
            self.gradient <= Self::GRADIENT_TOL,
            self.hessian_action <= Self::HESSIAN_TOL,
            self.third_action.is_none_or(|e| e <= Self::THIRD_TOL),
        ]
    }
}

/// `‖a − b‖ / max(‖b‖, 1)`: relative for derivatives of unit size or more,
/// absolute below (a vanishing exact value, such as `D³` of a quadratic, has
/// no relative error).
fn discrepancy(approx: &Vector, exact: &Vector) -> f64 {
    (approx - exact).norm() / exact.norm().max(1.0)
}

/// Compares analytic derivatives with finite differences at `points` random
/// points: gradient against Richardson-extrapolated central differences of
/// values, Hessian actions against differences of gradients, third-order
/// actions against [`fd_third_directional`].
pub fn check_derivatives(obj: &dyn Objective, points: usize, seed: u64) -> Result<DerivativeCheck> {
    let d = obj.dim();
    let mut rng = seeded_rng(seed);
    let order = obj.meta().order_available;
    let mut out = DerivativeCheck {
        points,
        gradient: 0.0,
        hessian_action: 0.0,
        third_action: if order >= 3 { Some(0.0) } else { None },
    };
    let richardson = |f: &dyn Fn(f64) -> Vector, h: f64| (f(h / 2.0) * 4.0 - f(h)) / 3.0;
    for _ in 0..points {
        let x = normal_vector(&mut rng, d);
        let v = unit_vector(&mut rng, d);
        let step = 1e-3 * x.norm().max(1.0);
        let g = obj.gradient(&x);
        let fd_grad = richardson(
            &|h| {
                Vector::from_fn(d, |i, _| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    (obj.value(&xp) - obj.value(&xm)) / (2.0 * h)
                })
            },
            step,
        );
        out.gradient = out.gradient.max(discrepancy(&fd_grad, &g));
        if order >= 2 {
            let hv = obj.hessian(&x)? * &v;
            let fd_hv = richardson(&|h| (obj.gradient(&(&x + &v * h)) - obj.gradient(&(&x - &v * h))) / (2.0 * h), step);
            out.hessian_action = out.hessian_action.max(discrepancy(&fd_hv, &hv));
        }
        if order >= 3 {
            let t = obj.third_directional(&x, &v)?;
            let grad = |y: &Vector| obj.gradient(y);
            let fd = fd_third_directional(&grad, &x, &v, default_fd_step(&x, &v), Some(&g))?;
            let e = discrepancy(&fd, &t);
            out.third_action = out.third_action.map(|m| m.max(e));
        }
    }
    Ok(out)
}

/// Lipschitz constant of `D^p` estimated from random pairs; a lower bound on the true constant.
pub fn sampled_lipschitz(obj: &dyn Objective, p: usize, pairs: usize, radius: f64, seed: u64) -> Result<f64> {
    let d = obj.dim();
    let mut rng = seeded_rng(seed);
    let mut best = 0.0_f64;
    for _ in 0..pairs {
        let x = normal_vector(&mut rng, d) * radius;
        let y = &x + unit_vector(&mut rng, d) * (radius * rng.random::<f64>() + 1e-3);
        let h = unit_vector(&mut rng, d);
        let dist = (&x - &y).norm();
        let diff = match p {
            1 => (obj.gradient(&x) - obj.gradient(&y)).norm(),
            2 => ((obj.hessian(&x)? - obj.hessian(&y)?) * &h).norm(),
            3 => h.dot(&(obj.third_directional(&x, &h)? - obj.third_directional(&y, &h)?)).abs(),
            _ => return Err(OptError::Capability(format!("order {p} is not supported"))),
        };
        best = best.max(diff / dist);
    }
    Ok(best)
}

/// Smallest eigenvalue of the Hessian at `x`.
pub fn min_curvature(obj: &dyn Objective, x: &Vector) -> Result<f64> {
    let h = obj.hessian(x)?;
    Ok(nalgebra::SymmetricEigen::new(crate::linalg::symmetrize(&h)).eigenvalues.min())
}
