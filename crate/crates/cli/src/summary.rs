//! Run summaries, rate fits and the theorem-bound check. Everything here is
//! a function of the trace rows and the echoed configuration, so a summary
//! can be recomputed from a trace file.

use serde::{Deserialize, Serialize};
use tensoropt::driver::{rate_bound, TraceRow};

use crate::CliError;

/// Least-squares fit of `log f_gap = intercept + slope·log k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub k_lo: usize,
    pub k_hi: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits over rows with `k_lo ≤ k ≤ k_hi` and a positive gap.
pub fn fit_rate(rows: &[TraceRow], k_lo: usize, k_hi: usize) -> Result<RateFit, CliError> {
    if k_lo < 1 || k_hi < k_lo {
        return Err(CliError::Domain(format!("bad fit window [{k_lo}, {k_hi}]")));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.k >= k_lo && r.k <= k_hi)
        .filter_map(|r| r.f_gap.filter(|g| *g > 0.0).map(|g| ((r.k as f64).ln(), g.ln())))
        .collect();
    if pts.len() < 5 {
        return Err(CliError::Domain(format!(
            "rate fit needs at least 5 rows with a positive gap in [{k_lo}, {k_hi}], found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        k_lo,
        k_hi,
        slope,
        intercept,
        r_squared,
        points: pts.len(),
    })
}

/// `max_k f_gap·k^{(3p+1)/2} / ((12/5)·c_p·H·R^{p+1})` over `k ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub max_ratio: f64,
    pub worst_k: usize,
    pub passed: bool,
}

pub fn bound_check(rows: &[TraceRow], p: usize, h: f64, radius: f64) -> Option<BoundCheck> {
    let mut best: Option<(f64, usize)> = None;
    for r in rows.iter().filter(|r| r.k >= 1) {
        let ratio = r.f_gap? / rate_bound(p, h, radius, r.k);
        if best.is_none_or(|(m, _)| ratio > m) {
            best = Some((ratio, r.k));
        }
    }
    best.map(|(max_ratio, worst_k)| BoundCheck {
        max_ratio,
        worst_k,
        passed: max_ratio <= 1.0,
    })
}

/// The run parameters a summary needs, echoed into its JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub problem: String,
    pub family: String,
    pub d: usize,
    pub method: String,
    pub p: usize,
    pub h: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub superfast: bool,
    /// `‖x₀ − x*‖` when a reference solution is known.
    pub radius: Option<f64>,
    pub f_star: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub n_f: u64,
    pub n_grad: u64,
    pub n_hess: u64,
    pub n_d3: u64,
    pub n_comp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunEcho,
    /// `converged` when the last gradient norm is within `eps`, else `budget`.
    pub status: String,
    pub iterations: usize,
    pub final_f: f64,
    pub final_gap: Option<f64>,
    pub final_grad: f64,
    pub counters: Totals,
    pub rate_fit: Option<RateFit>,
    /// Only for the accelerated method with a known reference.
    pub bound: Option<BoundCheck>,
}

impl RunSummary {
    pub fn converged(&self) -> bool {
        self.status == "converged"
    }
}

pub fn summarize(config: RunEcho, rows: &[TraceRow]) -> Result<RunSummary, CliError> {
    let last = rows.last().ok_or_else(|| CliError::Format("empty trace".into()))?;
    let c = last.counters;
    let rate_fit = if last.k >= 1 { fit_rate(rows, 1, last.k).ok() } else { None };
    let bound = match (config.method.as_str(), config.radius) {
        ("msn", Some(r)) if r > 0.0 => bound_check(rows, config.p, config.h, r),
        _ => None,
    };
    Ok(RunSummary {
        status: if last.grad_norm <= config.eps { "converged" } else { "budget" }.into(),
        iterations: last.k,
        final_f: last.f_value,
        final_gap: last.f_gap,
        final_grad: last.grad_norm,
        counters: Totals {
            n_f: c.n_value,
            n_grad: c.n_grad,
            n_hess: c.n_hess,
            n_d3: c.n_d3,
            n_comp: c.n_component,
        },
        rate_fit,
        bound,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensoropt::oracle::CallCounters;

    fn rows(gap: impl Fn(f64) -> f64, n: usize) -> Vec<TraceRow> {
        (0..=n)
            .map(|k| TraceRow {
                k,
                f_value: 0.0,
                f_gap: Some(gap(k as f64)),
                grad_norm: 1.0,
                lambda: None,
                step_norm: 0.0,
                inner_iters: 0,
                counters: CallCounters::default(),
                elapsed_s: 0.0,
            })
            .collect()
    }

    #[test]
    fn exact_power_law() {
        let fit = fit_rate(&rows(|k| k.powf(-3.5), 100), 1, 100).unwrap();
        assert!((fit.slope + 3.5).abs() < 1e-6);
        assert!(fit.r_squared >= 0.999999);
    }

    #[test]
    fn scaled_power_law() {
        let fit = fit_rate(&rows(|k| 5.0 * k.powi(-2), 50), 1, 50).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_five_points() {
        let r = rows(|k| 1.0 / k, 4);
        assert!(matches!(fit_rate(&r, 1, 4), Err(CliError::Domain(_))));
        let r = rows(|_| 0.0, 40);
        assert!(fit_rate(&r, 1, 40).is_err());
        assert!(fit_rate(&r, 0, 40).is_err());
    }

    #[test]
    fn bound_ratio_of_the_bound_itself() {
        let r = rows(|k| rate_bound(2, 3.0, 2.0, k.max(1.0) as usize), 30);
        let b = bound_check(&r, 2, 3.0, 2.0).unwrap();
        assert!((b.max_ratio - 1.0).abs() < 1e-12);
        assert!(b.passed);
        let b = bound_check(&r, 2, 1.0, 2.0).unwrap();
        assert!(!b.passed);
    }
}
