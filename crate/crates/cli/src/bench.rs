//! Benchmark suites: a list of solve rows run concurrently, reported as JSON.
//!
//! Suite file format, one row per line, `#` starts a comment:
//!
//! ```text
//! # problem            method  p  H     iterations
//! specs/f2.spec        msn     2  auto  100
//! specs/logistic.spec  basic   3  12.5  50
//! ```
//!
//! Problem paths are relative to the suite file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::run::{solve, HChoice, Method, SolveRequest};
use crate::summary::RunSummary;
use crate::traces::{write_atomic, write_trace};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub problem: PathBuf,
    pub method: Method,
    pub p: usize,
    pub h: HChoice,
    pub iterations: usize,
}

pub fn parse_suite(text: &str, base: &Path) -> Result<Vec<SuiteRow>, CliError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Format(format!("suite line {}: {m}", i + 1));
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", cols.len())));
        }
        rows.push(SuiteRow {
            problem: base.join(cols[0]),
            method: cols[1].parse().map_err(bad)?,
            p: cols[2].parse().map_err(|_| bad(format!("bad order `{}`", cols[2])))?,
            h: cols[3].parse().map_err(bad)?,
            iterations: cols[4].parse().map_err(|_| bad(format!("bad iteration count `{}`", cols[4])))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub index: usize,
    pub problem: String,
    pub method: String,
    pub p: usize,
    pub error: Option<String>,
    /// Theorem-bound verdict, when the row has one.
    pub bound_passed: Option<bool>,
    pub summary: Option<RunSummary>,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub seed: u64,
    pub eps: f64,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            eps: 1e-8,
            threads: None,
            out_dir: None,
            timing: true,
        }
    }
}

/// Seed of suite row `index`.
pub fn row_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x0010_0000_01b3).wrapping_add(index as u64)
}

fn run_row(index: usize, row: &SuiteRow, opts: &BenchOptions) -> BenchResult {
    let mut req = SolveRequest::new(&row.problem, row.method, row.p);
    req.h = row.h;
    req.max_iter = row.iterations;
    req.eps = opts.eps;
    req.seed = row_seed(opts.seed, index);
    req.timing = opts.timing;
    let outcome = solve(&req).and_then(|out| {
        if let Some(dir) = &opts.out_dir {
            write_atomic(&dir.join(format!("row{index:03}.csv")), &write_trace(&out.trace.rows))?;
        }
        Ok(out.summary)
    });
    let (summary, error) = match outcome {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    BenchResult {
        index,
        problem: row.problem.display().to_string(),
        method: row.method.name().into(),
        p: row.p,
        bound_passed: summary.as_ref().and_then(|s| s.bound.map(|b| b.passed)),
        error,
        summary,
    }
}

/// Runs every row; failures are recorded per row and never stop the suite.
pub fn run_suite(rows: &[SuiteRow], opts: &BenchOptions) -> Result<Vec<BenchResult>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    Ok(pool.install(|| {
        rows.par_iter()
            .enumerate()
            .map(|(i, row)| run_row(i, row, opts))
            .collect()
    }))
}

/// Thread cap from `TENSOROPT_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("TENSOROPT_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("TENSOROPT_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_relative_to_base() {
        let text = "# header\n\nf2.spec msn 2 auto 100 # trailing\nlg.spec basic 3 12.5 7\n";
        let rows = parse_suite(text, Path::new("/tmp/suite")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].problem, PathBuf::from("/tmp/suite/f2.spec"));
        assert_eq!(rows[0].h, HChoice::Auto);
        assert_eq!(rows[1].method, Method::Basic);
        assert_eq!(rows[1].h, HChoice::Value(12.5));
        assert_eq!(rows[1].iterations, 7);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_suite("a msn 2 auto", Path::new(".")).is_err());
        assert!(parse_suite("a newton 2 auto 3", Path::new(".")).is_err());
        assert!(parse_suite("a msn two auto 3", Path::new(".")).is_err());
    }

    #[test]
    fn empty_suite_gives_empty_report() {
        let out = run_suite(&[], &BenchOptions::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn missing_problem_is_a_row_error() {
        let rows = parse_suite("nope.spec msn 2 auto 5", Path::new("/nonexistent")).unwrap();
        let out = run_suite(&rows, &BenchOptions::default()).unwrap();
        assert!(out[0].error.is_some());
        assert!(out[0].summary.is_none());
    }

    #[test]
    fn row_seeds_differ() {
        assert_ne!(row_seed(1, 0), row_seed(1, 1));
        assert_ne!(row_seed(1, 0), row_seed(2, 0));
    }
}
