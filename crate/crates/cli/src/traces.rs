//! Trace files: one CSV row per outer iteration.

use std::fs;
use std::io::Write;
use std::path::Path;

use tensoropt::distsim::DistRow;
use tensoropt::driver::TraceRow;
use tensoropt::oracle::CallCounters;

use crate::CliError;

pub const TRACE_HEADER: &str =
    "k,f_value,f_gap,grad_norm,lambda,step_norm,inner_iters,n_f,n_grad,n_hess,n_d3,n_comp,elapsed_s";

pub const DIST_HEADER: &str = "round,f_gap,grad_norm,comm_rounds,inner_iters,elapsed_s";

/// 17 significant digits, enough to parse back to the same bits.
fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

pub fn write_trace(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let c = &r.counters;
        let fields = [
            r.k.to_string(),
            float(r.f_value),
            opt(r.f_gap),
            float(r.grad_norm),
            opt(r.lambda),
            float(r.step_norm),
            r.inner_iters.to_string(),
            c.n_value.to_string(),
            c.n_grad.to_string(),
            c.n_hess.to_string(),
            c.n_d3.to_string(),
            c.n_component.to_string(),
            float(r.elapsed_s),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn bad(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Format(format!("trace line {line}: {}", msg.into()))
}

fn field<T: std::str::FromStr>(cells: &[&str], i: usize, line: usize) -> Result<T, CliError> {
    cells[i]
        .parse()
        .map_err(|_| bad(line, format!("cannot parse column {} from `{}`", i + 1, cells[i])))
}

fn opt_field(cells: &[&str], i: usize, line: usize) -> Result<Option<f64>, CliError> {
    if cells[i].is_empty() {
        Ok(None)
    } else {
        field(cells, i, line).map(Some)
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 13 {
            return Err(bad(n, format!("expected 13 columns, found {}", cells.len())));
        }
        rows.push(TraceRow {
            k: field(&cells, 0, n)?,
            f_value: field(&cells, 1, n)?,
            f_gap: opt_field(&cells, 2, n)?,
            grad_norm: field(&cells, 3, n)?,
            lambda: opt_field(&cells, 4, n)?,
            step_norm: field(&cells, 5, n)?,
            inner_iters: field(&cells, 6, n)?,
            counters: CallCounters {
                n_value: field(&cells, 7, n)?,
                n_grad: field(&cells, 8, n)?,
                n_hess: field(&cells, 9, n)?,
                n_d3: field(&cells, 10, n)?,
                n_component: field(&cells, 11, n)?,
            },
            elapsed_s: field(&cells, 12, n)?,
        });
    }
    Ok(rows)
}

pub fn write_dist_trace(rows: &[DistRow]) -> String {
    let mut out = String::from(DIST_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.round.to_string(),
            opt(r.f_gap),
            float(r.grad_norm),
            r.comm_rounds.to_string(),
            r.inner_iters.to_string(),
            float(r.elapsed_s),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes through a sibling temporary file and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(contents.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, gap: Option<f64>, lambda: Option<f64>) -> TraceRow {
        TraceRow {
            k,
            f_value: 0.1 + 0.2,
            f_gap: gap,
            grad_norm: 1.0 / 3.0,
            lambda,
            step_norm: f64::MIN_POSITIVE,
            inner_iters: 17,
            counters: CallCounters {
                n_value: 1,
                n_grad: 2,
                n_hess: 3,
                n_d3: 4,
                n_component: 5,
            },
            elapsed_s: 1e-300,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![row(0, None, None), row(1, Some(-0.0), Some(0.05)), row(2, Some(1e300), Some(7.0))];
        let text = write_trace(&rows);
        assert!(text.starts_with(TRACE_HEADER));
        let back = parse_trace(&text).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a, b);
            assert_eq!(a.f_value.to_bits(), b.f_value.to_bits());
        }
    }

    #[test]
    fn empty_cells_for_missing_values() {
        let text = write_trace(&[row(0, None, None)]);
        let line = text.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[2], "");
        assert_eq!(cells[4], "");
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_trace("k,f\n").is_err());
        let text = format!("{TRACE_HEADER}\n1,2,3\n");
        assert!(parse_trace(&text).is_err());
        let text = format!("{TRACE_HEADER}\nx,1,,1,,1,1,1,1,1,1,1,1\n");
        assert!(parse_trace(&text).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_atomic(&p, "a").unwrap();
        write_atomic(&p, "b").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
