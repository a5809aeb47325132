//! CSV exports. Floats are written with 17 significant digits so they read
//! back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::driver::{Row, RunRecord, Snapshot};
use crate::error::{Error, Result};

pub const TIMESERIES_HEADER: [&str; 16] = [
    "t",
    "p_err_l2",
    "p_err_t_l2",
    "p_err_s_l2",
    "theta_err_linf",
    "theta_err_t_linf",
    "theta_err_s_l2",
    "v1",
    "v2",
    "psi_l2",
    "phi_sup",
    "decay_condition",
    "residual_norm",
    "iterations",
    "degraded",
    "identity_error",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn row_line(r: &Row) -> String {
    let n = &r.norms;
    let floats = [
        n.t,
        n.p_err_l2,
        n.p_err_t_l2,
        n.p_err_s_l2,
        n.theta_err_linf,
        n.theta_err_t_linf,
        n.theta_err_s_l2,
        r.v1,
        r.v2,
        r.psi_l2,
        r.phi_sup,
    ];
    let mut s = floats.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",");
    let _ = write!(
        s,
        ",{},{},{},{},{}",
        r.decay_condition as u8,
        fmt_f64(r.residual_norm),
        r.iterations,
        r.degraded as u8,
        fmt_f64(r.identity_error)
    );
    s
}

pub fn timeseries_csv(rows: &[Row]) -> String {
    let mut out = TIMESERIES_HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&row_line(r));
        out.push('\n');
    }
    out
}

pub fn plot_csv(rows: &[Row]) -> String {
    let mut out = String::from("t,p_err_l2,p_err_t_l2\n");
    for r in rows {
        let n = &r.norms;
        let _ = writeln!(out, "{},{},{}", fmt_f64(n.t), fmt_f64(n.p_err_l2), fmt_f64(n.p_err_t_l2));
    }
    out
}

pub fn snapshot_csv(s: &Snapshot) -> String {
    let mut out = format!("# t = {}\ns,p_y,p_z,theta,theta_star\n", fmt_f64(s.t));
    for i in 0..s.s.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(s.s[i]),
            fmt_f64(s.p[i].x),
            fmt_f64(s.p[i].y),
            fmt_f64(s.theta[i]),
            fmt_f64(s.theta_star[i])
        );
    }
    out
}

/// Parse a time-series file back into its columns, in header order.
pub fn parse_timeseries(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Invalid("empty time-series file".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let vals = line
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| Error::Invalid(format!("row {}: {e}", k + 1))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != header.len() {
            return Err(Error::Invalid(format!("row {} has {} fields", k + 1, vals.len())));
        }
        rows.push(vals);
    }
    Ok((header, rows))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|source| Error::Io { path, source })
}

/// Write `timeseries.csv`, `snapshots/frame_NNNNN.csv`, the optional
/// `plot.csv` and, after a failure, `failure_state.csv`.
pub fn export(record: &RunRecord, out_dir: &Path, plot_bundle: bool) -> Result<()> {
    let snap_dir = out_dir.join("snapshots");
    fs::create_dir_all(&snap_dir).map_err(|source| Error::Io { path: snap_dir.clone(), source })?;
    write(out_dir.join("timeseries.csv"), &timeseries_csv(&record.rows))?;
    for (k, s) in record.snapshots.iter().enumerate() {
        write(snap_dir.join(format!("frame_{k:05}.csv")), &snapshot_csv(s))?;
    }
    if plot_bundle {
        write(out_dir.join("plot.csv"), &plot_csv(&record.rows))?;
    }
    if let Some(s) = &record.failure_state {
        write(out_dir.join("failure_state.csv"), &snapshot_csv(s))?;
    }
    Ok(())
}
