//! CSV and JSON export/import of controls, trajectories, subgradient
//! fields, reports and solver traces.
//!
//! Floats are written with 17 significant digits so re-reading reproduces
//! the value bit-exactly, and repeated runs with identical inputs emit
//! byte-identical files.

use crate::delay::{AdjointTrajectory, StateTrajectory};
use crate::measures::{AtomicMeasure, ControlGrid};
use crate::optimality::OptimalityReport;
use crate::ssn::{SsnResult, StageTrace};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// `t,weight` rows, one per control-grid node.
pub fn control_to_csv(u: &AtomicMeasure) -> String {
    let mut s = String::from("t,weight\n");
    for (t, w) in u.grid().nodes().iter().zip(u.weights()) {
        let _ = writeln!(s, "{},{}", fmt_f64(*t), fmt_f64(*w));
    }
    s
}

pub fn write_control_csv(path: &Path, u: &AtomicMeasure) -> Result<(), IoError> {
    write_file(path, &control_to_csv(u))
}

pub fn read_control_csv(path: &Path) -> Result<AtomicMeasure, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with('t')) {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>, what: &str| -> Result<f64, IoError> {
            s.map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| IoError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("missing {what}"),
                })?
                .parse::<f64>()
                .map_err(|e| IoError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("bad {what}: {e}"),
                })
        };
        nodes.push(parse(parts.next(), "time")?);
        weights.push(parse(parts.next(), "weight")?);
    }
    let grid = ControlGrid::new(nodes).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    AtomicMeasure::new(grid, weights).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })
}

/// Header `t,x0,x1,…`, one row per time node.
pub fn trajectory_to_csv(traj: &StateTrajectory) -> String {
    let nx = traj.nx();
    let mut s = String::from("t");
    for j in 0..nx {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (i, &t) in traj.tgrid().nodes().iter().enumerate() {
        let _ = write!(s, "{}", fmt_f64(t));
        for v in traj.row(i) {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn write_trajectory_csv(path: &Path, traj: &StateTrajectory) -> Result<(), IoError> {
    write_file(path, &trajectory_to_csv(traj))
}

pub fn adjoint_to_csv(phi: &AdjointTrajectory) -> String {
    let nx = phi.nx();
    let mut s = String::from("t");
    for j in 0..nx {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (i, &t) in phi.tgrid().nodes().iter().enumerate() {
        let _ = write!(s, "{}", fmt_f64(t));
        for v in phi.row(i) {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

/// `t,u,lambda` per control node.
pub fn lambda_to_csv(u: &AtomicMeasure, lambda: &[f64]) -> String {
    let mut s = String::from("t,u,lambda\n");
    for ((t, w), l) in u.grid().nodes().iter().zip(u.weights()).zip(lambda) {
        let _ = writeln!(s, "{},{},{}", fmt_f64(*t), fmt_f64(*w), fmt_f64(*l));
    }
    s
}

/// Report JSON with stable keys.
pub fn report_to_json(report: &OptimalityReport) -> serde_json::Value {
    serde_json::json!({
        "F": report.f_value,
        "nu_j": report.nu_j,
        "tikhonov": report.tikhonov,
        "J": report.j_total,
        "norm_u": report.norm_u,
        "support": report.support,
        "lambda_max_abs": report.lambda_max_abs,
        "sign_violation_max": report.sign_violation_max,
    })
}

/// Run summary: unregularized report plus convergence metadata.
pub fn summary_to_json(result: &SsnResult) -> serde_json::Value {
    let mut v = report_to_json(&result.report);
    let obj = v.as_object_mut().unwrap();
    obj.insert("converged".into(), result.converged.into());
    obj.insert("final_c".into(), result.final_c.into());
    obj.insert(
        "support_times".into(),
        result
            .control
            .grid()
            .nodes()
            .iter()
            .enumerate()
            .filter(|(k, _)| result.report.support.contains(k))
            .map(|(_, &t)| t)
            .collect::<Vec<f64>>()
            .into(),
    );
    v
}

/// `c,newton_iter,residual_inf,norm_u,active_plus,active_minus` rows.
pub fn trace_to_csv(trace: &[StageTrace]) -> String {
    let mut s = String::from("c,newton_iter,residual_inf,norm_u,active_plus,active_minus\n");
    for stage in trace {
        for e in &stage.newton {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt_f64(stage.c),
                e.iteration,
                fmt_f64(e.residual_inf),
                fmt_f64(e.norm_u),
                e.active_plus,
                e.active_minus
            );
        }
    }
    s
}

pub fn write_string(path: &Path, contents: &str) -> Result<(), IoError> {
    write_file(path, contents)
}
