//! Trajectory CSVs and the run manifest.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every `f64`, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{ProductField, Trajectory, VectorField};
use crate::grid::{CellGrid, MacroGrid};
use crate::nonlocal_ops::Bounds;

fn header(prefix: &str, d: usize) -> String {
    (1..=d).map(|k| format!(",{prefix}{k}")).collect()
}

fn push_floats(line: &mut String, vals: &[f64]) {
    for v in vals {
        write!(line, ",{v:.16e}").expect("writing to a String");
    }
}

/// Columns `t, x1.., u1..`, one row per node and stored time.
pub fn macro_csv(grid: &MacroGrid, traj: &Trajectory<VectorField>, name: &str) -> Result<String> {
    let d = grid.dim();
    let mut out = format!("t{}{}\n", header("x", d), header(name, d));
    for (t, f) in traj.iter() {
        f.check_shape(grid.len(), d)?;
        for n in 0..grid.len() {
            write!(out, "{t:.16e}").expect("writing to a String");
            push_floats(&mut out, &grid.coord(n)[..d]);
            push_floats(&mut out, f.node(n));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Columns `t, x1.., y1.., u1..`, cell index fastest.
pub fn product_csv(grid: &MacroGrid, cell: &CellGrid, traj: &Trajectory<ProductField>, name: &str) -> Result<String> {
    let d = grid.dim();
    let mut out = format!("t{}{}{}\n", header("x", d), header("y", d), header(name, d));
    for (t, f) in traj.iter() {
        f.check_shape(grid.len(), cell.len(), d)?;
        for n in 0..grid.len() {
            let x = grid.coord(n);
            for j in 0..cell.len() {
                write!(out, "{t:.16e}").expect("writing to a String");
                push_floats(&mut out, &x[..d]);
                push_floats(&mut out, &cell.coord(j)[..d]);
                push_floats(&mut out, f.at(n, j));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))?;
    Ok(path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Quantities derived from the configuration before any solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub theta_f: f64,
    pub theta_m: f64,
    pub bounds: Bounds,
    pub m_s: f64,
    pub m_l: f64,
    /// `K` on the macro lattice of the run (leading `d×d` block), if the run
    /// fixes one.
    pub k_matrix: Option<Vec<Vec<f64>>>,
    pub k_grid_spacing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Complete,
    /// Finished with some sub-runs failed.
    Partial,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub config_sha256: String,
    pub mode: String,
    pub status: Status,
    pub started: f64,
    pub finished: Option<f64>,
    pub resolved: serde_json::Value,
    pub constants: Option<Constants>,
    pub outputs: Vec<String>,
    pub error: Option<String>,
    pub failures: Vec<(f64, String)>,
    pub wall_times: Vec<(String, f64)>,
}

impl Manifest {
    pub fn start(source: &str, mode: &str, resolved: serde_json::Value, constants: Option<Constants>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(source.as_bytes()),
            mode: mode.to_owned(),
            status: Status::Running,
            started: now(),
            finished: None,
            resolved,
            constants,
            outputs: Vec::new(),
            error: None,
            failures: Vec::new(),
            wall_times: Vec::new(),
        }
    }

    pub fn finish(&mut self, status: Status) {
        self.status = status;
        self.finished = Some(now());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_file(dir, "manifest.json", &serde_json::to_string_pretty(self)?)
    }
}
