//! Run configuration: a sectioned TOML file, checked in full so that every
//! problem is reported at once with its key path.
//!
//! ```toml
//! mode = "convergence"          # fine | twoscale | homog-coupled | homog-memory | convergence
//! output_dir = "out"
//! integrator = "verlet"         # or "series"
//!
//! [microstructure]
//! shape = "ball"                # ball | fiber | slab
//! R_f = 0.25
//! c_f = 10.0
//! c_m = 1.0
//! c_i = 3.0
//! rho_f = 2.0
//! rho_m = 1.0
//! delta = 0.1
//! lambda = 1.0
//! gamma = 0.25
//!
//! [grid]
//! dim = 1
//! lower = [0.0]
//! upper = [1.0]
//! cell_nodes = 64
//!
//! [problem]
//! u0 = ["sin(pi*x1)*(1 + 0.5*cos(2*pi*y1))"]
//! v0 = ["0"]
//! b = ["0"]
//! t_final = 1.0
//! dt = 0.01
//!
//! [convergence]
//! epsilons = [0.5, 0.25, 0.125]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use crate::analysis::ConvergenceSpec;
use crate::error::{Error, Result};
use crate::expr::VectorExpr;
use crate::grid::{CellMap, Scale};
use crate::microstructure::{CellGeometry, Microstructure, PhaseParams, Severity, Shape};
use crate::nonlocal_ops::DEFAULT_ASSEMBLY_CAP;
use crate::propagators::{step_count, Integrator};
use crate::solvers::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fine,
    Twoscale,
    HomogCoupled,
    HomogMemory,
    Convergence,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Fine,
        Mode::Twoscale,
        Mode::HomogCoupled,
        Mode::HomogMemory,
        Mode::Convergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Fine => "fine",
            Mode::Twoscale => "twoscale",
            Mode::HomogCoupled => "homog-coupled",
            Mode::HomogMemory => "homog-memory",
            Mode::Convergence => "convergence",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(Mode::name).collect();
            Error::invalid(format!("unknown mode `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully checked run description.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub integrator: Integrator,
    pub microstructure: Microstructure,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cell_nodes: usize,
    pub macro_nodes: Option<usize>,
    pub u0: Vec<String>,
    pub v0: Vec<String>,
    pub b: Vec<String>,
    pub t_final: f64,
    pub dt: f64,
    pub stride: usize,
    pub assembly_cap: usize,
    /// `[fine] epsilon`; also selects the matched grid for the two-scale modes.
    pub epsilon: Option<f64>,
    pub convergence: Option<ConvergenceSpec>,
    /// Raw file contents, hashed into the manifest.
    #[serde(skip)]
    pub source: String,
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.microstructure.dim()
    }

    pub fn scale(&self) -> Result<Option<Scale>> {
        self.epsilon.map(Scale::from_epsilon).transpose()
    }

    pub fn problem(&self) -> Result<Problem> {
        let parse = |v: &[String]| VectorExpr::parse(v);
        let mut p = Problem::new(
            self.microstructure,
            self.cell_nodes,
            &self.lower,
            &self.upper,
            self.macro_nodes,
            parse(&self.u0)?,
            parse(&self.v0)?,
            parse(&self.b)?,
            self.t_final,
            self.dt,
        )?;
        p.stride = self.stride;
        p.integrator = self.integrator;
        p.assembly_cap = self.assembly_cap;
        Ok(p)
    }
}

/// Collects typed lookups and their failures.
struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn err(&mut self, path: &str, msg: impl fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn section<'a>(&mut self, root: &'a Table, name: &str, required: bool) -> Option<&'a Table> {
        match root.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.err(name, "must be a section");
                None
            }
            None => {
                if required {
                    self.err(name, "missing section");
                }
                None
            }
        }
    }

    fn value<'a>(&mut self, t: &'a Table, sec: &str, key: &str, required: bool) -> Option<&'a Value> {
        let v = t.get(key);
        if v.is_none() && required {
            self.err(&join(sec, key), "missing key");
        }
        v
    }

    fn num(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.err(path, format!("expected a number, got {}", v.type_str()));
                None
            }
        }
    }

    fn f64(&mut self, t: &Table, sec: &str, key: &str) -> Option<f64> {
        let v = self.value(t, sec, key, true)?;
        self.num(&join(sec, key), v)
    }

    fn opt_f64(&mut self, t: &Table, sec: &str, key: &str) -> Option<f64> {
        let v = self.value(t, sec, key, false)?;
        self.num(&join(sec, key), v)
    }

    fn count(&mut self, t: &Table, sec: &str, key: &str, required: bool) -> Option<usize> {
        let v = self.value(t, sec, key, required)?;
        match v {
            Value::Integer(i) if *i > 0 => Some(*i as usize),
            _ => {
                self.err(&join(sec, key), format!("expected a positive integer, got {v}"));
                None
            }
        }
    }

    fn string(&mut self, t: &Table, sec: &str, key: &str, required: bool) -> Option<String> {
        let v = self.value(t, sec, key, required)?;
        match v {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.err(&join(sec, key), format!("expected a string, got {}", v.type_str()));
                None
            }
        }
    }

    fn nums(&mut self, t: &Table, sec: &str, key: &str, required: bool) -> Option<Vec<f64>> {
        let v = self.value(t, sec, key, required)?;
        let path = join(sec, key);
        let Value::Array(items) = v else {
            self.err(&path, format!("expected an array of numbers, got {}", v.type_str()));
            return None;
        };
        items
            .iter()
            .enumerate()
            .map(|(i, x)| self.num(&format!("{path}[{i}]"), x))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }

    /// An array of expression strings, or a single string in 1D.
    fn exprs(&mut self, t: &Table, sec: &str, key: &str, dim: Option<usize>) -> Option<Vec<String>> {
        let v = self.value(t, sec, key, true)?;
        let path = join(sec, key);
        let list: Vec<String> = match v {
            Value::String(s) => vec![s.clone()],
            Value::Array(items) => {
                let strs: Option<Vec<String>> = items.iter().map(|x| x.as_str().map(str::to_owned)).collect();
                match strs {
                    Some(s) => s,
                    None => {
                        self.err(&path, "expected an array of expression strings");
                        return None;
                    }
                }
            }
            _ => {
                self.err(&path, format!("expected expression strings, got {}", v.type_str()));
                return None;
            }
        };
        if let Some(d) = dim {
            if list.len() != d {
                self.err(&path, format!("has {} components, expected {d}", list.len()));
                return None;
            }
        }
        if let Err(e) = VectorExpr::parse(&list) {
            self.err(&path, e);
            return None;
        }
        Some(list)
    }

    fn unknown_keys(&mut self, t: &Table, sec: &str, known: &[&str]) {
        for k in t.keys().filter(|k| !known.contains(&k.as_str())) {
            self.err(&join(sec, k), "unknown key");
        }
    }
}

fn join(sec: &str, key: &str) -> String {
    if sec.is_empty() {
        key.to_owned()
    } else {
        format!("{sec}.{key}")
    }
}

const TOP_KEYS: &[&str] = &[
    "mode",
    "output_dir",
    "integrator",
    "assembly_cap",
    "microstructure",
    "grid",
    "problem",
    "fine",
    "convergence",
];
const MICRO_KEYS: &[&str] = &[
    "shape", "R_f", "c_f", "c_m", "c_i", "rho_f", "rho_m", "delta", "lambda", "gamma", "beta",
];
const GRID_KEYS: &[&str] = &["dim", "lower", "upper", "cell_nodes", "macro_nodes"];
const PROBLEM_KEYS: &[&str] = &["u0", "v0", "b", "t_final", "dt", "stride"];
const CONV_KEYS: &[&str] = &["epsilons", "p", "sample_times", "window_lower", "window_upper"];

pub fn parse_config(path: &Path, mode: Option<&str>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    parse_config_with(&text, mode)
}

/// Parses and checks a configuration, reporting every problem found.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    parse_config_with(text, None)
}

/// [`parse_config_str`] with the `mode` key replaced.
pub fn parse_config_with(text: &str, mode: Option<&str>) -> Result<RunConfig> {
    let mut root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
    if let Some(m) = mode {
        root.insert("mode".into(), Value::String(m.into()));
    }
    let mut r = Reader { errors: Vec::new() };
    r.unknown_keys(&root, "", TOP_KEYS);

    let mode = r.string(&root, "", "mode", true).and_then(|s| match Mode::from_name(&s) {
        Ok(m) => Some(m),
        Err(e) => {
            r.err("mode", e);
            None
        }
    });
    let output_dir = PathBuf::from(r.string(&root, "", "output_dir", false).unwrap_or_else(|| "out".into()));
    let integrator = match r.string(&root, "", "integrator", false).as_deref() {
        None | Some("verlet") => Integrator::Verlet,
        Some("series") => Integrator::Series,
        Some(other) => {
            r.err("integrator", format!("unknown integrator `{other}`; expected verlet or series"));
            Integrator::Verlet
        }
    };
    let assembly_cap = r.count(&root, "", "assembly_cap", false).unwrap_or(DEFAULT_ASSEMBLY_CAP);

    let empty = Table::new();
    let grid = r.section(&root, "grid", true).unwrap_or(&empty);
    r.unknown_keys(grid, "grid", GRID_KEYS);
    let dim = r.count(grid, "grid", "dim", true).and_then(|d| {
        if (1..=3).contains(&d) {
            Some(d)
        } else {
            r.err("grid.dim", format!("must be 1, 2 or 3, got {d}"));
            None
        }
    });
    let lower = r.nums(grid, "grid", "lower", true);
    let upper = r.nums(grid, "grid", "upper", true);
    if let (Some(d), Some(lo), Some(hi)) = (dim, &lower, &upper) {
        if lo.len() != d || hi.len() != d {
            r.err("grid", format!("lower and upper need {d} entries"));
        } else if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            r.err("grid", "lower must be below upper on every axis");
        }
    }
    let cell_nodes = r.count(grid, "grid", "cell_nodes", true);
    let macro_nodes = r.count(grid, "grid", "macro_nodes", false);

    let micro_t = r.section(&root, "microstructure", true).unwrap_or(&empty);
    r.unknown_keys(micro_t, "microstructure", MICRO_KEYS);
    let sec = "microstructure";
    let shape = r.string(micro_t, sec, "shape", true);
    let size = r.f64(micro_t, sec, "R_f");
    let mut get = |k: &str| r.f64(micro_t, sec, k);
    let vals = ["c_f", "c_m", "c_i", "rho_f", "rho_m", "delta", "lambda", "gamma"].map(&mut get);
    let beta = r.opt_f64(micro_t, sec, "beta");
    let microstructure = match (dim, shape, size, vals) {
        (Some(d), Some(shape), Some(size), [Some(c_f), Some(c_m), Some(c_i), Some(rho_f), Some(rho_m), Some(delta), Some(lambda), Some(gamma)]) => {
            let params = PhaseParams {
                c_f,
                c_m,
                c_i,
                rho_f,
                rho_m,
                delta,
                lambda,
                gamma,
                beta,
            };
            let built = Shape::from_name(&shape, size)
                .and_then(|s| CellGeometry::new(d, s))
                .and_then(|g| Microstructure::new(g, params));
            match built {
                Ok(m) => {
                    for v in m.validate() {
                        match v.severity {
                            Severity::Error => r.err(sec, v.message),
                            Severity::Warning => log::warn!("{sec}: {}", v.message),
                        }
                    }
                    Some(m)
                }
                Err(Error::Config(list)) => {
                    list.into_iter().for_each(|m| r.err(sec, m));
                    None
                }
                Err(e) => {
                    r.err(sec, e);
                    None
                }
            }
        }
        _ => None,
    };

    let prob = r.section(&root, "problem", true).unwrap_or(&empty);
    r.unknown_keys(prob, "problem", PROBLEM_KEYS);
    let u0 = r.exprs(prob, "problem", "u0", dim);
    let v0 = r.exprs(prob, "problem", "v0", dim);
    let b = r.exprs(prob, "problem", "b", dim);
    let t_final = r.f64(prob, "problem", "t_final");
    let dt = r.f64(prob, "problem", "dt");
    let stride = r.count(prob, "problem", "stride", false).unwrap_or(1);
    if let (Some(t), Some(dt)) = (t_final, dt) {
        if let Err(e) = step_count(dt, t) {
            r.err("problem.dt", e);
        }
    }

    let epsilon = match r.section(&root, "fine", false) {
        Some(t) => {
            r.unknown_keys(t, "fine", &["epsilon"]);
            r.f64(t, "fine", "epsilon")
        }
        None => None,
    };
    let convergence = r.section(&root, "convergence", mode == Some(Mode::Convergence)).map(|t| {
        r.unknown_keys(t, "convergence", CONV_KEYS);
        let epsilons = r.nums(t, "convergence", "epsilons", true).unwrap_or_default();
        let p = r.opt_f64(t, "convergence", "p").unwrap_or(2.0);
        if !(p > 1.5) {
            r.err("convergence.p", format!("must exceed 3/2, got {p}"));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            r.err("convergence.epsilons", "must be strictly decreasing");
        }
        let sample_times = r
            .nums(t, "convergence", "sample_times", false)
            .unwrap_or_else(|| t_final.into_iter().collect());
        let window_lower = r.nums(t, "convergence", "window_lower", false).or_else(|| lower.clone()).unwrap_or_default();
        let window_upper = r.nums(t, "convergence", "window_upper", false).or_else(|| upper.clone()).unwrap_or_default();
        ConvergenceSpec {
            epsilons,
            p,
            sample_times,
            window_lower,
            window_upper,
        }
    });

    match mode {
        Some(Mode::Fine) if !root.contains_key("fine") => {
            r.err("fine", "fine mode needs [fine] epsilon")
        }
        Some(Mode::Twoscale | Mode::HomogCoupled | Mode::HomogMemory) if epsilon.is_none() && macro_nodes.is_none() => {
            r.err("grid.macro_nodes", "set grid.macro_nodes or [fine] epsilon to fix the macro grid")
        }
        _ => {}
    }

    if !r.errors.is_empty() {
        return Err(Error::Config(r.errors));
    }
    let config = RunConfig {
        mode: mode.expect("checked"),
        output_dir,
        integrator,
        microstructure: microstructure.expect("checked"),
        lower: lower.expect("checked"),
        upper: upper.expect("checked"),
        cell_nodes: cell_nodes.expect("checked"),
        macro_nodes,
        u0: u0.expect("checked"),
        v0: v0.expect("checked"),
        b: b.expect("checked"),
        t_final: t_final.expect("checked"),
        dt: dt.expect("checked"),
        stride,
        assembly_cap,
        epsilon,
        convergence,
        source: text.to_owned(),
    };
    check_scales(&config)?;
    Ok(config)
}

/// Commensurability of every ε with the grids, and the grid-level checks of
/// the operators, reported together.
fn check_scales(config: &RunConfig) -> Result<()> {
    let problem = config.problem().map_err(|e| Error::Config(vec![format!("problem: {e}")]))?;
    let mut errors = Vec::new();
    let mut check = |path: String, eps: f64| {
        let res = Scale::from_epsilon(eps).and_then(|s| {
            let g = problem.macro_grid(Some(s))?;
            CellMap::new(&g, &problem.cell, s)?;
            let p = problem.coeffs.params();
            crate::nonlocal_ops::FineOperator::new(&g, &problem.coeffs, s)?;
            crate::nonlocal_ops::LongRange::new(&g, p.lambda, p.gamma).map(|_| ())
        });
        if let Err(e) = res {
            errors.push(format!("{path}: {e}"));
        }
    };
    if let Some(eps) = config.epsilon {
        check("fine.epsilon".into(), eps);
    }
    if config.mode == Mode::Convergence {
        if let Some(c) = &config.convergence {
            for (i, &e) in c.epsilons.iter().enumerate() {
                check(format!("convergence.epsilons[{i}]"), e);
            }
            for (i, t) in c.sample_times.iter().enumerate() {
                let every = config.dt * config.stride as f64;
                let k = (t / every).round();
                if !(*t >= 0.0 && *t <= config.t_final) {
                    errors.push(format!("convergence.sample_times[{i}]: {t} lies outside [0, t_final]"));
                } else if (k * every - t).abs() > 1e-9 * every && (t - config.t_final).abs() > 1e-12 {
                    errors.push(format!(
                        "convergence.sample_times[{i}]: {t} is not a stored time (every {every} = stride·dt)"
                    ));
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
mode = "fine"
[microstructure]
shape = "ball"
R_f = 0.25
c_f = 10.0
c_m = 1.0
c_i = 3.0
rho_f = 2.0
rho_m = 1.0
delta = 0.2
lambda = 1.0
gamma = 0.25
[grid]
dim = 1
lower = [0.0]
upper = [1.0]
cell_nodes = 16
[problem]
u0 = ["0"]
v0 = ["0"]
b = ["0"]
t_final = 0.1
dt = 0.01
[fine]
epsilon = 0.5
"#;

    #[test]
    fn minimal_fine_config_fills_defaults() {
        let c = parse_config_str(BASE).unwrap();
        assert_eq!(c.mode, Mode::Fine);
        assert_eq!(c.stride, 1);
        assert_eq!(c.integrator, Integrator::Verlet);
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn incommensurate_epsilon_names_the_field() {
        let err = parse_config_str(&BASE.replace("epsilon = 0.5", "epsilon = 0.3")).unwrap_err();
        assert!(err.to_string().contains("fine.epsilon"), "{err}");
    }

    #[test]
    fn unknown_mode_lists_choices() {
        let err = parse_config_str(&BASE.replace("mode = \"fine\"", "mode = \"coarse\"")).unwrap_err();
        let s = err.to_string();
        assert!(s.contains("mode") && s.contains("homog-memory"), "{s}");
    }

    #[test]
    fn all_errors_are_reported() {
        let text = BASE.replace("c_f = 10.0\n", "").replace("u0 = [\"0\"]", "u0 = [\"foo(\"]");
        let Error::Config(list) = parse_config_str(&text).unwrap_err() else {
            panic!("expected config errors")
        };
        assert!(list.iter().any(|e| e.starts_with("microstructure.c_f")), "{list:?}");
        assert!(list.iter().any(|e| e.starts_with("problem.u0")), "{list:?}");
    }
}
