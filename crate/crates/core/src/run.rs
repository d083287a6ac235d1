//! Executes a [`RunConfig`]: solves, writes trajectories or the report, and
//! keeps the manifest current.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{convergence_study, ConvergenceReport};
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::grid::{MacroGrid, Scale};
use crate::homogenization::{solve_coupled, solve_memory};
use crate::nonlocal_ops::{Bounds, LongRange};
use crate::output::{macro_csv, product_csv, write_file, Constants, Manifest, Status};
use crate::solvers::{solve_fine, solve_twoscale, Problem};

/// The macro grid a run uses, when it fixes a single one. Convergence runs
/// report the grid of their smallest ε.
fn run_grid(config: &RunConfig, problem: &Problem) -> Result<Option<MacroGrid>> {
    let eps = match (&config.convergence, config.mode) {
        (Some(c), Mode::Convergence) => c.epsilons.last().copied(),
        _ => config.epsilon,
    };
    let scale = eps.map(Scale::from_epsilon).transpose()?;
    if problem.macro_nodes.is_none() && scale.is_none() {
        return Ok(None);
    }
    problem.macro_grid(scale).map(Some)
}

pub fn constants(config: &RunConfig) -> Result<Constants> {
    let problem = config.problem()?;
    let coeffs = &problem.coeffs;
    let bounds = Bounds::new(coeffs);
    let p = coeffs.params();
    let d = config.dim();
    let (k_matrix, k_grid_spacing) = match run_grid(config, &problem)? {
        Some(g) => {
            let k = LongRange::new(&g, p.lambda, p.gamma)?.matrix_k();
            (Some(k[..d].iter().map(|row| row[..d].to_vec()).collect()), Some(g.spacing()))
        }
        None => (None, None),
    };
    let theta_f = coeffs.theta_f();
    Ok(Constants {
        theta_f,
        theta_m: 1.0 - theta_f,
        m_s: bounds.m_s_max(),
        m_l: bounds.m_l_max(),
        bounds,
        k_matrix,
        k_grid_spacing,
    })
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
    pub report: Option<ConvergenceReport>,
}

fn required_scale(config: &RunConfig) -> Result<Scale> {
    config
        .scale()?
        .ok_or_else(|| Error::invalid("fine mode needs [fine] epsilon"))
}

fn execute(config: &RunConfig, problem: &Problem, dir: &Path, manifest: &mut Manifest) -> Result<(Vec<PathBuf>, Option<ConvergenceReport>)> {
    let mut files = Vec::new();
    let mut timed = |name: &str, start: Instant| manifest.wall_times.push((name.to_owned(), start.elapsed().as_secs_f64()));
    match config.mode {
        Mode::Fine => {
            let scale = required_scale(config)?;
            let grid = problem.macro_grid(Some(scale))?;
            let start = Instant::now();
            let s = solve_fine(problem, &grid, scale)?;
            timed("fine", start);
            files.push(write_file(dir, "displacement.csv", &macro_csv(&grid, &s.displacement, "u")?)?);
            files.push(write_file(dir, "velocity.csv", &macro_csv(&grid, &s.velocity, "v")?)?);
        }
        Mode::Twoscale => {
            let grid = problem.macro_grid(config.scale()?)?;
            let start = Instant::now();
            let s = solve_twoscale(problem, &grid)?;
            timed("twoscale", start);
            let cell = &problem.cell;
            files.push(write_file(dir, "displacement.csv", &product_csv(&grid, cell, &s.displacement, "u")?)?);
            files.push(write_file(dir, "velocity.csv", &product_csv(&grid, cell, &s.velocity, "v")?)?);
        }
        Mode::HomogCoupled => {
            let grid = problem.macro_grid(config.scale()?)?;
            let start = Instant::now();
            let s = solve_coupled(problem, &grid)?;
            timed("homog-coupled", start);
            files.push(write_file(dir, "macro_displacement.csv", &macro_csv(&grid, &s.u_h, "uH")?)?);
            files.push(write_file(dir, "corrector.csv", &product_csv(&grid, &problem.cell, &s.r, "r")?)?);
        }
        Mode::HomogMemory => {
            let grid = problem.macro_grid(config.scale()?)?;
            let start = Instant::now();
            let s = solve_memory(problem, &grid)?;
            timed("homog-memory", start);
            files.push(write_file(dir, "macro_displacement.csv", &macro_csv(&grid, &s.u_h, "uH")?)?);
            files.push(write_file(dir, "constitutive_force.csv", &macro_csv(&grid, &s.force, "fH")?)?);
        }
        Mode::Convergence => {
            let spec = config
                .convergence
                .as_ref()
                .ok_or_else(|| Error::invalid("convergence mode needs a [convergence] section"))?;
            let report = convergence_study(problem, spec)?;
            for r in &report.rows {
                manifest.wall_times.push((format!("epsilon={}", r.epsilon), r.runtime));
            }
            files.push(write_file(dir, "report.csv", &report.to_csv())?);
            return Ok((files, Some(report)));
        }
    }
    Ok((files, None))
}

/// Runs `config`, writing into `out` (or the configured directory). The
/// manifest is written before solving and rewritten with the final status.
pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
    let problem = config.problem()?;
    let mut manifest = Manifest::start(
        &config.source,
        config.mode.name(),
        serde_json::to_value(config)?,
        Some(constants(config)?),
    );
    manifest.write(&dir)?;
    log::info!("{} run writing to {}", config.mode, dir.display());
    match execute(config, &problem, &dir, &mut manifest) {
        Ok((files, report)) => {
            manifest.outputs = files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
            let partial = report.as_ref().is_some_and(|r| !r.is_complete());
            if let Some(r) = &report {
                manifest.failures = r.failures.clone();
            }
            manifest.finish(if partial { Status::Partial } else { Status::Complete });
            manifest.write(&dir)?;
            Ok(RunOutcome {
                output_dir: dir,
                files,
                manifest,
                report,
            })
        }
        Err(e) => {
            let e = e.context(format!("{} mode", config.mode));
            manifest.error = Some(e.to_string());
            manifest.finish(Status::Failed);
            manifest.write(&dir)?;
            Err(e)
        }
    }
}
