//! Diagnostics comparing the fine-scale and two-scale solutions: norms, the
//! error field and its forcing, the error bound, two-scale pairings, window
//! averages, ε sweeps and energy.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Point, VectorExpr};
use crate::field::{dot, ProductField, Trajectory, VectorField};
use crate::grid::{CellGrid, CellMap, MacroGrid, Scale};
use crate::homogenization::split;
use crate::nonlocal_ops::{assemble_dense, tmul_add, LinearOperator, LongRange, ShortRange};
use crate::propagators::SeriesPropagator;
use crate::solvers::{rescale_field, solve_fine, solve_twoscale, Problem};

fn node_norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn check_p(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::invalid(format!("norm exponent must be >= 1, got {p}")));
    }
    Ok(())
}

fn weighted_norm<'a>(nodes: impl Iterator<Item = &'a [f64]>, weight: f64, p: f64) -> Result<f64> {
    check_p(p)?;
    if p.is_infinite() {
        return Ok(nodes.map(node_norm).fold(0.0, f64::max));
    }
    let s: f64 = nodes.map(|v| node_norm(v).powf(p)).sum();
    Ok((weight * s).powf(1.0 / p))
}

/// `(Σ_i w |f_i|^p)^{1/p}` with the Euclidean magnitude per node; `p = ∞`
/// gives the largest magnitude.
pub fn lp_norm(f: &VectorField, grid: &MacroGrid, p: f64) -> Result<f64> {
    f.check_shape(grid.len(), grid.dim())?;
    weighted_norm(f.as_slice().chunks(f.components()), grid.weight(), p)
}

/// [`lp_norm`] over `Ω × Y`.
pub fn lp_norm_product(f: &ProductField, grid: &MacroGrid, cell: &CellGrid, p: f64) -> Result<f64> {
    f.check_shape(grid.len(), cell.len(), grid.dim())?;
    weighted_norm(f.as_slice().chunks(f.components()), grid.weight() * cell.weight(), p)
}

/// `e^ε = u^ε - U(x, x/ε)` at every stored time.
pub fn error_field(
    fine: &Trajectory<VectorField>,
    twoscale: &Trajectory<ProductField>,
    map: &CellMap,
) -> Result<Trajectory<VectorField>> {
    fine.check_times(&twoscale.times)?;
    let frames = fine
        .frames
        .iter()
        .zip(&twoscale.frames)
        .map(|(u, big)| {
            let r = rescale_field(big, map)?;
            u.check_shape(r.nodes(), r.components())?;
            let data = u.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a - b).collect();
            VectorField::from_vec(u.components(), data)
        })
        .collect::<Result<_>>()?;
    Ok(Trajectory {
        times: fine.times.clone(),
        frames,
    })
}

/// The three parts of the forcing in the error equation
/// `ë^ε = A^ε e^ε + ρ_ε^{-1}(d_{S,1} + d_{S,2} + d_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingTerms {
    /// `Σ_{x+εz ∈ Ω} α T(z) (U(x+εz, y+z) - U(x, y+z))`.
    pub d_s1: VectorField,
    /// `-Σ_{x+εz ∉ Ω} α T(z) (U(x, y+z) - U(x, y))`.
    pub d_s2: VectorField,
    /// `Σ_{x̂ ∈ Ω} λ T(ξ) (U(x̂, x̂/ε) - ⟨U⟩(x̂))`.
    pub d_l: VectorField,
    /// `ρ_ε^{-1}(d_{S,1} + d_{S,2} + d_L)`.
    pub total: VectorField,
}

/// Evaluates the forcing terms of one two-scale frame `U` with `y = x/ε`.
/// The short-range sums use the rescaled bond lattice of the fine operator, so
/// on matched grids the error identity holds exactly at the discrete level.
pub fn forcing_terms(u: &ProductField, long: &LongRange, short: &ShortRange) -> Result<ForcingTerms> {
    let grid = short.grid();
    let (d, nx) = (grid.dim(), grid.len());
    let cell = short.cell();
    u.check_shape(nx, cell.len(), d)?;
    let map = short.map();
    let coeffs = short.coeffs();
    let stride = map.stride() as i64;
    let avg = u.cell_average();
    let resc = rescale_field(u, map)?;
    let mut s1 = vec![0.0; nx * d];
    let mut s2 = vec![0.0; nx * d];
    let mut dl = vec![0.0; nx * d];
    s1.par_chunks_mut(d)
        .zip(s2.par_chunks_mut(d))
        .zip(dl.par_chunks_mut(d))
        .enumerate()
        .for_each(|(n, ((s1, s2), dl))| {
            let jn = map.cell_of(n);
            let mut diff = [0.0; 3];
            for b in short.bonds() {
                let steps = b.steps.map(|s| s * stride);
                let jz = cell.wrapped(jn, steps);
                let a = coeffs.alpha(jn, jz);
                match grid.shifted(n, b.steps) {
                    Some(m) => {
                        let (far, near) = (u.at(m, jz), u.at(n, jz));
                        for c in 0..d {
                            diff[c] = a * (far[c] - near[c]);
                        }
                        tmul_add(&b.tensor, &diff[..d], s1);
                    }
                    None => {
                        let (far, near) = (u.at(n, jz), u.at(n, jn));
                        for c in 0..d {
                            diff[c] = -a * (far[c] - near[c]);
                        }
                        tmul_add(&b.tensor, &diff[..d], s2);
                    }
                }
            }
            for b in long.bonds() {
                if let Some(m) = grid.shifted(n, b.steps) {
                    let (r, h) = (resc.node(m), avg.node(m));
                    for c in 0..d {
                        diff[c] = r[c] - h[c];
                    }
                    tmul_add(&b.tensor, &diff[..d], dl);
                }
            }
        });
    let q = short.inv_rho_nodes();
    let total = (0..nx * d).map(|i| q[i / d] * (s1[i] + s2[i] + dl[i])).collect();
    Ok(ForcingTerms {
        d_s1: VectorField::from_vec(d, s1)?,
        d_s2: VectorField::from_vec(d, s2)?,
        d_l: VectorField::from_vec(d, dl)?,
        total: VectorField::from_vec(d, total)?,
    })
}

/// Total forcing at every stored time of a two-scale trajectory.
pub fn forcing_trajectory(
    u: &Trajectory<ProductField>,
    long: &LongRange,
    short: &ShortRange,
) -> Result<Trajectory<VectorField>> {
    u.try_map(|f| Ok(forcing_terms(f, long, short)?.total))
}

/// Common step of uniformly spaced times starting at 0.
fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::invalid("need at least two stored times"));
    }
    if times[0] != 0.0 {
        return Err(Error::invalid("stored times must start at t = 0"));
    }
    let h = times[1] - times[0];
    let uniform = times
        .iter()
        .enumerate()
        .all(|(k, t)| (t - k as f64 * h).abs() <= 1e-9 * t.abs().max(h));
    if !(h > 0.0) || !uniform {
        return Err(Error::invalid("stored times are not uniformly spaced"));
    }
    Ok(h)
}

/// Solves `ë = A e + d`, `e(0) = ė(0) = 0`, with `d` linear between the stored
/// times, by exact series stepping of the assembled `A`.
pub fn error_from_forcing(
    d: &Trajectory<VectorField>,
    a: &dyn LinearOperator,
    cap: usize,
) -> Result<Trajectory<VectorField>> {
    let h = uniform_step(&d.times)?;
    let dense = assemble_dense(a, cap).map_err(|e| e.context("error reconstruction"))?;
    let prop = SeriesPropagator::from_dense(&dense, h)?;
    let comps = d.frames[0].components();
    let n = a.len();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut out = Trajectory::new();
    out.push(0.0, VectorField::from_vec(comps, u.clone())?);
    for k in 1..d.len() {
        let (g0, g1) = (d.frames[k - 1].as_slice(), d.frames[k].as_slice());
        if g0.len() != n || g1.len() != n {
            return Err(Error::mismatch("forcing length differs from the operator size"));
        }
        (u, v) = prop.advance(&u, &v, Some((g0, g1)));
        out.push(d.times[k], VectorField::from_vec(comps, u.clone())?);
    }
    Ok(out)
}

/// `β(t) = ∫_0^t M^{-1/2} sinh(√M (t-τ)) φ(τ) dτ` at the stored times, with
/// `φ` linear between them; `β` solves `β̈ = Mβ + φ` from rest.
pub fn error_bound(times: &[f64], norms: &[f64], m: f64) -> Result<Vec<f64>> {
    if times.len() != norms.len() {
        return Err(Error::mismatch("one norm per stored time is needed"));
    }
    if !(m >= 0.0) {
        return Err(Error::invalid(format!("bound constant must be >= 0, got {m}")));
    }
    let h = uniform_step(times)?;
    let prop = SeriesPropagator::from_dense(&DMatrix::from_element(1, 1, m), h)?;
    let mut state = (vec![0.0], vec![0.0]);
    let mut out = vec![0.0];
    for w in norms.windows(2) {
        state = prop.advance(&state.0, &state.1, Some((&w[..1], &w[1..])));
        out.push(state.0[0]);
    }
    Ok(out)
}

fn check_components(psi: &VectorExpr, d: usize) -> Result<()> {
    if psi.len() != d {
        return Err(Error::mismatch(format!("test function has {} components, expected {d}", psi.len())));
    }
    Ok(())
}

fn point(grid: &MacroGrid, cell: &CellGrid, n: usize, j: usize) -> Point {
    Point {
        x: grid.coord(n),
        y: cell.coord(j),
        t: 0.0,
    }
}

/// `∫_Ω v^ε(x) · ψ(x, x/ε) dx` by macro quadrature.
pub fn twoscale_pairing(v: &VectorField, psi: &VectorExpr, grid: &MacroGrid, cell: &CellGrid, map: &CellMap) -> Result<f64> {
    let d = grid.dim();
    v.check_shape(grid.len(), d)?;
    check_components(psi, d)?;
    let mut buf = vec![0.0; d];
    let mut s = 0.0;
    for n in 0..grid.len() {
        psi.eval_into(&point(grid, cell, n, map.cell_of(n)), &mut buf)?;
        s += dot(v.node(n), &buf);
    }
    Ok(grid.weight() * s)
}

/// `∫_Ω ∫_Y v(x, y) · ψ(x, y) dy dx` by product quadrature.
pub fn pairing_limit(v: &ProductField, psi: &VectorExpr, grid: &MacroGrid, cell: &CellGrid) -> Result<f64> {
    let d = grid.dim();
    v.check_shape(grid.len(), cell.len(), d)?;
    check_components(psi, d)?;
    let mut buf = vec![0.0; d];
    let mut s = 0.0;
    for n in 0..grid.len() {
        for j in 0..cell.len() {
            psi.eval_into(&point(grid, cell, n, j), &mut buf)?;
            s += dot(v.at(n, j), &buf);
        }
    }
    Ok(grid.weight() * cell.weight() * s)
}

/// `‖ψ(x, x/ε)‖_p^p` and its two-scale limit `∫_Ω ∫_Y |ψ|^p`.
pub fn oscillation_norms(psi: &VectorExpr, grid: &MacroGrid, cell: &CellGrid, map: &CellMap, p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    if p.is_infinite() {
        return Err(Error::invalid("the norm identity needs a finite exponent"));
    }
    let d = grid.dim();
    check_components(psi, d)?;
    let mut buf = vec![0.0; d];
    let mut osc = 0.0;
    let mut lim = 0.0;
    for n in 0..grid.len() {
        psi.eval_into(&point(grid, cell, n, map.cell_of(n)), &mut buf)?;
        osc += node_norm(&buf).powf(p);
        for j in 0..cell.len() {
            psi.eval_into(&point(grid, cell, n, j), &mut buf)?;
            lim += node_norm(&buf).powf(p);
        }
    }
    Ok((grid.weight() * osc, grid.weight() * cell.weight() * lim))
}

/// Average of `f` over the nodes inside the box `[lo, hi]`.
pub fn window_average(f: &VectorField, grid: &MacroGrid, lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    f.check_shape(grid.len(), grid.dim())?;
    if lo.len() != grid.dim() || hi.len() != grid.dim() {
        return Err(Error::mismatch(format!("window bounds must have {} entries", grid.dim())));
    }
    let nodes = grid.nodes_in_box(lo, hi);
    if nodes.is_empty() {
        return Err(Error::invalid(format!("window {lo:?}..{hi:?} contains no grid nodes")));
    }
    let mut avg = vec![0.0; f.components()];
    for &n in &nodes {
        avg.iter_mut().zip(f.node(n)).for_each(|(a, v)| *a += v);
    }
    let inv = 1.0 / nodes.len() as f64;
    avg.iter_mut().for_each(|a| *a *= inv);
    Ok(avg)
}

/// `½ Σ w ρ|v|² - ½ Σ w u·(ρ A u)` for an acceleration operator `A = ρ^{-1}K`,
/// with `inv_rho` given per node of `d` components.
pub fn energy(u: &[f64], v: &[f64], acceleration: &dyn LinearOperator, inv_rho: &[f64], weight: f64) -> Result<f64> {
    let n = acceleration.len();
    if u.len() != n || v.len() != n || inv_rho.is_empty() || !n.is_multiple_of(inv_rho.len()) {
        return Err(Error::mismatch("state, operator and density sizes disagree"));
    }
    let d = n / inv_rho.len();
    let au = acceleration.apply(u);
    let (mut kin, mut pot) = (0.0, 0.0);
    for (i, q) in inv_rho.iter().enumerate() {
        let r = i * d..(i + 1) * d;
        kin += dot(&v[r.clone()], &v[r.clone()]) / q;
        pot += dot(&u[r.clone()], &au[r]) / q;
    }
    Ok(0.5 * weight * (kin - pot))
}

/// Settings of an ε sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSpec {
    /// Strictly decreasing, each of the form `1/n`.
    pub epsilons: Vec<f64>,
    pub p: f64,
    /// Times at which `‖d^ε‖_p` is sampled.
    pub sample_times: Vec<f64>,
    pub window_lower: Vec<f64>,
    pub window_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub macro_nodes: usize,
    /// `‖e^ε(T)‖_p`.
    pub error_norm: f64,
    /// `‖d^ε(t_k)‖_p` at the requested sample times.
    pub forcing_norms: Vec<f64>,
    /// `|avg_V u^ε(T) - avg_V u^H(T)|`.
    pub window_gap: f64,
    /// `|avg_V r(x, x/ε, T)|`.
    pub corrector_average: f64,
    /// Wall time in seconds; excluded from the CSV.
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub p: f64,
    pub sample_times: Vec<f64>,
    pub rows: Vec<ConvergenceRow>,
    /// `(ε, message)` for every ε whose run failed.
    pub failures: Vec<(f64, String)>,
}

impl ConvergenceReport {
    /// One row per successful ε, floats in round-trip exponent form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,macro_nodes,error_norm");
        for t in &self.sample_times {
            out.push_str(&format!(",forcing_norm_t{t}"));
        }
        out.push_str(",window_gap,corrector_average\n");
        for r in &self.rows {
            out.push_str(&format!("{:.16e},{},{:.16e}", r.epsilon, r.macro_nodes, r.error_norm));
            for f in &r.forcing_norms {
                out.push_str(&format!(",{f:.16e}"));
            }
            out.push_str(&format!(",{:.16e},{:.16e}\n", r.window_gap, r.corrector_average));
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn check_spec(spec: &ConvergenceSpec, problem: &Problem) -> Result<Vec<Scale>> {
    if !(spec.p > 1.5) {
        return Err(Error::invalid(format!(
            "convergence study needs p > 3/2, got {}",
            spec.p
        )));
    }
    if spec.epsilons.is_empty() {
        return Err(Error::invalid("no epsilon values given"));
    }
    if spec.epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("epsilon values must be strictly decreasing"));
    }
    if let Some(t) = spec.sample_times.iter().find(|t| !(**t >= 0.0 && **t <= problem.t_final)) {
        return Err(Error::invalid(format!("sample time {t} lies outside [0, {}]", problem.t_final)));
    }
    spec.epsilons.iter().map(|&e| Scale::from_epsilon(e)).collect()
}

fn frame_at<F>(traj: &Trajectory<F>, t: f64, dt: f64) -> Result<&F> {
    let k = traj.nearest_index(t).ok_or_else(|| Error::invalid("empty trajectory"))?;
    if (traj.times[k] - t).abs() > 0.5 * dt {
        return Err(Error::invalid(format!("time {t} is not a stored time (nearest {})", traj.times[k])));
    }
    Ok(&traj.frames[k])
}

fn sweep_one(problem: &Problem, spec: &ConvergenceSpec, scale: Scale) -> Result<ConvergenceRow> {
    let start = Instant::now();
    let grid = problem.macro_grid(Some(scale))?;
    let two = solve_twoscale(problem, &grid)?;
    let fine = solve_fine(problem, &grid, scale)?;
    let p = problem.coeffs.params();
    let long = LongRange::new(&grid, p.lambda, p.gamma)?;
    let short = ShortRange::new(&grid, &problem.coeffs, scale)?;
    let map = short.map();
    let err = error_field(&fine.displacement, &two.displacement, map)?;
    let (_, e_t) = err.last().ok_or_else(|| Error::invalid("empty trajectory"))?;
    let error_norm = lp_norm(e_t, &grid, spec.p)?;
    let forcing_norms = spec
        .sample_times
        .iter()
        .map(|&t| {
            let u = frame_at(&two.displacement, t, problem.dt)?;
            lp_norm(&forcing_terms(u, &long, &short)?.total, &grid, spec.p)
        })
        .collect::<Result<_>>()?;
    let (_, u_fine) = fine.displacement.last().expect("nonempty");
    let (_, u_two) = two.displacement.last().expect("nonempty");
    let (u_h, r) = split(u_two);
    let (lo, hi) = (&spec.window_lower, &spec.window_upper);
    let a = window_average(u_fine, &grid, lo, hi)?;
    let b = window_average(&u_h, &grid, lo, hi)?;
    let gap: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let corrector = window_average(&rescale_field(&r, map)?, &grid, lo, hi)?;
    Ok(ConvergenceRow {
        epsilon: scale.epsilon(),
        macro_nodes: grid.len(),
        error_norm,
        forcing_norms,
        window_gap: node_norm(&gap),
        corrector_average: node_norm(&corrector),
        runtime: start.elapsed().as_secs_f64(),
    })
}

/// Solves the fine and two-scale problems for every ε (concurrently) and
/// collects the diagnostics. The two-scale problem is solved on the macro grid
/// of each ε, so every row compares solutions on the same grid. Failed ε
/// values are listed in the report instead of aborting the sweep.
pub fn convergence_study(problem: &Problem, spec: &ConvergenceSpec) -> Result<ConvergenceReport> {
    let scales = check_spec(spec, problem)?;
    let results: Vec<Result<ConvergenceRow>> = scales.par_iter().map(|&s| sweep_one(problem, spec, s)).collect();
    let mut report = ConvergenceReport {
        p: spec.p,
        sample_times: spec.sample_times.clone(),
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (s, r) in scales.iter().zip(results) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((s.epsilon(), e.to_string())),
        }
    }
    Ok(report)
}
