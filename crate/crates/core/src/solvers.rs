//! Initial-value solvers for the fine-scale equation
//! `ρ(x/ε) ü = (K_L + K_S^ε) u + b(x, x/ε, t)` and the two-scale equation
//! `ρ(y) ü = (B_L + B_S) u + b(x, y, t)`, and the rescaling
//! `U ↦ U(x, x/ε)` linking them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{Point, VectorExpr};
use crate::field::{ProductField, Trajectory, VectorField};
use crate::grid::{matched_macro_grid, CellGrid, CellMap, MacroGrid, Scale};
use crate::microstructure::{CellCoefficients, Microstructure};
use crate::nonlocal_ops::{FineOperator, TwoScaleKind, TwoScaleOperator, DEFAULT_ASSEMBLY_CAP};
use crate::propagators::{integrate, Integrator, PhaseState};

/// Everything a solve needs besides the grid and scale.
#[derive(Debug, Clone)]
pub struct Problem {
    pub micro: Microstructure,
    pub cell: CellGrid,
    pub coeffs: CellCoefficients,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Macro nodes along axis 0; `None` selects the grid matched to ε.
    pub macro_nodes: Option<usize>,
    pub u0: VectorExpr,
    pub v0: VectorExpr,
    pub b: VectorExpr,
    pub t_final: f64,
    pub dt: f64,
    pub stride: usize,
    pub integrator: Integrator,
    pub assembly_cap: usize,
}

impl Problem {
    /// Builds a problem with Verlet integration, stride 1 and the default
    /// assembly cap.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        micro: Microstructure,
        cell_nodes: usize,
        lower: &[f64],
        upper: &[f64],
        macro_nodes: Option<usize>,
        u0: VectorExpr,
        v0: VectorExpr,
        b: VectorExpr,
        t_final: f64,
        dt: f64,
    ) -> Result<Self> {
        let d = micro.dim();
        if lower.len() != d || upper.len() != d {
            return Err(Error::mismatch(format!("domain bounds must have {d} entries")));
        }
        for (name, e) in [("u0", &u0), ("v0", &v0), ("b", &b)] {
            if e.len() != d {
                return Err(Error::mismatch(format!("{name} has {} components, expected {d}", e.len())));
            }
        }
        let cell = CellGrid::new(d, cell_nodes)?;
        let coeffs = micro.coefficients(&cell)?;
        Ok(Self {
            micro,
            cell,
            coeffs,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            macro_nodes,
            u0,
            v0,
            b,
            t_final,
            dt,
            stride: 1,
            integrator: Integrator::Verlet,
            assembly_cap: DEFAULT_ASSEMBLY_CAP,
        })
    }

    pub fn dim(&self) -> usize {
        self.micro.dim()
    }

    /// The fixed macro grid, or the grid matched to `scale`.
    pub fn macro_grid(&self, scale: Option<Scale>) -> Result<MacroGrid> {
        match (self.macro_nodes, scale) {
            (Some(n), _) => MacroGrid::with_nodes(&self.lower, &self.upper, n),
            (None, Some(s)) => matched_macro_grid(&self.lower, &self.upper, &self.cell, s),
            (None, None) => Err(Error::invalid(
                "no macro resolution: set the macro node count or an epsilon for the matched grid",
            )),
        }
    }

    pub fn with_data(&self, u0: VectorExpr, v0: VectorExpr, b: VectorExpr) -> Self {
        Self {
            u0,
            v0,
            b,
            ..self.clone()
        }
    }
}

/// Displacement and velocity trajectories sampled at the same times.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<F> {
    pub displacement: Trajectory<F>,
    pub velocity: Trajectory<F>,
}

fn point(x: [f64; 3], y: [f64; 3], t: f64) -> Point {
    Point { x, y, t }
}

/// `f(x, x/ε, t)` at every macro node, with `x/ε` reduced to its cell node.
pub fn sample_rescaled(f: &VectorExpr, grid: &MacroGrid, cell: &CellGrid, map: &CellMap, t: f64) -> Result<VectorField> {
    let d = grid.dim();
    let mut out = VectorField::zeros(grid.len(), d);
    for n in 0..grid.len() {
        f.eval_into(&point(grid.coord(n), cell.coord(map.cell_of(n)), t), out.node_mut(n))?;
    }
    Ok(out)
}

/// `f(x, y, t)` on the product grid.
pub fn sample_product(f: &VectorExpr, grid: &MacroGrid, cell: &CellGrid, t: f64) -> Result<ProductField> {
    let d = grid.dim();
    let m = cell.len();
    let cy: Vec<[f64; 3]> = (0..m).map(|j| cell.coord(j)).collect();
    let chunks: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let x = grid.coord(n);
            let mut buf = vec![0.0; m * d];
            for (j, y) in cy.iter().enumerate() {
                f.eval_into(&point(x, *y, t), &mut buf[j * d..(j + 1) * d])?;
            }
            Ok(buf)
        })
        .collect::<Result<_>>()?;
    ProductField::from_vec(grid.len(), m, d, chunks.concat())
}

/// Time-dependent forcing, cached when it does not depend on `t`.
pub(crate) enum Source {
    None,
    Fixed(Vec<f64>),
    Timed(Box<dyn Fn(f64) -> Result<Vec<f64>> + Send + Sync>),
}

impl Source {
    pub(crate) fn new(b: &VectorExpr, eval: impl Fn(f64) -> Result<Vec<f64>> + Send + Sync + 'static) -> Result<Self> {
        if b.is_zero() {
            Ok(Source::None)
        } else if !b.depends_on_t() {
            Ok(Source::Fixed(eval(0.0)?))
        } else {
            eval(0.0)?;
            Ok(Source::Timed(Box::new(eval)))
        }
    }

    pub(crate) fn at(&self, t: f64, out: &mut [f64]) {
        match self {
            Source::None => out.iter_mut().for_each(|v| *v = 0.0),
            Source::Fixed(v) => out.copy_from_slice(v),
            Source::Timed(f) => out.copy_from_slice(&f(t).expect("forcing evaluated once at t = 0 already")),
        }
    }

    pub(crate) fn is_none(&self) -> bool {
        matches!(self, Source::None)
    }
}

fn split_solution<F>(traj: Trajectory<PhaseState>, wrap: impl Fn(Vec<f64>) -> F) -> Solution<F> {
    let mut displacement = Trajectory::new();
    let mut velocity = Trajectory::new();
    for (t, s) in traj.times.into_iter().zip(traj.frames) {
        displacement.push(t, wrap(s.u));
        velocity.push(t, wrap(s.v));
    }
    Solution {
        displacement,
        velocity,
    }
}

pub(crate) fn run_integrator(
    problem: &Problem,
    op: &dyn crate::nonlocal_ops::LinearOperator,
    u0: &[f64],
    v0: &[f64],
    source: &Source,
) -> Result<Trajectory<PhaseState>> {
    let g = |t: f64, out: &mut [f64]| source.at(t, out);
    let forcing: Option<crate::propagators::Forcing> = if source.is_none() { None } else { Some(&g) };
    integrate(
        op,
        u0,
        v0,
        forcing,
        problem.dt,
        problem.t_final,
        problem.stride,
        problem.integrator,
        problem.assembly_cap,
    )
}

/// Fine-scale solution `u^ε` on `grid` with data `u_0(x, x/ε)`, `v_0(x, x/ε)`
/// and forcing `b(x, x/ε, t)`.
pub fn solve_fine(problem: &Problem, grid: &MacroGrid, scale: Scale) -> Result<Solution<VectorField>> {
    let op = FineOperator::new(grid, &problem.coeffs, scale).map_err(|e| e.context("fine-scale operator"))?;
    let map = op.short().map().clone();
    let cell = problem.cell.clone();
    let u0 = sample_rescaled(&problem.u0, grid, &cell, &map, 0.0)?;
    let v0 = sample_rescaled(&problem.v0, grid, &cell, &map, 0.0)?;
    let q = op.short().inv_rho_nodes();
    let d = grid.dim();
    let (b, g) = (problem.b.clone(), grid.clone());
    let source = Source::new(&problem.b, move |t| {
        let mut f = sample_rescaled(&b, &g, &cell, &map, t)?.into_vec();
        f.iter_mut().enumerate().for_each(|(i, v)| *v *= q[i / d]);
        Ok(f)
    })?;
    let traj = run_integrator(problem, &op, u0.as_slice(), v0.as_slice(), &source)
        .map_err(|e| e.context(format!("fine-scale solve at epsilon = {}", scale.epsilon())))?;
    Ok(split_solution(traj, |v| VectorField::from_vec(d, v).expect("state length is a multiple of d")))
}

/// Two-scale solution `u(x, y, t)`.
pub fn solve_twoscale(problem: &Problem, grid: &MacroGrid) -> Result<Solution<ProductField>> {
    let op = TwoScaleOperator::new(grid, &problem.coeffs, TwoScaleKind::Acceleration)
        .map_err(|e| e.context("two-scale operator"))?;
    let cell = problem.cell.clone();
    let u0 = sample_product(&problem.u0, grid, &cell, 0.0)?;
    let v0 = sample_product(&problem.v0, grid, &cell, 0.0)?;
    let q = problem.coeffs.inv_rho().to_vec();
    let (d, m, nx) = (grid.dim(), cell.len(), grid.len());
    let (b, g) = (problem.b.clone(), grid.clone());
    let source = Source::new(&problem.b, move |t| {
        let mut f = sample_product(&b, &g, &cell, t)?.into_vec();
        f.iter_mut().enumerate().for_each(|(i, v)| *v *= q[(i / d) % m]);
        Ok(f)
    })?;
    let traj = run_integrator(problem, &op, u0.as_slice(), v0.as_slice(), &source)
        .map_err(|e| e.context("two-scale solve"))?;
    Ok(split_solution(traj, |v| {
        ProductField::from_vec(nx, m, d, v).expect("state length matches the product grid")
    }))
}

/// `U(x, x/ε)` for one product field.
pub fn rescale_field(u: &ProductField, map: &CellMap) -> Result<VectorField> {
    if u.macro_nodes() != map.as_slice().len() {
        return Err(Error::mismatch(format!(
            "product field has {} macro nodes, the cell map {}",
            u.macro_nodes(),
            map.as_slice().len()
        )));
    }
    let d = u.components();
    let data = map
        .as_slice()
        .iter()
        .enumerate()
        .flat_map(|(n, &j)| u.at(n, j).iter().copied())
        .collect();
    VectorField::from_vec(d, data)
}

/// The strong approximation `t ↦ U(x, x/ε, t)`.
pub fn rescale(u: &Trajectory<ProductField>, map: &CellMap) -> Result<Trajectory<VectorField>> {
    u.try_map(|f| rescale_field(f, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{CellGeometry, PhaseParams, Shape};

    fn problem(u0: &str) -> Problem {
        let micro = Microstructure::new(
            CellGeometry::new(1, Shape::Ball { radius: 0.25 }).unwrap(),
            PhaseParams {
                c_f: 10.0,
                c_m: 1.0,
                c_i: 3.0,
                rho_f: 2.0,
                rho_m: 1.0,
                delta: 0.2,
                lambda: 1.0,
                gamma: 0.25,
                beta: None,
            },
        )
        .unwrap();
        Problem::new(
            micro,
            16,
            &[0.0],
            &[1.0],
            None,
            VectorExpr::parse(&[u0]).unwrap(),
            VectorExpr::zero(1),
            VectorExpr::zero(1),
            0.1,
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solutions() {
        let p = problem("0");
        let s = Scale::new(2).unwrap();
        let g = p.macro_grid(Some(s)).unwrap();
        let fine = solve_fine(&p, &g, s).unwrap();
        assert!(fine.displacement.frames.iter().all(|f| f.as_slice().iter().all(|v| *v == 0.0)));
        let two = solve_twoscale(&p, &g).unwrap();
        assert!(two.displacement.frames.iter().all(|f| f.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn fine_initial_data_is_the_rescaled_twoscale_data() {
        let p = problem("sin(pi*x1)*(1 + 0.5*cos(2*pi*y1))");
        let s = Scale::new(2).unwrap();
        let g = p.macro_grid(Some(s)).unwrap();
        let map = CellMap::new(&g, &p.cell, s).unwrap();
        let fine = solve_fine(&p, &g, s).unwrap();
        let two = solve_twoscale(&p, &g).unwrap();
        let r = rescale_field(&two.displacement.frames[0], &map).unwrap();
        assert_eq!(r, fine.displacement.frames[0]);
    }

    #[test]
    fn rescale_of_cosine_picks_lattice_values() {
        let cell = CellGrid::new(1, 8).unwrap();
        let s = Scale::new(4).unwrap();
        let g = matched_macro_grid(&[0.0], &[1.0], &cell, s).unwrap();
        let map = CellMap::new(&g, &cell, s).unwrap();
        let f = VectorExpr::parse(&["cos(2*pi*y1)"]).unwrap();
        let u = sample_product(&f, &g, &cell, 0.0).unwrap();
        let r = rescale_field(&u, &map).unwrap();
        for n in 0..g.len() {
            let x = g.coord(n)[0];
            let expect = (2.0 * std::f64::consts::PI * cell.coord(map.cell_of(n))[0]).cos();
            assert_eq!(r.node(n)[0], expect);
            assert!((expect - (2.0 * std::f64::consts::PI * x / s.epsilon()).cos()).abs() < 1e-12);
        }
    }
}
