//! Macro/micro split `u = u^H + r` with `u^H = ⟨u⟩`, the coupled evolution of
//! `(u^H, r)`, and the equivalent memory-kernel equation for `u^H` alone:
//!
//! `ü^H = ⟨ρ^{-1}⟩K_L u^H + ∫_0^t Γ(t-τ) K_L u^H(τ) dτ + 𝒦w(t) + ⟨ρ^{-1}b⟩`,
//!
//! where `Γ(s) = 𝒦 S_𝒞(s) (ρ^{-1} - ⟨ρ^{-1}⟩)`, `S_𝒞(s) = Σ s^{2n+1}/(2n+1)! 𝒞ⁿ`
//! and `w` solves `ẅ = 𝒞w + ρ^{-1}b - ⟨ρ^{-1}b⟩` from the fluctuating initial
//! data. Only integer powers of `𝒞` are ever formed.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::VectorExpr;
use crate::field::{ProductField, Trajectory, VectorField};
use crate::grid::MacroGrid;
use crate::nonlocal_ops::{
    assemble_dense, CellShortRange, CorrectorOperator, CoupledOperator, LinearOperator, LongRange, Tensor,
};
use crate::propagators::{step_count, SeriesPropagator};
use crate::solvers::{run_integrator, sample_product, Problem, Source};

/// `(⟨U⟩, U - ⟨U⟩)`.
pub fn split(u: &ProductField) -> (VectorField, ProductField) {
    let avg = u.cell_average();
    let d = u.components();
    let r = ProductField::from_fn(u.macro_nodes(), u.cell_nodes(), d, |x, y, c| u.at(x, y)[c] - avg.node(x)[c]);
    (avg, r)
}

/// `u^H + r` back on the product grid.
pub fn reassemble(u_h: &VectorField, r: &ProductField) -> Result<ProductField> {
    r.check_shape(u_h.nodes(), r.cell_nodes(), u_h.components())?;
    let d = u_h.components();
    Ok(ProductField::from_fn(r.macro_nodes(), r.cell_nodes(), d, |x, y, c| {
        u_h.node(x)[c] + r.at(x, y)[c]
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSolution {
    pub u_h: Trajectory<VectorField>,
    pub v_h: Trajectory<VectorField>,
    pub r: Trajectory<ProductField>,
    pub r_dot: Trajectory<ProductField>,
}

impl CoupledSolution {
    /// `u^H + r` at every stored time.
    pub fn reconstruct(&self) -> Result<Trajectory<ProductField>> {
        let frames = self
            .u_h
            .frames
            .iter()
            .zip(&self.r.frames)
            .map(|(u, r)| reassemble(u, r))
            .collect::<Result<_>>()?;
        Ok(Trajectory {
            times: self.u_h.times.clone(),
            frames,
        })
    }
}

/// Stacks `[macro block; product block]`.
fn stack(h: &VectorField, r: &ProductField) -> Vec<f64> {
    let mut out = h.as_slice().to_vec();
    out.extend_from_slice(r.as_slice());
    out
}

/// `(⟨ρ^{-1}b⟩, ρ^{-1}b - ⟨ρ^{-1}b⟩)` stacked, for one time.
fn split_forcing(qb: ProductField) -> Vec<f64> {
    let (avg, fl) = split(&qb);
    stack(&avg, &fl)
}

fn scaled_forcing(b: &VectorExpr, grid: &MacroGrid, problem: &Problem, t: f64) -> Result<ProductField> {
    let mut f = sample_product(b, grid, &problem.cell, t)?;
    let q = problem.coeffs.inv_rho();
    for x in 0..f.macro_nodes() {
        for (j, qj) in q.iter().enumerate() {
            f.at_mut(x, j).iter_mut().for_each(|v| *v *= qj);
        }
    }
    Ok(f)
}

/// Integrates the coupled system for `(u^H, r)` from
/// `u^H(0) = ⟨u_0⟩`, `r(0) = u_0 - ⟨u_0⟩` (likewise for velocities).
pub fn solve_coupled(problem: &Problem, grid: &MacroGrid) -> Result<CoupledSolution> {
    let op = CoupledOperator::new(grid, &problem.coeffs).map_err(|e| e.context("coupled operator"))?;
    let (d, m, nx) = (grid.dim(), problem.cell.len(), grid.len());
    let (uh0, r0) = split(&sample_product(&problem.u0, grid, &problem.cell, 0.0)?);
    let (vh0, rd0) = split(&sample_product(&problem.v0, grid, &problem.cell, 0.0)?);
    let (b, g, p) = (problem.b.clone(), grid.clone(), problem.clone());
    let source = Source::new(&problem.b, move |t| Ok(split_forcing(scaled_forcing(&b, &g, &p, t)?)))?;
    let traj = run_integrator(problem, &op, &stack(&uh0, &r0), &stack(&vh0, &rd0), &source)
        .map_err(|e| e.context("coupled solve"))?;
    let nm = op.macro_len();
    let unstack = |v: &[f64]| {
        (
            VectorField::from_vec(d, v[..nm].to_vec()).expect("macro block"),
            ProductField::from_vec(nx, m, d, v[nm..].to_vec()).expect("micro block"),
        )
    };
    let mut out = CoupledSolution {
        u_h: Trajectory::new(),
        v_h: Trajectory::new(),
        r: Trajectory::new(),
        r_dot: Trajectory::new(),
    };
    for (t, s) in traj.iter() {
        let (uh, r) = unstack(&s.u);
        let (vh, rd) = unstack(&s.v);
        out.u_h.push(t, uh);
        out.r.push(t, r);
        out.v_h.push(t, vh);
        out.r_dot.push(t, rd);
    }
    Ok(out)
}

/// Append-only record of `K_L u^H(τ_k)` at equally spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryHistory {
    dt: f64,
    capacity: usize,
    samples: Vec<VectorField>,
}

impl MemoryHistory {
    pub fn new(dt: f64, capacity: usize) -> Self {
        Self {
            dt,
            capacity,
            samples: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, sample: VectorField) -> Result<()> {
        if self.samples.len() >= self.capacity {
            return Err(Error::invalid(format!(
                "memory history is full ({} samples); the march ran past t_final",
                self.capacity
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn samples(&self) -> &[VectorField] {
        &self.samples
    }
}

fn tensor_key(k: &Tensor) -> [u64; 9] {
    let mut key = [0u64; 9];
    for a in 0..3 {
        for b in 0..3 {
            key[a * 3 + b] = k[a][b].to_bits();
        }
    }
    key
}

/// Sampled memory kernels `Γ(k dt)`, one family per distinct `K(x)`.
#[derive(Debug, Clone)]
pub struct MemoryKernel {
    dim: usize,
    dt: f64,
    qbar: f64,
    node_group: Vec<usize>,
    group_k: Vec<Tensor>,
    /// `gamma[g][k]` = `Γ(k dt)` for group `g`.
    gamma: Vec<Vec<Tensor>>,
    props: Vec<SeriesPropagator<'static>>,
}

impl MemoryKernel {
    pub fn new(long: &LongRange, short: &CellShortRange, dt: f64, steps: usize, cap: usize) -> Result<Self> {
        let d = short.dim();
        let q = short.coeffs().inv_rho();
        let qbar = short.coeffs().mean_inv_rho();
        let mut groups: HashMap<[u64; 9], usize> = HashMap::new();
        let mut group_k = Vec::new();
        let node_group = long
            .k_field()
            .iter()
            .map(|k| {
                *groups.entry(tensor_key(k)).or_insert_with(|| {
                    group_k.push(*k);
                    group_k.len() - 1
                })
            })
            .collect();
        let built: Vec<(SeriesPropagator, Vec<Tensor>)> = group_k
            .par_iter()
            .map(|k| {
                let op = CorrectorOperator::new(short, *k);
                let c = assemble_dense(&op, cap).map_err(|e| e.context("corrector operator"))?;
                let prop = SeriesPropagator::from_dense(&c, dt)?;
                // Columns of S_𝒞(t) P, advanced from (0, P).
                let n = op.len();
                let mut cols: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
                    .map(|b| {
                        let mut p = vec![0.0; n];
                        for j in 0..short.cell().len() {
                            p[j * d + b] = q[j] - qbar;
                        }
                        (vec![0.0; n], p)
                    })
                    .collect();
                let mut gamma = Vec::with_capacity(steps + 1);
                let mut g0 = [[0.0; 3]; 3];
                for (b, (x, _)) in cols.iter().enumerate() {
                    let kx = op.coupling(x);
                    for a in 0..d {
                        g0[a][b] = kx[a];
                    }
                }
                gamma.push(g0);
                for _ in 0..steps {
                    let mut gk = [[0.0; 3]; 3];
                    for (b, col) in cols.iter_mut().enumerate() {
                        *col = prop.advance(&col.0, &col.1, None);
                        let kx = op.coupling(&col.0);
                        for a in 0..d {
                            gk[a][b] = kx[a];
                        }
                    }
                    gamma.push(gk);
                }
                Ok((prop, gamma))
            })
            .collect::<Result<_>>()?;
        let (props, gamma) = built.into_iter().unzip();
        Ok(Self {
            dim: d,
            dt,
            qbar,
            node_group,
            group_k,
            gamma,
            props,
        })
    }

    pub fn qbar(&self) -> f64 {
        self.qbar
    }

    /// `Γ(k dt)` at macro node `n`.
    pub fn gamma(&self, n: usize, k: usize) -> &Tensor {
        &self.gamma[self.node_group[n]][k]
    }

    pub fn groups(&self) -> usize {
        self.group_k.len()
    }

    /// `∫_0^{t_k} Γ(t_k - τ) c(τ) dτ` by the trapezoid rule over the history,
    /// with `t_k` the time of the latest sample.
    pub fn memory_term(&self, history: &MemoryHistory) -> Result<VectorField> {
        if history.is_empty() {
            return Err(Error::invalid("memory term needs at least one history sample"));
        }
        let k = history.len() - 1;
        if k >= self.gamma.first().map_or(0, Vec::len) {
            return Err(Error::invalid("history is longer than the sampled kernel"));
        }
        let d = self.dim;
        let nodes = history.samples[0].nodes();
        let mut out = VectorField::zeros(nodes, d);
        out.as_mut_slice().par_chunks_mut(d).enumerate().for_each(|(n, dst)| {
            let g = &self.gamma[self.node_group[n]];
            for (j, c) in history.samples.iter().enumerate() {
                let w = if j == 0 || j == k { 0.5 } else { 1.0 } * self.dt;
                let cj = c.node(n);
                let gk = &g[k - j];
                for a in 0..d {
                    let mut s = 0.0;
                    for b in 0..d {
                        s += gk[a][b] * cj[b];
                    }
                    dst[a] += w * s;
                }
            }
        });
        Ok(out)
    }
}

/// `f^H(t_k) = K_L u^H(t_k) + ⟨ρ^{-1}⟩^{-1} ∫_0^{t_k} Γ(t_k - τ) K_L u^H(τ) dτ`
/// at the latest history time.
pub fn constitutive_force(kernel: &MemoryKernel, history: &MemoryHistory) -> Result<VectorField> {
    let mut m = kernel.memory_term(history)?;
    let c = history.samples.last().expect("nonempty after memory_term");
    let inv = 1.0 / kernel.qbar;
    m.as_mut_slice()
        .iter_mut()
        .zip(c.as_slice())
        .for_each(|(mv, cv)| *mv = cv + inv * *mv);
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct MemorySolution {
    pub u_h: Trajectory<VectorField>,
    pub v_h: Trajectory<VectorField>,
    /// Constitutive force `f^H` at the stored times.
    pub force: Trajectory<VectorField>,
    /// Full-resolution `K_L u^H` history.
    pub history: MemoryHistory,
    pub kernel: MemoryKernel,
}

/// `𝒦 w(t_k)` for every node and step, with `w` advanced exactly in `𝒞`.
fn w_forcing(problem: &Problem, grid: &MacroGrid, short: &CellShortRange, kernel: &MemoryKernel, steps: usize) -> Result<Vec<VectorField>> {
    let d = grid.dim();
    let width = short.slice_len();
    let (_, r0) = split(&sample_product(&problem.u0, grid, &problem.cell, 0.0)?);
    let (_, rd0) = split(&sample_product(&problem.v0, grid, &problem.cell, 0.0)?);
    let (b, g, p) = (problem.b.clone(), grid.clone(), problem.clone());
    let source = Source::new(&problem.b, move |t| Ok(split(&scaled_forcing(&b, &g, &p, t)?).1.into_vec()))?;
    let total = grid.len() * width;
    let zero_data = r0.as_slice().iter().chain(rd0.as_slice()).all(|v| *v == 0.0);
    if zero_data && source.is_none() {
        return Ok(vec![VectorField::zeros(grid.len(), d); steps + 1]);
    }
    let mut w: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.len())
        .map(|n| (r0.slice(n).to_vec(), rd0.slice(n).to_vec()))
        .collect();
    let mut f0 = vec![0.0; total];
    let mut f1 = vec![0.0; total];
    source.at(0.0, &mut f0);
    let coupling = |w: &[(Vec<f64>, Vec<f64>)]| {
        let data = w
            .par_iter()
            .enumerate()
            .flat_map_iter(|(n, (x, _))| {
                let k = CorrectorOperator::new(short, kernel.group_k[kernel.node_group[n]]).coupling(x);
                k.into_iter().take(d)
            })
            .collect();
        VectorField::from_vec(d, data).expect("d values per node")
    };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(coupling(&w));
    for k in 1..=steps {
        source.at(k as f64 * problem.dt, &mut f1);
        let forced = !source.is_none();
        w.par_iter_mut().enumerate().for_each(|(n, (x, v))| {
            let prop = &kernel.props[kernel.node_group[n]];
            let g = forced.then(|| (&f0[n * width..(n + 1) * width], &f1[n * width..(n + 1) * width]));
            let (xn, vn) = prop.advance(x, v, g);
            *x = xn;
            *v = vn;
        });
        std::mem::swap(&mut f0, &mut f1);
        out.push(coupling(&w));
    }
    Ok(out)
}

/// Marches the memory-kernel equation for `u^H` with Verlet, the memory
/// integral by the trapezoid rule over the stored history.
pub fn solve_memory(problem: &Problem, grid: &MacroGrid) -> Result<MemorySolution> {
    let p = problem.coeffs.params();
    let long = LongRange::new(grid, p.lambda, p.gamma)?;
    let short = CellShortRange::new(&problem.coeffs)?;
    let dt = problem.dt;
    let steps = step_count(dt, problem.t_final)?;
    let kernel = MemoryKernel::new(&long, &short, dt, steps, problem.assembly_cap)
        .map_err(|e| e.context("memory kernel"))?;
    let kw = w_forcing(problem, grid, &short, &kernel, steps).map_err(|e| e.context("w-path"))?;
    let d = grid.dim();
    let (b, g, pr) = (problem.b.clone(), grid.clone(), problem.clone());
    let mean_qb = Source::new(&problem.b, move |t| Ok(scaled_forcing(&b, &g, &pr, t)?.cell_average().into_vec()))?;
    let qbar = kernel.qbar;
    let mut u = sample_product(&problem.u0, grid, &problem.cell, 0.0)?.cell_average();
    let mut v = sample_product(&problem.v0, grid, &problem.cell, 0.0)?.cell_average();
    let mut history = MemoryHistory::new(dt, steps + 1);
    let mut fb = vec![0.0; u.as_slice().len()];
    let accel = |k: usize, u: &VectorField, history: &mut MemoryHistory, fb: &mut [f64]| -> Result<(Vec<f64>, VectorField)> {
        let c = long.apply(u)?;
        history.push(c.clone())?;
        let m = kernel.memory_term(history)?;
        mean_qb.at(k as f64 * dt, fb);
        let a = c
            .as_slice()
            .iter()
            .zip(m.as_slice())
            .zip(kw[k].as_slice())
            .zip(fb.iter())
            .map(|(((c, m), w), f)| qbar * c + m + w + f)
            .collect();
        let force = VectorField::from_vec(d, c.as_slice().iter().zip(m.as_slice()).map(|(c, m)| c + m / qbar).collect())?;
        Ok((a, force))
    };
    let (mut a, f0) = accel(0, &u, &mut history, &mut fb)?;
    let mut out_u = Trajectory::new();
    let mut out_v = Trajectory::new();
    let mut force = Trajectory::new();
    out_u.push(0.0, u.clone());
    out_v.push(0.0, v.clone());
    force.push(0.0, f0);
    let stride = problem.stride.max(1);
    let half = 0.5 * dt;
    for k in 1..=steps {
        {
            let (us, vs) = (u.as_mut_slice(), v.as_mut_slice());
            for i in 0..us.len() {
                vs[i] += half * a[i];
                us[i] += dt * vs[i];
            }
        }
        let (an, fk) = accel(k, &u, &mut history, &mut fb)?;
        a = an;
        v.as_mut_slice().iter_mut().zip(&a).for_each(|(vi, ai)| *vi += half * ai);
        if k % stride == 0 || k == steps {
            let t = k as f64 * dt;
            out_u.push(t, u.clone());
            out_v.push(t, v.clone());
            force.push(t, fk);
        }
    }
    Ok(MemorySolution {
        u_h: out_u,
        v_h: out_v,
        force,
        history,
        kernel,
    })
}
