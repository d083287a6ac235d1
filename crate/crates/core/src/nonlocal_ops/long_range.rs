use rayon::prelude::*;

use super::{kernel_tensor, row_abs, tadd, tmul_add, LinearOperator, OpInfo, Tensor, ZERO_TENSOR};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::grid::{closed_ball_offsets, MacroGrid};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Bond {
    pub steps: [i64; 3],
    pub tensor: Tensor,
}

/// In-domain neighbour of `mi` along `steps`.
#[inline]
pub(crate) fn neighbour(grid: &MacroGrid, mi: [usize; 3], steps: [i64; 3]) -> Option<usize> {
    let counts = grid.counts();
    let mut out = [0usize; 3];
    for k in 0..3 {
        let v = mi[k] as i64 + steps[k];
        if v < 0 || v >= counts[k] as i64 {
            return None;
        }
        out[k] = v as usize;
    }
    Some(grid.linear_index(out))
}

/// `K_L u(x) = Σ_{x̂ ∈ H_γ(x) ∩ Ω} λ ξ⊗ξ/|ξ|^d (u(x̂) - u(x)) h_x^d`.
#[derive(Debug, Clone)]
pub struct LongRange {
    grid: MacroGrid,
    lambda: f64,
    gamma: f64,
    bonds: Vec<Bond>,
    k_field: Vec<Tensor>,
}

impl LongRange {
    pub fn new(grid: &MacroGrid, lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !(gamma > 0.0) {
            return Err(Error::invalid(format!(
                "long-range constants need lambda >= 0 and gamma > 0, got {lambda}, {gamma}"
            )));
        }
        grid.check_resolves(gamma, "gamma")?;
        let d = grid.dim();
        let w = lambda * grid.weight();
        let bonds: Vec<Bond> = closed_ball_offsets(d, grid.spacing(), gamma)
            .into_iter()
            .map(|o| Bond {
                steps: o.steps,
                tensor: kernel_tensor(&o.vec, o.norm, d, w),
            })
            .collect();
        let k_field = (0..grid.len())
            .map(|n| {
                let mi = grid.multi_index(n);
                let mut k = ZERO_TENSOR;
                for b in bonds.iter().filter(|b| neighbour(grid, mi, b.steps).is_some()) {
                    tadd(&mut k, &b.tensor, 1.0);
                }
                k
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            lambda,
            gamma,
            bonds,
            k_field,
        })
    }

    pub fn grid(&self) -> &MacroGrid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub(crate) fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Truncated `K(x) = Σ_{x̂ ∈ H_γ(x) ∩ Ω} λ ξ⊗ξ/|ξ|^d h_x^d`, the diagonal
    /// coefficient of `K_L`. Equals [`Self::matrix_k`] at interior nodes.
    pub fn k_field(&self) -> &[Tensor] {
        &self.k_field
    }

    /// `K = λ ∫_{H_γ(0)} ξ⊗ξ/|ξ|^d dξ` by the same lattice rule, with no Ω
    /// truncation.
    pub fn matrix_k(&self) -> Tensor {
        let mut k = ZERO_TENSOR;
        for b in &self.bonds {
            tadd(&mut k, &b.tensor, 1.0);
        }
        k
    }

    pub fn apply(&self, u: &VectorField) -> Result<VectorField> {
        u.check_shape(self.grid.len(), self.grid.dim())?;
        let mut out = VectorField::zeros(self.grid.len(), self.grid.dim());
        self.apply_into(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `Σ_{x̂ ∈ H_γ(x) ∩ Ω} λ ξ⊗ξ/|ξ|^d w(x̂) h_x^d` (no self term).
    pub fn apply_gather_into(&self, w: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        out.par_chunks_mut(d).enumerate().for_each(|(n, dst)| {
            dst.iter_mut().for_each(|v| *v = 0.0);
            let mi = self.grid.multi_index(n);
            for b in &self.bonds {
                if let Some(m) = neighbour(&self.grid, mi, b.steps) {
                    tmul_add(&b.tensor, &w[m * d..(m + 1) * d], dst);
                }
            }
        });
    }
}

impl LinearOperator for LongRange {
    fn len(&self) -> usize {
        self.grid.len() * self.grid.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let d = self.grid.dim();
        y.par_chunks_mut(d).enumerate().for_each(|(n, dst)| {
            dst.iter_mut().for_each(|v| *v = 0.0);
            let mi = self.grid.multi_index(n);
            let un = &x[n * d..(n + 1) * d];
            let mut diff = [0.0; 3];
            for b in &self.bonds {
                if let Some(m) = neighbour(&self.grid, mi, b.steps) {
                    let um = &x[m * d..(m + 1) * d];
                    for c in 0..d {
                        diff[c] = um[c] - un[c];
                    }
                    tmul_add(&b.tensor, &diff[..d], dst);
                }
            }
        });
    }

    fn row_abs_sum_bound(&self) -> f64 {
        let d = self.grid.dim();
        let k = self.matrix_k();
        let abs_sum: f64 = (0..d)
            .map(|a| self.bonds.iter().map(|b| row_abs(&b.tensor, a)).sum::<f64>())
            .fold(0.0, f64::max);
        abs_sum + (0..d).map(|a| row_abs(&k, a)).fold(0.0, f64::max)
    }

    fn info(&self) -> OpInfo {
        OpInfo {
            name: "K_L",
            params: vec![
                ("lambda".into(), self.lambda),
                ("gamma".into(), self.gamma),
                ("h_x".into(), self.grid.spacing()),
            ],
        }
    }

    fn visit_row(&self, row: usize, f: &mut dyn FnMut(usize, f64)) -> bool {
        let d = self.grid.dim();
        let (n, a) = (row / d, row % d);
        let mi = self.grid.multi_index(n);
        for bond in &self.bonds {
            if let Some(m) = neighbour(&self.grid, mi, bond.steps) {
                for b in 0..d {
                    f(m * d + b, bond.tensor[a][b]);
                    f(n * d + b, -bond.tensor[a][b]);
                }
            }
        }
        true
    }
}
