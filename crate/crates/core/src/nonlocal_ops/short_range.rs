use rayon::prelude::*;

use super::long_range::{neighbour, Bond};
use super::{kernel_tensor, row_abs, tmul_add, LinearOperator, LongRange, OpInfo};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::grid::{open_ball_offsets, CellGrid, CellMap, MacroGrid, Scale};
use crate::microstructure::CellCoefficients;

/// `K_S^ε u(x) = ε^{-2} Σ_{x̂ ∈ H_{εδ}(x) ∩ Ω} α(x/ε, x̂/ε) ξ⊗ξ/|ξ|^d (u(x̂) - u(x)) h_x^d`,
/// evaluated in the rescaled variable `z = ξ/ε`, where the weight becomes
/// `α z⊗z/|z|^d (h_x/ε)^d` and no `ε^{-2}` appears explicitly.
#[derive(Debug, Clone)]
pub struct ShortRange {
    grid: MacroGrid,
    coeffs: CellCoefficients,
    map: CellMap,
    bonds: Vec<Bond>,
}

impl ShortRange {
    pub fn new(grid: &MacroGrid, coeffs: &CellCoefficients, scale: Scale) -> Result<Self> {
        let map = CellMap::new(grid, coeffs.cell(), scale)?;
        let delta = coeffs.params().delta;
        let hz = scale.n() as f64 * grid.spacing();
        if delta / hz < 2.0 - 1e-12 {
            return Err(Error::invalid(format!(
                "epsilon·delta = {} is resolved by fewer than 2 macro nodes (h_x = {})",
                scale.epsilon() * delta,
                grid.spacing()
            )));
        }
        let d = grid.dim();
        let w = hz.powi(d as i32);
        let bonds = open_ball_offsets(d, hz, delta)
            .into_iter()
            .map(|o| Bond {
                steps: o.steps,
                tensor: kernel_tensor(&o.vec, o.norm, d, w),
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            coeffs: coeffs.clone(),
            map,
            bonds,
        })
    }

    pub fn grid(&self) -> &MacroGrid {
        &self.grid
    }

    pub fn map(&self) -> &CellMap {
        &self.map
    }

    pub fn coeffs(&self) -> &CellCoefficients {
        &self.coeffs
    }

    pub fn scale(&self) -> Scale {
        self.map.scale()
    }

    pub fn cell(&self) -> &CellGrid {
        self.coeffs.cell()
    }

    pub(crate) fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// `ρ(x/ε)^{-1}` at every macro node.
    pub fn inv_rho_nodes(&self) -> Vec<f64> {
        self.map.as_slice().iter().map(|&j| self.coeffs.inv_rho()[j]).collect()
    }

    pub fn apply(&self, u: &VectorField) -> Result<VectorField> {
        u.check_shape(self.grid.len(), self.grid.dim())?;
        let mut out = VectorField::zeros(self.grid.len(), self.grid.dim());
        self.apply_into(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    #[inline]
    fn accumulate(&self, n: usize, x: &[f64], dst: &mut [f64]) {
        let d = self.grid.dim();
        let mi = self.grid.multi_index(n);
        let jn = self.map.cell_of(n);
        let un = &x[n * d..(n + 1) * d];
        let mut diff = [0.0; 3];
        for b in &self.bonds {
            if let Some(m) = neighbour(&self.grid, mi, b.steps) {
                let a = self.coeffs.alpha(jn, self.map.cell_of(m));
                let um = &x[m * d..(m + 1) * d];
                for c in 0..d {
                    diff[c] = a * (um[c] - un[c]);
                }
                tmul_add(&b.tensor, &diff[..d], dst);
            }
        }
    }

    fn visit(&self, row: usize, scale: f64, f: &mut dyn FnMut(usize, f64)) {
        let d = self.grid.dim();
        let (n, a) = (row / d, row % d);
        let mi = self.grid.multi_index(n);
        let jn = self.map.cell_of(n);
        for bond in &self.bonds {
            if let Some(m) = neighbour(&self.grid, mi, bond.steps) {
                let al = scale * self.coeffs.alpha(jn, self.map.cell_of(m));
                for b in 0..d {
                    f(m * d + b, al * bond.tensor[a][b]);
                    f(n * d + b, -al * bond.tensor[a][b]);
                }
            }
        }
    }

    fn max_alpha(&self) -> f64 {
        let p = self.coeffs.params();
        p.c_f.max(p.c_m).max(p.c_i)
    }
}

impl LinearOperator for ShortRange {
    fn len(&self) -> usize {
        self.grid.len() * self.grid.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let d = self.grid.dim();
        y.par_chunks_mut(d).enumerate().for_each(|(n, dst)| {
            dst.iter_mut().for_each(|v| *v = 0.0);
            self.accumulate(n, x, dst);
        });
    }

    fn row_abs_sum_bound(&self) -> f64 {
        let d = self.grid.dim();
        2.0 * self.max_alpha()
            * (0..d)
                .map(|a| self.bonds.iter().map(|b| row_abs(&b.tensor, a)).sum::<f64>())
                .fold(0.0, f64::max)
    }

    fn info(&self) -> OpInfo {
        OpInfo {
            name: "K_S",
            params: vec![
                ("epsilon".into(), self.scale().epsilon()),
                ("delta".into(), self.coeffs.params().delta),
                ("h_x".into(), self.grid.spacing()),
            ],
        }
    }

    fn visit_row(&self, row: usize, f: &mut dyn FnMut(usize, f64)) -> bool {
        self.visit(row, 1.0, f);
        true
    }
}

/// `K_L + K_S^ε`, optionally premultiplied by `ρ_ε^{-1}` (giving `A^ε`).
#[derive(Debug, Clone)]
pub struct FineOperator {
    long: LongRange,
    short: ShortRange,
    inv_rho: Option<Vec<f64>>,
}

impl FineOperator {
    fn build(long: LongRange, short: ShortRange, scaled: bool) -> Result<Self> {
        if long.grid() != short.grid() {
            return Err(Error::mismatch("long- and short-range operators live on different grids"));
        }
        let inv_rho = scaled.then(|| short.inv_rho_nodes());
        Ok(Self { long, short, inv_rho })
    }

    /// `A^ε = ρ_ε^{-1}(K_L + K_S^ε)`.
    pub fn acceleration(long: LongRange, short: ShortRange) -> Result<Self> {
        Self::build(long, short, true)
    }

    /// The symmetric stiffness `K_L + K_S^ε`.
    pub fn stiffness(long: LongRange, short: ShortRange) -> Result<Self> {
        Self::build(long, short, false)
    }

    pub fn new(grid: &MacroGrid, coeffs: &CellCoefficients, scale: Scale) -> Result<Self> {
        let p = coeffs.params();
        Self::acceleration(LongRange::new(grid, p.lambda, p.gamma)?, ShortRange::new(grid, coeffs, scale)?)
    }

    pub fn long(&self) -> &LongRange {
        &self.long
    }

    pub fn short(&self) -> &ShortRange {
        &self.short
    }

    pub fn grid(&self) -> &MacroGrid {
        self.long.grid()
    }

    pub fn is_scaled(&self) -> bool {
        self.inv_rho.is_some()
    }

    pub fn apply(&self, u: &VectorField) -> Result<VectorField> {
        u.check_shape(self.grid().len(), self.grid().dim())?;
        let mut out = VectorField::zeros(self.grid().len(), self.grid().dim());
        self.apply_into(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }
}

impl LinearOperator for FineOperator {
    fn len(&self) -> usize {
        self.long.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let d = self.grid().dim();
        self.long.apply_into(x, y);
        y.par_chunks_mut(d).enumerate().for_each(|(n, dst)| {
            let mut s = [0.0; 3];
            self.short.accumulate(n, x, &mut s[..d]);
            for c in 0..d {
                dst[c] += s[c];
            }
            if let Some(q) = &self.inv_rho {
                dst.iter_mut().for_each(|v| *v *= q[n]);
            }
        });
    }

    fn row_abs_sum_bound(&self) -> f64 {
        let q = self
            .inv_rho
            .as_ref()
            .map_or(1.0, |q| q.iter().copied().fold(0.0, f64::max));
        q * (self.long.row_abs_sum_bound() + self.short.row_abs_sum_bound())
    }

    fn info(&self) -> OpInfo {
        let mut params = self.short.info().params;
        params.extend(self.long.info().params.into_iter().take(2));
        OpInfo {
            name: if self.is_scaled() { "A" } else { "K_L + K_S" },
            params,
        }
    }

    fn visit_row(&self, row: usize, f: &mut dyn FnMut(usize, f64)) -> bool {
        let q = self.inv_rho.as_ref().map_or(1.0, |q| q[row / self.grid().dim()]);
        let mut g = |c: usize, v: f64| f(c, q * v);
        self.long.visit_row(row, &mut g);
        self.short.visit(row, 1.0, &mut g);
        true
    }
}
