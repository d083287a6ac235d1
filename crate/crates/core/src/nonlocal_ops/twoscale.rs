use rayon::prelude::*;

use super::{kernel_tensor, row_abs, tmul_add, LinearOperator, LongRange, OpInfo, Tensor};
use crate::error::{Error, Result};
use crate::field::ProductField;
use crate::grid::{open_ball_offsets, CellGrid, MacroGrid};
use crate::microstructure::CellCoefficients;

/// `B_S` on a single cell: `Σ_{ŷ ∈ H_δ(y)} α(y, ŷ) z⊗z/|z|^d (w(ŷ) - w(y)) h_y^d`
/// with periodic wrap.
#[derive(Debug, Clone)]
pub struct CellShortRange {
    coeffs: CellCoefficients,
    tensors: Vec<Tensor>,
    /// `neighbours[j * nb + b]`: cell node reached from `j` by bond `b`.
    neighbours: Vec<usize>,
}

impl CellShortRange {
    pub fn new(coeffs: &CellCoefficients) -> Result<Self> {
        let cell = coeffs.cell();
        let delta = coeffs.params().delta;
        cell.check_resolves(delta, "delta")?;
        let d = cell.dim();
        let offsets = open_ball_offsets(d, cell.spacing(), delta);
        let tensors = offsets
            .iter()
            .map(|o| kernel_tensor(&o.vec, o.norm, d, cell.weight()))
            .collect();
        let neighbours = (0..cell.len())
            .flat_map(|j| offsets.iter().map(move |o| cell.wrapped(j, o.steps)))
            .collect();
        Ok(Self {
            coeffs: coeffs.clone(),
            tensors,
            neighbours,
        })
    }

    pub fn coeffs(&self) -> &CellCoefficients {
        &self.coeffs
    }

    pub fn cell(&self) -> &CellGrid {
        self.coeffs.cell()
    }

    pub fn dim(&self) -> usize {
        self.cell().dim()
    }

    /// Length of one cell slice, `M^d · d`.
    pub fn slice_len(&self) -> usize {
        self.cell().len() * self.dim()
    }

    /// Writes `B_S w` for one cell slice.
    pub fn apply_cell(&self, w: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let nb = self.tensors.len();
        let mut diff = [0.0; 3];
        for j in 0..self.cell().len() {
            let dst = &mut out[j * d..(j + 1) * d];
            dst.iter_mut().for_each(|v| *v = 0.0);
            let wj = &w[j * d..(j + 1) * d];
            for (t, &k) in self.tensors.iter().zip(&self.neighbours[j * nb..(j + 1) * nb]) {
                let a = self.coeffs.alpha(j, k);
                let wk = &w[k * d..(k + 1) * d];
                for c in 0..d {
                    diff[c] = a * (wk[c] - wj[c]);
                }
                tmul_add(t, &diff[..d], dst);
            }
        }
    }

    fn visit_cell_row(&self, row: usize, scale: f64, f: &mut dyn FnMut(usize, f64)) {
        let d = self.dim();
        let nb = self.tensors.len();
        let (j, a) = (row / d, row % d);
        for (t, &k) in self.tensors.iter().zip(&self.neighbours[j * nb..(j + 1) * nb]) {
            let al = scale * self.coeffs.alpha(j, k);
            for b in 0..d {
                f(k * d + b, al * t[a][b]);
                f(j * d + b, -al * t[a][b]);
            }
        }
    }

    fn abs_bound(&self) -> f64 {
        let p = self.coeffs.params();
        let amax = p.c_f.max(p.c_m).max(p.c_i);
        2.0 * amax
            * (0..self.dim())
                .map(|a| self.tensors.iter().map(|t| row_abs(t, a)).sum::<f64>())
                .fold(0.0, f64::max)
    }
}

/// Which two-scale operator a [`TwoScaleOperator`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoScaleKind {
    /// `B_L w = Σ λ ξ⊗ξ/|ξ|^d (⟨w⟩(x̂) - w(x, y)) h_x^d`.
    Long,
    /// `B_S`, acting in `y` only.
    Short,
    /// `B_L + B_S`.
    Stiffness,
    /// `ρ^{-1}(y)(B_L + B_S)`.
    Acceleration,
}

/// Two-scale operators on product fields.
#[derive(Debug, Clone)]
pub struct TwoScaleOperator {
    long: LongRange,
    short: CellShortRange,
    kind: TwoScaleKind,
}

impl TwoScaleOperator {
    pub fn new(grid: &MacroGrid, coeffs: &CellCoefficients, kind: TwoScaleKind) -> Result<Self> {
        if grid.dim() != coeffs.cell().dim() {
            return Err(Error::mismatch("macro and cell grids differ in dimension"));
        }
        let p = coeffs.params();
        Ok(Self {
            long: LongRange::new(grid, p.lambda, p.gamma)?,
            short: CellShortRange::new(coeffs)?,
            kind,
        })
    }

    pub fn with_kind(&self, kind: TwoScaleKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    pub fn long(&self) -> &LongRange {
        &self.long
    }

    pub fn short(&self) -> &CellShortRange {
        &self.short
    }

    pub fn kind(&self) -> TwoScaleKind {
        self.kind
    }

    pub fn grid(&self) -> &MacroGrid {
        self.long.grid()
    }

    pub fn apply(&self, u: &ProductField) -> Result<ProductField> {
        let (n, m, d) = (self.grid().len(), self.short.cell().len(), self.grid().dim());
        u.check_shape(n, m, d)?;
        let mut out = ProductField::zeros(n, m, d);
        self.apply_into(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }
}

impl LinearOperator for TwoScaleOperator {
    fn len(&self) -> usize {
        self.grid().len() * self.short.slice_len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let d = self.grid().dim();
        let m = self.short.cell().len();
        let width = m * d;
        let with_long = self.kind != TwoScaleKind::Short;
        let with_short = self.kind != TwoScaleKind::Long;
        let gathered = with_long.then(|| {
            let avg = ProductField::from_vec(self.grid().len(), m, d, x.to_vec())
                .expect("slice length matches the product grid")
                .cell_average();
            let mut g = vec![0.0; self.grid().len() * d];
            self.long.apply_gather_into(avg.as_slice(), &mut g);
            g
        });
        let q = self.short.coeffs().inv_rho();
        y.par_chunks_mut(width).enumerate().for_each(|(n, dst)| {
            let src = &x[n * width..(n + 1) * width];
            if with_short {
                self.short.apply_cell(src, dst);
            } else {
                dst.iter_mut().for_each(|v| *v = 0.0);
            }
            if let Some(g) = &gathered {
                let k = &self.long.k_field()[n];
                let gn = &g[n * d..(n + 1) * d];
                for j in 0..m {
                    let mut kw = [0.0; 3];
                    tmul_add(k, &src[j * d..(j + 1) * d], &mut kw[..d]);
                    for c in 0..d {
                        dst[j * d + c] += gn[c] - kw[c];
                    }
                }
            }
            if self.kind == TwoScaleKind::Acceleration {
                for j in 0..m {
                    dst[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= q[j]);
                }
            }
        });
    }

    fn row_abs_sum_bound(&self) -> f64 {
        let long = self.long.row_abs_sum_bound();
        let short = self.short.abs_bound();
        match self.kind {
            TwoScaleKind::Long => long,
            TwoScaleKind::Short => short,
            TwoScaleKind::Stiffness => long + short,
            TwoScaleKind::Acceleration => self.short.coeffs().max_inv_rho() * (long + short),
        }
    }

    fn info(&self) -> OpInfo {
        let p = self.short.coeffs().params();
        OpInfo {
            name: match self.kind {
                TwoScaleKind::Long => "B_L",
                TwoScaleKind::Short => "B_S",
                TwoScaleKind::Stiffness => "B_L + B_S",
                TwoScaleKind::Acceleration => "rho^-1 (B_L + B_S)",
            },
            params: vec![
                ("lambda".into(), p.lambda),
                ("gamma".into(), p.gamma),
                ("delta".into(), p.delta),
                ("h_x".into(), self.grid().spacing()),
                ("h_y".into(), self.short.cell().spacing()),
            ],
        }
    }

    fn visit_row(&self, row: usize, f: &mut dyn FnMut(usize, f64)) -> bool {
        if self.kind != TwoScaleKind::Short {
            return false;
        }
        let width = self.short.slice_len();
        let (n, local) = (row / width, row % width);
        let mut g = |c: usize, v: f64| f(n * width + c, v);
        self.short.visit_cell_row(local, 1.0, &mut g);
        true
    }
}

/// `𝒞 r = ρ^{-1}B_S r - ⟨ρ^{-1}B_S r⟩ - K(ρ^{-1}r - ⟨ρ^{-1}r⟩)` on one cell
/// slice, for a fixed `d×d` matrix `K`.
#[derive(Debug, Clone)]
pub struct CorrectorOperator<'a> {
    short: &'a CellShortRange,
    k: Tensor,
}

impl<'a> CorrectorOperator<'a> {
    pub fn new(short: &'a CellShortRange, k: Tensor) -> Self {
        Self { short, k }
    }

    pub fn k(&self) -> &Tensor {
        &self.k
    }

    /// Writes `𝒞 r` into `out` and returns `𝒦 r = ⟨ρ^{-1}B_S r⟩ - K⟨ρ^{-1}r⟩`.
    pub fn apply_split(&self, r: &[f64], out: &mut [f64]) -> [f64; 3] {
        let d = self.short.dim();
        let m = self.short.cell().len();
        let q = self.short.coeffs().inv_rho();
        self.short.apply_cell(r, out);
        let mut mean_t = [0.0; 3];
        let mut mean_s = [0.0; 3];
        for j in 0..m {
            for c in 0..d {
                out[j * d + c] *= q[j];
                mean_t[c] += out[j * d + c];
                mean_s[c] += q[j] * r[j * d + c];
            }
        }
        let inv = 1.0 / m as f64;
        for c in 0..d {
            mean_t[c] *= inv;
            mean_s[c] *= inv;
        }
        for j in 0..m {
            let mut fluct = [0.0; 3];
            for c in 0..d {
                fluct[c] = q[j] * r[j * d + c] - mean_s[c];
            }
            let mut kf = [0.0; 3];
            tmul_add(&self.k, &fluct[..d], &mut kf[..d]);
            for c in 0..d {
                out[j * d + c] = (out[j * d + c] - mean_t[c]) - kf[c];
            }
        }
        let mut km = [0.0; 3];
        tmul_add(&self.k, &mean_s[..d], &mut km[..d]);
        let mut coupling = [0.0; 3];
        for c in 0..d {
            coupling[c] = mean_t[c] - km[c];
        }
        coupling
    }

    /// `𝒦 r` alone.
    pub fn coupling(&self, r: &[f64]) -> [f64; 3] {
        let mut scratch = vec![0.0; r.len()];
        self.apply_split(r, &mut scratch)
    }
}

impl LinearOperator for CorrectorOperator<'_> {
    fn len(&self) -> usize {
        self.short.slice_len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.apply_split(x, y);
    }

    fn row_abs_sum_bound(&self) -> f64 {
        let qmax = self.short.coeffs().max_inv_rho();
        let kabs = (0..self.short.dim()).map(|a| row_abs(&self.k, a)).fold(0.0, f64::max);
        2.0 * qmax * (self.short.abs_bound() + kabs)
    }

    fn info(&self) -> OpInfo {
        OpInfo {
            name: "C",
            params: vec![("delta".into(), self.short.coeffs().params().delta)],
        }
    }
}

/// `𝒞 r` node by node on a product field, with `K(x)` taken from `k_field`.
pub fn apply_corrector(short: &CellShortRange, k_field: &[Tensor], r: &ProductField) -> Result<ProductField> {
    let d = short.dim();
    r.check_shape(k_field.len(), short.cell().len(), d)?;
    let width = short.slice_len();
    let mut out = ProductField::zeros(k_field.len(), short.cell().len(), d);
    out.as_mut_slice()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(n, dst)| {
            CorrectorOperator::new(short, k_field[n]).apply_split(r.slice(n), dst);
        });
    Ok(out)
}

/// The coupled macro/micro system acting on the stacked state `(u^H, r)`:
///
/// `ü^H = ⟨ρ^{-1}⟩K_L u^H + 𝒦 r`,
/// `r̈ = (ρ^{-1} - ⟨ρ^{-1}⟩)K_L u^H + 𝒞 r`,
///
/// with `K(x)` the truncated long-range diagonal so that `u^H + r` follows
/// the two-scale dynamics exactly.
#[derive(Debug, Clone)]
pub struct CoupledOperator {
    long: LongRange,
    short: CellShortRange,
}

impl CoupledOperator {
    pub fn new(grid: &MacroGrid, coeffs: &CellCoefficients) -> Result<Self> {
        let p = coeffs.params();
        if grid.dim() != coeffs.cell().dim() {
            return Err(Error::mismatch("macro and cell grids differ in dimension"));
        }
        Ok(Self {
            long: LongRange::new(grid, p.lambda, p.gamma)?,
            short: CellShortRange::new(coeffs)?,
        })
    }

    pub fn long(&self) -> &LongRange {
        &self.long
    }

    pub fn short(&self) -> &CellShortRange {
        &self.short
    }

    /// Length of the `u^H` block.
    pub fn macro_len(&self) -> usize {
        self.long.len()
    }
}

impl LinearOperator for CoupledOperator {
    fn len(&self) -> usize {
        self.long.len() * (1 + self.short.cell().len())
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let d = self.short.dim();
        let m = self.short.cell().len();
        let width = m * d;
        let nm = self.long.len();
        let (uh, r) = x.split_at(nm);
        let (ah, ar) = y.split_at_mut(nm);
        let mut c = vec![0.0; nm];
        self.long.apply_into(uh, &mut c);
        let q = self.short.coeffs().inv_rho();
        let qbar = self.short.coeffs().mean_inv_rho();
        ar.par_chunks_mut(width)
            .zip(ah.par_chunks_mut(d))
            .enumerate()
            .for_each(|(n, (dst, dh))| {
                let op = CorrectorOperator::new(&self.short, self.long.k_field()[n]);
                let coupling = op.apply_split(&r[n * width..(n + 1) * width], dst);
                let cn = &c[n * d..(n + 1) * d];
                for j in 0..m {
                    for a in 0..d {
                        dst[j * d + a] += (q[j] - qbar) * cn[a];
                    }
                }
                for a in 0..d {
                    dh[a] = qbar * cn[a] + coupling[a];
                }
            });
    }

    fn row_abs_sum_bound(&self) -> f64 {
        let qmax = self.short.coeffs().max_inv_rho();
        let kabs = self.long.row_abs_sum_bound();
        2.0 * qmax * (kabs + self.short.abs_bound() + kabs)
    }

    fn info(&self) -> OpInfo {
        OpInfo {
            name: "coupled (u^H, r)",
            params: vec![
                ("h_x".into(), self.long.grid().spacing()),
                ("h_y".into(), self.short.cell().spacing()),
            ],
        }
    }
}
