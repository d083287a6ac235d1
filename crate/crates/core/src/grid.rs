//! Uniform lattices for the macroscopic domain and the periodic unit cell,
//! plus the `ε = 1/n` scale and the node-to-cell map that ties them together.
//!
//! Both lattices are cell-centred: macro nodes sit at `a_k + (i + 1/2) h_x`,
//! cell nodes at `-1/2 + (j + 1/2) / M`. Every node carries the weight `h^d`.

use crate::error::{Error, Result};

/// Relative tolerance used when checking that lengths are integer multiples
/// of a spacing.
const LATTICE_TOL: f64 = 1e-9;

/// A nonzero lattice displacement together with its physical vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeOffset {
    pub steps: [i64; 3],
    pub vec: [f64; 3],
    pub norm: f64,
}

fn near_integer(v: f64) -> Option<i64> {
    let r = v.round();
    if (v - r).abs() <= LATTICE_TOL * v.abs().max(1.0) {
        Some(r as i64)
    } else {
        None
    }
}

/// Enumerates all nonzero lattice offsets of spacing `h` in `dim` dimensions
/// whose length satisfies `keep(norm)`. Ordered lexicographically by steps so
/// every sum over offsets has a fixed order.
fn lattice_offsets(dim: usize, h: f64, reach: f64, keep: impl Fn(f64) -> bool) -> Vec<LatticeOffset> {
    let k = (reach / h).ceil() as i64 + 1;
    let range = |axis: usize| if axis < dim { -k..=k } else { 0..=0 };
    let mut out = Vec::new();
    for s0 in range(0) {
        for s1 in range(1) {
            for s2 in range(2) {
                if s0 == 0 && s1 == 0 && s2 == 0 {
                    continue;
                }
                let vec = [s0 as f64 * h, s1 as f64 * h, s2 as f64 * h];
                let norm = (vec[0] * vec[0] + vec[1] * vec[1] + vec[2] * vec[2]).sqrt();
                if keep(norm) {
                    out.push(LatticeOffset {
                        steps: [s0, s1, s2],
                        vec,
                        norm,
                    });
                }
            }
        }
    }
    out
}

/// Offsets inside the closed ball `|ξ| <= radius` (long-range bonds).
pub fn closed_ball_offsets(dim: usize, h: f64, radius: f64) -> Vec<LatticeOffset> {
    let r = radius * (1.0 + 1e-12);
    lattice_offsets(dim, h, radius, |n| n <= r)
}

/// Offsets inside the open ball `|z| < radius` (short-range bonds).
pub fn open_ball_offsets(dim: usize, h: f64, radius: f64) -> Vec<LatticeOffset> {
    let r = radius * (1.0 - 1e-12);
    lattice_offsets(dim, h, radius, |n| n < r)
}

/// Uniform cell-centred lattice on the box `Ω = Π [a_k, b_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroGrid {
    dim: usize,
    lower: [f64; 3],
    upper: [f64; 3],
    counts: [usize; 3],
    spacing: f64,
}

impl MacroGrid {
    /// Builds the grid; every edge length must be an integer multiple of
    /// `spacing` and hold at least two nodes.
    pub fn new(lower: &[f64], upper: &[f64], spacing: f64) -> Result<Self> {
        let dim = lower.len();
        if !(1..=3).contains(&dim) || upper.len() != dim {
            return Err(Error::invalid(format!(
                "macro grid needs matching lower/upper bounds of dimension 1..=3, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!("macro spacing must be positive, got {spacing}")));
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut counts = [1usize; 3];
        for k in 0..dim {
            let len = upper[k] - lower[k];
            if !(len > 0.0) {
                return Err(Error::invalid(format!("empty macro extent on axis {k}")));
            }
            let n = near_integer(len / spacing).ok_or_else(|| {
                Error::invalid(format!(
                    "macro extent {len} on axis {k} is not a multiple of spacing {spacing}"
                ))
            })?;
            if n < 2 {
                return Err(Error::invalid(format!("axis {k} has fewer than 2 macro nodes")));
            }
            lo[k] = lower[k];
            hi[k] = upper[k];
            counts[k] = n as usize;
        }
        Ok(Self {
            dim,
            lower: lo,
            upper: hi,
            counts,
            spacing,
        })
    }

    /// Grid with `nodes` nodes along axis 0 (spacing derived from that axis).
    pub fn with_nodes(lower: &[f64], upper: &[f64], nodes: usize) -> Result<Self> {
        if nodes == 0 || lower.is_empty() || upper.is_empty() {
            return Err(Error::invalid("macro grid needs at least one node and one axis"));
        }
        Self::new(lower, upper, (upper[0] - lower[0]) / nodes as f64)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight `h_x^d` carried by every node.
    pub fn weight(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|k| self.upper[k] - self.lower[k]).product()
    }

    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let i0 = node % self.counts[0];
        let rest = node / self.counts[0];
        [i0, rest % self.counts[1], rest / self.counts[1]]
    }

    pub fn linear_index(&self, mi: [usize; 3]) -> usize {
        mi[0] + self.counts[0] * (mi[1] + self.counts[1] * mi[2])
    }

    pub fn coord(&self, node: usize) -> [f64; 3] {
        let mi = self.multi_index(node);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.lower[k] + (mi[k] as f64 + 0.5) * self.spacing;
        }
        x
    }

    /// Node reached from `node` by a lattice displacement, or `None` when it
    /// leaves Ω (the χ_Ω truncation).
    #[inline]
    pub fn shifted(&self, node: usize, steps: [i64; 3]) -> Option<usize> {
        let mi = self.multi_index(node);
        let mut out = [0usize; 3];
        for k in 0..3 {
            let v = mi[k] as i64 + steps[k];
            if v < 0 || v >= self.counts[k] as i64 {
                return None;
            }
            out[k] = v as usize;
        }
        Some(self.linear_index(out))
    }

    /// Nodes whose coordinates lie in the closed sub-box `[lo, hi]`.
    pub fn nodes_in_box(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        (0..self.len())
            .filter(|&n| {
                let x = self.coord(n);
                (0..self.dim).all(|k| x[k] >= lo[k] - 1e-12 && x[k] <= hi[k] + 1e-12)
            })
            .collect()
    }

    /// Checks that a horizon of the given radius spans at least two nodes.
    pub fn check_resolves(&self, radius: f64, what: &str) -> Result<()> {
        if radius / self.spacing < 2.0 - 1e-12 {
            return Err(Error::invalid(format!(
                "{what} = {radius} is resolved by fewer than 2 macro nodes (h_x = {})",
                self.spacing
            )));
        }
        Ok(())
    }
}

/// Uniform periodic cell-centred lattice on the unit cell `Y = [-1/2, 1/2)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    dim: usize,
    per_axis: usize,
}

impl CellGrid {
    pub fn new(dim: usize, per_axis: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("cell dimension must be 1..=3, got {dim}")));
        }
        if per_axis < 2 {
            return Err(Error::invalid("cell grid needs at least 2 nodes per axis"));
        }
        Ok(Self { dim, per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.per_axis as f64
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn multi_index(&self, j: usize) -> [usize; 3] {
        let m = self.per_axis;
        let mut mi = [0usize; 3];
        let mut rest = j;
        for slot in mi.iter_mut().take(self.dim) {
            *slot = rest % m;
            rest /= m;
        }
        mi
    }

    pub fn linear_index(&self, mi: [usize; 3]) -> usize {
        let m = self.per_axis;
        let mut idx = 0;
        for k in (0..self.dim).rev() {
            idx = idx * m + mi[k];
        }
        idx
    }

    pub fn coord(&self, j: usize) -> [f64; 3] {
        let mi = self.multi_index(j);
        let mut y = [0.0; 3];
        for k in 0..self.dim {
            y[k] = -0.5 + (mi[k] as f64 + 0.5) * self.spacing();
        }
        y
    }

    /// Periodic neighbour of `j` by a lattice displacement.
    #[inline]
    pub fn wrapped(&self, j: usize, steps: [i64; 3]) -> usize {
        let m = self.per_axis as i64;
        let mi = self.multi_index(j);
        let mut out = [0usize; 3];
        for k in 0..self.dim {
            out[k] = (mi[k] as i64 + steps[k]).rem_euclid(m) as usize;
        }
        self.linear_index(out)
    }

    pub fn check_resolves(&self, radius: f64, what: &str) -> Result<()> {
        if radius / self.spacing() < 2.0 - 1e-12 {
            return Err(Error::invalid(format!(
                "{what} = {radius} is resolved by fewer than 2 cell nodes (h_y = {})",
                self.spacing()
            )));
        }
        Ok(())
    }
}

/// Microstructure scale `ε = 1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scale {
    n: u32,
}

impl Scale {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("scale denominator must be positive"));
        }
        Ok(Self { n })
    }

    /// Accepts only values of the form `1/n`.
    pub fn from_epsilon(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
        }
        match near_integer(1.0 / eps) {
            Some(n) if n >= 1 && n <= u32::MAX as i64 => Self::new(n as u32),
            _ => Err(Error::invalid(format!("epsilon = {eps} is not of the form 1/n"))),
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// Lookup from macro nodes to the cell node hit by `x/ε (mod 1)`.
///
/// Exists only when the grids are commensurate: `m = n h_x M` is an integer
/// and the first node lands exactly on a cell node. Neighbouring macro nodes
/// then map to cell nodes `m` apart along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMap {
    scale: Scale,
    stride: usize,
    cell_of_node: Vec<usize>,
}

impl CellMap {
    pub fn new(grid: &MacroGrid, cell: &CellGrid, scale: Scale) -> Result<Self> {
        if grid.dim() != cell.dim() {
            return Err(Error::mismatch(format!(
                "macro grid is {}-D but cell grid is {}-D",
                grid.dim(),
                cell.dim()
            )));
        }
        let m_cells = cell.per_axis() as f64;
        let n = scale.n() as f64;
        let stride = near_integer(n * grid.spacing() * m_cells)
            .filter(|&s| s >= 1)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "epsilon = {} is incommensurate: n·h_x·M = {} is not a positive integer",
                    scale.epsilon(),
                    n * grid.spacing() * m_cells
                ))
            })?;
        // Cell index (along each axis) of the first macro node.
        let mut first = [0i64; 3];
        for k in 0..grid.dim() {
            let x0 = grid.lower()[k] + 0.5 * grid.spacing();
            let j = n * x0 * m_cells + 0.5 * m_cells - 0.5;
            first[k] = near_integer(j).ok_or_else(|| {
                Error::invalid(format!(
                    "epsilon = {}: macro node x = {x0} maps to y off the cell lattice on axis {k}",
                    scale.epsilon()
                ))
            })?;
        }
        let m = cell.per_axis() as i64;
        let cell_of_node = (0..grid.len())
            .map(|node| {
                let mi = grid.multi_index(node);
                let mut cj = [0usize; 3];
                for k in 0..grid.dim() {
                    cj[k] = (first[k] + stride * mi[k] as i64).rem_euclid(m) as usize;
                }
                cell.linear_index(cj)
            })
            .collect();
        Ok(Self {
            scale,
            stride: stride as usize,
            cell_of_node,
        })
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    /// Number of cell nodes skipped per macro step (1 for matched grids).
    pub fn stride(&self) -> usize {
        self.stride
    }

    #[inline]
    pub fn cell_of(&self, node: usize) -> usize {
        self.cell_of_node[node]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.cell_of_node
    }
}

/// Macro grid whose spacing is `ε h_y`, so every fine-scale bond maps to
/// exactly one cell bond.
pub fn matched_macro_grid(lower: &[f64], upper: &[f64], cell: &CellGrid, scale: Scale) -> Result<MacroGrid> {
    MacroGrid::new(lower, upper, scale.epsilon() * cell.spacing())
}
