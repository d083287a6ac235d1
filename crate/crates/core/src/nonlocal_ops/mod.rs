//! Lattice discretizations of the nonlocal operators: long range `K_L`,
//! short range `K_S^ε`, the fine-scale acceleration `A^ε`, the two-scale pair
//! `B_L`, `B_S`, the corrector operator `𝒞`, the matrix `K`, and norm bounds.
//!
//! Every operator uses midpoint quadrature on its lattice with the self node
//! excluded, and truncates bonds leaving Ω node-wise.

mod bounds;
mod handle;
mod long_range;
mod short_range;
mod twoscale;

pub use bounds::{op_norm_estimate, Bounds, NormKind};
pub use handle::{assemble, assemble_dense, csr_to_dense as csr_dense, OperatorHandle, DEFAULT_ASSEMBLY_CAP};
pub use long_range::LongRange;
pub use short_range::{FineOperator, ShortRange};
pub use twoscale::{
    apply_corrector, CellShortRange, CorrectorOperator, CoupledOperator, TwoScaleKind, TwoScaleOperator,
};

/// 3×3 storage for `d×d` tensors; entries outside the leading block are 0.
pub type Tensor = [[f64; 3]; 3];

pub const ZERO_TENSOR: Tensor = [[0.0; 3]; 3];

/// `w · ξ⊗ξ / |ξ|^d`.
pub fn kernel_tensor(vec: &[f64; 3], norm: f64, dim: usize, w: f64) -> Tensor {
    let s = w / norm.powi(dim as i32);
    let mut t = ZERO_TENSOR;
    for a in 0..dim {
        for b in 0..dim {
            t[a][b] = s * vec[a] * vec[b];
        }
    }
    t
}

/// `out += T v` on the leading `d×d` block.
#[inline]
pub(crate) fn tmul_add(t: &Tensor, v: &[f64], out: &mut [f64]) {
    let d = out.len();
    for a in 0..d {
        let mut s = 0.0;
        for b in 0..d {
            s += t[a][b] * v[b];
        }
        out[a] += s;
    }
}

pub(crate) fn tadd(acc: &mut Tensor, t: &Tensor, w: f64) {
    for a in 0..3 {
        for b in 0..3 {
            acc[a][b] += w * t[a][b];
        }
    }
}

/// Metadata describing an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OpInfo {
    pub name: &'static str,
    pub params: Vec<(String, f64)>,
}

/// A linear map on flat `f64` vectors.
pub trait LinearOperator: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// Upper bound on `max_i Σ_j |L_ij|`, which also bounds the spectral
    /// radius.
    fn row_abs_sum_bound(&self) -> f64;

    fn info(&self) -> OpInfo;

    /// Calls `f(col, value)` for the nonzeros of one row, if the operator
    /// exposes its stencil. Duplicate columns are summed by the caller.
    fn visit_row(&self, _row: usize, _f: &mut dyn FnMut(usize, f64)) -> bool {
        false
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        self.apply_into(x, &mut y);
        y
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn len(&self) -> usize {
        (**self).len()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
    fn row_abs_sum_bound(&self) -> f64 {
        (**self).row_abs_sum_bound()
    }
    fn info(&self) -> OpInfo {
        (**self).info()
    }
    fn visit_row(&self, row: usize, f: &mut dyn FnMut(usize, f64)) -> bool {
        (**self).visit_row(row, f)
    }
}

/// Sum of absolute tensor entries in row `a`.
pub(crate) fn row_abs(t: &Tensor, a: usize) -> f64 {
    t[a].iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_rank_one_with_trace_norm_power() {
        let v = [0.3, -0.4, 0.0];
        let t = kernel_tensor(&v, 0.5, 2, 2.0);
        assert!((t[0][0] + t[1][1] - 2.0 * 0.25 / 0.25).abs() < 1e-15);
        assert_eq!(t[0][1], t[1][0]);
        assert_eq!(t[2][2], 0.0);
    }
}
