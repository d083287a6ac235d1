use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rayon::prelude::*;

use super::{LinearOperator, OpInfo};
use crate::error::{Error, Result};

/// Largest operator (in unknowns) that is assembled by default.
pub const DEFAULT_ASSEMBLY_CAP: usize = 20_000;

fn check_cap(op: &dyn LinearOperator, cap: usize) -> Result<()> {
    if op.len() > cap {
        return Err(Error::unsupported(format!(
            "{} has {} unknowns, above the assembly cap of {cap}",
            op.info().name,
            op.len()
        )));
    }
    Ok(())
}

/// Sparse matrix of `op`, from its row stencils when exposed and otherwise
/// column by column from `apply`.
pub fn assemble(op: &dyn LinearOperator, cap: usize) -> Result<CsrMatrix<f64>> {
    check_cap(op, cap)?;
    let n = op.len();
    if n == 0 {
        return Ok(CsrMatrix::zeros(0, 0));
    }
    if op.visit_row(0, &mut |_, _| {}) {
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut entries = Vec::new();
                op.visit_row(i, &mut |c, v| entries.push((c, v)));
                entries.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
                for (c, v) in entries {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += v,
                        _ => merged.push((c, v)),
                    }
                }
                merged.retain(|e| e.1 != 0.0);
                merged
            })
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        return CsrMatrix::try_from_csr_data(n, n, offsets, cols, vals)
            .map_err(|e| Error::invalid(format!("assembly produced an invalid matrix: {e}")));
    }
    let columns: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            op.apply(&e)
                .into_iter()
                .enumerate()
                .filter(|(_, v)| *v != 0.0)
                .collect()
        })
        .collect();
    let mut coo = CooMatrix::new(n, n);
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col {
            coo.push(i, j, v);
        }
    }
    Ok(CsrMatrix::from(&coo))
}

pub fn assemble_dense(op: &dyn LinearOperator, cap: usize) -> Result<DMatrix<f64>> {
    Ok(csr_to_dense(&assemble(op, cap)?))
}

pub fn csr_to_dense(m: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.triplet_iter() {
        d[(i, j)] += *v;
    }
    d
}

/// An operator together with its assembled matrix when small enough.
#[derive(Clone)]
pub struct OperatorHandle {
    op: Arc<dyn LinearOperator>,
    matrix: Option<CsrMatrix<f64>>,
    info: OpInfo,
}

impl std::fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("info", &self.info)
            .field("len", &self.op.len())
            .field("assembled", &self.matrix.is_some())
            .finish()
    }
}

impl OperatorHandle {
    /// Wraps `op`, assembling it when `len <= cap`.
    pub fn new(op: Arc<dyn LinearOperator>, cap: usize) -> Result<Self> {
        let matrix = if op.len() <= cap { Some(assemble(&*op, cap)?) } else { None };
        let info = op.info();
        Ok(Self { op, matrix, info })
    }

    pub fn matrix_free(op: Arc<dyn LinearOperator>) -> Self {
        let info = op.info();
        Self { op, matrix: None, info }
    }

    pub fn op(&self) -> &dyn LinearOperator {
        &*self.op
    }

    pub fn info(&self) -> &OpInfo {
        &self.info
    }

    pub fn len(&self) -> usize {
        self.op.len()
    }

    pub fn is_empty(&self) -> bool {
        self.op.len() == 0
    }

    pub fn matrix(&self) -> Option<&CsrMatrix<f64>> {
        self.matrix.as_ref()
    }

    pub fn require_matrix(&self) -> Result<&CsrMatrix<f64>> {
        self.matrix.as_ref().ok_or_else(|| {
            Error::unsupported(format!("{} is not assembled ({} unknowns)", self.info.name, self.len()))
        })
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        Ok(csr_to_dense(self.require_matrix()?))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.op.apply(x)
    }
}
