//! Node-major storage for macro fields, two-scale product fields and
//! time-sampled trajectories.

use crate::error::{Error, Result};

/// `d` components per macro node, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: usize,
    data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(nodes: usize, components: usize) -> Self {
        Self {
            components,
            data: vec![0.0; nodes * components],
        }
    }

    pub fn from_vec(components: usize, data: Vec<f64>) -> Result<Self> {
        if components == 0 || !data.len().is_multiple_of(components) {
            return Err(Error::invalid(format!(
                "{} values do not split into {components}-component nodes",
                data.len()
            )));
        }
        Ok(Self { components, data })
    }

    /// Same vector in every node.
    pub fn constant(nodes: usize, value: &[f64]) -> Self {
        let data = (0..nodes).flat_map(|_| value.iter().copied()).collect();
        Self {
            components: value.len(),
            data,
        }
    }

    pub fn from_fn(nodes: usize, components: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nodes * components);
        for n in 0..nodes {
            for c in 0..components {
                data.push(f(n, c));
            }
        }
        Self { components, data }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / self.components
    }

    #[inline]
    pub fn node(&self, n: usize) -> &[f64] {
        &self.data[n * self.components..(n + 1) * self.components]
    }

    #[inline]
    pub fn node_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.components..(n + 1) * self.components]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, nodes: usize, components: usize) -> Result<()> {
        if self.components != components || self.nodes() != nodes {
            return Err(Error::mismatch(format!(
                "field has {} nodes × {} components, expected {nodes} × {components}",
                self.nodes(),
                self.components
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

/// `d` components per (macro node, cell node) pair; the cell index runs fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductField {
    components: usize,
    macro_nodes: usize,
    cell_nodes: usize,
    data: Vec<f64>,
}

impl ProductField {
    pub fn zeros(macro_nodes: usize, cell_nodes: usize, components: usize) -> Self {
        Self {
            components,
            macro_nodes,
            cell_nodes,
            data: vec![0.0; macro_nodes * cell_nodes * components],
        }
    }

    pub fn from_vec(macro_nodes: usize, cell_nodes: usize, components: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != macro_nodes * cell_nodes * components {
            return Err(Error::mismatch(format!(
                "{} values for a {macro_nodes} × {cell_nodes} × {components} product field",
                data.len()
            )));
        }
        Ok(Self {
            components,
            macro_nodes,
            cell_nodes,
            data,
        })
    }

    pub fn from_fn(
        macro_nodes: usize,
        cell_nodes: usize,
        components: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(macro_nodes * cell_nodes * components);
        for x in 0..macro_nodes {
            for y in 0..cell_nodes {
                for c in 0..components {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            components,
            macro_nodes,
            cell_nodes,
            data,
        }
    }

    /// Extends a macro field constantly in `y`.
    pub fn from_macro(u: &VectorField, cell_nodes: usize) -> Self {
        let d = u.components();
        Self::from_fn(u.nodes(), cell_nodes, d, |x, _, c| u.node(x)[c])
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn macro_nodes(&self) -> usize {
        self.macro_nodes
    }

    pub fn cell_nodes(&self) -> usize {
        self.cell_nodes
    }

    /// Values at `(x, y)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let o = (x * self.cell_nodes + y) * self.components;
        &self.data[o..o + self.components]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = (x * self.cell_nodes + y) * self.components;
        &mut self.data[o..o + self.components]
    }

    /// All cell values attached to macro node `x`.
    #[inline]
    pub fn slice(&self, x: usize) -> &[f64] {
        let w = self.cell_nodes * self.components;
        &self.data[x * w..(x + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, macro_nodes: usize, cell_nodes: usize, components: usize) -> Result<()> {
        if self.macro_nodes != macro_nodes || self.cell_nodes != cell_nodes || self.components != components {
            return Err(Error::mismatch(format!(
                "product field is {} × {} × {}, expected {macro_nodes} × {cell_nodes} × {components}",
                self.macro_nodes, self.cell_nodes, self.components
            )));
        }
        Ok(())
    }

    /// Cell average `⟨U⟩(x)` by equal-weight lattice quadrature, summed in
    /// fixed order.
    pub fn cell_average(&self) -> VectorField {
        let d = self.components;
        let inv = 1.0 / self.cell_nodes as f64;
        let mut out = VectorField::zeros(self.macro_nodes, d);
        for x in 0..self.macro_nodes {
            let s = self.slice(x);
            let dst = out.node_mut(x);
            for y in 0..self.cell_nodes {
                for c in 0..d {
                    dst[c] += s[y * d + c];
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

/// Time-stamped sequence of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub times: Vec<f64>,
    pub frames: Vec<F>,
}

impl<F> Default for Trajectory<F> {
    fn default() -> Self {
        Self {
            times: Vec::new(),
            frames: Vec::new(),
        }
    }
}

impl<F> Trajectory<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, frame: F) {
        self.times.push(t);
        self.frames.push(frame);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &F)> {
        self.times.last().copied().zip(self.frames.last())
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &F)> {
        self.times.iter().copied().zip(self.frames.iter())
    }

    pub fn map<G>(&self, f: impl FnMut(&F) -> G) -> Trajectory<G> {
        Trajectory {
            times: self.times.clone(),
            frames: self.frames.iter().map(f).collect(),
        }
    }

    pub fn try_map<G>(&self, f: impl FnMut(&F) -> Result<G>) -> Result<Trajectory<G>> {
        Ok(Trajectory {
            times: self.times.clone(),
            frames: self.frames.iter().map(f).collect::<Result<_>>()?,
        })
    }

    /// Index of the stored frame closest to `t`.
    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
    }

    pub fn check_times(&self, other_times: &[f64]) -> Result<()> {
        let same = self.times.len() == other_times.len()
            && self
                .times
                .iter()
                .zip(other_times)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
        if same {
            Ok(())
        } else {
            Err(Error::mismatch("trajectories are sampled at different times"))
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "field sizes differ");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}


pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
