//! Periodic unit cell `Y = [-1/2, 1/2)^d` with one inclusion, the phase
//! constants, and the coefficient tables (density, bond strength) sampled on
//! a cell lattice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{open_ball_offsets, CellGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Inclusion,
    Matrix,
}

/// Inclusion shape, centred in the cell.
///
/// A fiber runs along the last axis and has a circular cross-section in the
/// remaining ones; a slab is the layer `|y_1| < R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Ball { radius: f64 },
    Fiber { radius: f64 },
    Slab { half_width: f64 },
}

impl Shape {
    pub fn from_name(name: &str, size: f64) -> Result<Self> {
        match name {
            "ball" => Ok(Shape::Ball { radius: size }),
            "fiber" => Ok(Shape::Fiber { radius: size }),
            "slab" => Ok(Shape::Slab { half_width: size }),
            other => Err(Error::invalid(format!(
                "unknown shape `{other}` (expected one of: ball, fiber, slab)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Ball { .. } => "ball",
            Shape::Fiber { .. } => "fiber",
            Shape::Slab { .. } => "slab",
        }
    }

    pub fn size(&self) -> f64 {
        match *self {
            Shape::Ball { radius } | Shape::Fiber { radius } => radius,
            Shape::Slab { half_width } => half_width,
        }
    }
}

/// Nearest-image representative of `v` in `[-1/2, 1/2]`.
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    v - v.round()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub dim: usize,
    pub shape: Shape,
}

impl CellGeometry {
    pub fn new(dim: usize, shape: Shape) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("cell dimension must be 1..=3, got {dim}")));
        }
        let size = shape.size();
        if !(size >= 0.0) || size >= 0.5 {
            return Err(Error::invalid(format!(
                "inclusion size {size} must lie in [0, 0.5)"
            )));
        }
        if matches!(shape, Shape::Fiber { .. }) && dim == 1 {
            return Err(Error::invalid("a fiber needs at least two dimensions"));
        }
        Ok(Self { dim, shape })
    }

    pub fn indicator(&self, y: &[f64]) -> Phase {
        let inside = match self.shape {
            Shape::Ball { radius } => {
                let r2: f64 = y[..self.dim].iter().map(|&v| wrap_unit(v).powi(2)).sum();
                r2 < radius * radius
            }
            Shape::Fiber { radius } => {
                let r2: f64 = y[..self.dim - 1].iter().map(|&v| wrap_unit(v).powi(2)).sum();
                r2 < radius * radius
            }
            Shape::Slab { half_width } => wrap_unit(y[0]).abs() < half_width,
        };
        if inside {
            Phase::Inclusion
        } else {
            Phase::Matrix
        }
    }

    /// `χ_f(y)`.
    pub fn chi_f(&self, y: &[f64]) -> f64 {
        match self.indicator(y) {
            Phase::Inclusion => 1.0,
            Phase::Matrix => 0.0,
        }
    }

    /// Analytic inclusion volume fraction.
    pub fn exact_volume_fraction(&self) -> f64 {
        use std::f64::consts::PI;
        match (self.shape, self.dim) {
            (Shape::Ball { radius }, 1) | (Shape::Fiber { radius }, 2) => 2.0 * radius,
            (Shape::Ball { radius }, 2) | (Shape::Fiber { radius }, 3) => PI * radius * radius,
            (Shape::Ball { radius }, _) => 4.0 / 3.0 * PI * radius.powi(3),
            (Shape::Slab { half_width }, _) => 2.0 * half_width,
            (Shape::Fiber { .. }, _) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    pub c_f: f64,
    pub c_m: f64,
    pub c_i: f64,
    pub rho_f: f64,
    pub rho_m: f64,
    pub delta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub beta: Option<f64>,
}

impl PhaseParams {
    /// Hard admissibility checks; every failure is listed.
    pub fn check(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("{name} must be positive and finite, got {v}"));
            }
        };
        positive("rho_f", self.rho_f);
        positive("rho_m", self.rho_m);
        positive("delta", self.delta);
        positive("gamma", self.gamma);
        positive("lambda", self.lambda);
        for (name, v) in [("c_f", self.c_f), ("c_m", self.c_m), ("c_i", self.c_i)] {
            if !(v >= 0.0) || !v.is_finite() {
                errs.push(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta < self.delta) {
                errs.push(format!("beta = {beta} must satisfy 0 < beta < delta = {}", self.delta));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// True when all three bond constants coincide and the densities agree.
    pub fn is_homogeneous(&self) -> bool {
        self.c_f == self.c_m && self.c_m == self.c_i && self.rho_f == self.rho_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub severity: Severity,
    pub message: String,
}

/// Geometry plus phase constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Microstructure {
    pub geometry: CellGeometry,
    pub params: PhaseParams,
}

impl Microstructure {
    pub fn new(geometry: CellGeometry, params: PhaseParams) -> Result<Self> {
        params.check()?;
        Ok(Self { geometry, params })
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    pub fn indicator(&self, y: &[f64]) -> Phase {
        self.geometry.indicator(y)
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        match self.indicator(y) {
            Phase::Inclusion => self.params.rho_f,
            Phase::Matrix => self.params.rho_m,
        }
    }

    pub fn bond_strength(&self, y: &[f64], yh: &[f64]) -> f64 {
        let p = &self.params;
        match (self.indicator(y), self.indicator(yh)) {
            (Phase::Inclusion, Phase::Inclusion) => p.c_f,
            (Phase::Matrix, Phase::Matrix) => p.c_m,
            _ => p.c_i,
        }
    }

    /// Bond strength truncated to nearest-image separation `< horizon`.
    pub fn bond_strength_cutoff(&self, y: &[f64], yh: &[f64], horizon: f64) -> Result<f64> {
        if !(horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let d2: f64 = (0..self.dim()).map(|k| wrap_unit(yh[k] - y[k]).powi(2)).sum();
        Ok(if d2.sqrt() < horizon {
            self.bond_strength(y, yh)
        } else {
            0.0
        })
    }

    /// `(θ_f, θ_m)` by lattice quadrature of `χ_f`.
    pub fn volume_fractions(&self, cell: &CellGrid) -> (f64, f64) {
        let theta_f = (0..cell.len()).map(|j| self.geometry.chi_f(&cell.coord(j))).sum::<f64>() * cell.weight();
        (theta_f, 1.0 - theta_f)
    }

    /// Admissibility report: interface separation (errors) and the
    /// recommended constant ordering (warning).
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let size = self.geometry.shape.size();
        let delta = self.params.delta;
        if size > 0.0 {
            let gap = 1.0 - 2.0 * size;
            if gap < 2.0 * delta {
                out.push(Violation {
                    severity: Severity::Error,
                    message: format!(
                        "inclusion and its periodic copy are {gap} apart, closer than 2·delta = {}",
                        2.0 * delta
                    ),
                });
            }
            if 2.0 * size < delta {
                out.push(Violation {
                    severity: Severity::Error,
                    message: format!(
                        "inclusion width {} is below delta = {delta}; a bond could cross two interfaces",
                        2.0 * size
                    ),
                });
            }
        }
        let p = &self.params;
        if !(p.c_f > p.c_i && p.c_i > p.c_m && p.c_m > 0.0) {
            out.push(Violation {
                severity: Severity::Warning,
                message: format!(
                    "bond constants C_f = {}, C_i = {}, C_m = {} are not ordered C_f > C_i > C_m > 0",
                    p.c_f, p.c_i, p.c_m
                ),
            });
        }
        out
    }

    /// Coefficient table on `cell`; mollified when `beta` is set.
    pub fn coefficients(&self, cell: &CellGrid) -> Result<CellCoefficients> {
        if cell.dim() != self.dim() {
            return Err(Error::mismatch(format!(
                "cell grid is {}-D, microstructure is {}-D",
                cell.dim(),
                self.dim()
            )));
        }
        match self.params.beta {
            Some(beta) => self.mollify(beta, cell),
            None => {
                let chi_f = (0..cell.len()).map(|j| self.geometry.chi_f(&cell.coord(j))).collect();
                Ok(CellCoefficients::from_chi_f(self.params, cell.clone(), chi_f))
            }
        }
    }

    /// Periodic convolution of the indicators with the bump
    /// `exp(-1/(1 - |s|²))` of radius `beta`, normalised on the lattice.
    pub fn mollify(&self, beta: f64, cell: &CellGrid) -> Result<CellCoefficients> {
        if !(beta > 0.0 && beta < self.params.delta) {
            return Err(Error::invalid(format!(
                "mollification width beta = {beta} must satisfy 0 < beta < delta = {}",
                self.params.delta
            )));
        }
        let raw: Vec<f64> = (0..cell.len()).map(|j| self.geometry.chi_f(&cell.coord(j))).collect();
        let mut stencil: Vec<([i64; 3], f64)> = vec![([0; 3], bump(0.0))];
        stencil.extend(
            open_ball_offsets(cell.dim(), cell.spacing(), beta)
                .into_iter()
                .map(|o| (o.steps, bump(o.norm / beta))),
        );
        let z: f64 = stencil.iter().map(|s| s.1).sum();
        let chi_f = (0..cell.len())
            .map(|j| stencil.iter().map(|(s, w)| w * raw[cell.wrapped(j, *s)]).sum::<f64>() / z)
            .collect();
        Ok(CellCoefficients::from_chi_f(self.params, cell.clone(), chi_f))
    }
}

fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Inclusion fraction and density sampled on a cell lattice, with the bond
/// strength `α(j, k)` built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCoefficients {
    params: PhaseParams,
    cell: CellGrid,
    chi_f: Vec<f64>,
    chi_m: Vec<f64>,
    rho: Vec<f64>,
    inv_rho: Vec<f64>,
}

impl CellCoefficients {
    pub fn from_chi_f(params: PhaseParams, cell: CellGrid, chi_f: Vec<f64>) -> Self {
        let chi_m: Vec<f64> = chi_f.iter().map(|f| 1.0 - f).collect();
        let rho: Vec<f64> = chi_f
            .iter()
            .zip(&chi_m)
            .map(|(f, m)| f * params.rho_f + m * params.rho_m)
            .collect();
        let inv_rho = rho.iter().map(|r| 1.0 / r).collect();
        Self {
            params,
            cell,
            chi_f,
            chi_m,
            rho,
            inv_rho,
        }
    }

    pub fn params(&self) -> &PhaseParams {
        &self.params
    }

    pub fn cell(&self) -> &CellGrid {
        &self.cell
    }

    pub fn chi_f(&self) -> &[f64] {
        &self.chi_f
    }

    pub fn chi_m(&self) -> &[f64] {
        &self.chi_m
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn inv_rho(&self) -> &[f64] {
        &self.inv_rho
    }

    #[inline]
    pub fn alpha(&self, j: usize, k: usize) -> f64 {
        let p = &self.params;
        let (fj, mj, fk, mk) = (self.chi_f[j], self.chi_m[j], self.chi_f[k], self.chi_m[k]);
        p.c_f * fj * fk + p.c_m * mj * mk + p.c_i * (fj * mk + mj * fk)
    }

    pub fn theta_f(&self) -> f64 {
        self.chi_f.iter().sum::<f64>() * self.cell.weight()
    }

    /// `⟨ρ^{-1}⟩`.
    pub fn mean_inv_rho(&self) -> f64 {
        self.inv_rho.iter().sum::<f64>() / self.inv_rho.len() as f64
    }

    /// `ᾱ = max_{y,y'} ρ^{-1}(y) α(y, y')` over lattice nodes. `α(j, ·)` is
    /// affine in `χ_f(k)`, so the extreme fractions suffice for `k`.
    pub fn alpha_bar(&self) -> f64 {
        let (kmin, kmax) = self.extreme_nodes();
        (0..self.chi_f.len())
            .map(|j| self.inv_rho[j] * self.alpha(j, kmin).max(self.alpha(j, kmax)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_inv_rho(&self) -> f64 {
        self.inv_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn extreme_nodes(&self) -> (usize, usize) {
        let by = |a: &(usize, &f64), b: &(usize, &f64)| a.1.total_cmp(b.1);
        let kmin = self.chi_f.iter().enumerate().min_by(by).map_or(0, |p| p.0);
        let kmax = self.chi_f.iter().enumerate().max_by(by).map_or(0, |p| p.0);
        (kmin, kmax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PhaseParams {
        PhaseParams {
            c_f: 10.0,
            c_m: 1.0,
            c_i: 3.0,
            rho_f: 2.0,
            rho_m: 1.0,
            delta: 0.1,
            lambda: 1.0,
            gamma: 0.25,
            beta: None,
        }
    }

    fn ball(dim: usize, r: f64) -> Microstructure {
        Microstructure::new(CellGeometry::new(dim, Shape::Ball { radius: r }).unwrap(), params()).unwrap()
    }

    #[test]
    fn indicator_examples() {
        let m = ball(3, 0.25);
        assert_eq!(m.indicator(&[0.0, 0.0, 0.0]), Phase::Inclusion);
        assert_eq!(m.indicator(&[0.49, 0.0, 0.0]), Phase::Matrix);
        assert_eq!(m.indicator(&[1.0, 0.0, 0.0]), Phase::Inclusion);
    }

    #[test]
    fn density_and_bonds() {
        let m = ball(1, 0.25);
        assert_eq!(m.density(&[0.0]), 2.0);
        assert_eq!(m.density(&[0.4]), 1.0);
        assert_eq!(m.bond_strength(&[0.0], &[0.1]), 10.0);
        assert_eq!(m.bond_strength(&[0.0], &[0.4]), 3.0);
        assert_eq!(m.bond_strength(&[0.4], &[-0.4]), 1.0);
        assert_eq!(m.bond_strength_cutoff(&[0.4], &[0.4 + 0.15], 0.1).unwrap(), 0.0);
        assert_eq!(m.bond_strength_cutoff(&[0.4], &[0.45], 0.1).unwrap(), 1.0);
        assert_eq!(m.bond_strength_cutoff(&[0.0], &[0.0], 0.1).unwrap(), 10.0);
        assert!(m.bond_strength_cutoff(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn validate_examples() {
        let mut m = ball(3, 0.25);
        m.params.delta = 0.05;
        assert!(m.validate().is_empty());
        let mut m = ball(3, 0.45);
        m.params.delta = 0.2;
        assert!(m.validate().iter().any(|v| v.severity == Severity::Error));
        let mut m = ball(3, 0.25);
        m.params.c_f = 1.0;
        m.params.c_m = 5.0;
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].severity, Severity::Warning);
    }

    #[test]
    fn fiber_needs_two_dimensions() {
        assert!(CellGeometry::new(1, Shape::Fiber { radius: 0.2 }).is_err());
        assert!(CellGeometry::new(3, Shape::Ball { radius: 0.5 }).is_err());
    }

    #[test]
    fn mollified_fractions_sum_to_one_and_match_far_from_interface() {
        let m = ball(1, 0.25);
        let cell = CellGrid::new(1, 64).unwrap();
        let c = m.mollify(0.05, &cell).unwrap();
        let raw = m.coefficients(&cell).unwrap();
        for j in 0..cell.len() {
            assert!((c.chi_f()[j] + c.chi_m()[j] - 1.0).abs() <= 1e-15);
            let y = cell.coord(j)[0];
            if (y.abs() - 0.25).abs() > 0.05 + 1e-12 {
                assert_eq!(c.chi_f()[j], raw.chi_f()[j]);
            }
        }
        assert!(m.mollify(0.1, &cell).is_err());
        assert!(m.mollify(0.0, &cell).is_err());
    }

    #[test]
    fn alpha_bar_matches_brute_force() {
        let m = ball(1, 0.25);
        let cell = CellGrid::new(1, 32).unwrap();
        for c in [m.coefficients(&cell).unwrap(), m.mollify(0.08, &cell).unwrap()] {
            let mut brute = f64::NEG_INFINITY;
            for j in 0..cell.len() {
                for k in 0..cell.len() {
                    brute = brute.max(c.inv_rho()[j] * c.alpha(j, k));
                }
            }
            assert!((c.alpha_bar() - brute).abs() <= 1e-14 * brute);
        }
    }
}
