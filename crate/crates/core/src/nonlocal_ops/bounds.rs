use std::f64::consts::PI;

use nalgebra_sparse::CsrMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::microstructure::CellCoefficients;

/// Surface measure of the unit sphere in `R^d`.
fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// `∫_{H_r(0)} |z|^{2-d} dz`, the integral of the kernel norm.
fn kernel_integral(dim: usize, r: f64) -> f64 {
    sphere_area(dim) * r * r / 2.0
}

/// Analytic operator-norm constants.
///
/// Two readings of the short-range constant exist: `ᾱ·2πδ²/3` (the
/// isotropic average of `z⊗z/|z|³`) and `ᾱ·∫_{H_δ}|z|^{-1} = ᾱ·2πδ²`. Both are
/// reported, together with the dimension-correct kernel integral and the
/// long-range analogues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub dim: usize,
    pub alpha_bar: f64,
    pub max_inv_rho: f64,
    pub m_s: f64,
    pub m_s_ball: f64,
    pub m_s_dim: f64,
    pub m_l: f64,
    pub m_l_ball: f64,
    pub m_l_dim: f64,
}

impl Bounds {
    pub fn new(coeffs: &CellCoefficients) -> Self {
        let p = coeffs.params();
        let dim = coeffs.cell().dim();
        let alpha_bar = coeffs.alpha_bar();
        let max_inv_rho = coeffs.max_inv_rho();
        let (d2, g2) = (p.delta * p.delta, p.gamma * p.gamma);
        Self {
            dim,
            alpha_bar,
            max_inv_rho,
            m_s: alpha_bar * 2.0 * PI * d2 / 3.0,
            m_s_ball: alpha_bar * 2.0 * PI * d2,
            m_s_dim: alpha_bar * kernel_integral(dim, p.delta),
            m_l: max_inv_rho * p.lambda * 2.0 * PI * g2 / 3.0,
            m_l_ball: max_inv_rho * p.lambda * 2.0 * PI * g2,
            m_l_dim: max_inv_rho * p.lambda * kernel_integral(dim, p.gamma),
        }
    }

    /// Largest short-range reading.
    pub fn m_s_max(&self) -> f64 {
        self.m_s.max(self.m_s_ball).max(self.m_s_dim)
    }

    pub fn m_l_max(&self) -> f64 {
        self.m_l.max(self.m_l_ball).max(self.m_l_dim)
    }

    /// The constant used for norm checks and the error bound: the sum of the
    /// largest readings.
    pub fn combined(&self) -> f64 {
        self.m_s_max() + self.m_l_max()
    }

    /// `2(ᾱ I_d(δ) + max ρ^{-1} λ I_d(γ))`, a bound on the `∞`- and
    /// `1`-norms of `A^ε` (each difference operator contributes twice its
    /// kernel integral).
    pub fn rigorous(&self) -> f64 {
        2.0 * (self.m_s_dim + self.m_l_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    One,
    Two,
    Inf,
    /// Riesz–Thorin upper estimate `‖A‖_1^{1/p} ‖A‖_∞^{1-1/p}`.
    P(f64),
}

impl NormKind {
    pub fn from_p(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(Self::One)
        } else if p == 2.0 {
            Ok(Self::Two)
        } else if p == f64::INFINITY {
            Ok(Self::Inf)
        } else if p > 1.0 {
            Ok(Self::P(p))
        } else {
            Err(Error::invalid(format!("norm exponent must be >= 1, got {p}")))
        }
    }
}

fn max_row_sum(m: &CsrMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Induced operator norm of an assembled matrix. The 2-norm comes from power
/// iteration on `AᵀA` and therefore approaches the true value from below.
pub fn op_norm_estimate(m: &CsrMatrix<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::Inf => max_row_sum(m),
        NormKind::One => max_row_sum(&m.transpose()),
        NormKind::P(p) => {
            let one = max_row_sum(&m.transpose());
            let inf = max_row_sum(m);
            one.powf(1.0 / p) * inf.powf(1.0 - 1.0 / p)
        }
        NormKind::Two => power_iteration(m, 20_000, 1e-13),
    }
}

fn power_iteration(m: &CsrMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let mt = m.transpose();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (1.3 * i as f64 + 0.7).sin()).collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut sigma2 = 0.0;
    for _ in 0..max_iter {
        let y = m * &nalgebra::DVector::from_column_slice(&x);
        let z = &mt * &y;
        let nz = z.norm();
        if nz == 0.0 {
            return 0.0;
        }
        let next = nz;
        x = z.iter().map(|v| v / nz).collect();
        if (next - sigma2).abs() <= tol * next {
            sigma2 = next;
            break;
        }
        sigma2 = next;
    }
    sigma2.sqrt()
}
