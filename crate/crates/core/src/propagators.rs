//! Time integration of `ü = L u + g(t)`.
//!
//! [`SeriesPropagator`] advances by a fixed step `h` with the truncated
//! operator series
//!
//! `C(h) = Σ h^{2n}/(2n)! Lⁿ`, `S(h) = Σ h^{2n+1}/(2n+1)! Lⁿ`,
//!
//! and integrates the forcing exactly when it is linear over the step
//! (product integration). [`propagate_verlet`] is kick-drift-kick velocity
//! Verlet.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Trajectory;
use crate::nonlocal_ops::{assemble, LinearOperator};

/// Target for the truncation tail `(‖L‖h²)^{N+1}/(N+1)!`.
pub const SERIES_TOL: f64 = 1e-12;
pub const MAX_SERIES_ORDER: usize = 200;
/// Systems up to this size keep dense step matrices; larger ones use Horner
/// evaluation with operator products.
pub const DENSE_LIMIT: usize = 512;

/// Forcing callback: writes `g(t)` into the slice.
pub type Forcing<'a> = &'a (dyn Fn(f64, &mut [f64]) + Sync);

/// Position and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Verlet,
    Series,
}

/// Smallest `N` with `(norm·h²)^{N+1}/(N+1)! <= SERIES_TOL`.
pub fn truncation_order(norm: f64, h: f64) -> Result<usize> {
    let x = norm * h * h;
    let mut term = x;
    for n in 0..=MAX_SERIES_ORDER {
        // term = x^{n+1}/(n+1)!
        if term <= SERIES_TOL {
            return Ok(n);
        }
        term *= x / (n + 2) as f64;
    }
    Err(Error::StepTooLarge(format!(
        "‖L‖h² = {x:.3e} needs more than {MAX_SERIES_ORDER} series terms"
    )))
}

/// Per-power coefficients of the seven step series.
#[derive(Debug, Clone)]
struct Coefficients {
    /// `h^{2n}/(2n)!`
    c: Vec<f64>,
    /// `h^{2n+1}/(2n+1)!`
    s: Vec<f64>,
    /// forcing weights, displacement part: start and end node
    u0: Vec<f64>,
    u1: Vec<f64>,
    /// forcing weights, velocity part
    v0: Vec<f64>,
    v1: Vec<f64>,
}

/// `h^k/k!` for `k = 0..=kmax`.
fn scaled_factorials(h: f64, kmax: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(kmax + 1);
    let mut t = 1.0;
    out.push(t);
    for k in 1..=kmax {
        t *= h / k as f64;
        out.push(t);
    }
    out
}

impl Coefficients {
    fn new(h: f64, order: usize) -> Self {
        let f = scaled_factorials(h, 2 * order + 4);
        // ∫_0^h s^m/m! (s/h) ds = (m+1) h^{m+1}/(m+2)!  (weight of g at the step start)
        // ∫_0^h s^m/m! (1 - s/h) ds = h^{m+1}/(m+2)!    (weight of g at the step end)
        let start = |m: usize| (m + 1) as f64 * f[m + 2] / h;
        let end = |m: usize| f[m + 2] / h;
        let range = 0..=order;
        Self {
            c: range.clone().map(|n| f[2 * n]).collect(),
            s: range.clone().map(|n| f[2 * n + 1]).collect(),
            u0: range.clone().map(|n| start(2 * n + 1)).collect(),
            u1: range.clone().map(|n| end(2 * n + 1)).collect(),
            v0: range.clone().map(|n| start(2 * n)).collect(),
            v1: range.map(|n| end(2 * n)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct DenseSteps {
    c: DMatrix<f64>,
    s: DMatrix<f64>,
    ls: DMatrix<f64>,
    u0: DMatrix<f64>,
    u1: DMatrix<f64>,
    v0: DMatrix<f64>,
    v1: DMatrix<f64>,
}

#[derive(Clone)]
enum Repr<'a> {
    Dense(Box<DenseSteps>),
    Sparse(CsrMatrix<f64>),
    Operator(&'a dyn LinearOperator),
}

impl std::fmt::Debug for Repr<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Repr::Dense(_) => f.write_str("Dense"),
            Repr::Sparse(l) => write!(f, "Sparse({} nonzeros)", l.nnz()),
            Repr::Operator(op) => write!(f, "Operator({})", op.info().name),
        }
    }
}

/// Fixed-step propagator from the truncated cosh/sinh series of `L`.
#[derive(Debug, Clone)]
pub struct SeriesPropagator<'a> {
    n: usize,
    step: f64,
    order: usize,
    coeffs: Coefficients,
    repr: Repr<'a>,
}

fn inf_norm_dense(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn inf_norm_csr(m: &CsrMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl<'a> SeriesPropagator<'a> {
    /// Precomputes the step matrices of a dense `L`.
    pub fn from_dense(l: &DMatrix<f64>, step: f64) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::invalid("series propagator needs a square matrix"));
        }
        let n = l.nrows();
        let order = truncation_order(inf_norm_dense(l), step)?;
        let k = Coefficients::new(step, order);
        let mut steps = DenseSteps {
            c: DMatrix::zeros(n, n),
            s: DMatrix::zeros(n, n),
            ls: DMatrix::zeros(n, n),
            u0: DMatrix::zeros(n, n),
            u1: DMatrix::zeros(n, n),
            v0: DMatrix::zeros(n, n),
            v1: DMatrix::zeros(n, n),
        };
        let mut p = DMatrix::identity(n, n);
        for i in 0..=order {
            steps.c += &p * k.c[i];
            steps.s += &p * k.s[i];
            steps.u0 += &p * k.u0[i];
            steps.u1 += &p * k.u1[i];
            steps.v0 += &p * k.v0[i];
            steps.v1 += &p * k.v1[i];
            p = l * &p;
            steps.ls += &p * k.s[i];
        }
        Ok(Self {
            n,
            step,
            order,
            coeffs: k,
            repr: Repr::Dense(Box::new(steps)),
        })
    }

    /// Horner evaluation against a sparse `L` at every step.
    pub fn from_sparse(l: CsrMatrix<f64>, step: f64) -> Result<Self> {
        if l.nrows() != l.ncols() {
            return Err(Error::invalid("series propagator needs a square matrix"));
        }
        let order = truncation_order(inf_norm_csr(&l), step)?;
        Ok(Self {
            n: l.nrows(),
            step,
            order,
            coeffs: Coefficients::new(step, order),
            repr: Repr::Sparse(l),
        })
    }

    /// Horner evaluation calling the operator directly, with no assembly.
    pub fn from_operator(op: &'a dyn LinearOperator, step: f64) -> Result<Self> {
        let order = truncation_order(op.row_abs_sum_bound(), step)?;
        Ok(Self {
            n: op.len(),
            step,
            order,
            coeffs: Coefficients::new(step, order),
            repr: Repr::Operator(op),
        })
    }

    /// Dense step matrices for small systems, Horner otherwise.
    pub fn from_csr(l: CsrMatrix<f64>, step: f64) -> Result<Self> {
        if l.nrows() <= DENSE_LIMIT {
            Self::from_dense(&crate::nonlocal_ops::csr_dense(&l), step)
        } else {
            Self::from_sparse(l, step)
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// One step. `g0`, `g1` are the forcing at the start and end of the step;
    /// the Duhamel integral is exact for forcing linear in between.
    pub fn advance(&self, u: &[f64], v: &[f64], g: Option<(&[f64], &[f64])>) -> (Vec<f64>, Vec<f64>) {
        let u = DVector::from_column_slice(u);
        let v = DVector::from_column_slice(v);
        let g = g.map(|(a, b)| (DVector::from_column_slice(a), DVector::from_column_slice(b)));
        match &self.repr {
            Repr::Dense(m) => {
                let mut un = &m.c * &u + &m.s * &v;
                let mut vn = &m.ls * &u + &m.c * &v;
                if let Some((g0, g1)) = &g {
                    un += &m.u0 * g0 + &m.u1 * g1;
                    vn += &m.v0 * g0 + &m.v1 * g1;
                }
                (un.data.into(), vn.data.into())
            }
            Repr::Sparse(l) => self.horner(|x| l * x, &u, &v, g.as_ref()),
            Repr::Operator(op) => self.horner(
                |x| DVector::from_vec(op.apply(x.as_slice())),
                &u,
                &v,
                g.as_ref(),
            ),
        }
    }

    fn horner(
        &self,
        l: impl Fn(&DVector<f64>) -> DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        g: Option<&(DVector<f64>, DVector<f64>)>,
    ) -> (Vec<f64>, Vec<f64>) {
        let k = &self.coeffs;
        let term_u = |i: usize| {
            let mut t = u * k.c[i] + v * k.s[i];
            if let Some((g0, g1)) = g {
                t += g0 * k.u0[i] + g1 * k.u1[i];
            }
            t
        };
        // Σ Lⁿ (s_{n-1} u + c_n v + ...), with s_{-1} = 0
        let term_v = |i: usize| {
            let mut t = v * k.c[i];
            if i > 0 {
                t += u * k.s[i - 1];
            }
            if let Some((g0, g1)) = g {
                t += g0 * k.v0[i] + g1 * k.v1[i];
            }
            t
        };
        let n = self.order;
        let mut ru = term_u(n);
        for i in (0..n).rev() {
            ru = l(&ru) + term_u(i);
        }
        // v' has one extra power: L^{N+1} s_N u
        let mut rv = u * k.s[n];
        for i in (0..=n).rev() {
            rv = l(&rv) + term_v(i);
        }
        (ru.data.into(), rv.data.into())
    }
}

/// `(u(t), v(t))` for `ü = L u + g`, with the Duhamel integral over
/// `quad_intervals` equal pieces on which `g` is taken linear.
pub fn propagate_series(
    l: &DMatrix<f64>,
    u0: &[f64],
    v0: &[f64],
    g: Option<Forcing>,
    t: f64,
    quad_intervals: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if quad_intervals == 0 {
        return Err(Error::invalid("Duhamel quadrature needs at least one interval"));
    }
    let n = l.nrows();
    if u0.len() != n || v0.len() != n {
        return Err(Error::mismatch("initial data length differs from the operator size"));
    }
    if t == 0.0 {
        return Ok((u0.to_vec(), v0.to_vec()));
    }
    let h = t / quad_intervals as f64;
    let prop = SeriesPropagator::from_dense(l, h)?;
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    if let Some(g) = g {
        g(0.0, &mut g0);
    }
    for k in 0..quad_intervals {
        let step = match g {
            Some(g) => {
                g((k + 1) as f64 * h, &mut g1);
                let r = prop.advance(&u, &v, Some((&g0, &g1)));
                std::mem::swap(&mut g0, &mut g1);
                r
            }
            None => prop.advance(&u, &v, None),
        };
        (u, v) = step;
    }
    Ok((u, v))
}

/// Number of steps of size `dt` covering `[0, t_final]`.
pub fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::invalid(format!("need dt > 0 and t_final >= 0, got {dt}, {t_final}")));
    }
    let k = (t_final / dt).round();
    if (k * dt - t_final).abs() > 1e-9 * t_final.max(dt) {
        return Err(Error::invalid(format!("t_final = {t_final} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

/// Verlet stability budget `0.5 · 2/√ρ(L)`, with the spectral radius bounded
/// by the row sums of `L`.
pub fn verlet_budget(op: &dyn LinearOperator) -> f64 {
    let b = op.row_abs_sum_bound();
    if b > 0.0 {
        1.0 / b.sqrt()
    } else {
        f64::INFINITY
    }
}

/// Kick-drift-kick Verlet. Stores step 0, every `stride`-th step and the last.
pub fn propagate_verlet(
    op: &dyn LinearOperator,
    u0: &[f64],
    v0: &[f64],
    g: Option<Forcing>,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<Trajectory<PhaseState>> {
    let budget = verlet_budget(op);
    if dt > budget {
        return Err(Error::invalid(format!(
            "dt = {dt} exceeds the Verlet stability budget {budget:.4e}"
        )));
    }
    let steps = step_count(dt, t_final)?;
    let n = op.len();
    if u0.len() != n || v0.len() != n {
        return Err(Error::mismatch("initial data length differs from the operator size"));
    }
    let stride = stride.max(1);
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    let mut acc = vec![0.0; n];
    let mut gbuf = vec![0.0; n];
    let accel = |t: f64, u: &[f64], acc: &mut [f64], gbuf: &mut [f64]| {
        op.apply_into(u, acc);
        if let Some(g) = g {
            g(t, gbuf);
            acc.iter_mut().zip(gbuf.iter()).for_each(|(a, b)| *a += b);
        }
    };
    accel(0.0, &u, &mut acc, &mut gbuf);
    let mut traj = Trajectory::new();
    traj.push(0.0, PhaseState { u: u.clone(), v: v.clone() });
    let half = 0.5 * dt;
    for k in 1..=steps {
        for i in 0..n {
            v[i] += half * acc[i];
            u[i] += dt * v[i];
        }
        let t = k as f64 * dt;
        accel(t, &u, &mut acc, &mut gbuf);
        for i in 0..n {
            v[i] += half * acc[i];
        }
        if k % stride == 0 || k == steps {
            traj.push(t, PhaseState { u: u.clone(), v: v.clone() });
        }
    }
    Ok(traj)
}

/// Fixed-step series integration with forcing taken linear over each step.
pub fn propagate_series_steps(
    prop: &SeriesPropagator,
    u0: &[f64],
    v0: &[f64],
    g: Option<Forcing>,
    t_final: f64,
    stride: usize,
) -> Result<Trajectory<PhaseState>> {
    let dt = prop.step();
    let steps = step_count(dt, t_final)?;
    let n = prop.len();
    if u0.len() != n || v0.len() != n {
        return Err(Error::mismatch("initial data length differs from the operator size"));
    }
    let stride = stride.max(1);
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    if let Some(g) = g {
        g(0.0, &mut g0);
    }
    let mut traj = Trajectory::new();
    traj.push(0.0, PhaseState { u: u.clone(), v: v.clone() });
    for k in 1..=steps {
        let t = k as f64 * dt;
        (u, v) = match g {
            Some(g) => {
                g(t, &mut g1);
                let r = prop.advance(&u, &v, Some((&g0, &g1)));
                std::mem::swap(&mut g0, &mut g1);
                r
            }
            None => prop.advance(&u, &v, None),
        };
        if k % stride == 0 || k == steps {
            traj.push(t, PhaseState { u: u.clone(), v: v.clone() });
        }
    }
    Ok(traj)
}

/// Integrates `ü = L u + g` with the chosen method. Series integration
/// keeps dense step matrices up to [`DENSE_LIMIT`] unknowns (assembling `L`,
/// which fails with `Unsupported` above `cap`) and applies the operator
/// matrix-free beyond that.
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    op: &dyn LinearOperator,
    u0: &[f64],
    v0: &[f64],
    g: Option<Forcing>,
    dt: f64,
    t_final: f64,
    stride: usize,
    integrator: Integrator,
    cap: usize,
) -> Result<Trajectory<PhaseState>> {
    match integrator {
        Integrator::Verlet => propagate_verlet(op, u0, v0, g, dt, t_final, stride),
        Integrator::Series => {
            let prop = if op.len() <= DENSE_LIMIT {
                SeriesPropagator::from_csr(assemble(op, cap)?, dt)?
            } else {
                SeriesPropagator::from_operator(op, dt)?
            };
            propagate_series_steps(&prop, u0, v0, g, t_final, stride)
        }
    }
}
