use nalgebra::DMatrix;
use peridyn_core::analysis::lp_norm;
use peridyn_core::field::{ProductField, VectorField};
use peridyn_core::grid::{CellGrid, MacroGrid};
use peridyn_core::homogenization::{reassemble, split};
use peridyn_core::microstructure::{CellGeometry, CellCoefficients, Microstructure, PhaseParams, Shape};
use peridyn_core::nonlocal_ops::{assemble, csr_dense, LinearOperator, TwoScaleKind, TwoScaleOperator};
use peridyn_core::propagators::{propagate_series_steps, SeriesPropagator};
use proptest::prelude::*;

fn coeffs(c_f: f64, c_m: f64, c_i: f64, radius: f64, cell_nodes: usize) -> CellCoefficients {
    let micro = Microstructure::new(
        CellGeometry::new(1, Shape::Ball { radius }).unwrap(),
        PhaseParams {
            c_f,
            c_m,
            c_i,
            rho_f: 2.0,
            rho_m: 1.0,
            delta: 0.25,
            lambda: 1.0,
            gamma: 0.25,
            beta: None,
        },
    )
    .unwrap();
    micro.coefficients(&CellGrid::new(1, cell_nodes).unwrap()).unwrap()
}

fn twoscale(kind: TwoScaleKind, c_f: f64, c_m: f64, c_i: f64, radius: f64) -> TwoScaleOperator {
    let grid = MacroGrid::with_nodes(&[0.0], &[1.0], 16).unwrap();
    TwoScaleOperator::new(&grid, &coeffs(c_f, c_m, c_i, radius, 8), kind).unwrap()
}

fn phases() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.5..20.0f64, 0.5..5.0f64, 0.5..10.0f64, 0.13..0.4f64)
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_is_symmetric_and_negative((c_f, c_m, c_i, r) in phases()) {
        let op = twoscale(TwoScaleKind::Stiffness, c_f, c_m, c_i, r);
        let k = csr_dense(&assemble(&op, 10_000).unwrap());
        let asym = (&k - k.transpose()).amax();
        prop_assert!(asym <= 1e-12 * k.amax(), "asymmetry {asym}");
        let top = k.symmetric_eigenvalues().max();
        prop_assert!(top <= 1e-10 * k.amax(), "top eigenvalue {top}");
    }

    #[test]
    fn constants_are_in_the_kernel((c_f, c_m, c_i, r) in phases(), c in -5.0..5.0f64) {
        let op = twoscale(TwoScaleKind::Acceleration, c_f, c_m, c_i, r);
        let y = LinearOperator::apply(&op, &vec![c; op.len()]);
        prop_assert!(y.iter().all(|v| v.abs() <= 1e-12 * (1.0 + c.abs())));
    }

    #[test]
    fn assembled_matches_matrix_free((c_f, c_m, c_i, r) in phases(), x in vector(128)) {
        let op = twoscale(TwoScaleKind::Acceleration, c_f, c_m, c_i, r);
        let a = assemble(&op, 10_000).unwrap();
        let dense = csr_dense(&a) * nalgebra::DVector::from_column_slice(&x);
        let free = LinearOperator::apply(&op, &x);
        let gap = dense.iter().zip(&free).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-12 * op.row_abs_sum_bound().max(1.0), "gap {gap}");
    }

    #[test]
    fn matrix_free_series_matches_dense_steps((c_f, c_m, c_i, r) in phases(), u in vector(128), v in vector(128)) {
        let op = twoscale(TwoScaleKind::Acceleration, c_f, c_m, c_i, r);
        let dense = SeriesPropagator::from_dense(&csr_dense(&assemble(&op, 10_000).unwrap()), 1e-2).unwrap();
        let free = SeriesPropagator::from_operator(&op, 1e-2).unwrap();
        let a = propagate_series_steps(&dense, &u, &v, None, 0.1, 10).unwrap();
        let b = propagate_series_steps(&free, &u, &v, None, 0.1, 10).unwrap();
        let (_, sa) = a.last().unwrap();
        let (_, sb) = b.last().unwrap();
        let gap = sa.u.iter().zip(&sb.u).chain(sa.v.iter().zip(&sb.v)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-12, "gap {gap}");
    }

    #[test]
    fn lp_norm_is_a_norm(a in vector(32), b in vector(32), s in -3.0..3.0f64, p in prop_oneof![Just(1.0), Just(2.0), Just(3.5), Just(f64::INFINITY)]) {
        let grid = MacroGrid::with_nodes(&[0.0], &[1.0], 32).unwrap();
        let fa = VectorField::from_vec(1, a.clone()).unwrap();
        let fb = VectorField::from_vec(1, b.clone()).unwrap();
        let scaled = VectorField::from_vec(1, a.iter().map(|x| s * x).collect()).unwrap();
        let sum = VectorField::from_vec(1, a.iter().zip(&b).map(|(x, y)| x + y).collect()).unwrap();
        let na = lp_norm(&fa, &grid, p).unwrap();
        let nb = lp_norm(&fb, &grid, p).unwrap();
        prop_assert!((lp_norm(&scaled, &grid, p).unwrap() - s.abs() * na).abs() <= 1e-12);
        prop_assert!(lp_norm(&sum, &grid, p).unwrap() <= na + nb + 1e-12);
    }

    #[test]
    fn split_has_zero_mean_corrector(data in vector(6 * 8)) {
        let u = ProductField::from_vec(6, 8, 1, data).unwrap();
        let (u_h, r) = split(&u);
        let mean = r.cell_average();
        prop_assert!(mean.as_slice().iter().all(|m| m.abs() <= 1e-14));
        prop_assert!(reassemble(&u_h, &r).unwrap().max_abs_diff(&u) <= 1e-14);
    }
}

#[test]
fn series_reproduces_harmonic_oscillator() {
    let w: f64 = 3.0;
    let l = DMatrix::from_element(1, 1, -w * w);
    let prop = SeriesPropagator::from_dense(&l, 0.05).unwrap();
    let traj = propagate_series_steps(&prop, &[1.0], &[0.0], None, 2.0, 1).unwrap();
    for (t, s) in traj.iter() {
        assert!((s.u[0] - (w * t).cos()).abs() < 1e-11, "t = {t}");
        assert!((s.v[0] + w * (w * t).sin()).abs() < 1e-10, "t = {t}");
    }
}
