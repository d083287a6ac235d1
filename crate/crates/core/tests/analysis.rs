use peridyn_core::analysis::*;
use peridyn_core::expr::VectorExpr;
use peridyn_core::field::{ProductField, VectorField};
use peridyn_core::grid::{matched_macro_grid, CellGrid, CellMap, MacroGrid, Scale};
use peridyn_core::microstructure::{CellGeometry, Microstructure, PhaseParams, Shape};
use peridyn_core::nonlocal_ops::{op_norm_estimate, assemble, Bounds, FineOperator, LongRange, NormKind, ShortRange};
use peridyn_core::propagators::Integrator;
use peridyn_core::solvers::{sample_product, solve_fine, solve_twoscale, Problem};

fn params(delta: f64) -> PhaseParams {
    PhaseParams {
        c_f: 10.0,
        c_m: 1.0,
        c_i: 3.0,
        rho_f: 2.0,
        rho_m: 1.0,
        delta,
        lambda: 1.0,
        gamma: 0.25,
        beta: None,
    }
}

fn problem(cell: usize, delta: f64, t: f64, dt: f64) -> Problem {
    let micro = Microstructure::new(CellGeometry::new(1, Shape::Ball { radius: 0.25 }).unwrap(), params(delta)).unwrap();
    Problem::new(
        micro,
        cell,
        &[0.0],
        &[1.0],
        None,
        VectorExpr::parse(&["sin(pi*x1)*(1 + 0.5*cos(2*pi*y1))"]).unwrap(),
        VectorExpr::zero(1),
        VectorExpr::zero(1),
        t,
        dt,
    )
    .unwrap()
}

#[test]
fn constant_norm_and_linear_oracle() {
    let g = MacroGrid::with_nodes(&[0.0], &[2.0], 40).unwrap();
    let c = VectorField::constant(g.len(), &[-3.0]);
    for p in [1.0, 2.0, 3.5] {
        let n = lp_norm(&c, &g, p).unwrap();
        assert!((n - 3.0 * 2f64.powf(1.0 / p)).abs() < 1e-12);
    }
    assert_eq!(lp_norm(&c, &g, f64::INFINITY).unwrap(), 3.0);
    assert!(lp_norm(&c, &g, 0.5).is_err());
    let g = MacroGrid::with_nodes(&[0.0], &[1.0], 400).unwrap();
    let x = VectorField::from_fn(g.len(), 1, |n, _| g.coord(n)[0]);
    assert!((lp_norm(&x, &g, 2.0).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-5);
    assert_eq!(lp_norm(&VectorField::zeros(g.len(), 1), &g, 2.0).unwrap(), 0.0);
}

#[test]
fn forcing_vanishes_for_constant_field_and_in_the_interior() {
    let p = problem(16, 0.2, 0.1, 0.01);
    let s = Scale::new(2).unwrap();
    let g = p.macro_grid(Some(s)).unwrap();
    let long = LongRange::new(&g, 1.0, 0.25).unwrap();
    let short = ShortRange::new(&g, &p.coeffs, s).unwrap();
    let c = ProductField::from_fn(g.len(), 16, 1, |_, _, _| 2.5);
    let f = forcing_terms(&c, &long, &short).unwrap();
    assert!(f.d_s1.as_slice().iter().all(|v| *v == 0.0));
    assert!(f.d_l.as_slice().iter().all(|v| *v == 0.0));
    let u = sample_product(&p.u0, &g, &p.cell, 0.0).unwrap();
    let f = forcing_terms(&u, &long, &short).unwrap();
    let reach = s.epsilon() * 0.2;
    for n in 0..g.len() {
        let x = g.coord(n)[0];
        if x > reach + g.spacing() && x < 1.0 - reach - g.spacing() {
            assert_eq!(f.d_s2.node(n)[0], 0.0, "node {n}");
        }
    }
}

#[test]
fn error_identity_and_bound_on_matched_grid() {
    let mut p = problem(16, 0.2, 0.5, 2e-3);
    p.integrator = Integrator::Series;
    let s = Scale::new(2).unwrap();
    let g = p.macro_grid(Some(s)).unwrap();
    let fine = solve_fine(&p, &g, s).unwrap();
    let two = solve_twoscale(&p, &g).unwrap();
    let op = FineOperator::new(&g, &p.coeffs, s).unwrap();
    let long = LongRange::new(&g, 1.0, 0.25).unwrap();
    let short = ShortRange::new(&g, &p.coeffs, s).unwrap();
    let e = error_field(&fine.displacement, &two.displacement, short.map()).unwrap();
    assert!(e.frames[0].as_slice().iter().all(|v| *v == 0.0));
    let d = forcing_trajectory(&two.displacement, &long, &short).unwrap();
    let rec = error_from_forcing(&d, &op, 10_000).unwrap();
    let gap = e.frames.iter().zip(&rec.frames).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
    assert!(gap < 1e-6, "{gap}");
    let norms: Vec<f64> = d.frames.iter().map(|f| lp_norm(f, &g, 2.0).unwrap()).collect();
    let m = Bounds::new(&p.coeffs).combined();
    let a2 = op_norm_estimate(&assemble(&op, 10_000).unwrap(), NormKind::Two);
    assert!(a2 <= m);
    let bound = error_bound(&d.times, &norms, m).unwrap();
    for (f, b) in e.frames.iter().zip(&bound) {
        assert!(lp_norm(f, &g, 2.0).unwrap() <= 1.05 * b + 1e-15);
    }
}

#[test]
fn zero_forcing_reconstructs_zero() {
    let p = problem(16, 0.2, 0.1, 0.01);
    let s = Scale::new(2).unwrap();
    let g = p.macro_grid(Some(s)).unwrap();
    let op = FineOperator::new(&g, &p.coeffs, s).unwrap();
    let mut d = peridyn_core::field::Trajectory::new();
    for k in 0..5 {
        d.push(k as f64 * 0.01, VectorField::zeros(g.len(), 1));
    }
    let e = error_from_forcing(&d, &op, 10_000).unwrap();
    assert!(e.frames.iter().all(|f| f.as_slice().iter().all(|v| *v == 0.0)));
    assert_eq!(error_bound(&d.times, &[0.0; 5], 3.0).unwrap(), vec![0.0; 5]);
}

#[test]
fn pairing_orthogonality_and_y_free_case() {
    let cell = CellGrid::new(1, 8).unwrap();
    for n in [2, 4, 8] {
        let s = Scale::new(n).unwrap();
        let g = matched_macro_grid(&[0.0], &[1.0], &cell, s).unwrap();
        let map = CellMap::new(&g, &cell, s).unwrap();
        let one = VectorField::constant(g.len(), &[1.0]);
        let psi = VectorExpr::parse(&["cos(2*pi*y1)"]).unwrap();
        assert!(twoscale_pairing(&one, &psi, &g, &cell, &map).unwrap().abs() < 1e-14);
        let v = VectorField::from_fn(g.len(), 1, |k, _| g.coord(k)[0]);
        let psi = VectorExpr::parse(&["x1"]).unwrap();
        let plain: f64 = (0..g.len()).map(|k| g.coord(k)[0].powi(2)).sum::<f64>() * g.weight();
        assert!((twoscale_pairing(&v, &psi, &g, &cell, &map).unwrap() - plain).abs() < 1e-14);
    }
}

#[test]
fn window_average_of_constant() {
    let g = MacroGrid::with_nodes(&[0.0], &[1.0], 20).unwrap();
    let c = VectorField::constant(g.len(), &[4.0]);
    assert_eq!(window_average(&c, &g, &[0.25], &[0.75]).unwrap(), vec![4.0]);
    assert!(window_average(&c, &g, &[0.51], &[0.52]).is_err());
}
