use peridyn_core::expr::VectorExpr;
use peridyn_core::field::Trajectory;
use peridyn_core::homogenization::{solve_coupled, solve_memory};
use peridyn_core::microstructure::{CellGeometry, Microstructure, PhaseParams, Shape};
use peridyn_core::propagators::Integrator;
use peridyn_core::solvers::{solve_twoscale, Problem};

fn problem(u0: &str, b: &str, t: f64, dt: f64) -> Problem {
    let micro = Microstructure::new(
        CellGeometry::new(1, Shape::Ball { radius: 0.25 }).unwrap(),
        PhaseParams {
            c_f: 10.0,
            c_m: 1.0,
            c_i: 3.0,
            rho_f: 2.0,
            rho_m: 1.0,
            delta: 0.2,
            lambda: 1.0,
            gamma: 0.25,
            beta: None,
        },
    )
    .unwrap();
    Problem::new(
        micro,
        16,
        &[0.0],
        &[1.0],
        Some(16),
        VectorExpr::parse(&[u0]).unwrap(),
        VectorExpr::zero(1),
        VectorExpr::parse(&[b]).unwrap(),
        t,
        dt,
    )
    .unwrap()
}

fn max_diff(a: &Trajectory<peridyn_core::field::VectorField>, b: &Trajectory<peridyn_core::field::VectorField>) -> f64 {
    a.frames.iter().zip(&b.frames).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

#[test]
fn coupled_reconstructs_twoscale_solution() {
    let p = problem("sin(pi*x1)*(1 + 0.3*cos(2*pi*y1))", "cos(2*pi*y1)", 0.2, 1e-3);
    let g = p.macro_grid(None).unwrap();
    let two = solve_twoscale(&p, &g).unwrap();
    let coupled = solve_coupled(&p, &g).unwrap().reconstruct().unwrap();
    let diff = two
        .displacement
        .frames
        .iter()
        .zip(&coupled.frames)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "{diff}");
}

#[test]
fn memory_equation_tracks_coupled_macro_part() {
    let mut p = problem("sin(pi*x1)*(1 + 0.3*cos(2*pi*y1))", "0.5*cos(2*pi*y1) + x1", 0.5, 1e-3);
    p.integrator = Integrator::Series;
    let g = p.macro_grid(None).unwrap();
    let coupled = solve_coupled(&p, &g).unwrap();
    let memory = solve_memory(&p, &g).unwrap();
    let diff = max_diff(&coupled.u_h, &memory.u_h);
    eprintln!("memory vs coupled: {diff:e}");
    assert!(diff < 1e-8, "{diff}");
}

#[test]
fn memory_force_matches_discrete_acceleration() {
    // y-independent data and no forcing keep the fluctuation path at zero, so
    // the Verlet second difference is exactly ⟨ρ^{-1}⟩ f^H.
    let p = problem("sin(pi*x1)", "0", 0.05, 1e-3);
    let g = p.macro_grid(None).unwrap();
    let m = solve_memory(&p, &g).unwrap();
    let q = m.kernel.qbar();
    let (u, f, dt) = (&m.u_h.frames, &m.force.frames, p.dt);
    for k in 1..u.len() - 1 {
        for n in 0..g.len() {
            let acc = (u[k + 1].node(n)[0] - 2.0 * u[k].node(n)[0] + u[k - 1].node(n)[0]) / (dt * dt);
            assert!((acc - q * f[k].node(n)[0]).abs() < 1e-7, "k={k} n={n}");
        }
    }
}
