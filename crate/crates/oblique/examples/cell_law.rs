//! One cell problem against its closed-form oracle.
//!
//! For an isotropic Laplacian with Robin data frozen at (r, p1), the cell
//! constant has the arclength form
//!
//!   d(r, p1) = (g - c r) * I - p1 * J,   I = avg sqrt(1 + f1'^2),
//!                                        J = avg f1' = 0 (periodicity),
//!
//! so with c = g = 1 the oracle is d = (1 - r) * I. The example solves the
//! cell strip at a few frozen points and compares against trapezoid
//! quadrature of I at 2^14 points.

use oblique::cell::solve_cell;
use oblique::problem::load_problem;

fn arclength_factor() -> f64 {
    let n = 1 << 14;
    let fp = |xi: f64| {
        // derivative of 0.1 (1 - cos 2 pi xi)
        0.1 * 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * xi).sin()
    };
    let mut sum = 0.0;
    for k in 0..n {
        let xi = (k as f64 + 0.5) / n as f64;
        sum += (1.0 + fp(xi).powi(2)).sqrt();
    }
    sum / n as f64
}

fn main() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../problems/cell_oscillating.json"
    );
    let p = load_problem(path.as_ref()).expect("fixture parses");
    let oracle_i = arclength_factor();
    println!("quadrature oracle: I = {oracle_i:.10}");

    for (r, p1) in [(0.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (1.0, -1.0)] {
        let (d, profile) = solve_cell(&p, 0.0, r, p1, 1e-5).expect("cell solve");
        let oracle = (1.0 - r) * oracle_i;
        let rel = (d - oracle).abs() / oracle.abs().max(1.0);
        println!(
            "d({r:+.1}, {p1:+.1}) = {d:+.8}  oracle {oracle:+.8}  rel err {rel:.3e}  \
             corrector sup {:.3e}",
            profile.max_abs()
        );
        assert!(rel < 0.01, "cell constant off the closed form");
    }
}
