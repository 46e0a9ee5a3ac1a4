//! Vanishing-discount extraction on a flat periodic strip.
//!
//! With an isotropic Laplacian, normal reflection, and a homogeneous
//! Neumann lid, the ergodic constant is the boundary average of g. For
//! g = 2 + sin(2 pi x1) that average is exactly 2, which makes this the
//! cheapest end-to-end correctness check in the repository.

use oblique::ergodic::extract_d_discount;
use oblique::flatten::shape_for;
use oblique::problem::load_problem;

fn main() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../problems/strip_boundary_average.json"
    );
    let p = load_problem(path.as_ref()).expect("fixture parses");
    let shape = shape_for(&p.domain, 64, 33);

    let est = extract_d_discount(&p, shape, 1e-6).expect("ladder converges");
    println!("discount ladder on a 64x33 flat strip:");
    println!("{}", est.schedule_csv());
    println!("d = {:.12}  (boundary average of g is 2)", est.d);
    println!("|d - 2| = {:.3e}", (est.d - 2.0).abs());
    assert!((est.d - 2.0).abs() < 1e-5);
    assert!(est.converged);
}
