//! Vanishing viscosity on a gradient-constraint fan, where the constant is
//! genuinely non-unique.
//!
//! Eight unit drifts make F(Du) = max_e <e, Du> a constraint on |Du|; every
//! constant solves F = 0, and the admissible ergodic constants form the ray
//! d <= min g. The viscosity ladder reports whatever its sequence does: a
//! point if it is Cauchy, otherwise an honest band of the late estimates.
//! Batch runs map that band to exit status 2.

use oblique::ergodic::extract_d_degenerate;
use oblique::flatten::shape_for;
use oblique::problem::load_problem;

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../problems/eikonal_fan.json");
    let p = load_problem(path.as_ref()).expect("fixture parses");
    let shape = shape_for(&p.domain, 24, 17);

    let est = extract_d_degenerate(&p, shape, 1e-5).expect("ladder runs");
    println!("viscosity ladder (eps halves each row):");
    println!("{}", est.schedule_csv());
    for note in &est.diagnostics {
        println!("note: {note}");
    }
    match est.band {
        Some((lo, hi)) => println!("band [{lo:.6}, {hi:.6}], width {:.3e}", hi - lo),
        None => println!("point value d = {:.12}", est.d),
    }
    // min g = 1 for g = 1 + 0.5 sin^2(2 pi x1); admissibility caps d there.
    println!("d = {:.12} vs min g = 1", est.d);
    assert!(est.d <= 1.0 + 1e-2);
}
