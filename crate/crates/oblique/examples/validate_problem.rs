//! Structural assumption checks on problem files, good and bad.
//!
//! The checker probes the same conditions the solvers rely on: positive
//! Robin weight, flat profile at lateral walls, periodic oscillation,
//! drift compatibility with the flattening, the shear discriminant, and
//! elliptic bounds. A batch `validate` run exits 1 when any check fails.

use oblique::flatten::validate_homogenization_assumptions;
use oblique::problem::load_problem;

fn report(path: &str) {
    let p = load_problem(path.as_ref()).expect("fixture parses");
    let report = validate_homogenization_assumptions(&p);
    println!("{path}:");
    for c in &report.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        println!("  [{mark}] {:<20} {} ({})", c.name, c.detail, c.worst_location);
    }
    println!();
}

fn main() {
    report(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../problems/homogenize_window.json"
    ));
    report(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../problems/bad_drift.json"
    ));

    let bad = load_problem(
        concat!(env!("CARGO_MANIFEST_DIR"), "/../../problems/bad_drift.json").as_ref(),
    )
    .expect("fixture parses");
    let r = validate_homogenization_assumptions(&bad);
    assert!(!r.all_passed());
    assert_eq!(r.failed_names(), vec!["drift_compatible"]);
}
