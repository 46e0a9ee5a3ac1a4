//! Resolved oscillating solves against the homogenized limit.
//!
//! For each epsilon the oscillating boundary is meshed directly and solved
//! with the true Robin data; the homogenized problem replaces the boundary
//! with the tabulated effective law. Sup distances above the oscillation
//! layer should shrink as epsilon does. This desk-scale sweep keeps two
//! epsilons so it finishes in seconds; the acceptance suite runs three.

use oblique::cell::CellOptions;
use oblique::flatten::shape_for;
use oblique::homogenize::{convergence_study_with, StudyOptions};
use oblique::problem::load_problem;

fn main() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../problems/homogenize_window.json"
    );
    let p = load_problem(path.as_ref()).expect("fixture parses");
    let shape = shape_for(&p.domain, 33, 17);
    let opts = StudyOptions {
        cell: CellOptions {
            nx1: 16,
            nx2: 33,
            ..CellOptions::new(1e-3)
        },
        knots: (3, 5, 3),
        cells_per_period: 8,
    };

    let report =
        convergence_study_with(&p, &[0.25, 0.125], shape, &opts).expect("study completes");
    println!("{}", report.csv());
    for note in &report.diagnostics {
        println!("note: {note}");
    }
    assert!(
        report.sup_errors[1] <= report.sup_errors[0],
        "halving epsilon must not grow the error"
    );
    println!(
        "errors {:.6e} -> {:.6e} as eps halves",
        report.sup_errors[0], report.sup_errors[1]
    );
}
