//! Ergodic constants and effective boundary laws for fully nonlinear
//! elliptic equations with oblique boundary conditions.
//!
//! The library computes the unique constant `d` that makes the stationary
//! problem with boundary condition `d + <Du, gamma> = g` solvable, by
//! vanishing-discount, domain-truncation, and vanishing-viscosity schedules
//! on monotone finite-difference discretizations. On top of that sit the
//! boundary-cell problems whose constants assemble the effective law
//! `Lbar(x1, r, p1) = -d(x1, r, p1)` of an oscillating Neumann boundary.

pub mod cell;
pub mod ergodic;
pub mod error;
pub mod expr;
pub mod flatten;
pub mod grid;
pub mod homogenize;
pub mod linalg;
pub mod problem;
pub mod run;
pub mod solver;

pub use error::{Error, Result};
