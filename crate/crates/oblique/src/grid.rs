//! Rectangular grids in flattened coordinates.
//!
//! The vertical coordinate `xi2` always spans `[0, 1]` after flattening; the
//! horizontal coordinate is the physical `x1`. Periodic domains store `nx1`
//! distinct columns with an implicit wrap, so the seam carries no duplicate
//! unknowns.

use serde::{Deserialize, Serialize};

/// Classification of a grid node, fixed by the domain geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeTag {
    Interior,
    /// Bottom row: carries the oblique (or Robin) boundary condition.
    ObliqueBoundary,
    /// Top row of a truncated strip: homogeneous Neumann.
    NeumannTop,
    /// Fixed-value node (top of a Dirichlet domain and lateral columns).
    Dirichlet,
    /// Interior node on the periodic identification column; discretized like
    /// `Interior`, tagged so diagnostics can point at the seam.
    PeriodicSeam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx1: usize,
    pub nx2: usize,
    pub x1_lo: f64,
    pub x1_hi: f64,
    pub periodic_x1: bool,
}

impl GridShape {
    pub fn new(nx1: usize, nx2: usize, x1_range: (f64, f64), periodic_x1: bool) -> Self {
        assert!(nx1 >= 4 && nx2 >= 4, "grid must be at least 4x4");
        GridShape {
            nx1,
            nx2,
            x1_lo: x1_range.0,
            x1_hi: x1_range.1,
            periodic_x1,
        }
    }

    pub fn n(&self) -> usize {
        self.nx1 * self.nx2
    }

    /// Horizontal spacing. Periodic grids place `nx1` columns on a half-open
    /// interval, non-periodic grids include both endpoints.
    pub fn h1(&self) -> f64 {
        let len = self.x1_hi - self.x1_lo;
        if self.periodic_x1 {
            len / self.nx1 as f64
        } else {
            len / (self.nx1 - 1) as f64
        }
    }

    pub fn h2(&self) -> f64 {
        1.0 / (self.nx2 - 1) as f64
    }

    pub fn x1(&self, i: usize) -> f64 {
        self.x1_lo + i as f64 * self.h1()
    }

    pub fn xi2(&self, j: usize) -> f64 {
        j as f64 * self.h2()
    }

    /// Neighbor column index with periodic wrap; `None` when it falls off a
    /// non-periodic edge.
    pub fn step_i(&self, i: usize, di: isize) -> Option<usize> {
        let raw = i as isize + di;
        if self.periodic_x1 {
            Some(raw.rem_euclid(self.nx1 as isize) as usize)
        } else if raw < 0 || raw >= self.nx1 as isize {
            None
        } else {
            Some(raw as usize)
        }
    }

    /// Node nearest the centroid of the flattened rectangle.
    pub fn centroid_node(&self) -> (usize, usize) {
        (self.nx1 / 2, self.nx2 / 2)
    }

    /// Column index and interpolation weight for a physical `x1`, honoring the
    /// periodic wrap. Returns `(i, t)` with the value between columns `i` and
    /// `i+1` at fraction `t`.
    pub fn column_of(&self, x1: f64) -> (usize, f64) {
        let h1 = self.h1();
        if self.periodic_x1 {
            let len = self.x1_hi - self.x1_lo;
            let s = (x1 - self.x1_lo).rem_euclid(len) / h1;
            let i = (s.floor() as usize).min(self.nx1 - 1);
            (i, s - i as f64)
        } else {
            let s = ((x1 - self.x1_lo) / h1).clamp(0.0, (self.nx1 - 1) as f64);
            let i = (s.floor() as usize).min(self.nx1 - 2);
            (i, s - i as f64)
        }
    }
}

/// Scalar field on a grid, together with the node tags it was solved with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridField {
    pub shape: GridShape,
    pub values: Vec<f64>,
    pub tags: Vec<NodeTag>,
}

impl GridField {
    pub fn constant(shape: GridShape, tags: Vec<NodeTag>, v: f64) -> Self {
        assert_eq!(tags.len(), shape.n());
        GridField {
            shape,
            values: vec![v; shape.n()],
            tags,
        }
    }

    /// Row-major layout: all columns of row `j`, then row `j+1`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.shape.nx1 + i
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.idx(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &GridField) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Bilinear interpolation in flattened coordinates `(x1, xi2)`.
    pub fn eval_flattened(&self, x1: f64, xi2: f64) -> f64 {
        let (i, t) = self.shape.column_of(x1);
        let s = (xi2 / self.shape.h2()).clamp(0.0, (self.shape.nx2 - 1) as f64);
        let j = (s.floor() as usize).min(self.shape.nx2 - 2);
        let u = s - j as f64;
        let ip = if self.shape.periodic_x1 {
            (i + 1) % self.shape.nx1
        } else {
            i + 1
        };
        let v00 = self.at(i, j);
        let v10 = self.at(ip, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(ip, j + 1);
        v00 * (1.0 - t) * (1.0 - u) + v10 * t * (1.0 - u) + v01 * (1.0 - t) * u + v11 * t * u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> GridShape {
        GridShape::new(8, 5, (0.0, 1.0), true)
    }

    #[test]
    fn periodic_spacing_excludes_duplicate_column() {
        let s = shape();
        assert!((s.h1() - 0.125).abs() < 1e-15);
        assert_eq!(s.step_i(0, -1), Some(7));
        assert_eq!(s.step_i(7, 1), Some(0));
    }

    #[test]
    fn nonperiodic_edges_fall_off() {
        let s = GridShape::new(8, 5, (-1.0, 1.0), false);
        assert!((s.h1() - 2.0 / 7.0).abs() < 1e-15);
        assert_eq!(s.step_i(0, -1), None);
        assert_eq!(s.step_i(7, 1), None);
    }

    #[test]
    fn bilinear_reproduces_linear_fields() {
        let s = GridShape::new(9, 9, (0.0, 1.0), false);
        let tags = vec![NodeTag::Interior; s.n()];
        let mut f = GridField::constant(s, tags, 0.0);
        for j in 0..9 {
            for i in 0..9 {
                let k = f.idx(i, j);
                f.values[k] = 2.0 * s.x1(i) - 3.0 * s.xi2(j) + 1.0;
            }
        }
        for &(x, y) in &[(0.33, 0.71), (0.0, 0.0), (1.0, 1.0), (0.5, 0.124)] {
            let want = 2.0 * x - 3.0 * y + 1.0;
            assert!((f.eval_flattened(x, y) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let s = shape();
        let tags = vec![NodeTag::Interior; s.n()];
        let mut f = GridField::constant(s, tags, 0.0);
        for j in 0..5 {
            for i in 0..8 {
                let k = f.idx(i, j);
                f.values[k] = (2.0 * std::f64::consts::PI * s.x1(i)).sin();
            }
        }
        // Halfway between the last column (x1 = 0.875) and the wrapped first
        // column (value 0).
        let v = f.eval_flattened(0.9375, 0.5);
        let a = (2.0 * std::f64::consts::PI * 0.875).sin();
        assert!((v - 0.5 * a).abs() < 1e-12);
    }
}
