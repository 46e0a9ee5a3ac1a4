//! Banded LU and sparse-row kernels used by the policy iteration.
//!
//! Policy systems assembled by this crate are M-matrices (positive diagonal,
//! nonpositive off-diagonals, weakly diagonally dominant with at least one
//! strictly dominant row), so LU factorization without pivoting is stable
//! and keeps the band intact. Refinement against the exact sparse rows
//! recovers the accuracy lost to fill-in roundoff.

use crate::error::{Error, Result};

/// Compressed sparse rows, the assembly-side view of a policy system.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(rows: &[Vec<(usize, f64)>]) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for row in rows {
            for &(j, v) in row {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
    }

    /// `r = b - A x`, returning `max |r|`.
    pub fn residual(&self, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = b[i];
            for (c, v) in cols.iter().zip(vals) {
                acc -= v * x[*c];
            }
            r[i] = acc;
            worst = worst.max(acc.abs());
        }
        worst
    }

    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n {
            let (cols, _) = self.row(i);
            for &c in cols {
                bw = bw.max(i.abs_diff(c));
            }
        }
        bw
    }

    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Band storage: entry `(i, j)` with `|i - j| <= bw` lives at
/// `data[i * (2 bw + 1) + (j - i + bw)]`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    pub n: usize,
    pub bw: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedMatrix {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    pub fn from_csr(csr: &CsrMatrix, bw: usize) -> Self {
        let mut m = BandedMatrix::zeros(csr.n, bw);
        for i in 0..csr.n {
            let (cols, vals) = csr.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m.set(i, *c, *v);
            }
        }
        m
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw, "({i},{j}) outside band {}", self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// LU without pivoting, in place. Fill stays inside the band. Fails with
    /// the offending elimination step when a pivot collapses.
    pub fn factor(mut self) -> Result<BandedLu> {
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1.0);
        let tiny = 1e-14 * scale;
        for k in 0..self.n {
            let piv = self.data[self.slot(k, k)];
            if piv.abs() < tiny {
                return Err(Error::SingularPolicySystem { step: k, pivot: piv });
            }
            let hi = (k + self.bw).min(self.n - 1);
            for i in (k + 1)..=hi {
                let s_ik = self.slot(i, k);
                let m = self.data[s_ik] / piv;
                if m == 0.0 {
                    continue;
                }
                self.data[s_ik] = m;
                for j in (k + 1)..=hi {
                    let upd = m * self.data[self.slot(k, j)];
                    let s_ij = self.slot(i, j);
                    self.data[s_ij] -= upd;
                }
            }
        }
        Ok(BandedLu {
            n: self.n,
            bw: self.bw,
            data: self.data,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedLu {
    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        // Unit lower triangle.
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut acc = x[i];
            for j in lo..i {
                acc -= self.data[self.slot(i, j)] * x[j];
            }
            x[i] = acc;
        }
        // Upper triangle.
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut acc = x[i];
            for j in (i + 1)..=hi {
                acc -= self.data[self.slot(i, j)] * x[j];
            }
            x[i] = acc / self.data[self.slot(i, i)];
        }
    }
}

/// Factors the rows, solves, and polishes with iterative refinement until
/// the residual is below `tol` relative to the system's scale.
pub fn solve_refined(csr: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let bw = csr.bandwidth();
    let lu = BandedMatrix::from_csr(csr, bw).factor()?;
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x);

    let norm_a = csr.inf_norm().max(1.0);
    let norm_b = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut r = vec![0.0; csr.n];
    for _ in 0..4 {
        let x_norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = (norm_a * x_norm).max(norm_b).max(1.0);
        let worst = csr.residual(&x, b, &mut r);
        if worst <= tol * scale {
            break;
        }
        lu.solve_in_place(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Gaussian elimination with partial pivoting, the test oracle.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
        let mut x = b.to_vec();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, p);
            x.swap(k, p);
            for i in (k + 1)..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                x[i] -= m[i][j] * x[j];
            }
            x[i] /= m[i][i];
        }
        x
    }

    fn mmatrix_rows(n: usize, bw: usize) -> Vec<Vec<(usize, f64)>> {
        // Diagonally dominant banded rows with the policy-system sign
        // pattern, entries steered by a fixed recurrence so runs are
        // reproducible.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        (0..n)
            .map(|i| {
                let mut row = Vec::new();
                let mut off_sum = 0.0;
                for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                    if j != i {
                        let v = -next();
                        off_sum += v.abs();
                        row.push((j, v));
                    }
                }
                row.push((i, off_sum + 0.5 + next()));
                row.sort_by_key(|e| e.0);
                row
            })
            .collect()
    }

    #[test]
    fn banded_lu_matches_dense_elimination() {
        let (n, bw) = (40, 7);
        let rows = mmatrix_rows(n, bw);
        let csr = CsrMatrix::from_rows(&rows);
        assert_eq!(csr.bandwidth(), bw);

        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            let (cols, vals) = csr.row(i);
            for (c, v) in cols.iter().zip(vals) {
                dense[i][*c] = *v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let want = dense_solve(&dense, &b);
        let got = solve_refined(&csr, &b, 1e-12).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn refinement_drives_residual_to_scale() {
        let (n, bw) = (120, 5);
        let rows = mmatrix_rows(n, bw);
        let csr = CsrMatrix::from_rows(&rows);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() * 1e4).collect();
        let x = solve_refined(&csr, &b, 1e-12).unwrap();
        let mut r = vec![0.0; n];
        let worst = csr.residual(&x, &b, &mut r);
        let scale = csr.inf_norm() * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-11 * scale.max(1.0), "residual {worst}, scale {scale}");
    }

    #[test]
    fn zero_pivot_reports_elimination_step() {
        let rows = vec![
            vec![(0usize, 1.0), (1usize, 1.0)],
            vec![(0usize, 1.0), (1usize, 1.0)],
        ];
        let csr = CsrMatrix::from_rows(&rows);
        let err = BandedMatrix::from_csr(&csr, 1).factor().unwrap_err();
        match err {
            crate::error::Error::SingularPolicySystem { step, .. } => assert_eq!(step, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn manufactured_tridiagonal_solution_roundtrips() {
        let n = 64;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.5)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();
        let csr = CsrMatrix::from_rows(&rows);
        let xstar: Vec<f64> = (0..n).map(|i| (i as f64 / 9.0).cos()).collect();
        let mut b = vec![0.0; n];
        csr.mul_vec(&xstar, &mut b);
        let x = solve_refined(&csr, &b, 1e-13).unwrap();
        for (g, w) in x.iter().zip(&xstar) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
