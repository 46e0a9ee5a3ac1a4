//! Cell problems at a frozen boundary point and the tabulated effective
//! boundary law.
//!
//! Freezing the macroscopic point turns the oscillating boundary condition
//! into a periodic strip problem with constant sheared coefficients; its
//! ergodic constant `d(x1, r, p1)` defines the effective law
//! `L(x1, r, p1) = -d(x1, r, p1)`. The table stores `L` on knot grids in
//! `(x1, r, p1)` and interpolates multilinearly between knots.

use rayon::prelude::*;

use crate::ergodic::{extract_d_halfspace_with, ErgodicEstimate, ErgodicOptions};
use crate::error::{Error, Result};
use crate::flatten::{cell_operator, shape_for, validate_homogenization_assumptions};
use crate::grid::GridField;
use crate::problem::Problem;

/// Discretization choices for one cell solve.
#[derive(Debug, Clone)]
pub struct CellOptions {
    pub tol_d: f64,
    /// Columns across the unit periodic cell.
    pub nx1: usize,
    /// Vertical nodes on the strip at the initial truncation height.
    pub nx2: usize,
    /// Initial truncation height of the cell strip, doubled until the
    /// constant stabilizes to `tol_d`. Must clear the oscillation amplitude.
    pub r0: f64,
}

impl CellOptions {
    pub fn new(tol_d: f64) -> Self {
        CellOptions {
            tol_d,
            nx1: 32,
            nx2: 65,
            r0: 4.0,
        }
    }
}

fn require_assumptions(p: &Problem) -> Result<()> {
    let report = validate_homogenization_assumptions(p);
    if let Some(check) = report.checks.iter().find(|c| !c.passed) {
        return Err(Error::AssumptionViolated {
            name: check.name.to_string(),
            location: check.worst_location.clone(),
            detail: check.detail.clone(),
        });
    }
    Ok(())
}

/// The workhorse: freezes the operator at `x1`, builds the `(r, p1)` strip,
/// and extracts its ergodic constant by truncation doubling.
fn cell_d(
    p: &Problem,
    x1: f64,
    r: f64,
    p1: f64,
    control: Option<usize>,
    opts: &CellOptions,
) -> Result<(f64, GridField)> {
    cell_estimate(p, x1, r, p1, control, opts).map(|est| (est.d, est.profile))
}

fn cell_estimate(
    p: &Problem,
    x1: f64,
    r: f64,
    p1: f64,
    control: Option<usize>,
    opts: &CellOptions,
) -> Result<ErgodicEstimate> {
    let cell = cell_operator(p, x1)?;
    if let Some(m) = control {
        if m >= cell.controls.len() {
            return Err(Error::Invalid(format!(
                "control index {m} out of range: the problem has {} controls",
                cell.controls.len()
            )));
        }
    }
    let strip = cell.strip_problem(r, p1, opts.r0, control);
    let shape = shape_for(&strip.domain, opts.nx1, opts.nx2);
    extract_d_halfspace_with(&strip, shape, &ErgodicOptions::new(opts.tol_d))
}

/// Solves the cell problem at the frozen data `(x1, r, p1)` and returns the
/// constant together with its bounded corrector profile.
pub fn solve_cell(p: &Problem, x1: f64, r: f64, p1: f64, tol_d: f64) -> Result<(f64, GridField)> {
    solve_cell_with(p, x1, r, p1, &CellOptions::new(tol_d))
}

pub fn solve_cell_with(
    p: &Problem,
    x1: f64,
    r: f64,
    p1: f64,
    opts: &CellOptions,
) -> Result<(f64, GridField)> {
    require_assumptions(p)?;
    cell_d(p, x1, r, p1, None, opts)
}

/// Like [`solve_cell_with`] but keeps the whole truncation schedule, so a
/// batch run can write an auditable ladder instead of a bare constant.
pub fn solve_cell_estimate(
    p: &Problem,
    x1: f64,
    r: f64,
    p1: f64,
    opts: &CellOptions,
) -> Result<ErgodicEstimate> {
    require_assumptions(p)?;
    cell_estimate(p, x1, r, p1, None, opts)
}

/// Cell constant of the single-control problem for control index `alpha`.
/// The full constant never exceeds any of these.
pub fn frozen_control_d(
    p: &Problem,
    x1: f64,
    r: f64,
    p1: f64,
    alpha: usize,
    tol_d: f64,
) -> Result<f64> {
    frozen_control_d_with(p, x1, r, p1, alpha, &CellOptions::new(tol_d))
}

pub fn frozen_control_d_with(
    p: &Problem,
    x1: f64,
    r: f64,
    p1: f64,
    alpha: usize,
    opts: &CellOptions,
) -> Result<f64> {
    require_assumptions(p)?;
    cell_d(p, x1, r, p1, Some(alpha), opts).map(|(d, _)| d)
}

/// Effective boundary law on knot grids, multilinear between knots.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EffectiveLawTable {
    pub x1_knots: Vec<f64>,
    pub r_knots: Vec<f64>,
    pub p1_knots: Vec<f64>,
    /// `L` values in row-major `(x1, r, p1)` order.
    pub values: Vec<f64>,
}

fn locate(
    knots: &[f64],
    x: f64,
    axis: &'static str,
    point: (f64, f64, f64),
) -> Result<(usize, f64)> {
    let lo = knots[0];
    let hi = *knots.last().expect("knot grids are nonempty");
    if !x.is_finite() || x < lo || x > hi {
        return Err(Error::TableRangeExceeded {
            x1: point.0,
            r: point.1,
            p1: point.2,
            axis,
            lo,
            hi,
        });
    }
    if x == hi {
        return Ok((knots.len() - 1, 0.0));
    }
    let i = knots.partition_point(|&k| k <= x) - 1;
    // An exact knot hit lands at weight exactly 0.0, which the lerp below
    // turns into a bit-exact copy of the stored value.
    Ok((i, (x - knots[i]) / (knots[i + 1] - knots[i])))
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

impl EffectiveLawTable {
    fn index(&self, ix: usize, ir: usize, ip: usize) -> usize {
        (ix * self.r_knots.len() + ir) * self.p1_knots.len() + ip
    }

    pub fn value_at(&self, ix: usize, ir: usize, ip: usize) -> f64 {
        self.values[self.index(ix, ir, ip)]
    }

    /// Multilinear interpolation; errors when the query leaves the knot box.
    pub fn eval(&self, x1: f64, r: f64, p1: f64) -> Result<f64> {
        let point = (x1, r, p1);
        let (ix, tx) = locate(&self.x1_knots, x1, "x1", point)?;
        let (ir, tr) = locate(&self.r_knots, r, "r", point)?;
        let (ip, tp) = locate(&self.p1_knots, p1, "p1", point)?;
        let jx = (ix + 1).min(self.x1_knots.len() - 1);
        let jr = (ir + 1).min(self.r_knots.len() - 1);
        let jp = (ip + 1).min(self.p1_knots.len() - 1);
        let face = |kx: usize| {
            let lo = lerp(self.value_at(kx, ir, ip), self.value_at(kx, ir, jp), tp);
            let hi = lerp(self.value_at(kx, jr, ip), self.value_at(kx, jr, jp), tp);
            lerp(lo, hi, tr)
        };
        Ok(lerp(face(ix), face(jx), tx))
    }

    /// Checks `L` is nondecreasing in `r` along every `(x1, p1)` fiber,
    /// within slack `tol`; reports the worst violating pair.
    pub fn verify_r_monotone(&self, tol: f64) -> Result<()> {
        let mut worst: Option<(f64, f64, f64, f64, f64)> = None;
        for (ix, &x1) in self.x1_knots.iter().enumerate() {
            for (ip, &p1) in self.p1_knots.iter().enumerate() {
                for ir in 1..self.r_knots.len() {
                    let step = self.value_at(ix, ir, ip) - self.value_at(ix, ir - 1, ip);
                    if step < -tol && worst.is_none_or(|w| step < w.0) {
                        worst = Some((step, x1, p1, self.r_knots[ir - 1], self.r_knots[ir]));
                    }
                }
            }
        }
        match worst {
            Some((drop, x1, p1, r_lo, r_hi)) => Err(Error::LawMonotonicityViolation {
                x1,
                p1,
                r_lo,
                r_hi,
                drop,
                tol,
            }),
            None => Ok(()),
        }
    }

    /// One row per knot tuple, 17 significant digits, so that `from_csv`
    /// reproduces every value bit for bit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,r,p1,L\n");
        for (ix, &x1) in self.x1_knots.iter().enumerate() {
            for (ir, &r) in self.r_knots.iter().enumerate() {
                for (ip, &p1) in self.p1_knots.iter().enumerate() {
                    out.push_str(&format!(
                        "{x1:.16e},{r:.16e},{p1:.16e},{:.16e}\n",
                        self.value_at(ix, ir, ip)
                    ));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "x1,r,p1,L" => {}
            other => {
                return Err(Error::TableFormat(format!(
                    "expected header 'x1,r,p1,L', found '{}'",
                    other.unwrap_or("")
                )))
            }
        }
        let mut rows: Vec<[f64; 4]> = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::TableFormat(format!(
                    "line {}: expected 4 fields, found {}",
                    k + 2,
                    fields.len()
                )));
            }
            let mut row = [0.0f64; 4];
            for (c, field) in fields.iter().enumerate() {
                row[c] = field.trim().parse::<f64>().map_err(|e| {
                    Error::TableFormat(format!("line {}: {e} in '{field}'", k + 2))
                })?;
                if !row[c].is_finite() {
                    return Err(Error::TableFormat(format!(
                        "line {}: non-finite value '{field}'",
                        k + 2
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::TableFormat("no data rows".into()));
        }

        let axis = |col: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite by the check above"));
            v.dedup();
            v
        };
        let x1_knots = axis(0);
        let r_knots = axis(1);
        let p1_knots = axis(2);
        let (nr, np) = (r_knots.len(), p1_knots.len());
        if rows.len() != x1_knots.len() * nr * np {
            return Err(Error::TableFormat(format!(
                "{} rows do not fill a {}x{}x{} knot grid",
                rows.len(),
                x1_knots.len(),
                nr,
                np
            )));
        }

        let pos = |knots: &[f64], x: f64| {
            knots
                .binary_search_by(|k| k.partial_cmp(&x).expect("finite"))
                .expect("knot value came from these rows")
        };
        let mut values = vec![f64::NAN; rows.len()];
        let mut seen = vec![false; rows.len()];
        for row in &rows {
            let k = (pos(&x1_knots, row[0]) * nr + pos(&r_knots, row[1])) * np
                + pos(&p1_knots, row[2]);
            if seen[k] {
                return Err(Error::TableFormat(format!(
                    "duplicate knot row at x1={}, r={}, p1={}",
                    row[0], row[1], row[2]
                )));
            }
            seen[k] = true;
            values[k] = row[3];
        }
        Ok(EffectiveLawTable {
            x1_knots,
            r_knots,
            p1_knots,
            values,
        })
    }
}

fn check_knots(name: &'static str, knots: &[f64]) -> Result<()> {
    if knots.is_empty() {
        return Err(Error::Invalid(format!("{name} knot grid is empty")));
    }
    if knots.iter().any(|k| !k.is_finite()) {
        return Err(Error::Invalid(format!("{name} knots must be finite")));
    }
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(format!(
            "{name} knots must be strictly increasing"
        )));
    }
    Ok(())
}

/// Batch-solves the cell problem at every knot tuple and stores `L = -d`.
/// Verifies that the law is nondecreasing in `r` within `10 * tol_d`.
pub fn build_law_table(
    p: &Problem,
    x1_knots: &[f64],
    r_knots: &[f64],
    p1_knots: &[f64],
    opts: &CellOptions,
) -> Result<EffectiveLawTable> {
    check_knots("x1", x1_knots)?;
    check_knots("r", r_knots)?;
    check_knots("p1", p1_knots)?;
    require_assumptions(p)?;

    let (nr, np) = (r_knots.len(), p1_knots.len());
    let total = x1_knots.len() * nr * np;
    // Knot solves are independent; each result lands at its own knot index,
    // never at a completion rank.
    let values = (0..total)
        .into_par_iter()
        .map(|k| {
            let (ix, ir, ip) = (k / (nr * np), (k / np) % nr, k % np);
            cell_d(p, x1_knots[ix], r_knots[ir], p1_knots[ip], None, opts).map(|(d, _)| -d)
        })
        .collect::<Result<Vec<f64>>>()?;

    let table = EffectiveLawTable {
        x1_knots: x1_knots.to_vec(),
        r_knots: r_knots.to_vec(),
        p1_knots: p1_knots.to_vec(),
        values,
    };
    table.verify_r_monotone(10.0 * opts.tol_d)?;
    Ok(table)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && hi > lo, "need n >= 2 and hi > lo");
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Default knot grids: 5 points across the domain in `x1`, 7 in `r` and 5 in
/// `p1` on `[-1, 1]`.
pub fn default_knots(p: &Problem) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (lo, hi) = p.domain.x1_range;
    (
        linspace(lo, hi, 5),
        linspace(-1.0, 1.0, 7),
        linspace(-1.0, 1.0, 5),
    )
}
