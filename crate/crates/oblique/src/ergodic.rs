//! Extraction of the ergodic boundary constant `d` by three limit
//! procedures: vanishing discount on a fixed geometry, half-strip truncation
//! with doubling height, and vanishing viscosity for degenerate operators.
//!
//! Every schedule reports its raw estimates, extrapolated values, and
//! profile increments so a run can be audited from the CSV alone.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::flatten::{boundary_rows, flatten_bulk, shape_for};
use crate::grid::{GridField, GridShape};
use crate::problem::{
    check_degenerate_admissibility, BcMode, DegenerateClass, DomainKind, Problem, TopBoundary,
};
use crate::solver::{assemble, SolveStats};

/// Discount ladder: lambda_k = 2^{-k} for k in this range. The floor keeps
/// the boundary rows well conditioned; extrapolation carries the rest.
const DISCOUNT_K: std::ops::RangeInclusive<u32> = 3..=12;
/// Viscosity ladder: eps_k = 2^{-k}.
const VISCOSITY_K: std::ops::RangeInclusive<u32> = 3..=10;
/// Truncation heights double at most this many times.
const MAX_DOUBLINGS: u32 = 5;
/// Vertical node cap when the truncation height doubles.
const NX2_CAP: usize = 1025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    VanishingDiscount,
    Truncation,
    VanishingViscosity,
}

/// One row of a schedule: the driving parameter (lambda, R, or eps), the raw
/// estimate, its extrapolation, the sup-norm increment of the normalized
/// profile, and the Howard iterations spent.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScheduleStep {
    pub parameter: f64,
    pub d_estimate: f64,
    pub extrapolate: f64,
    pub profile_delta: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ErgodicEstimate {
    pub d: f64,
    /// Present when the viscosity sequence was not Cauchy: honest spread of
    /// the late estimates instead of a fabricated point value.
    pub band: Option<(f64, f64)>,
    /// Normalized solution `u - u(x0)` at the final schedule step.
    pub profile: GridField,
    pub schedule: Vec<ScheduleStep>,
    pub converged: bool,
    pub method: Method,
    pub diagnostics: Vec<String>,
    /// Grid node used as `x0`.
    pub anchor: (usize, usize),
}

impl ErgodicEstimate {
    pub fn band_width(&self) -> f64 {
        self.band.map(|(lo, hi)| hi - lo).unwrap_or(0.0)
    }

    /// Fixed-format CSV of the schedule, byte-stable across reruns.
    pub fn schedule_csv(&self) -> String {
        let mut out = String::from("parameter,d_estimate,extrapolate,profile_delta,iterations\n");
        for s in &self.schedule {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                s.parameter, s.d_estimate, s.extrapolate, s.profile_delta, s.iterations
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ErgodicOptions {
    pub tol_d: f64,
    /// Overrides the anchor node `x0` (defaults to the grid centroid).
    pub anchor: Option<(usize, usize)>,
    pub max_howard: usize,
    /// Bellman residual at which each inner solve is accepted.
    pub howard_tol: f64,
}

impl ErgodicOptions {
    pub fn new(tol_d: f64) -> Self {
        ErgodicOptions {
            tol_d,
            anchor: None,
            max_howard: 100,
            howard_tol: crate::solver::HOWARD_TOL,
        }
    }
}

struct LadderOutcome {
    d: f64,
    schedule: Vec<ScheduleStep>,
    profile: GridField,
    converged: bool,
    last_delta: f64,
    howard_total: usize,
    anchor: (usize, usize),
}

fn normalized(field: &GridField, anchor: (usize, usize)) -> Vec<f64> {
    let pin = field.at(anchor.0, anchor.1);
    field.values.iter().map(|v| v - pin).collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Runs the vanishing-discount ladder on one fixed flattened geometry.
/// Model: d_lambda = d + c*lambda, so `2 d_k - d_{k-1}` cancels the linear
/// term; the ladder stops when consecutive extrapolations agree to tol_d.
fn discount_ladder(p: &Problem, shape: GridShape, opts: &ErgodicOptions) -> Result<LadderOutcome> {
    let flat = flatten_bulk(&p.domain, &p.coeffs, shape)?;
    let bc = boundary_rows(p, &flat)?;
    let anchor = opts.anchor.unwrap_or_else(|| shape.centroid_node());
    assert!(anchor.0 < shape.nx1 && anchor.1 < shape.nx2, "anchor off grid");

    let mut schedule = Vec::new();
    let mut prev_field: Option<GridField> = None;
    let mut prev_profile: Option<Vec<f64>> = None;
    let mut prev_d = f64::NAN;
    let mut prev_ext = f64::NAN;
    let mut howard_total = 0usize;
    let mut last_delta = f64::INFINITY;

    for k in DISCOUNT_K {
        let lambda = 0.5f64.powi(k as i32);
        let sys = assemble(&flat, &bc.with_mode(BcMode::Discounted(lambda)))?;
        let (field, stats): (GridField, SolveStats) =
            sys.solve_howard_tol(prev_field.as_ref(), opts.max_howard, opts.howard_tol)?;
        howard_total += stats.iterations;

        let d_k = lambda * field.at(anchor.0, anchor.1);
        let profile = normalized(&field, anchor);
        let profile_delta = match &prev_profile {
            Some(w) => sup_diff(&profile, w),
            None => profile.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        };
        let ext = if prev_d.is_nan() { d_k } else { 2.0 * d_k - prev_d };
        schedule.push(ScheduleStep {
            parameter: lambda,
            d_estimate: d_k,
            extrapolate: ext,
            profile_delta,
            iterations: stats.iterations,
        });

        let have_two_exts = schedule.len() >= 3;
        if have_two_exts {
            last_delta = (ext - prev_ext).abs();
            if last_delta < opts.tol_d {
                let profile_field = GridField {
                    shape,
                    values: profile,
                    tags: field.tags.clone(),
                };
                return Ok(LadderOutcome {
                    d: ext,
                    schedule,
                    profile: profile_field,
                    converged: true,
                    last_delta,
                    howard_total,
                    anchor,
                });
            }
        }
        prev_ext = ext;
        prev_d = d_k;
        prev_profile = Some(profile);
        prev_field = Some(field);
    }

    let field = prev_field.expect("ladder ran at least one step");
    let profile_field = GridField {
        shape,
        values: prev_profile.expect("profile recorded"),
        tags: field.tags,
    };
    Ok(LadderOutcome {
        d: prev_ext,
        schedule,
        profile: profile_field,
        converged: false,
        last_delta,
        howard_total,
        anchor,
    })
}

/// Vanishing-discount extraction on the problem's own geometry.
pub fn extract_d_discount(p: &Problem, shape: GridShape, tol_d: f64) -> Result<ErgodicEstimate> {
    extract_d_discount_with(p, shape, &ErgodicOptions::new(tol_d))
}

pub fn extract_d_discount_with(
    p: &Problem,
    shape: GridShape,
    opts: &ErgodicOptions,
) -> Result<ErgodicEstimate> {
    let out = discount_ladder(p, shape, opts)?;
    if !out.converged {
        return Err(Error::ScheduleNonConvergence {
            method: "vanishing-discount",
            tol_d: opts.tol_d,
            last_delta: out.last_delta,
            schedule: out.schedule,
        });
    }
    Ok(ErgodicEstimate {
        d: out.d,
        band: None,
        profile: out.profile,
        schedule: out.schedule,
        converged: true,
        method: Method::VanishingDiscount,
        diagnostics: Vec::new(),
        anchor: out.anchor,
    })
}

fn bottom_trace(profile: &GridField) -> Vec<f64> {
    (0..profile.shape.nx1).map(|i| profile.at(i, 0)).collect()
}

/// Checks every control's vertical drift on a probe grid; upward drift
/// breaks the boundedness that makes the truncated constant unique.
fn drift_warning(p: &Problem) -> Option<String> {
    let (lo, hi) = p.domain.x1_range;
    let top = p.domain.top.height();
    for &s1 in &crate::problem::probe_fractions(12) {
        let x1 = lo + s1 * (hi - lo);
        let beta = p.domain.bottom(x1);
        for &s2 in &crate::problem::probe_fractions(12) {
            let x2 = beta + s2 * (top - beta);
            let env = crate::expr::Env {
                x1,
                x2,
                ..crate::expr::Env::default()
            };
            for ctrl in &p.coeffs.controls {
                let b = ctrl.b_at(&env);
                if b[1] > 1e-12 {
                    return Some(format!(
                        "drift condition fails: control '{}' has b2 = {:.3e} > 0 at \
                         x1={x1:.4}, x2={x2:.4}; the truncated constant may not be unique",
                        ctrl.label, b[1]
                    ));
                }
            }
        }
    }
    None
}

/// Truncation extraction: doubles the strip height from the problem's own
/// truncation and reruns the discount ladder until the constant stabilizes.
pub fn extract_d_halfspace(p: &Problem, shape: GridShape, tol_d: f64) -> Result<ErgodicEstimate> {
    extract_d_halfspace_with(p, shape, &ErgodicOptions::new(tol_d))
}

pub fn extract_d_halfspace_with(
    p: &Problem,
    shape: GridShape,
    opts: &ErgodicOptions,
) -> Result<ErgodicEstimate> {
    if p.domain.kind != DomainKind::PeriodicHalfStrip {
        return Err(Error::Invalid(
            "truncation extraction needs a periodic half-strip domain".into(),
        ));
    }
    let r0 = match p.domain.top {
        TopBoundary::Truncation(r) => r,
        TopBoundary::Dirichlet(_) => {
            return Err(Error::Invalid(
                "truncation extraction needs a homogeneous Neumann truncation top".into(),
            ))
        }
    };

    let mut diagnostics = vec![
        "truncation selects one admissible constant; without a confining drift the \
         half-space constant is not unique in general"
            .to_string(),
    ];
    if let Some(w) = drift_warning(p) {
        diagnostics.push(w);
    }

    let mut schedule = Vec::new();
    let mut prev: Option<LadderOutcome> = None;
    let mut prev_trace: Option<Vec<f64>> = None;
    let mut last_delta = f64::INFINITY;

    for j in 0..=MAX_DOUBLINGS {
        let scale = 1usize << j;
        let r_j = r0 * scale as f64;
        let nx2_j = ((shape.nx2 - 1) * scale + 1).min(NX2_CAP);
        if nx2_j == NX2_CAP {
            diagnostics.push(format!(
                "vertical resolution capped at {NX2_CAP} nodes for R = {r_j}"
            ));
        }
        let mut domain = p.domain.clone();
        domain.top = TopBoundary::Truncation(r_j);
        let p_j = Problem {
            domain,
            coeffs: p.coeffs.clone(),
            boundary: p.boundary.clone(),
        };
        let shape_j = shape_for(&p_j.domain, shape.nx1, nx2_j);
        // Anchor overrides make no sense across growing grids.
        let inner_opts = ErgodicOptions {
            anchor: None,
            ..opts.clone()
        };
        let out = discount_ladder(&p_j, shape_j, &inner_opts)?;

        let trace = bottom_trace(&out.profile);
        let profile_delta = match &prev_trace {
            Some(t) => sup_diff(&trace, t),
            None => trace.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        };
        schedule.push(ScheduleStep {
            parameter: r_j,
            d_estimate: out.d,
            extrapolate: out.d,
            profile_delta,
            iterations: out.howard_total,
        });

        if let Some(prev_out) = &prev {
            last_delta = (out.d - prev_out.d).abs();
            if last_delta < opts.tol_d {
                return Ok(ErgodicEstimate {
                    d: out.d,
                    band: None,
                    profile: out.profile,
                    schedule,
                    converged: true,
                    method: Method::Truncation,
                    diagnostics,
                    anchor: out.anchor,
                });
            }
        }
        prev_trace = Some(trace);
        prev = Some(out);
    }

    Err(Error::ScheduleNonConvergence {
        method: "truncation",
        tol_d: opts.tol_d,
        last_delta,
        schedule,
    })
}

/// Adds `eps * I` to every control's diffusion at the expression level and
/// marks the regularized problem uniformly elliptic.
fn regularize(p: &Problem, eps: f64) -> Problem {
    let mut q = p.clone();
    for ctrl in &mut q.coeffs.controls {
        ctrl.a11 = Expr::Add(Box::new(ctrl.a11.clone()), Box::new(Expr::num(eps)));
        ctrl.a22 = Expr::Add(Box::new(ctrl.a22.clone()), Box::new(Expr::num(eps)));
    }
    q.coeffs.lambda1 = p.coeffs.lambda1.max(0.0) + eps;
    q.coeffs.big_lambda1 = p.coeffs.big_lambda1.max(p.coeffs.lambda1) + eps;
    q.coeffs.uniformly_elliptic = true;
    q
}

/// Vanishing-viscosity extraction for degenerate operators. Runs the full
/// eps ladder, extrapolates under d_eps = d + c*eps, and reports a band
/// instead of a point when the sequence is not Cauchy: the theory only
/// grants sub- and supersolution bounds there.
pub fn extract_d_degenerate(p: &Problem, shape: GridShape, tol_d: f64) -> Result<ErgodicEstimate> {
    extract_d_degenerate_with(p, shape, &ErgodicOptions::new(tol_d))
}

pub fn extract_d_degenerate_with(
    p: &Problem,
    shape: GridShape,
    opts: &ErgodicOptions,
) -> Result<ErgodicEstimate> {
    let class = check_degenerate_admissibility(p);
    if class == DegenerateClass::Unsupported {
        return Err(Error::UnsupportedDegenerate);
    }
    let mut diagnostics = vec![format!("degenerate admissibility: {class:?}")];

    let mut schedule = Vec::new();
    let mut estimates: Vec<f64> = Vec::new();
    let mut exts: Vec<f64> = Vec::new();
    let mut last: Option<LadderOutcome> = None;
    let mut prev_trace: Option<Vec<f64>> = None;

    for k in VISCOSITY_K {
        let eps = 0.5f64.powi(k as i32);
        let p_eps = regularize(p, eps);
        let inner_opts = ErgodicOptions {
            anchor: opts.anchor,
            ..opts.clone()
        };
        let out = discount_ladder(&p_eps, shape, &inner_opts)?;

        let trace = bottom_trace(&out.profile);
        let profile_delta = match &prev_trace {
            Some(t) => sup_diff(&trace, t),
            None => trace.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        };
        let ext = match estimates.last() {
            Some(prev_d) => 2.0 * out.d - prev_d,
            None => out.d,
        };
        schedule.push(ScheduleStep {
            parameter: eps,
            d_estimate: out.d,
            extrapolate: ext,
            profile_delta,
            iterations: out.howard_total,
        });
        estimates.push(out.d);
        exts.push(ext);
        prev_trace = Some(trace);
        last = Some(out);
    }

    let last = last.expect("viscosity ladder ran");
    let n = exts.len();
    let converged = n >= 2 && (exts[n - 1] - exts[n - 2]).abs() < opts.tol_d;
    let (d, band) = if converged {
        (exts[n - 1], None)
    } else {
        let tail = &estimates[estimates.len().saturating_sub(4)..];
        let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        diagnostics.push(format!(
            "viscosity sequence not Cauchy at tol_d = {:.3e}; reporting the band \
             [{lo:.6}, {hi:.6}] of the last {} estimates",
            opts.tol_d,
            tail.len()
        ));
        (*estimates.last().expect("nonempty"), Some((lo, hi)))
    };

    Ok(ErgodicEstimate {
        d,
        band,
        profile: last.profile,
        schedule,
        converged,
        method: Method::VanishingViscosity,
        diagnostics,
        anchor: last.anchor,
    })
}
