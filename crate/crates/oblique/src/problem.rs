//! Problem descriptions: domain geometry, controlled coefficients, and
//! oblique boundary data, loaded from a JSON file whose scalar entries are
//! expressions in the closed grammar of [`crate::expr`].
//!
//! The interior operator is the Bellman supremum
//! `F(x, Du, D2u) = sup_alpha { -Tr(A^alpha(x) D2u) - b^alpha(x) . Du }`
//! over a finite control set; the boundary condition on the bottom graph
//! couples the co-normal derivative along `gamma` with discounting, a fixed
//! ergodic constant, or a Robin zeroth-order term.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Curved-bottom box `{f0(x1) <= x2 <= b}` with fixed-value lateral and
    /// top boundaries.
    BoundedFlattenable,
    /// Strip periodic in `x1`, bottom graph `f0`, truncated above.
    PeriodicHalfStrip,
    /// Oscillating-bottom box `{f0 + eps*f1(x1, x1/eps) <= x2 <= b}`.
    OscillatingEpsilon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopBoundary {
    /// Fixed value 0 at height `b`.
    Dirichlet(f64),
    /// Homogeneous Neumann at truncation height `R`.
    Truncation(f64),
}

impl TopBoundary {
    pub fn height(&self) -> f64 {
        match self {
            TopBoundary::Dirichlet(b) | TopBoundary::Truncation(b) => *b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub x1_range: (f64, f64),
    pub f0: Expr,
    /// Oscillation profile `f1(x1, xi1)`, 1-periodic in `xi1`; identically 0
    /// unless the problem homogenizes.
    pub f1: Expr,
    pub top: TopBoundary,
    pub epsilon: Option<f64>,
}

impl DomainSpec {
    pub fn periodic(&self) -> bool {
        self.kind == DomainKind::PeriodicHalfStrip
    }

    /// Bottom profile actually solved on: `f0` plus the resolved oscillation
    /// for `OscillatingEpsilon` domains.
    pub fn bottom(&self, x1: f64) -> f64 {
        let base = self.f0.eval(&Env::x1(x1));
        match (self.kind, self.epsilon) {
            (DomainKind::OscillatingEpsilon, Some(eps)) => {
                let env = Env {
                    x1,
                    xi1: x1 / eps,
                    ..Env::default()
                };
                base + eps * self.f1.eval(&env)
            }
            _ => base,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlCoeff {
    pub label: String,
    pub a11: Expr,
    pub a12: Expr,
    pub a22: Expr,
    pub b1: Expr,
    pub b2: Expr,
}

impl ControlCoeff {
    pub fn a_at(&self, env: &Env) -> [[f64; 2]; 2] {
        let a11 = self.a11.eval(env);
        let a12 = self.a12.eval(env);
        let a22 = self.a22.eval(env);
        [[a11, a12], [a12, a22]]
    }

    pub fn b_at(&self, env: &Env) -> [f64; 2] {
        [self.b1.eval(env), self.b2.eval(env)]
    }
}

#[derive(Debug, Clone)]
pub struct ControlledCoefficients {
    pub controls: Vec<ControlCoeff>,
    pub lambda1: f64,
    pub big_lambda1: f64,
    pub uniformly_elliptic: bool,
}

#[derive(Debug, Clone)]
pub enum GammaSpec {
    /// Outward unit normal of the bottom graph.
    Normal,
    /// Explicit components, expressions in `x1` (and `xi1` on oscillating
    /// domains).
    Components(Expr, Expr),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BcMode {
    /// `lambda*u + <Du, gamma> = g`.
    Discounted(f64),
    /// `<Du, gamma> = g - d` for a known ergodic constant `d`.
    FixedD(f64),
    /// `<Du, gamma> + c*u = g`.
    Robin,
}

#[derive(Debug, Clone)]
pub struct ObliqueBoundaryData {
    pub gamma: GammaSpec,
    pub g: Expr,
    pub c: Expr,
    pub mode: BcMode,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: DomainSpec,
    pub coeffs: ControlledCoefficients,
    pub boundary: ObliqueBoundaryData,
}

/// Which sufficient structure a degenerate problem exhibits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DegenerateClass {
    /// Every control's diffusion is elliptic at every probe point.
    UniformlyElliptic,
    /// All-control ellipticity holds near some probe point but not globally.
    EllipticIsland,
    /// Every direction at some probe point is covered by uniform diffusion or
    /// by an opposing drift, so large gradients are penalized.
    Controllable,
    Unsupported,
}

// ---------------------------------------------------------------------------
// Raw JSON schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawProblem {
    domain: RawDomain,
    controls: Vec<String>,
    a: BTreeMap<String, [[String; 2]; 2]>,
    b: BTreeMap<String, [String; 2]>,
    lambda1: f64,
    #[serde(rename = "Lambda1")]
    big_lambda1: f64,
    #[serde(default = "default_true")]
    uniformly_elliptic: bool,
    boundary: RawBoundary,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
struct RawDomain {
    kind: String,
    x1_range: [f64; 2],
    #[serde(default = "zero_expr")]
    f0: String,
    #[serde(default = "zero_expr")]
    f1: String,
    top: RawTop,
    #[serde(default)]
    epsilon: Option<f64>,
}

fn zero_expr() -> String {
    "0".to_string()
}

#[derive(Deserialize)]
enum RawTop {
    #[serde(rename = "dirichlet")]
    Dirichlet(f64),
    #[serde(rename = "truncation")]
    Truncation(f64),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawGamma {
    Normal(String),
    Components([String; 2]),
}

#[derive(Deserialize)]
enum RawMode {
    #[serde(rename = "discounted")]
    Discounted(f64),
    #[serde(rename = "fixed_d")]
    FixedD(f64),
    #[serde(rename = "robin")]
    Robin,
}

#[derive(Deserialize)]
struct RawBoundary {
    gamma: RawGamma,
    g: String,
    #[serde(default = "zero_expr")]
    c: String,
    mode: RawMode,
}

fn parse_field(field: &str, src: &str) -> Result<Expr> {
    Expr::parse(src).map_err(|source| Error::Parse {
        field: field.to_string(),
        source,
    })
}

/// Loads, compiles, and validates a problem description.
pub fn load_problem(path: &Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path)?;
    problem_from_json(&text)
}

pub fn problem_from_json(text: &str) -> Result<Problem> {
    let raw: RawProblem = serde_json::from_str(text)?;
    let problem = compile(raw)?;
    validate(&problem)?;
    Ok(problem)
}

fn compile(raw: RawProblem) -> Result<Problem> {
    let kind = match raw.domain.kind.as_str() {
        "bounded_flattenable" => DomainKind::BoundedFlattenable,
        "periodic_half_strip" => DomainKind::PeriodicHalfStrip,
        "oscillating_epsilon" => DomainKind::OscillatingEpsilon,
        other => {
            return Err(Error::Invalid(format!(
                "unknown domain kind '{other}' (expected bounded_flattenable, \
                 periodic_half_strip, or oscillating_epsilon)"
            )))
        }
    };
    let top = match raw.domain.top {
        RawTop::Dirichlet(b) => TopBoundary::Dirichlet(b),
        RawTop::Truncation(r) => TopBoundary::Truncation(r),
    };
    let domain = DomainSpec {
        kind,
        x1_range: (raw.domain.x1_range[0], raw.domain.x1_range[1]),
        f0: parse_field("domain.f0", &raw.domain.f0)?,
        f1: parse_field("domain.f1", &raw.domain.f1)?,
        top,
        epsilon: raw.domain.epsilon,
    };

    if raw.controls.is_empty() {
        return Err(Error::Invalid("control set is empty".into()));
    }
    let mut controls = Vec::with_capacity(raw.controls.len());
    for label in &raw.controls {
        let a = raw
            .a
            .get(label)
            .ok_or_else(|| Error::Invalid(format!("control '{label}' missing from 'a'")))?;
        let b = raw
            .b
            .get(label)
            .ok_or_else(|| Error::Invalid(format!("control '{label}' missing from 'b'")))?;
        let a01 = parse_field(&format!("a[{label}][0][1]"), &a[0][1])?;
        let a10 = parse_field(&format!("a[{label}][1][0]"), &a[1][0])?;
        // Only the symmetric part of A acts on the Hessian.
        let a12 = Expr::Mul(
            Box::new(Expr::num(0.5)),
            Box::new(Expr::Add(Box::new(a01), Box::new(a10))),
        );
        controls.push(ControlCoeff {
            label: label.clone(),
            a11: parse_field(&format!("a[{label}][0][0]"), &a[0][0])?,
            a12,
            a22: parse_field(&format!("a[{label}][1][1]"), &a[1][1])?,
            b1: parse_field(&format!("b[{label}][0]"), &b[0])?,
            b2: parse_field(&format!("b[{label}][1]"), &b[1])?,
        });
    }

    let gamma = match raw.boundary.gamma {
        RawGamma::Normal(s) if s == "normal" => GammaSpec::Normal,
        RawGamma::Normal(s) => {
            return Err(Error::Invalid(format!(
                "boundary.gamma must be \"normal\" or a 2-vector of expressions, got '{s}'"
            )))
        }
        RawGamma::Components([g1, g2]) => GammaSpec::Components(
            parse_field("boundary.gamma[0]", &g1)?,
            parse_field("boundary.gamma[1]", &g2)?,
        ),
    };
    let mode = match raw.boundary.mode {
        RawMode::Discounted(l) => BcMode::Discounted(l),
        RawMode::FixedD(d) => BcMode::FixedD(d),
        RawMode::Robin => BcMode::Robin,
    };

    Ok(Problem {
        domain,
        coeffs: ControlledCoefficients {
            controls,
            lambda1: raw.lambda1,
            big_lambda1: raw.big_lambda1,
            uniformly_elliptic: raw.uniformly_elliptic,
        },
        boundary: ObliqueBoundaryData {
            gamma,
            g: parse_field("boundary.g", &raw.boundary.g)?,
            c: parse_field("boundary.c", &raw.boundary.c)?,
            mode,
        },
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Probe points: a coarse solve grid plus the interval midpoints.
pub(crate) fn probe_fractions(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n + 1);
    for k in 0..=n {
        out.push(k as f64 / n as f64);
        if k < n {
            out.push((k as f64 + 0.5) / n as f64);
        }
    }
    out
}

const PROBE_CELLS: usize = 12;

fn assumption(name: &str, location: String, detail: String) -> Error {
    Error::AssumptionViolated {
        name: name.to_string(),
        location,
        detail,
    }
}

impl Problem {
    /// Environment for boundary data at a bottom point: `xi1` resolves the
    /// oscillation on `OscillatingEpsilon` domains and is 0 otherwise.
    pub fn boundary_env(&self, x1: f64) -> Env {
        let xi1 = match (self.domain.kind, self.domain.epsilon) {
            (DomainKind::OscillatingEpsilon, Some(eps)) => x1 / eps,
            _ => 0.0,
        };
        Env {
            x1,
            xi1,
            ..Env::default()
        }
    }

    /// Outward co-normal at a bottom point, in physical coordinates.
    pub fn gamma_at(&self, x1: f64, bottom_slope: f64) -> [f64; 2] {
        match &self.boundary.gamma {
            GammaSpec::Normal => {
                let norm = (1.0 + bottom_slope * bottom_slope).sqrt();
                [bottom_slope / norm, -1.0 / norm]
            }
            GammaSpec::Components(g1, g2) => {
                let env = self.boundary_env(x1);
                [g1.eval(&env), g2.eval(&env)]
            }
        }
    }
}

fn validate(p: &Problem) -> Result<()> {
    let (lo, hi) = p.domain.x1_range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Invalid(format!("x1_range [{lo}, {hi}] is not an interval")));
    }
    if p.coeffs.lambda1 <= 0.0 && p.coeffs.uniformly_elliptic {
        return Err(Error::Invalid(
            "lambda1 must be positive when the uniform-ellipticity flag is set".into(),
        ));
    }
    if p.coeffs.big_lambda1 < p.coeffs.lambda1 {
        return Err(Error::Invalid("Lambda1 < lambda1".into()));
    }
    match p.domain.kind {
        DomainKind::OscillatingEpsilon => {
            let eps = p.domain.epsilon.ok_or_else(|| {
                Error::Invalid("oscillating_epsilon domain needs 'epsilon'".into())
            })?;
            if !(eps > 0.0) {
                return Err(Error::Invalid(format!("epsilon = {eps} must be positive")));
            }
            if !matches!(p.domain.top, TopBoundary::Dirichlet(_)) {
                return Err(Error::Invalid(
                    "oscillating_epsilon domain must have a dirichlet top".into(),
                ));
            }
        }
        DomainKind::BoundedFlattenable => {
            if !matches!(p.domain.top, TopBoundary::Dirichlet(_)) {
                return Err(Error::Invalid(
                    "bounded_flattenable domain must have a dirichlet top \
                     (non-periodic truncated strips are not supported)"
                        .into(),
                ));
            }
        }
        DomainKind::PeriodicHalfStrip => {}
    }
    if matches!(p.boundary.mode, BcMode::Discounted(l) if l < 0.0) {
        return Err(Error::Invalid("discount must be nonnegative".into()));
    }

    let fracs = probe_fractions(PROBE_CELLS);
    let top = p.domain.top.height();

    // Geometry: positive depth everywhere the solver will look.
    for &s in &fracs {
        let x1 = lo + s * (hi - lo);
        let beta = p.domain.bottom(x1);
        if !(top - beta > 0.0) || !beta.is_finite() {
            return Err(assumption(
                "domain",
                format!("x1={x1:.6}"),
                format!("bottom {beta:.6} does not lie below the top {top:.6}"),
            ));
        }
    }

    // Periodicity of the bottom graph on strips.
    if p.domain.periodic() {
        let f0 = &p.domain.f0;
        let d0 = f0.derivative(Var::X1);
        let (a, b) = (f0.eval(&Env::x1(lo)), f0.eval(&Env::x1(hi)));
        let (da, db) = (d0.eval(&Env::x1(lo)), d0.eval(&Env::x1(hi)));
        if (a - b).abs() > 1e-9 * (1.0 + a.abs()) || (da - db).abs() > 1e-9 * (1.0 + da.abs()) {
            return Err(assumption(
                "per",
                format!("x1 in {{{lo}, {hi}}}"),
                format!("f0 is not periodic across the seam: {a:.9} vs {b:.9}"),
            ));
        }
    }

    // Coefficient sanity and declared ellipticity bounds at probe points.
    let tol = 1e-9 * (1.0 + p.coeffs.big_lambda1.abs());
    for &s1 in &fracs {
        let x1 = lo + s1 * (hi - lo);
        let beta = p.domain.bottom(x1);
        for &s2 in &fracs {
            let x2 = beta + s2 * (top - beta);
            let env = Env {
                x1,
                x2,
                ..Env::default()
            };
            for ctrl in &p.coeffs.controls {
                let a = ctrl.a_at(&env);
                let b = ctrl.b_at(&env);
                let vals = [a[0][0], a[0][1], a[1][1], b[0], b[1]];
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(assumption(
                        "lips",
                        format!("x1={x1:.6}, x2={x2:.6}, control '{}'", ctrl.label),
                        format!("coefficient not finite: a={a:?}, b={b:?}"),
                    ));
                }
                if p.coeffs.uniformly_elliptic {
                    let (emin, emax) = sym_eigen_range(a);
                    if emin < p.coeffs.lambda1 - tol || emax > p.coeffs.big_lambda1 + tol {
                        return Err(assumption(
                            "unif",
                            format!("x1={x1:.6}, x2={x2:.6}, control '{}'", ctrl.label),
                            format!(
                                "eigenvalues [{emin:.6}, {emax:.6}] escape the declared \
                                 [{:.6}, {:.6}]",
                                p.coeffs.lambda1, p.coeffs.big_lambda1
                            ),
                        ));
                    }
                }
            }
        }
    }

    // Boundary data: transversality, finiteness, Robin positivity.
    let f0p = p.domain.f0.derivative(Var::X1);
    let df1 = p.domain.f1.derivative(Var::Xi1);
    let f1x = p.domain.f1.derivative(Var::X1);
    for &s in &fracs {
        let x1 = lo + s * (hi - lo);
        let env = p.boundary_env(x1);
        let slope = match (p.domain.kind, p.domain.epsilon) {
            (DomainKind::OscillatingEpsilon, Some(eps)) => {
                f0p.eval(&env) + eps * f1x.eval(&env) + df1.eval(&env)
            }
            _ => f0p.eval(&Env::x1(x1)),
        };
        let gamma = p.gamma_at(x1, slope);
        let norm = (1.0 + slope * slope).sqrt();
        let outward = [slope / norm, -1.0 / norm];
        let trans = gamma[0] * outward[0] + gamma[1] * outward[1];
        if !(trans > 1e-10) {
            return Err(assumption(
                "gamma",
                format!("x1={x1:.6}"),
                format!(
                    "<gamma, n> = {trans:.3e} is not uniformly positive \
                     (gamma = [{:.6}, {:.6}])",
                    gamma[0], gamma[1]
                ),
            ));
        }
        let g = p.boundary.g.eval(&env);
        if !g.is_finite() {
            return Err(assumption("g", format!("x1={x1:.6}"), "g is not finite".into()));
        }
        if matches!(p.boundary.mode, BcMode::Robin) {
            let c = p.boundary.c.eval(&env);
            if !(c > 0.0) {
                return Err(assumption(
                    "lc",
                    format!("x1={x1:.6}"),
                    format!("Robin coefficient c = {c:.6} is not positive"),
                ));
            }
        }
        // f1 >= 0 and 1-periodicity in xi1 whenever an oscillation is present.
        if p.domain.f1.depends_on(Var::Xi1) || p.domain.f1.depends_on(Var::X1) {
            for &t in &fracs {
                let env1 = Env {
                    x1,
                    xi1: t,
                    ..Env::default()
                };
                let env2 = Env {
                    x1,
                    xi1: t + 1.0,
                    ..Env::default()
                };
                let v1 = p.domain.f1.eval(&env1);
                let v2 = p.domain.f1.eval(&env2);
                if v1 < -1e-12 {
                    return Err(assumption(
                        "lc",
                        format!("x1={x1:.6}, xi1={t:.6}"),
                        format!("f1 = {v1:.6} is negative"),
                    ));
                }
                if (v1 - v2).abs() > 1e-9 * (1.0 + v1.abs()) {
                    return Err(assumption(
                        "per",
                        format!("x1={x1:.6}, xi1={t:.6}"),
                        format!("f1 is not 1-periodic in xi1: {v1:.9} vs {v2:.9}"),
                    ));
                }
            }
        }
    }

    Ok(())
}

/// Eigenvalue range of a symmetric 2x2 matrix.
pub(crate) fn sym_eigen_range(a: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    ((tr - disc) / 2.0, (tr + disc) / 2.0)
}

// ---------------------------------------------------------------------------
// Degenerate classification
// ---------------------------------------------------------------------------

const DIRECTION_SAMPLES: usize = 64;
const DEGENERATE_EIG_TOL: f64 = 1e-9;

/// Classifies which structural condition a (possibly degenerate) problem
/// satisfies, probing coefficients on a coarse grid plus midpoints.
///
/// `UniformlyElliptic` and `EllipticIsland` look for all-control ellipticity
/// globally or locally; `Controllable` asks that at some probe point every
/// direction is covered either by uniform diffusion or by a drift that opposes
/// it, so that the supremum grows with the gradient.
pub fn check_degenerate_admissibility(p: &Problem) -> DegenerateClass {
    let (lo, hi) = p.domain.x1_range;
    let top = p.domain.top.height();
    let fracs = probe_fractions(PROBE_CELLS);

    let mut elliptic_everywhere = true;
    let mut elliptic_somewhere = false;
    let mut controllable_somewhere = false;

    for &s1 in &fracs {
        let x1 = lo + s1 * (hi - lo);
        let beta = p.domain.bottom(x1);
        for &s2 in &fracs {
            let x2 = beta + s2 * (top - beta);
            let env = Env {
                x1,
                x2,
                ..Env::default()
            };
            let mats: Vec<[[f64; 2]; 2]> =
                p.coeffs.controls.iter().map(|c| c.a_at(&env)).collect();
            let drifts: Vec<[f64; 2]> = p.coeffs.controls.iter().map(|c| c.b_at(&env)).collect();

            let min_eig = mats
                .iter()
                .map(|a| sym_eigen_range(*a).0)
                .fold(f64::INFINITY, f64::min);
            if min_eig >= DEGENERATE_EIG_TOL {
                elliptic_somewhere = true;
            } else {
                elliptic_everywhere = false;
            }

            if !controllable_somewhere && point_is_controllable(&mats, &drifts) {
                controllable_somewhere = true;
            }
        }
    }

    if elliptic_everywhere {
        DegenerateClass::UniformlyElliptic
    } else if elliptic_somewhere {
        DegenerateClass::EllipticIsland
    } else if controllable_somewhere {
        DegenerateClass::Controllable
    } else {
        DegenerateClass::Unsupported
    }
}

/// Every sampled unit direction `e` must satisfy one of:
/// `min_alpha e.A^alpha e > 0` (all controls diffuse along `e`), or
/// `min_alpha b^alpha . e < 0` (some control's drift opposes `e`, so the
/// supremum over controls grows linearly in a gradient along `e`).
fn point_is_controllable(mats: &[[[f64; 2]; 2]], drifts: &[[f64; 2]]) -> bool {
    for k in 0..DIRECTION_SAMPLES {
        let th = 2.0 * std::f64::consts::PI * k as f64 / DIRECTION_SAMPLES as f64;
        let e = [th.cos(), th.sin()];
        let diffusion = mats
            .iter()
            .map(|a| {
                e[0] * (a[0][0] * e[0] + a[0][1] * e[1])
                    + e[1] * (a[1][0] * e[0] + a[1][1] * e[1])
            })
            .fold(f64::INFINITY, f64::min);
        if diffusion >= DEGENERATE_EIG_TOL {
            continue;
        }
        let opposing = drifts
            .iter()
            .map(|b| b[0] * e[0] + b[1] * e[1])
            .fold(f64::INFINITY, f64::min);
        if opposing < -DEGENERATE_EIG_TOL {
            continue;
        }
        return false;
    }
    true
}
