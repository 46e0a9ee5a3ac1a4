//! Terrain-following flattening of curved-bottom domains onto the unit-height
//! rectangle, exact at grid nodes.
//!
//! The map is `xi1 = x1`, `xi2 = (x2 - beta(x1)) / (T - beta(x1))` with
//! `beta` the resolved bottom profile and `T` the top height. Coefficients
//! transform by the chain rule: with `J = d(xi)/d(x)` the diffusion becomes
//! `J A J^T` and the drift picks up the second derivatives of the map, so the
//! flattened PDE agrees with the original at every node.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::grid::{GridShape, NodeTag};
use crate::problem::{
    sym_eigen_range, BcMode, ControlCoeff, ControlledCoefficients, DomainKind, DomainSpec,
    GammaSpec, Problem, TopBoundary,
};

/// Per-column geometry of the flattening map.
#[derive(Debug, Clone, Copy)]
pub struct ColumnGeometry {
    /// Bottom height `beta(x1)`.
    pub beta: f64,
    /// Slope `beta'(x1)`, with the oscillation resolved on epsilon domains.
    pub betap: f64,
    pub betapp: f64,
    /// `T - beta(x1) > 0`.
    pub depth: f64,
}

/// Transformed coefficients for one control, stored per node.
#[derive(Debug, Clone)]
pub struct NodeCoeffs {
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl NodeCoeffs {
    fn with_len(n: usize) -> Self {
        NodeCoeffs {
            a11: vec![0.0; n],
            a12: vec![0.0; n],
            a22: vec![0.0; n],
            b1: vec![0.0; n],
            b2: vec![0.0; n],
        }
    }
}

/// The flattened Bellman operator on a rectangle: per-control transformed
/// coefficients plus the map data needed to move vectors and gradients
/// between frames.
#[derive(Debug, Clone)]
pub struct FlattenedOperator {
    pub shape: GridShape,
    pub top: f64,
    pub tags: Vec<NodeTag>,
    pub columns: Vec<ColumnGeometry>,
    pub coeff: Vec<NodeCoeffs>,
    pub labels: Vec<String>,
}

impl FlattenedOperator {
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.shape.nx1 + i
    }

    pub fn controls(&self) -> usize {
        self.coeff.len()
    }

    /// Physical height of node `(i, j)`.
    pub fn x2_of(&self, i: usize, j: usize) -> f64 {
        let col = &self.columns[i];
        col.beta + self.shape.xi2(j) * col.depth
    }

    /// Physical gradient from flattened partials at a node:
    /// `du/dx1 = w_xi1 + q w_xi2`, `du/dx2 = s2 w_xi2`.
    pub fn physical_gradient(&self, i: usize, j: usize, w_xi1: f64, w_xi2: f64) -> [f64; 2] {
        let col = &self.columns[i];
        let q = -col.betap * (1.0 - self.shape.xi2(j)) / col.depth;
        let s2 = 1.0 / col.depth;
        [w_xi1 + q * w_xi2, s2 * w_xi2]
    }

    /// Maps a physical point into this grid's flattened coordinates, using
    /// linear interpolation of the column bottoms between nodes.
    pub fn flattened_of_physical(&self, x1: f64, x2: f64) -> (f64, f64) {
        let (i, t) = self.shape.column_of(x1);
        let ip = if self.shape.periodic_x1 {
            (i + 1) % self.shape.nx1
        } else {
            (i + 1).min(self.shape.nx1 - 1)
        };
        let beta = self.columns[i].beta * (1.0 - t) + self.columns[ip].beta * t;
        let depth = self.top - beta;
        (x1, (x2 - beta) / depth)
    }
}

fn node_tags(shape: &GridShape, top: &TopBoundary) -> Vec<NodeTag> {
    let mut tags = vec![NodeTag::Interior; shape.n()];
    for j in 0..shape.nx2 {
        for i in 0..shape.nx1 {
            let k = j * shape.nx1 + i;
            let lateral = !shape.periodic_x1 && (i == 0 || i == shape.nx1 - 1);
            tags[k] = if lateral {
                NodeTag::Dirichlet
            } else if j == shape.nx2 - 1 {
                match top {
                    TopBoundary::Dirichlet(_) => NodeTag::Dirichlet,
                    TopBoundary::Truncation(_) => NodeTag::NeumannTop,
                }
            } else if j == 0 {
                NodeTag::ObliqueBoundary
            } else if shape.periodic_x1 && i == 0 {
                NodeTag::PeriodicSeam
            } else {
                NodeTag::Interior
            };
        }
    }
    tags
}

/// Grid matching a domain's horizontal extent and periodicity.
pub fn shape_for(domain: &DomainSpec, nx1: usize, nx2: usize) -> GridShape {
    GridShape::new(nx1, nx2, domain.x1_range, domain.periodic())
}

struct ProfileDerivatives {
    f0p: Expr,
    f0pp: Expr,
    f1_x: Expr,
    f1_xi: Expr,
    f1_xx: Expr,
    f1_xxi: Expr,
    f1_xixi: Expr,
}

impl ProfileDerivatives {
    fn of(domain: &DomainSpec) -> Self {
        let f0p = domain.f0.derivative(Var::X1);
        let f1_x = domain.f1.derivative(Var::X1);
        let f1_xi = domain.f1.derivative(Var::Xi1);
        ProfileDerivatives {
            f0pp: f0p.derivative(Var::X1),
            f0p,
            f1_xx: f1_x.derivative(Var::X1),
            f1_xxi: f1_x.derivative(Var::Xi1),
            f1_xixi: f1_xi.derivative(Var::Xi1),
            f1_x,
            f1_xi,
        }
    }

    /// `(beta, beta', beta'')` of the resolved bottom at `x1`.
    fn bottom(&self, domain: &DomainSpec, x1: f64) -> (f64, f64, f64) {
        let env0 = Env::x1(x1);
        let beta0 = domain.f0.eval(&env0);
        let d0 = self.f0p.eval(&env0);
        let dd0 = self.f0pp.eval(&env0);
        match (domain.kind, domain.epsilon) {
            (DomainKind::OscillatingEpsilon, Some(eps)) => {
                let env = Env {
                    x1,
                    xi1: x1 / eps,
                    ..Env::default()
                };
                let beta = beta0 + eps * domain.f1.eval(&env);
                let dp = d0 + eps * self.f1_x.eval(&env) + self.f1_xi.eval(&env);
                let dpp = dd0
                    + eps * self.f1_xx.eval(&env)
                    + 2.0 * self.f1_xxi.eval(&env)
                    + self.f1_xixi.eval(&env) / eps;
                (beta, dp, dpp)
            }
            _ => (beta0, d0, dd0),
        }
    }
}

/// Flattens the interior operator onto the rectangle, chain rule applied
/// exactly at every node.
pub fn flatten_bulk(
    domain: &DomainSpec,
    coeffs: &ControlledCoefficients,
    shape: GridShape,
) -> Result<FlattenedOperator> {
    assert_eq!(
        shape.periodic_x1,
        domain.periodic(),
        "grid periodicity must match the domain"
    );
    let top = domain.top.height();
    let derivs = ProfileDerivatives::of(domain);

    let mut columns = Vec::with_capacity(shape.nx1);
    for i in 0..shape.nx1 {
        let x1 = shape.x1(i);
        let (beta, betap, betapp) = derivs.bottom(domain, x1);
        let depth = top - beta;
        if !(depth > 0.0) {
            return Err(Error::AssumptionViolated {
                name: "domain".into(),
                location: format!("x1={x1:.6}"),
                detail: format!("bottom {beta:.6} reaches the top {top:.6}"),
            });
        }
        columns.push(ColumnGeometry {
            beta,
            betap,
            betapp,
            depth,
        });
    }

    let n = shape.n();
    let mut coeff: Vec<NodeCoeffs> = (0..coeffs.controls.len())
        .map(|_| NodeCoeffs::with_len(n))
        .collect();

    for j in 0..shape.nx2 {
        let xi2 = shape.xi2(j);
        for i in 0..shape.nx1 {
            let col = &columns[i];
            let x1 = shape.x1(i);
            let x2 = col.beta + xi2 * col.depth;
            // Chain-rule data of the map at this node.
            let s2 = 1.0 / col.depth;
            let q = -col.betap * (1.0 - xi2) / col.depth;
            let dz = x2 - top; // = -depth*(1 - xi2)
            let r1 = col.betapp * dz / (col.depth * col.depth)
                + 2.0 * col.betap * col.betap * dz / (col.depth * col.depth * col.depth);
            let r12 = col.betap / (col.depth * col.depth);

            let env = Env {
                x1,
                x2,
                ..Env::default()
            };
            let k = j * shape.nx1 + i;
            for (m, ctrl) in coeffs.controls.iter().enumerate() {
                let a = ctrl.a_at(&env);
                let b = ctrl.b_at(&env);
                let (a11, a12, a22) = (a[0][0], a[0][1], a[1][1]);
                let t11 = a11;
                let t12 = a11 * q + a12 * s2;
                let t22 = a11 * q * q + 2.0 * a12 * q * s2 + a22 * s2 * s2;
                let tb1 = b[0];
                let tb2 = b[0] * q + b[1] * s2 + a11 * r1 + 2.0 * a12 * r12;
                if coeffs.uniformly_elliptic {
                    let (emin, _) = sym_eigen_range([[t11, t12], [t12, t22]]);
                    if emin <= 0.0 {
                        return Err(Error::EllipticityLost {
                            x1,
                            xi2,
                            control: m,
                            min_eig: emin,
                        });
                    }
                }
                let c = &mut coeff[m];
                c.a11[k] = t11;
                c.a12[k] = t12;
                c.a22[k] = t22;
                c.b1[k] = tb1;
                c.b2[k] = tb2;
            }
        }
    }

    Ok(FlattenedOperator {
        tags: node_tags(&shape, &domain.top),
        shape,
        top,
        columns,
        coeff,
        labels: coeffs.controls.iter().map(|c| c.label.clone()).collect(),
    })
}

/// Boundary condition sampled on the bottom row, co-normal already moved to
/// the flattened frame (`gamma_t[i][1] < 0` by transversality).
#[derive(Debug, Clone)]
pub struct BoundaryRows {
    pub gamma_t: Vec<[f64; 2]>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub mode: BcMode,
}

impl BoundaryRows {
    pub fn with_mode(&self, mode: BcMode) -> BoundaryRows {
        BoundaryRows {
            mode,
            ..self.clone()
        }
    }

    pub fn with_g(&self, g: Vec<f64>) -> BoundaryRows {
        assert_eq!(g.len(), self.g.len());
        BoundaryRows {
            g,
            ..self.clone()
        }
    }
}

/// Samples the problem's boundary data on the bottom row of the flattened
/// grid.
pub fn boundary_rows(p: &Problem, flat: &FlattenedOperator) -> Result<BoundaryRows> {
    let shape = &flat.shape;
    let mut gamma_t = Vec::with_capacity(shape.nx1);
    let mut g = Vec::with_capacity(shape.nx1);
    let mut c = Vec::with_capacity(shape.nx1);
    for i in 0..shape.nx1 {
        let x1 = shape.x1(i);
        let col = &flat.columns[i];
        let gamma = p.gamma_at(x1, col.betap);
        // J gamma at the bottom: q = -beta'/depth, s2 = 1/depth.
        let q0 = -col.betap / col.depth;
        let s2 = 1.0 / col.depth;
        let gt = [gamma[0], q0 * gamma[0] + s2 * gamma[1]];
        if !(gt[1] < -1e-12) {
            return Err(Error::AssumptionViolated {
                name: "gamma".into(),
                location: format!("x1={x1:.6}"),
                detail: format!(
                    "transformed co-normal has vertical component {:.3e} >= 0",
                    gt[1]
                ),
            });
        }
        let env = p.boundary_env(x1);
        gamma_t.push(gt);
        g.push(p.boundary.g.eval(&env));
        c.push(p.boundary.c.eval(&env));
    }
    Ok(BoundaryRows {
        gamma_t,
        g,
        c,
        mode: p.boundary.mode,
    })
}

// ---------------------------------------------------------------------------
// Homogenization assumption report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub worst_location: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_names(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    }
}

/// Report-only verification of the structural conditions the effective
/// boundary law relies on. Solvers do not refuse to run on failures; callers
/// decide what a red check means for them.
pub fn validate_homogenization_assumptions(p: &Problem) -> AssumptionReport {
    let (lo, hi) = p.domain.x1_range;
    let fracs = crate::problem::probe_fractions(16);
    let f0p = p.domain.f0.derivative(Var::X1);
    let f0pp = f0p.derivative(Var::X1);
    let df1 = p.domain.f1.derivative(Var::Xi1);
    let mut checks = Vec::new();

    // (fd): the bottom meets the lateral walls flatly. Periodic strips have
    // no lateral walls, so the condition is vacuous there.
    if p.domain.kind != DomainKind::PeriodicHalfStrip {
        let mut passed = true;
        let mut loc = String::from("-");
        let mut detail = String::from("profile derivatives vanish at the lateral ends");
        for &x1 in &[lo, hi] {
            let s = f0p.eval(&Env::x1(x1));
            if s.abs() > 1e-9 {
                passed = false;
                loc = format!("x1={x1:.6}");
                detail = format!("f0'({x1:.6}) = {s:.3e}");
                break;
            }
            for &t in &fracs {
                let env = Env {
                    x1,
                    xi1: t,
                    ..Env::default()
                };
                let d = df1.eval(&env);
                if d.abs() > 1e-9 {
                    passed = false;
                    loc = format!("x1={x1:.6}, xi1={t:.6}");
                    detail = format!("df1/dxi1 = {d:.3e}");
                    break;
                }
            }
            if !passed {
                break;
            }
        }
        checks.push(AssumptionCheck {
            name: "flat_ends",
            passed,
            worst_location: loc,
            detail,
        });
    }

    // (lc): nonnegative oscillation, Robin coefficient bounded below.
    {
        let mut worst_c = f64::INFINITY;
        let mut worst_f1 = f64::INFINITY;
        let mut loc = String::from("-");
        for &s in &fracs {
            let x1 = lo + s * (hi - lo);
            for &t in &fracs {
                let env = Env {
                    x1,
                    xi1: t,
                    ..Env::default()
                };
                let cv = p.boundary.c.eval(&env);
                let fv = p.domain.f1.eval(&env);
                if cv < worst_c {
                    worst_c = cv;
                    loc = format!("x1={x1:.6}, xi1={t:.6}");
                }
                worst_f1 = worst_f1.min(fv);
            }
        }
        let passed = worst_c > 0.0 && worst_f1 >= -1e-12;
        checks.push(AssumptionCheck {
            name: "positive_robin",
            passed,
            worst_location: loc,
            detail: format!("min c = {worst_c:.6}, min f1 = {worst_f1:.6}"),
        });
    }

    // (per): 1-periodicity of the oscillation.
    {
        let mut worst = 0.0f64;
        let mut loc = String::from("-");
        for &s in &fracs {
            let x1 = lo + s * (hi - lo);
            for &t in &fracs {
                let a = p.domain.f1.eval(&Env {
                    x1,
                    xi1: t,
                    ..Env::default()
                });
                let b = p.domain.f1.eval(&Env {
                    x1,
                    xi1: t + 1.0,
                    ..Env::default()
                });
                if (a - b).abs() > worst {
                    worst = (a - b).abs();
                    loc = format!("x1={x1:.6}, xi1={t:.6}");
                }
            }
        }
        checks.push(AssumptionCheck {
            name: "periodic_oscillation",
            passed: worst <= 1e-9,
            worst_location: loc,
            detail: format!("max |f1(.,xi1) - f1(.,xi1+1)| = {worst:.3e}"),
        });
    }

    // Drift compatibility: b1 = 0 and b2 = a11 * f0'' so the sheared drift
    // vanishes.
    {
        let top = p.domain.top.height();
        let mut worst = 0.0f64;
        let mut loc = String::from("-");
        for &s1 in &fracs {
            let x1 = lo + s1 * (hi - lo);
            let curv = f0pp.eval(&Env::x1(x1));
            let beta = p.domain.f0.eval(&Env::x1(x1));
            for &s2 in &fracs {
                let x2 = beta + s2 * (top - beta);
                let env = Env {
                    x1,
                    x2,
                    ..Env::default()
                };
                for ctrl in &p.coeffs.controls {
                    let b = ctrl.b_at(&env);
                    let a11 = ctrl.a11.eval(&env);
                    let dev = b[0].abs().max((b[1] - a11 * curv).abs());
                    if dev > worst {
                        worst = dev;
                        loc = format!("x1={x1:.6}, x2={x2:.6}, control '{}'", ctrl.label);
                    }
                }
            }
        }
        checks.push(AssumptionCheck {
            name: "drift_compatible",
            passed: worst <= 1e-9,
            worst_location: loc,
            detail: format!("max |(b1, b2 - a11 f0'')| = {worst:.3e}"),
        });
    }

    // Shear discriminant: {a11(1 + f0'^2) - 2 a12 f0' + a22}^2 >= 4 det A.
    {
        let top = p.domain.top.height();
        let mut worst = f64::INFINITY;
        let mut loc = String::from("-");
        for &s1 in &fracs {
            let x1 = lo + s1 * (hi - lo);
            let sp = f0p.eval(&Env::x1(x1));
            let beta = p.domain.f0.eval(&Env::x1(x1));
            for &s2 in &fracs {
                let x2 = beta + s2 * (top - beta);
                let env = Env {
                    x1,
                    x2,
                    ..Env::default()
                };
                for ctrl in &p.coeffs.controls {
                    let a = ctrl.a_at(&env);
                    let bracket = a[0][0] * (1.0 + sp * sp) - 2.0 * a[0][1] * sp + a[1][1];
                    let margin = bracket * bracket
                        - 4.0 * (a[0][0] * a[1][1] - a[0][1] * a[0][1]);
                    if margin < worst {
                        worst = margin;
                        loc = format!("x1={x1:.6}, x2={x2:.6}, control '{}'", ctrl.label);
                    }
                }
            }
        }
        checks.push(AssumptionCheck {
            name: "shear_discriminant",
            passed: worst >= -1e-9,
            worst_location: loc,
            detail: format!("min discriminant margin = {worst:.3e}"),
        });
    }

    // Declared ellipticity interval is usable.
    checks.push(AssumptionCheck {
        name: "elliptic_bounds",
        passed: p.coeffs.lambda1 > 0.0 && p.coeffs.big_lambda1 >= p.coeffs.lambda1,
        worst_location: "-".into(),
        detail: format!(
            "lambda1 = {}, Lambda1 = {}",
            p.coeffs.lambda1, p.coeffs.big_lambda1
        ),
    });

    AssumptionReport { checks }
}

// ---------------------------------------------------------------------------
// Frozen cell operator
// ---------------------------------------------------------------------------

/// The boundary-cell problem at a frozen macroscopic point: a constant-
/// coefficient sheared operator on the periodic strip above `f1(x1, .)`,
/// with co-normal and boundary forcing expressed in the strip coordinate.
#[derive(Debug, Clone)]
pub struct CellOperator {
    pub x1: f64,
    pub f0p: f64,
    /// Sheared diffusion matrices, one per control, frozen at the boundary
    /// point.
    pub controls: Vec<(String, [[f64; 2]; 2])>,
    pub lambda_cell: f64,
    pub big_lambda_cell: f64,
    /// Strip bottom `f1(x1, .)` as an expression in the strip coordinate.
    pub bottom: Expr,
    pub dbottom: Expr,
    pub gamma1: Expr,
    pub gamma2: Expr,
    /// Frozen Robin weight and boundary data, expressions in the strip
    /// coordinate.
    pub c: Expr,
    pub g: Expr,
}

/// Freezes the operator and boundary data of `p` at the bottom point over
/// `x1` and shears away the macroscopic slope `f0'(x1)`.
pub fn cell_operator(p: &Problem, x1: f64) -> Result<CellOperator> {
    let f0p = p.domain.f0.derivative(Var::X1).eval(&Env::x1(x1));
    let beta = p.domain.f0.eval(&Env::x1(x1));
    let env = Env {
        x1,
        x2: beta,
        ..Env::default()
    };

    let mut controls = Vec::with_capacity(p.coeffs.controls.len());
    let mut emin = f64::INFINITY;
    let mut emax = f64::NEG_INFINITY;
    for ctrl in &p.coeffs.controls {
        let a = ctrl.a_at(&env);
        let s11 = a[0][0];
        let s12 = a[0][1] - a[0][0] * f0p;
        let s22 = a[0][0] * f0p * f0p - 2.0 * a[0][1] * f0p + a[1][1];
        let m = [[s11, s12], [s12, s22]];
        let (lo, hi) = sym_eigen_range(m);
        if lo <= 0.0 {
            return Err(Error::EllipticityLost {
                x1,
                xi2: 0.0,
                control: controls.len(),
                min_eig: lo,
            });
        }
        emin = emin.min(lo);
        emax = emax.max(hi);
        controls.push((ctrl.label.clone(), m));
    }

    // f1(x1, xi1) with x1 frozen and xi1 renamed to the strip's own
    // horizontal coordinate.
    let to_strip = |e: &Expr| e.bind(Var::X1, x1).substitute(Var::Xi1, &Expr::var(Var::X1));
    let bottom = to_strip(&p.domain.f1);
    let dbottom = to_strip(&p.domain.f1.derivative(Var::Xi1));

    let n1 = (1.0 + f0p * f0p).sqrt();
    // gamma(xi) = (f0' + f1', -(f0'(f0' + f1') + 1)) / sqrt(1 + f0'^2).
    let slope_sum = Expr::Add(Box::new(Expr::num(f0p)), Box::new(dbottom.clone()));
    let gamma1 = Expr::Div(Box::new(slope_sum.clone()), Box::new(Expr::num(n1)));
    let gamma2 = Expr::Div(
        Box::new(Expr::Neg(Box::new(Expr::Add(
            Box::new(Expr::Mul(Box::new(Expr::num(f0p)), Box::new(slope_sum))),
            Box::new(Expr::num(1.0)),
        )))),
        Box::new(Expr::num(n1)),
    );

    Ok(CellOperator {
        x1,
        f0p,
        controls,
        lambda_cell: emin,
        big_lambda_cell: emax,
        bottom,
        dbottom,
        gamma1,
        gamma2,
        c: to_strip(&p.boundary.c),
        g: to_strip(&p.boundary.g),
    })
}

impl CellOperator {
    /// Boundary forcing of the cell problem at `(r, p1)`:
    /// `H = [-sqrt(1 + (f0' + f1')^2) (c r - g) - p1 f1'] / sqrt(1 + f0'^2)`.
    pub fn hamiltonian_expr(&self, r: f64, p1: f64) -> Expr {
        let n1 = (1.0 + self.f0p * self.f0p).sqrt();
        let slope_sum = Expr::Add(Box::new(Expr::num(self.f0p)), Box::new(self.dbottom.clone()));
        let arc = Expr::Sqrt(Box::new(Expr::Add(
            Box::new(Expr::num(1.0)),
            Box::new(Expr::Pow(Box::new(slope_sum), 2)),
        )));
        let cr_minus_g = Expr::Sub(
            Box::new(Expr::Mul(Box::new(self.c.clone()), Box::new(Expr::num(r)))),
            Box::new(self.g.clone()),
        );
        let first = Expr::Neg(Box::new(Expr::Mul(Box::new(arc), Box::new(cr_minus_g))));
        let second = Expr::Mul(Box::new(Expr::num(p1)), Box::new(self.dbottom.clone()));
        Expr::Div(
            Box::new(Expr::Sub(Box::new(first), Box::new(second))),
            Box::new(Expr::num(n1)),
        )
    }

    /// Assembles the frozen strip problem at `(r, p1)`, truncated at height
    /// `truncation`, optionally restricted to a single control.
    pub fn strip_problem(&self, r: f64, p1: f64, truncation: f64, control: Option<usize>) -> Problem {
        let selected: Vec<usize> = match control {
            Some(m) => vec![m],
            None => (0..self.controls.len()).collect(),
        };
        let controls = selected
            .iter()
            .map(|&m| {
                let (label, a) = &self.controls[m];
                ControlCoeff {
                    label: label.clone(),
                    a11: Expr::num(a[0][0]),
                    a12: Expr::num(a[0][1]),
                    a22: Expr::num(a[1][1]),
                    b1: Expr::num(0.0),
                    b2: Expr::num(0.0),
                }
            })
            .collect();
        Problem {
            domain: DomainSpec {
                kind: DomainKind::PeriodicHalfStrip,
                x1_range: (0.0, 1.0),
                f0: self.bottom.clone(),
                f1: Expr::num(0.0),
                top: TopBoundary::Truncation(truncation),
                epsilon: None,
            },
            coeffs: ControlledCoefficients {
                controls,
                lambda1: self.lambda_cell,
                big_lambda1: self.big_lambda_cell,
                uniformly_elliptic: true,
            },
            boundary: crate::problem::ObliqueBoundaryData {
                gamma: GammaSpec::Components(self.gamma1.clone(), self.gamma2.clone()),
                g: self.hamiltonian_expr(r, p1),
                c: Expr::num(0.0),
                mode: BcMode::Discounted(0.125),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::problem_from_json;

    fn slab_json(f0: &str, top: f64) -> String {
        format!(
            r#"{{
  "domain": {{
    "kind": "periodic_half_strip",
    "x1_range": [0.0, 1.0],
    "f0": "{f0}",
    "top": {{"truncation": {top}}}
  }},
  "controls": ["c0"],
  "a": {{"c0": [["1.3", "0.2"], ["0.2", "0.9"]]}},
  "b": {{"c0": ["0.4", "-0.3"]}},
  "lambda1": 0.776,
  "Lambda1": 1.424,
  "boundary": {{"gamma": "normal", "g": "1", "mode": {{"discounted": 0.125}}}}
}}"#
        )
    }

    #[test]
    fn constant_slope_shear_matrix_at_unit_depth() {
        // f0 = 0.25 x1 on a sloped box with the top at 1.25: the column at
        // x1 = 1 has depth exactly 1, where the stretch map's Jacobian equals
        // the pure shear and the Laplacian must transform to
        // [[1, -s], [-s, 1 + s^2]] with unit determinant.
        let json = r#"{
  "domain": {
    "kind": "bounded_flattenable",
    "x1_range": [-1.0, 1.0],
    "f0": "0.25*x1",
    "top": {"dirichlet": 1.25}
  },
  "controls": ["iso"],
  "a": {"iso": [["1", "0"], ["0", "1"]]},
  "b": {"iso": ["0", "0"]},
  "lambda1": 1.0,
  "Lambda1": 1.0,
  "boundary": {"gamma": "normal", "g": "0", "mode": {"discounted": 0.125}}
}"#;
        let p = problem_from_json(json).unwrap();
        let shape = shape_for(&p.domain, 9, 9);
        let flat = flatten_bulk(&p.domain, &p.coeffs, shape).unwrap();
        let i = 8; // x1 = 1, depth = 1.25 - 0.25 = 1
        assert!((flat.columns[i].depth - 1.0).abs() < 1e-14);
        let k = flat.idx(i, 0);
        let s = 0.25;
        let c = &flat.coeff[0];
        assert!((c.a11[k] - 1.0).abs() < 1e-14);
        assert!((c.a12[k] + s).abs() < 1e-14);
        assert!((c.a22[k] - (1.0 + s * s)).abs() < 1e-14);
        let det = c.a11[k] * c.a22[k] - c.a12[k] * c.a12[k];
        assert!((det - 1.0).abs() < 1e-13);
    }

    #[test]
    fn chain_rule_matches_physical_finite_differences() {
        // Independent oracle: pick a smooth w(xi1, xi2), build u = w o map,
        // difference u in physical space, and compare against the flattened
        // coefficients applied to w's analytic partials.
        let p = problem_from_json(&slab_json("0.2*sin(2*pi*x1)", 2.0)).unwrap();
        let shape = shape_for(&p.domain, 16, 12);
        let flat = flatten_bulk(&p.domain, &p.coeffs, shape).unwrap();

        let top = 2.0;
        let f0 = p.domain.f0.clone();
        let map = move |x1: f64, x2: f64| {
            let beta = f0.eval(&Env::x1(x1));
            (x1, (x2 - beta) / (top - beta))
        };
        let w = |xi1: f64, xi2: f64| {
            (2.0 * std::f64::consts::PI * xi1).sin() * (xi2 * xi2 * xi2 - 0.4 * xi2)
                + 0.3 * xi2 * xi2
        };
        let w1 = |xi1: f64, xi2: f64| {
            2.0 * std::f64::consts::PI
                * (2.0 * std::f64::consts::PI * xi1).cos()
                * (xi2 * xi2 * xi2 - 0.4 * xi2)
        };
        let w2 = |xi1: f64, xi2: f64| {
            (2.0 * std::f64::consts::PI * xi1).sin() * (3.0 * xi2 * xi2 - 0.4) + 0.6 * xi2
        };
        let w11 = |xi1: f64, xi2: f64| {
            -(2.0 * std::f64::consts::PI).powi(2)
                * (2.0 * std::f64::consts::PI * xi1).sin()
                * (xi2 * xi2 * xi2 - 0.4 * xi2)
        };
        let w12 = |xi1: f64, xi2: f64| {
            2.0 * std::f64::consts::PI
                * (2.0 * std::f64::consts::PI * xi1).cos()
                * (3.0 * xi2 * xi2 - 0.4)
        };
        let w22 =
            |xi1: f64, xi2: f64| (2.0 * std::f64::consts::PI * xi1).sin() * 6.0 * xi2 + 0.6;

        let u = |x1: f64, x2: f64| {
            let (a, b) = map(x1, x2);
            w(a, b)
        };

        let h = 1e-4;
        for &(i, j) in &[(3usize, 4usize), (7, 2), (12, 9), (0, 6)] {
            let x1 = flat.shape.x1(i);
            let x2 = flat.x2_of(i, j);
            // Physical derivatives of the composite by central differences.
            let u11 = (u(x1 + h, x2) - 2.0 * u(x1, x2) + u(x1 - h, x2)) / (h * h);
            let u22 = (u(x1, x2 + h) - 2.0 * u(x1, x2) + u(x1, x2 - h)) / (h * h);
            let u12 = (u(x1 + h, x2 + h) - u(x1 + h, x2 - h) - u(x1 - h, x2 + h)
                + u(x1 - h, x2 - h))
                / (4.0 * h * h);
            let u1 = (u(x1 + h, x2) - u(x1 - h, x2)) / (2.0 * h);
            let u2 = (u(x1, x2 + h) - u(x1, x2 - h)) / (2.0 * h);

            let env = Env {
                x1,
                x2,
                ..Env::default()
            };
            let a = p.coeffs.controls[0].a_at(&env);
            let b = p.coeffs.controls[0].b_at(&env);
            let physical = -(a[0][0] * u11 + 2.0 * a[0][1] * u12 + a[1][1] * u22)
                - (b[0] * u1 + b[1] * u2);

            let (xi1, xi2) = map(x1, x2);
            let k = flat.idx(i, j);
            let c = &flat.coeff[0];
            let flattened = -(c.a11[k] * w11(xi1, xi2)
                + 2.0 * c.a12[k] * w12(xi1, xi2)
                + c.a22[k] * w22(xi1, xi2))
                - (c.b1[k] * w1(xi1, xi2) + c.b2[k] * w2(xi1, xi2));

            assert!(
                (physical - flattened).abs() < 2e-5 * (1.0 + flattened.abs()),
                "node ({i},{j}): physical {physical} vs flattened {flattened}"
            );
        }
    }

    #[test]
    fn normal_gamma_transforms_to_strict_inward_vertical() {
        let p = problem_from_json(&slab_json("0.2*sin(2*pi*x1)", 2.0)).unwrap();
        let shape = shape_for(&p.domain, 16, 8);
        let flat = flatten_bulk(&p.domain, &p.coeffs, shape).unwrap();
        let rows = boundary_rows(&p, &flat).unwrap();
        for (i, gt) in rows.gamma_t.iter().enumerate() {
            // J n = (n1, -s2 * sqrt(1 + beta'^2)) at the bottom.
            let col = &flat.columns[i];
            let norm = (1.0 + col.betap * col.betap).sqrt();
            let expect = -norm / col.depth;
            assert!(
                (gt[1] - expect).abs() < 1e-13,
                "column {i}: {} vs {expect}",
                gt[1]
            );
        }
    }

    #[test]
    fn flat_cell_operator_recovers_plain_arc_length_forcing() {
        // With f0' = 0 and A = I the cell data reduces to
        // gamma = (f1', -1), H = -sqrt(1 + f1'^2)(c r - g) - p1 f1'.
        let json = r#"{
  "domain": {
    "kind": "oscillating_epsilon",
    "x1_range": [-1.0, 1.0],
    "f0": "0",
    "f1": "0.1*(1 - cos(2*pi*xi1))",
    "top": {"dirichlet": 1.0},
    "epsilon": 0.125
  },
  "controls": ["iso"],
  "a": {"iso": [["1", "0"], ["0", "1"]]},
  "b": {"iso": ["0", "0"]},
  "lambda1": 1.0,
  "Lambda1": 1.0,
  "boundary": {"gamma": "normal", "g": "1", "c": "1", "mode": "robin"}
}"#;
        let p = problem_from_json(json).unwrap();
        let cell = cell_operator(&p, 0.3).unwrap();
        assert_eq!(cell.f0p, 0.0);
        let m = cell.controls[0].1;
        assert_eq!(m, [[1.0, 0.0], [0.0, 1.0]]);

        let xi = 0.37;
        let slope = 0.1 * 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * xi).sin();
        let env = Env::x1(xi);
        assert!((cell.dbottom.eval(&env) - slope).abs() < 1e-12);
        assert!((cell.gamma1.eval(&env) - slope).abs() < 1e-12);
        assert!((cell.gamma2.eval(&env) + 1.0).abs() < 1e-12);

        let (r, p1) = (0.7, -0.4);
        let h = cell.hamiltonian_expr(r, p1).eval(&env);
        let arc = (1.0 + slope * slope).sqrt();
        let want = -arc * (r - 1.0) - p1 * slope;
        assert!((h - want).abs() < 1e-12);
    }

    #[test]
    fn drift_report_flags_missing_curvature_term() {
        // Curved bottom with zero drift: b2 should equal a11 f0'' and does
        // not, so the drift-compatibility check must fail (report, not error).
        let p = problem_from_json(&slab_json("0.2*sin(2*pi*x1)", 2.0)).unwrap();
        let report = validate_homogenization_assumptions(&p);
        let drift = report
            .checks
            .iter()
            .find(|c| c.name == "drift_compatible")
            .unwrap();
        assert!(!drift.passed);
        // The shear discriminant is automatic for symmetric diffusions.
        let shear = report
            .checks
            .iter()
            .find(|c| c.name == "shear_discriminant")
            .unwrap();
        assert!(shear.passed, "{}", shear.detail);
    }
}
