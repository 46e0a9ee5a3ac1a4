//! Crate-wide error type. Variants carry enough location data to point at the
//! offending node, control, or table axis without a debugger.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("in '{field}': {source}")]
    Parse {
        field: String,
        #[source]
        source: crate::expr::ParseError,
    },

    #[error("assumption '{name}' violated at {location}: {detail}")]
    AssumptionViolated {
        name: String,
        location: String,
        detail: String,
    },

    #[error("invalid problem: {0}")]
    Invalid(String),

    #[error(
        "flattening lost ellipticity at x1={x1:.6}, xi2={xi2:.6}, control {control}: \
         min eigenvalue {min_eig:.3e}"
    )]
    EllipticityLost {
        x1: f64,
        xi2: f64,
        control: usize,
        min_eig: f64,
    },

    #[error(
        "non-monotone stencil on {} row(s); worst at node ({i},{j}), control {control}: \
         |a12|/(h1*h2) = {cross:.6e} > min(a11/h1^2, a22/h2^2) = {axial:.6e}. \
         Refine so the aspect ratio h1/h2 is closer to sqrt(a11/a22) at that node.",
        rows.len()
    )]
    MonotonicityViolated {
        rows: Vec<usize>,
        i: usize,
        j: usize,
        control: usize,
        cross: f64,
        axial: f64,
    },

    #[error("policy-evaluation system is singular at elimination step {step} (pivot {pivot:.3e})")]
    SingularPolicySystem { step: usize, pivot: f64 },

    #[error(
        "policy iteration did not converge within {max_iters} iterations \
         (last residual {residual:.3e})"
    )]
    NonConvergence { max_iters: usize, residual: f64 },

    #[error(
        "{method} schedule exhausted without convergence after {} steps: \
         last increment {last_delta:.3e} > tol_d {tol_d:.3e}",
        schedule.len()
    )]
    ScheduleNonConvergence {
        method: &'static str,
        tol_d: f64,
        last_delta: f64,
        schedule: Vec<crate::ergodic::ScheduleStep>,
    },

    #[error(
        "degenerate problem unsupported: neither an elliptic island nor drift \
         controllability found on the probe grid"
    )]
    UnsupportedDegenerate,

    #[error(
        "effective law not monotone in r at x1={x1:.6}, p1={p1:.6}: \
         L(r={r_hi:.6}) - L(r={r_lo:.6}) = {drop:.3e} < -{tol:.3e}"
    )]
    LawMonotonicityViolation {
        x1: f64,
        p1: f64,
        r_lo: f64,
        r_hi: f64,
        drop: f64,
        tol: f64,
    },

    #[error(
        "grid too coarse for epsilon={epsilon}: h1={h1:.6e} > epsilon/8 = {bound:.6e}; \
         need nx1 >= {needed}"
    )]
    Resolution {
        epsilon: f64,
        h1: f64,
        bound: f64,
        needed: usize,
    },

    #[error(
        "law table queried outside its range at x1={x1:.6}, r={r:.6}, p1={p1:.6}: \
         axis '{axis}' spans [{lo:.6}, {hi:.6}]"
    )]
    TableRangeExceeded {
        x1: f64,
        r: f64,
        p1: f64,
        axis: &'static str,
        lo: f64,
        hi: f64,
    },

    #[error(
        "outer boundary-law iteration did not converge within {max_iters} sweeps \
         (last increment {increment:.3e})"
    )]
    OuterNonConvergence { max_iters: usize, increment: f64 },

    #[error("bad table file: {0}")]
    TableFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad problem file: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code for results.json and exit-status mapping.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::AssumptionViolated { .. } => "assumption-violated",
            Error::Invalid(_) => "invalid-problem",
            Error::EllipticityLost { .. } => "ellipticity-lost",
            Error::MonotonicityViolated { .. } => "non-monotone-stencil",
            Error::SingularPolicySystem { .. } => "singular-policy-system",
            Error::NonConvergence { .. } => "howard-non-convergence",
            Error::ScheduleNonConvergence { .. } => "schedule-non-convergence",
            Error::UnsupportedDegenerate => "unsupported-degenerate",
            Error::LawMonotonicityViolation { .. } => "law-monotonicity-violation",
            Error::Resolution { .. } => "resolution",
            Error::TableRangeExceeded { .. } => "table-range-exceeded",
            Error::OuterNonConvergence { .. } => "outer-non-convergence",
            Error::TableFormat(_) => "table-format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
