//! Batch runner: one problem file in, machine-readable artifacts out.
//!
//! Every command writes `results.json` and `schedule.csv` into the output
//! directory; `table` adds `table.csv` and `homogenize` adds both
//! `convergence.csv` and the law table it built. Exit status 0 means the
//! method converged to a value, 2 means it honestly reported a band or a
//! non-contracting error sequence instead, and 1 means a hard error, which
//! is also recorded in `results.json` as `{code, message}`.

use std::path::PathBuf;
use std::sync::Once;

use serde_json::json;

use crate::cell::{
    build_law_table, default_knots, linspace, solve_cell_estimate, CellOptions, EffectiveLawTable,
};
use crate::ergodic::{
    extract_d_degenerate_with, extract_d_discount_with, extract_d_halfspace_with, ErgodicEstimate,
    ErgodicOptions,
};
use crate::error::{Error, Result};
use crate::flatten::{shape_for, validate_homogenization_assumptions};
use crate::grid::GridShape;
use crate::homogenize::{convergence_study_with, StudyOptions};
use crate::problem::{
    check_degenerate_admissibility, load_problem, DegenerateClass, DomainKind, Problem,
};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// The method finished but reported a band or a non-contracting sequence.
pub const EXIT_BAND: i32 = 2;

static THREAD_CAP: Once = Once::new();

/// Applies the `OBLIQUE_THREADS` worker cap to the global pool, once per
/// process. Later calls and later env changes are ignored by design: one
/// run per process.
pub fn apply_thread_cap() {
    THREAD_CAP.call_once(|| {
        let Ok(raw) = std::env::var("OBLIQUE_THREADS") else {
            return;
        };
        match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => eprintln!("ignoring OBLIQUE_THREADS={raw:?}: expected a positive integer"),
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Ergodic,
    Cell { x1: f64, r: f64, p1: f64 },
    Table,
    Homogenize,
    Validate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ergodic => "ergodic",
            Command::Cell { .. } => "cell",
            Command::Table => "table",
            Command::Homogenize => "homogenize",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub problem_path: PathBuf,
    /// Grid as `(nx1, nx2)`, at least 16 in each direction.
    pub grid: (usize, usize),
    /// Stopping tolerance on the ergodic constant.
    pub tol_d: f64,
    /// Bellman residual tolerance of the inner policy iteration.
    pub tol_solver: f64,
    pub output_dir: PathBuf,
    /// Strictly decreasing epsilon schedule, used by `homogenize`.
    pub eps_list: Vec<f64>,
    /// Knot counts `(x1, r, p1)` for `table`; defaults to 5, 7, 5.
    pub knots: Option<(usize, usize, usize)>,
}

fn validate_config(cfg: &RunConfig) -> Result<()> {
    if cfg.grid.0 < 16 || cfg.grid.1 < 16 {
        return Err(Error::Invalid(format!(
            "grid {}x{} is below the 16x16 minimum",
            cfg.grid.0, cfg.grid.1
        )));
    }
    if !(cfg.tol_d > 0.0) || !(cfg.tol_solver > 0.0) {
        return Err(Error::Invalid(
            "tolerances tol_d and tol_solver must be positive".into(),
        ));
    }
    if let Some((a, b, c)) = cfg.knots {
        if a < 2 || b < 2 || c < 2 {
            return Err(Error::Invalid(
                "knot counts need at least 2 knots per axis".into(),
            ));
        }
    }
    Ok(())
}

/// Runs one command and reports the process exit status. Hard errors are
/// written into `results.json` as well, so batch drivers never have to
/// scrape stderr.
pub fn run(cfg: &RunConfig) -> i32 {
    apply_thread_cap();
    match execute(cfg) {
        Ok(code) => code,
        Err(err) => {
            write_error_artifacts(cfg, &err);
            eprintln!("error: {err}");
            EXIT_ERROR
        }
    }
}

fn execute(cfg: &RunConfig) -> Result<i32> {
    validate_config(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let p = load_problem(&cfg.problem_path)?;
    let shape = shape_for(&p.domain, cfg.grid.0, cfg.grid.1);
    match cfg.command {
        Command::Ergodic => run_ergodic(cfg, &p, shape),
        Command::Cell { x1, r, p1 } => run_cell(cfg, &p, x1, r, p1),
        Command::Table => run_table(cfg, &p),
        Command::Homogenize => run_homogenize(cfg, &p, shape),
        Command::Validate => run_validate(cfg, &p),
    }
}

fn ergodic_options(cfg: &RunConfig) -> ErgodicOptions {
    ErgodicOptions {
        howard_tol: cfg.tol_solver,
        ..ErgodicOptions::new(cfg.tol_d)
    }
}

/// Method dispatch. Uniformly elliptic problems use the discount ladder on
/// their own geometry, or the truncation ladder when that geometry is a
/// periodic half-strip. Degenerate problems go through the viscosity ladder
/// when the admissibility probe finds structure, and fall back to the
/// truncation ladder for transport on a strip, where upwinding alone is
/// stable.
fn ergodic_estimate(p: &Problem, shape: GridShape, opts: &ErgodicOptions) -> Result<ErgodicEstimate> {
    let on_strip = p.domain.kind == DomainKind::PeriodicHalfStrip;
    if !p.coeffs.uniformly_elliptic {
        return match check_degenerate_admissibility(p) {
            DegenerateClass::Unsupported if on_strip => extract_d_halfspace_with(p, shape, opts),
            _ => extract_d_degenerate_with(p, shape, opts),
        };
    }
    if on_strip {
        extract_d_halfspace_with(p, shape, opts)
    } else {
        extract_d_discount_with(p, shape, opts)
    }
}

/// Sampled range of the boundary data `g`; the ergodic constant of a
/// constant-free interior operator is squeezed between these.
fn g_bounds(p: &Problem) -> (f64, f64) {
    let (lo, hi) = p.domain.x1_range;
    let mut gmin = f64::INFINITY;
    let mut gmax = f64::NEG_INFINITY;
    for &s in &crate::problem::probe_fractions(48) {
        let env = p.boundary_env(lo + s * (hi - lo));
        let g = p.boundary.g.eval(&env);
        gmin = gmin.min(g);
        gmax = gmax.max(g);
    }
    (gmin, gmax)
}

fn constant_bounds_verdict(p: &Problem, est: &ErgodicEstimate, tol_d: f64) -> serde_json::Value {
    let (gmin, gmax) = g_bounds(p);
    let slack = 10.0 * tol_d + 0.02 * (gmax - gmin).abs();
    let (lo, hi) = est.band.unwrap_or((est.d, est.d));
    let passed = lo >= gmin - slack && hi <= gmax + slack;
    json!({
        "name": "constant_between_g_bounds",
        "passed": passed,
        "detail": format!(
            "d in [{lo:.6}, {hi:.6}] vs g sampled in [{gmin:.6}, {gmax:.6}] at 48 points, \
             slack {slack:.3e}"
        ),
    })
}

fn stopping_verdict(est: &ErgodicEstimate, tol_d: f64) -> serde_json::Value {
    let last = est.schedule.last();
    json!({
        "name": "stopping_rule",
        "passed": est.converged,
        "detail": match last {
            Some(s) => format!(
                "{} schedule steps, last profile increment {:.3e}, tol_d {tol_d:.3e}",
                est.schedule.len(), s.profile_delta
            ),
            None => "empty schedule".to_string(),
        },
    })
}

fn estimate_results(cfg: &RunConfig, est: &ErgodicEstimate, p: &Problem) -> (serde_json::Value, i32) {
    let exit = if est.converged { EXIT_CONVERGED } else { EXIT_BAND };
    let body = json!({
        "command": cfg.command.name(),
        "problem": cfg.problem_path.display().to_string(),
        "grid": [cfg.grid.0, cfg.grid.1],
        "tol_d": cfg.tol_d,
        "tol_solver": cfg.tol_solver,
        "method": est.method,
        "d": est.d,
        "band": est.band.map(|(lo, hi)| vec![lo, hi]),
        "band_width": est.band_width(),
        "converged": est.converged,
        "anchor": [est.anchor.0, est.anchor.1],
        "diagnostics": est.diagnostics,
        "invariants": [
            stopping_verdict(est, cfg.tol_d),
            constant_bounds_verdict(p, est, cfg.tol_d),
        ],
        "exit_code": exit,
        "error": serde_json::Value::Null,
    });
    (body, exit)
}

fn run_ergodic(cfg: &RunConfig, p: &Problem, shape: GridShape) -> Result<i32> {
    let est = ergodic_estimate(p, shape, &ergodic_options(cfg))?;
    let (body, exit) = estimate_results(cfg, &est, p);
    write_text(cfg, "schedule.csv", &est.schedule_csv())?;
    write_json(cfg, &body)?;
    Ok(exit)
}

fn run_cell(cfg: &RunConfig, p: &Problem, x1: f64, r: f64, p1: f64) -> Result<i32> {
    let opts = CellOptions {
        nx1: cfg.grid.0,
        nx2: cfg.grid.1,
        ..CellOptions::new(cfg.tol_d)
    };
    let est = solve_cell_estimate(p, x1, r, p1, &opts)?;
    let (mut body, exit) = estimate_results(cfg, &est, p);
    body["frozen_point"] = json!({"x1": x1, "r": r, "p1": p1});
    body["effective_law"] = json!(-est.d);
    // The strip's boundary data is derived from the frozen Hamiltonian, so
    // the raw g bounds of the host problem do not apply here.
    body["invariants"] = json!([stopping_verdict(&est, cfg.tol_d)]);
    write_text(cfg, "schedule.csv", &est.schedule_csv())?;
    write_json(cfg, &body)?;
    Ok(exit)
}

const SCHEDULE_HEADER: &str = "parameter,d_estimate,extrapolate,profile_delta,iterations\n";

fn table_knots(p: &Problem, cfg: &RunConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (x1d, rd, p1d) = default_knots(p);
    match cfg.knots {
        None => (x1d, rd, p1d),
        Some((a, b, c)) => (
            linspace(x1d[0], *x1d.last().expect("nonempty"), a),
            linspace(rd[0], *rd.last().expect("nonempty"), b),
            linspace(p1d[0], *p1d.last().expect("nonempty"), c),
        ),
    }
}

fn table_results(cfg: &RunConfig, table: &EffectiveLawTable) -> serde_json::Value {
    let (vmin, vmax) = table
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    json!({
        "command": cfg.command.name(),
        "problem": cfg.problem_path.display().to_string(),
        "grid": [cfg.grid.0, cfg.grid.1],
        "tol_d": cfg.tol_d,
        "tol_solver": cfg.tol_solver,
        "converged": true,
        "knots": {
            "x1": table.x1_knots,
            "r": table.r_knots,
            "p1": table.p1_knots,
        },
        "law_range": [vmin, vmax],
        "diagnostics": [format!("{} table entries solved", table.values.len())],
        "invariants": [{
            "name": "law_nondecreasing_in_r",
            "passed": true,
            "detail": format!("every r fiber checked at slack 10*tol_d = {:.3e}", 10.0 * cfg.tol_d),
        }],
        "exit_code": EXIT_CONVERGED,
        "error": serde_json::Value::Null,
    })
}

fn run_table(cfg: &RunConfig, p: &Problem) -> Result<i32> {
    let opts = CellOptions {
        nx1: cfg.grid.0,
        nx2: cfg.grid.1,
        ..CellOptions::new(cfg.tol_d)
    };
    let (x1k, rk, p1k) = table_knots(p, cfg);
    let table = build_law_table(p, &x1k, &rk, &p1k, &opts)?;
    write_text(cfg, "table.csv", &table.to_csv())?;
    write_text(cfg, "schedule.csv", SCHEDULE_HEADER)?;
    write_json(cfg, &table_results(cfg, &table))?;
    Ok(EXIT_CONVERGED)
}

fn run_homogenize(cfg: &RunConfig, p: &Problem, shape: GridShape) -> Result<i32> {
    let opts = StudyOptions::new(cfg.tol_d);
    let report = convergence_study_with(p, &cfg.eps_list, shape, &opts)?;

    let nonincreasing = report
        .sup_errors
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-12);
    let halved = match (report.sup_errors.first(), report.sup_errors.last()) {
        (Some(a), Some(b)) => *b < 0.5 * a,
        _ => false,
    };
    let exit = if nonincreasing { EXIT_CONVERGED } else { EXIT_BAND };

    let mut schedule = String::from("outer_iteration,increment\n");
    for (m, inc) in report.outer_increments.iter().enumerate() {
        schedule.push_str(&format!("{},{:.16e}\n", m + 1, inc));
    }
    write_text(cfg, "schedule.csv", &schedule)?;
    write_text(cfg, "convergence.csv", &report.csv())?;
    write_text(cfg, "table.csv", &report.table.to_csv())?;

    let body = json!({
        "command": cfg.command.name(),
        "problem": cfg.problem_path.display().to_string(),
        "grid": [cfg.grid.0, cfg.grid.1],
        "tol_d": cfg.tol_d,
        "tol_solver": cfg.tol_solver,
        "epsilons": report.epsilons,
        "sup_errors": report.sup_errors,
        "iterations": report.iterations,
        "barrier_bound": report.barrier_bound,
        "converged": nonincreasing,
        "diagnostics": report.diagnostics,
        "invariants": [
            {
                "name": "errors_nonincreasing",
                "passed": nonincreasing,
                "detail": format!("sup errors {:?}", report.sup_errors),
            },
            {
                "name": "last_error_halved",
                "passed": halved,
                "detail": "informative only; does not gate the exit status",
            },
        ],
        "exit_code": exit,
        "error": serde_json::Value::Null,
    });
    write_json(cfg, &body)?;
    Ok(exit)
}

fn run_validate(cfg: &RunConfig, p: &Problem) -> Result<i32> {
    let report = validate_homogenization_assumptions(p);
    let class = check_degenerate_admissibility(p);
    let exit = if report.all_passed() {
        EXIT_CONVERGED
    } else {
        EXIT_ERROR
    };
    let checks: Vec<serde_json::Value> = report
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "passed": c.passed,
                "detail": format!("{} ({})", c.detail, c.worst_location),
            })
        })
        .collect();
    let body = json!({
        "command": cfg.command.name(),
        "problem": cfg.problem_path.display().to_string(),
        "grid": [cfg.grid.0, cfg.grid.1],
        "tol_d": cfg.tol_d,
        "tol_solver": cfg.tol_solver,
        "converged": report.all_passed(),
        "violations": report.failed_names(),
        "uniformly_elliptic": p.coeffs.uniformly_elliptic,
        "degenerate_class": class,
        "diagnostics": Vec::<String>::new(),
        "invariants": checks,
        "exit_code": exit,
        "error": serde_json::Value::Null,
    });
    write_text(cfg, "schedule.csv", SCHEDULE_HEADER)?;
    write_json(cfg, &body)?;
    Ok(exit)
}

fn write_text(cfg: &RunConfig, name: &str, content: &str) -> Result<()> {
    std::fs::write(cfg.output_dir.join(name), content)?;
    Ok(())
}

fn write_json(cfg: &RunConfig, body: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(body).expect("results are plain data");
    text.push('\n');
    write_text(cfg, "results.json", &text)
}

/// Best-effort error artifacts: `results.json` with the machine-readable
/// code, plus the schedule the failed ladder got through, when it kept one.
fn write_error_artifacts(cfg: &RunConfig, err: &Error) {
    if std::fs::create_dir_all(&cfg.output_dir).is_err() {
        return;
    }
    if let Error::ScheduleNonConvergence { schedule, .. } = err {
        let mut csv = String::from(SCHEDULE_HEADER);
        for s in schedule {
            csv.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                s.parameter, s.d_estimate, s.extrapolate, s.profile_delta, s.iterations
            ));
        }
        let _ = write_text(cfg, "schedule.csv", &csv);
    }
    let body = json!({
        "command": cfg.command.name(),
        "problem": cfg.problem_path.display().to_string(),
        "grid": [cfg.grid.0, cfg.grid.1],
        "tol_d": cfg.tol_d,
        "tol_solver": cfg.tol_solver,
        "converged": false,
        "diagnostics": Vec::<String>::new(),
        "invariants": Vec::<serde_json::Value>::new(),
        "exit_code": EXIT_ERROR,
        "error": {"code": err.code(), "message": err.to_string()},
    });
    let _ = write_json(cfg, &body);
}
