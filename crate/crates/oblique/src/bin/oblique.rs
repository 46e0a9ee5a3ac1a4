//! Command-line front end. All real work lives in `oblique::run`; this file
//! only parses flags into a `RunConfig` and forwards the exit status.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oblique::run::{run, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "oblique",
    version,
    about = "Ergodic boundary constants and effective boundary laws for \
             Bellman problems with oblique reflection"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Problem description file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Grid as N1xN2, at least 16x16.
    #[arg(long, default_value = "64x64", value_parser = parse_grid)]
    grid: (usize, usize),
    /// Stopping tolerance on the ergodic constant.
    #[arg(long = "tol-d", default_value_t = 1e-4)]
    tol_d: f64,
    /// Bellman residual tolerance of the inner policy iteration.
    #[arg(long = "tol-solver", default_value_t = 1e-9)]
    tol_solver: f64,
    /// Output directory for results.json and the CSV artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract the ergodic boundary constant of one problem.
    Ergodic(Common),
    /// Solve one cell problem at a frozen boundary point.
    Cell {
        #[command(flatten)]
        common: Common,
        /// Macroscopic boundary point.
        #[arg(long, default_value_t = 0.0)]
        x1: f64,
        /// Frozen solution value.
        #[arg(long, default_value_t = 0.0)]
        r: f64,
        /// Frozen tangential gradient.
        #[arg(long, default_value_t = 0.0)]
        p1: f64,
    },
    /// Tabulate the effective boundary law on knot grids.
    Table {
        #[command(flatten)]
        common: Common,
        /// Knot counts as x1,r,p1 (defaults to 5,7,5).
        #[arg(long, value_parser = parse_knots)]
        knots: Option<(usize, usize, usize)>,
    },
    /// Resolved-epsilon sweep against the homogenized solution.
    Homogenize {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly decreasing epsilon list.
        #[arg(long, default_value = "0.125,0.0625,0.03125", value_parser = parse_eps)]
        eps: EpsList,
    },
    /// Check the structural assumptions of a problem file.
    Validate(Common),
}

#[derive(Clone)]
struct EpsList(Vec<f64>);

fn parse_grid(raw: &str) -> Result<(usize, usize), String> {
    let (a, b) = raw
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected N1xN2, got {raw:?}"))?;
    let nx1 = a.trim().parse().map_err(|e| format!("bad N1: {e}"))?;
    let nx2 = b.trim().parse().map_err(|e| format!("bad N2: {e}"))?;
    Ok((nx1, nx2))
}

fn parse_knots(raw: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three counts a,b,c, got {raw:?}"));
    }
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("bad count: {e}"));
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

fn parse_eps(raw: &str) -> Result<EpsList, String> {
    let list: Vec<f64> = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad epsilon: {e}")))
        .collect::<Result<_, _>>()?;
    if list.is_empty() {
        return Err("epsilon list is empty".into());
    }
    Ok(EpsList(list))
}

fn config(cli: Cli) -> RunConfig {
    let (command, common, eps_list, knots) = match cli.command {
        Cmd::Ergodic(c) => (Command::Ergodic, c, Vec::new(), None),
        Cmd::Cell { common, x1, r, p1 } => (Command::Cell { x1, r, p1 }, common, Vec::new(), None),
        Cmd::Table { common, knots } => (Command::Table, common, Vec::new(), knots),
        Cmd::Homogenize { common, eps } => (Command::Homogenize, common, eps.0, None),
        Cmd::Validate(c) => (Command::Validate, c, Vec::new(), None),
    };
    RunConfig {
        command,
        problem_path: common.problem,
        grid: common.grid,
        tol_d: common.tol_d,
        tol_solver: common.tol_solver,
        output_dir: common.out,
        eps_list,
        knots,
    }
}

fn main() -> ExitCode {
    let code = run(&config(Cli::parse()));
    ExitCode::from(code as u8)
}
