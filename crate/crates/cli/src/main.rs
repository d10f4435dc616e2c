//! `semialg-opt`: parse, lift, relax, solve and certify `.sa` problems.
//!
//! Exit codes: 0 certified optimum, 2 bound only, 1 error. Errors are also
//! written to stdout as an `error/1` JSON object carrying a stable code.

use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use semialg::certify::{certify, Certificate, DEFAULT_RANK_TOL, DEFAULT_SEED};
use semialg::expr::{parse_problem, Problem};
use semialg::lift::{build_problem, LiftedProblem};
use semialg::moment::{build_relaxation, build_sparse_relaxation, detect_cliques, minimum_order, LmiRelaxation};
use semialg::oracle::grid_search;
use semialg::sdp::{export_sdpa, solve, SdpStatus, DEFAULT_MAX_ITER, DEFAULT_MAX_PSD_SIZE, DEFAULT_TOL, PSD_SIZE_ENV};

#[derive(Parser)]
#[command(name = "semialg-opt", version, about = "Moment relaxations for semi-algebraic optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve relaxations of increasing order until one certifies.
    Solve(Common),
    /// Print the lifted polynomial problem.
    Lift(Common),
    /// Write one relaxation in SDPA sparse format.
    ExportSdpa(Common),
    /// Run the grid-search reference optimizer.
    Oracle(OracleArgs),
    /// Solve a single order and print its certificate.
    Certify(Common),
}

#[derive(Args, Clone)]
struct Common {
    input: PathBuf,
    #[arg(long, conflicts_with = "orders")]
    order: Option<u32>,
    /// Inclusive order range such as `2..4`.
    #[arg(long)]
    orders: Option<String>,
    #[arg(long = "ball-M")]
    ball_m: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long)]
    sparse: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    input: PathBuf,
    /// Grid points per coordinate.
    #[arg(long, default_value_t = 401)]
    resolution: usize,
    /// Tolerance on equality constraints for grid points.
    #[arg(long, default_value_t = 2e-3)]
    slack: f64,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

struct Failure {
    code: &'static str,
    message: String,
}

fn fail(code: &'static str, e: impl std::fmt::Display) -> Failure {
    Failure { code, message: e.to_string() }
}

enum Outcome {
    Certified(String),
    Bound(String),
}

fn read_problem(path: &PathBuf) -> Result<Problem, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| fail("E_IO", format!("{}: {e}", path.display())))?;
    parse_problem(&text).map_err(|e| fail("E_PARSE", e))
}

fn lift(c: &Common) -> Result<LiftedProblem, Failure> {
    let mut p = read_problem(&c.input)?;
    build_problem(&mut p, c.ball_m).map_err(|e| fail("E_LIFT", e))
}

fn parse_range(s: &str) -> Result<RangeInclusive<u32>, Failure> {
    let bad = || fail("E_USAGE", format!("order range must look like A..B, got `{s}`"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(fail("E_USAGE", format!("order range {a}..{b} is empty")));
    }
    Ok(a..=b)
}

fn order_range(c: &Common, lp: &LiftedProblem) -> Result<RangeInclusive<u32>, Failure> {
    let min = minimum_order(lp);
    let range = match (&c.order, &c.orders) {
        (Some(i), _) => *i..=*i,
        (None, Some(s)) => parse_range(s)?,
        (None, None) => min..=min + 3,
    };
    if *range.start() < min {
        return Err(fail(
            "E_ORDER",
            format!("order {} is below the minimum admissible order {min}", range.start()),
        ));
    }
    Ok(range)
}

fn relax(c: &Common, lp: &LiftedProblem, order: u32) -> Result<LmiRelaxation, Failure> {
    let r = if c.sparse {
        build_sparse_relaxation(lp, order)
    } else {
        build_relaxation(lp, order)
    };
    r.map_err(|e| fail("E_RELAX", e))
}

fn max_psd_size() -> usize {
    std::env::var(PSD_SIZE_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_MAX_PSD_SIZE)
}

fn config_json(c: &Common, orders: &RangeInclusive<u32>, lp: &LiftedProblem) -> Value {
    json!({
        "input": c.input.display().to_string(),
        "orders": [orders.start(), orders.end()],
        "ball_M": lp.ball_m,
        "ball_M_override": c.ball_m,
        "tol": c.tol,
        "rank_tol": c.rank_tol,
        "max_iter": c.max_iter,
        "sparse": c.sparse,
        "seed": c.seed,
        "max_psd_size": max_psd_size(),
    })
}

struct Solved {
    order_json: Value,
    certificate: Certificate,
}

fn solve_order(c: &Common, lp: &LiftedProblem, order: u32) -> Result<Solved, Failure> {
    let r = relax(c, lp, order)?;
    let sol = solve(&r, c.tol, c.max_iter).map_err(|e| fail("E_SDP", e))?;
    let cert = certify(&sol, &r, lp, c.rank_tol, c.seed);
    let order_json = json!({
        "order": order,
        "rho": sol.objective,
        "dual_objective": sol.dual_objective,
        "status": sol.status,
        "iterations": sol.iterations,
        "residuals": { "primal": sol.residuals.primal, "dual": sol.residuals.dual, "gap": sol.residuals.gap },
        "psd_size": r.psd_size(),
        "n_moments": r.n_moments(),
        "flat": cert.flat,
        "certified": cert.certified,
    });
    Ok(Solved { order_json, certificate: cert })
}

fn run_solve(c: &Common) -> Result<Outcome, Failure> {
    let lp = lift(c)?;
    let range = order_range(c, &lp)?;
    let mut per_order = Vec::new();
    let mut last: Option<Certificate> = None;
    let mut stopped = Value::Null;
    for order in range.clone() {
        match solve_order(c, &lp, order) {
            Ok(s) => {
                per_order.push(s.order_json);
                let infeasible = s.certificate.status == SdpStatus::Infeasible;
                let done = s.certificate.certified;
                last = Some(s.certificate);
                if infeasible {
                    return Err(fail("E_INFEASIBLE", format!("relaxation of order {order} is infeasible, so the problem is too")));
                }
                if done {
                    break;
                }
            }
            // a later order that cannot be built or solved leaves the earlier bounds valid
            Err(f) if last.is_some() => {
                stopped = json!({ "order": order, "code": f.code, "message": f.message });
                break;
            }
            Err(f) => return Err(f),
        }
    }
    let cert = last.expect("range is nonempty");
    let certified = cert.certified;
    let cliques = c.sparse.then(|| {
        let cover = detect_cliques(&lp);
        json!({ "cliques": cover.cliques, "rip": cover.rip })
    });
    let out = json!({
        "schema": "result/1",
        "command": "solve",
        "config": config_json(c, &range, &lp),
        "lifted": lp.dump(),
        "cliques": cliques,
        "orders": per_order,
        "stopped": stopped,
        "rho": cert.rho,
        "certified": certified,
        "certificate": cert,
    });
    let text = pretty(&out);
    Ok(if certified { Outcome::Certified(text) } else { Outcome::Bound(text) })
}

fn run_certify(c: &Common) -> Result<Outcome, Failure> {
    let lp = lift(c)?;
    let range = order_range(c, &lp)?;
    if range.start() != range.end() {
        return Err(fail("E_USAGE", "certify takes a single order"));
    }
    let s = solve_order(c, &lp, *range.start())?;
    let text = pretty(&json!(s.certificate));
    Ok(if s.certificate.certified { Outcome::Certified(text) } else { Outcome::Bound(text) })
}

fn run_lift(c: &Common) -> Result<Outcome, Failure> {
    let lp = lift(c)?;
    Ok(Outcome::Certified(pretty(&json!(lp.dump()))))
}

fn run_export(c: &Common) -> Result<Outcome, Failure> {
    let lp = lift(c)?;
    let range = order_range(c, &lp)?;
    let r = relax(c, &lp, *range.start())?;
    Ok(Outcome::Certified(export_sdpa(&r)))
}

fn run_oracle(a: &OracleArgs) -> Result<Outcome, Failure> {
    let p = read_problem(&a.input)?;
    let res = grid_search(&p.objective, &p.constraints, &p.bounds, p.sense, a.resolution, a.slack)
        .map_err(|e| fail("E_ORACLE", e))?;
    Ok(Outcome::Certified(pretty(&json!(res))))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| fail("E_IO", format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, output) = match &cli.command {
        Command::Solve(c) => (run_solve(c), c.output.as_ref()),
        Command::Lift(c) => (run_lift(c), c.output.as_ref()),
        Command::ExportSdpa(c) => (run_export(c), c.output.as_ref()),
        Command::Certify(c) => (run_certify(c), c.output.as_ref()),
        Command::Oracle(a) => (run_oracle(a), a.output.as_ref()),
    };
    let written = result.and_then(|o| {
        let (text, code) = match o {
            Outcome::Certified(t) => (t, 0),
            Outcome::Bound(t) => (t, 2),
        };
        emit(&text, output).map(|_| code)
    });
    match written {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message);
            println!("{}", json!({ "schema": "error/1", "code": f.code, "message": f.message }));
            ExitCode::from(1)
        }
    }
}
