//! Brute-force reference optimizer working directly on the unlifted problem.
//!
//! A uniform grid over the box keeps the points meeting every inequality and
//! every equality within `slack`; the best one seeds a Nelder-Mead polish of a
//! quadratic-penalty function, repeated with the slack halved at each stage.
//! Only expression evaluation is used.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{Constraint, Expr, Relation, Sense, VarBox};

pub const MAX_VARS: usize = 4;
const MAX_GRID_POINTS: u64 = 50_000_000;
const POLISH_STAGES: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("no grid point satisfies the constraints; increase the slack or the resolution")]
    NoFeasiblePoint,
    #[error("grid search is limited to {MAX_VARS} variables, got {0}")]
    TooManyVariables(usize),
    #[error("grid search needs finite bounds on every variable")]
    UnboundedBox,
    #[error("grid of {0} points exceeds the limit; lower the resolution")]
    GridTooLarge(u64),
    #[error("resolution must be at least 2, got {0}")]
    BadResolution(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub schema: &'static str,
    /// Best objective value, in the problem's own sense.
    pub value: f64,
    pub argmin: Vec<f64>,
    pub grid_value: f64,
    pub grid_resolution: usize,
    pub refined: bool,
    /// Slack within which `argmin` satisfies every constraint.
    pub feasibility_slack: f64,
    pub evaluations: u64,
}

// Largest violation at x, or None where some expression is undefined.
fn violation(constraints: &[Constraint], x: &[f64]) -> Option<(f64, f64)> {
    let mut eq: f64 = 0.0;
    let mut ineq: f64 = 0.0;
    for c in constraints {
        let v = c.expr.eval(x).ok()?;
        match c.relation {
            Relation::Eq => eq = eq.max(v.abs()),
            Relation::Ge => ineq = ineq.max(-v),
            Relation::Le => ineq = ineq.max(v),
        }
    }
    Some((eq, ineq.max(0.0)))
}

fn signed(sense: Sense, v: f64) -> f64 {
    match sense {
        Sense::Minimize => v,
        Sense::Maximize => -v,
    }
}

pub fn grid_search(
    obj: &Expr,
    constraints: &[Constraint],
    bounds: &VarBox,
    sense: Sense,
    resolution: usize,
    slack: f64,
) -> Result<OracleResult, OracleError> {
    let n = bounds.dim();
    if n > MAX_VARS {
        return Err(OracleError::TooManyVariables(n));
    }
    if !bounds.is_bounded() {
        return Err(OracleError::UnboundedBox);
    }
    if resolution < 2 {
        return Err(OracleError::BadResolution(resolution));
    }
    let total = (resolution as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if total > MAX_GRID_POINTS {
        return Err(OracleError::GridTooLarge(total));
    }

    let coord = |axis: usize, i: usize| -> f64 {
        let b = bounds.bounds[axis];
        if i + 1 == resolution {
            b.hi
        } else {
            b.lo + (b.hi - b.lo) * i as f64 / (resolution - 1) as f64
        }
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluations = 0u64;
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    for _ in 0..total {
        for a in 0..n {
            x[a] = coord(a, idx[a]);
        }
        evaluations += 1;
        if let Some((eq, ineq)) = violation(constraints, &x) {
            if eq <= slack && ineq == 0.0 {
                if let Ok(v) = obj.eval(&x) {
                    let s = signed(sense, v);
                    if best.as_ref().is_none_or(|b| s < b.0) {
                        best = Some((s, x.clone()));
                    }
                }
            }
        }
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < resolution {
                break;
            }
            idx[a] = 0;
        }
    }
    let (grid_s, grid_x) = best.ok_or(OracleError::NoFeasiblePoint)?;

    // staged penalty polish
    let spacing: Vec<f64> = bounds
        .bounds
        .iter()
        .map(|b| (b.hi - b.lo) / (resolution - 1) as f64)
        .collect();
    let clamp = |p: &[f64]| -> Vec<f64> {
        p.iter()
            .zip(&bounds.bounds)
            .map(|(v, b)| v.clamp(b.lo, b.hi))
            .collect()
    };
    let mut cur_x = grid_x.clone();
    let mut cur_s = grid_s;
    let mut cur_slack = slack;
    let mut refined = false;
    let mut stage_slack = slack;
    for _ in 0..POLISH_STAGES {
        stage_slack *= 0.5;
        let weight = 100.0 / stage_slack;
        let penalized = |p: &[f64]| -> f64 {
            let p = clamp(p);
            evaluations += 1;
            let Ok(v) = obj.eval(&p) else { return f64::INFINITY };
            let mut pen = 0.0;
            for c in constraints {
                let Ok(g) = c.expr.eval(&p) else { return f64::INFINITY };
                let viol = match c.relation {
                    Relation::Eq => g.abs(),
                    Relation::Ge => (-g).max(0.0),
                    Relation::Le => g.max(0.0),
                };
                pen += viol * viol;
            }
            signed(sense, v) + weight * pen
        };
        let step: Vec<f64> = spacing.iter().map(|h| h * 2.0).collect();
        let cand = clamp(&nelder_mead(penalized, &cur_x, &step, 400 * (n + 1), 1e-13));
        let Some((eq, ineq)) = violation(constraints, &cand) else { continue };
        let Ok(v) = obj.eval(&cand) else { continue };
        let s = signed(sense, v);
        if eq <= stage_slack && ineq <= stage_slack {
            // at a tighter slack any accepted point is preferable to a looser one
            cur_x = cand;
            cur_s = s;
            cur_slack = stage_slack;
            refined = true;
        }
    }
    Ok(OracleResult {
        schema: "oracle/1",
        value: signed(sense, cur_s),
        argmin: cur_x,
        grid_value: signed(sense, grid_s),
        grid_resolution: resolution,
        refined,
        feasibility_slack: cur_slack,
        evaluations,
    })
}

/// Nelder-Mead minimization from an axis-aligned simplex.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: &[f64], max_evals: usize, ftol: f64) -> Vec<f64> {
    let n = x0.len();
    if n == 0 {
        return Vec::new();
    }
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() <= ftol * (1.0 + vals[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = (0..n).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
                    vals[i] = f(&pts[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    pts.swap_remove(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_problem;

    fn run(src: &str, res: usize, slack: f64) -> OracleResult {
        let p = parse_problem(src).unwrap();
        grid_search(&p.objective, &p.constraints, &p.bounds, p.sense, res, slack).unwrap()
    }

    #[test]
    fn first_example_reference_value() {
        let r = run(
            "vars x1 x2; maximize abs(x1)*x2 - x1^2; x1^2 + x2^2 == 1; box x1 in [-1,1]; box x2 in [-1,1];",
            401,
            1e-2,
        );
        let exact = (2f64.sqrt() - 1.0) / 2.0;
        assert!((r.value - exact).abs() < 1e-3, "{r:?}");
        let s = (std::f64::consts::PI / 8.0).sin();
        let c = (std::f64::consts::PI / 8.0).cos();
        assert!((r.argmin[0].abs() - s).abs() < 1e-2 && (r.argmin[1] - c).abs() < 1e-2, "{r:?}");
        assert!(r.refined);
        assert!(r.feasibility_slack < 1e-4);
    }

    #[test]
    fn second_example_reference_value() {
        let r = run(
            "vars x1 x2; maximize x1*abs(x1 - 2*x2); x1^2 + x2^2 == 1; box x1 in [-1,1]; box x2 in [-1,1];",
            401,
            1e-2,
        );
        assert!((r.value - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-3, "{r:?}");
        assert!((r.argmin[0] - 0.8507).abs() < 1e-2 && (r.argmin[1] + 0.5257).abs() < 1e-2);
    }

    #[test]
    fn constant_objective() {
        let r = run("vars x; minimize 3; box x in [-1, 1];", 11, 1e-3);
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn infeasible_grid_is_reported() {
        let p = parse_problem("vars x; minimize x; x^2 == -1; box x in [-1, 1];").unwrap();
        assert_eq!(
            grid_search(&p.objective, &p.constraints, &p.bounds, p.sense, 11, 1e-3).unwrap_err(),
            OracleError::NoFeasiblePoint
        );
    }

    #[test]
    fn guards() {
        let p = parse_problem("vars a b c d e; minimize a; box a in [0,1]; box b in [0,1]; box c in [0,1]; box d in [0,1]; box e in [0,1];").unwrap();
        assert_eq!(
            grid_search(&p.objective, &p.constraints, &p.bounds, p.sense, 3, 1e-3).unwrap_err(),
            OracleError::TooManyVariables(5)
        );
        let q = parse_problem("vars x; minimize x;").unwrap();
        assert_eq!(
            grid_search(&q.objective, &q.constraints, &q.bounds, q.sense, 3, 1e-3).unwrap_err(),
            OracleError::UnboundedBox
        );
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let x = nelder_mead(f, &[-1.2, 1.0], &[0.1, 0.1], 20_000, 1e-16);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4, "{x:?}");
    }
}
