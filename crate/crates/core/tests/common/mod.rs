#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use semialg::expr::{parse_problem, Expr, ExprKind, ExprPool, Problem};
use semialg::lift::{build_problem, LiftedProblem};

pub const EX1: &str = "abs1.sa";
pub const EX2: &str = "abs2.sa";
pub const TWO_ABS: &str = "two_abs.sa";
pub const RATIO: &str = "ratio.sa";
pub const ALL: [&str; 4] = [EX1, EX2, TWO_ABS, RATIO];

pub fn source(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name);
    std::fs::read_to_string(path).unwrap()
}

pub fn problem(name: &str) -> Problem {
    parse_problem(&source(name)).unwrap()
}

pub fn lifted(name: &str) -> LiftedProblem {
    build_problem(&mut problem(name), None).unwrap()
}

pub fn lifted_text(text: &str) -> LiftedProblem {
    build_problem(&mut parse_problem(text).unwrap(), None).unwrap()
}

/// Feasible points of the named problem, independent of the lifting.
pub fn feasible_points(name: &str, rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| match name {
            EX1 | EX2 => {
                let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                vec![t.cos(), t.sin()]
            }
            TWO_ABS => (0..2)
                .map(|_| {
                    let m: f64 = rng.gen_range(0.5..=1.0);
                    if rng.gen_bool(0.5) { m } else { -m }
                })
                .collect(),
            RATIO => vec![rng.gen_range(0.0..=2.0)],
            _ => panic!("no sampler for {name}"),
        })
        .collect()
}

/// Random well-defined expression over `[-1, 1]^n`. Quotients divide by
/// `c + |b|` with `c > 0`; even roots take an absolute value first.
pub fn random_expr(rng: &mut ChaCha8Rng, pool: &mut ExprPool, depth: u32) -> Expr {
    let n = pool.n_vars();
    if depth == 0 || rng.gen_bool(0.15) {
        return if rng.gen_bool(0.7) {
            pool.var(rng.gen_range(0..n))
        } else {
            pool.constant((rng.gen_range(-8i32..=8) as f64) / 4.0)
        };
    }
    let kind = rng.gen_range(0..9);
    let sub = |rng: &mut ChaCha8Rng, pool: &mut ExprPool| random_expr(rng, pool, depth - 1);
    match kind {
        0 => {
            let (a, b) = (sub(rng, pool), sub(rng, pool));
            pool.add(&a, &b)
        }
        1 => {
            let (a, b) = (sub(rng, pool), sub(rng, pool));
            pool.sub(&a, &b)
        }
        2 => {
            let (a, b) = (sub(rng, pool), sub(rng, pool));
            pool.mul(&a, &b)
        }
        3 => {
            let (a, b) = (sub(rng, pool), sub(rng, pool));
            let c = pool.constant(rng.gen_range(1..=4) as f64 / 2.0);
            let m = pool.abs(&b);
            let den = pool.add(&c, &m);
            pool.div(&a, &den)
        }
        4 => {
            let (a, b) = (sub(rng, pool), sub(rng, pool));
            pool.min(&a, &b)
        }
        5 => {
            let (a, b) = (sub(rng, pool), sub(rng, pool));
            pool.max(&a, &b)
        }
        6 => {
            let a = sub(rng, pool);
            pool.abs(&a)
        }
        7 => {
            let a = sub(rng, pool);
            if rng.gen_bool(0.5) {
                pool.root(&a, 3)
            } else {
                let q = if rng.gen_bool(0.5) { 2 } else { 4 };
                let m = pool.abs(&a);
                pool.root(&m, q)
            }
        }
        _ => {
            let a = sub(rng, pool);
            pool.pow(&a, rng.gen_range(2..=3))
        }
    }
}

/// Node kinds reachable from `e`, as indices 0..8 in declaration order.
pub fn kinds(e: &Expr, seen: &mut [bool; 8]) {
    let k = match e.kind() {
        ExprKind::Poly(_) => 0,
        ExprKind::Add(..) => 1,
        ExprKind::Mul(..) => 2,
        ExprKind::Div(..) => 3,
        ExprKind::Min(..) => 4,
        ExprKind::Max(..) => 5,
        ExprKind::Abs(_) => 6,
        ExprKind::Root(..) => 7,
    };
    seen[k] = true;
    for c in e.children() {
        kinds(c, seen);
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Minimization-form value of `v` for the problem's sense.
pub fn min_form(lp: &LiftedProblem, v: f64) -> f64 {
    match lp.sense {
        semialg::expr::Sense::Minimize => v,
        semialg::expr::Sense::Maximize => -v,
    }
}

fn coef(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    rng.gen_range(lo..=hi) as f64 / 4.0
}

/// Random `.sa` problem over one or two variables with a compact feasible
/// set described by explicit constraints.
pub fn random_problem(rng: &mut ChaCha8Rng) -> String {
    let two = rng.gen_bool(0.7);
    let (vars, boxes) = if two {
        ("x1 x2", "box x1 in [-1, 1]; box x2 in [-1, 1];")
    } else {
        ("x1", "box x1 in [-1, 1];")
    };
    let lin = |rng: &mut ChaCha8Rng| {
        if two {
            format!("{} + {}*x1 + {}*x2", coef(rng, -4, 4), coef(rng, -8, 8), coef(rng, -8, 8))
        } else {
            format!("{} + {}*x1", coef(rng, -4, 4), coef(rng, -8, 8))
        }
    };
    let quad = |rng: &mut ChaCha8Rng| {
        if two {
            format!("{}*x1^2 + {}*x1*x2 + {}*x2^2 + {}*x1 + {}*x2", coef(rng, 0, 8), coef(rng, -4, 4), coef(rng, 0, 8), coef(rng, -8, 8), coef(rng, -8, 8))
        } else {
            format!("{}*x1^2 + {}*x1^3 + {}*x1", coef(rng, 0, 8), coef(rng, -4, 4), coef(rng, -8, 8))
        }
    };
    let nonsmooth = match rng.gen_range(0..4) {
        0 => format!("{}*abs({})", coef(rng, 1, 8), lin(rng)),
        1 => format!("max({}, {})", lin(rng), lin(rng)),
        2 => format!("min({}, {})", lin(rng), lin(rng)),
        _ => format!("{}*abs({})", coef(rng, -8, -1), lin(rng)),
    };
    let sense = if rng.gen_bool(0.5) { "minimize" } else { "maximize" };
    let objective = if sense == "minimize" {
        format!("({}) + {}", quad(rng), nonsmooth)
    } else {
        format!("-({}) + {}", quad(rng), nonsmooth)
    };
    let region = if two {
        match rng.gen_range(0..3) {
            0 => "1 - x1^2 - x2^2 >= 0;",
            1 => "1 - x1^2 >= 0; 1 - x2^2 >= 0;",
            _ => "x1^2 + x2^2 == 1;",
        }
    } else {
        "1 - x1^2 >= 0;"
    };
    format!("vars {vars}; {sense} {objective}; {region} {boxes}").replace("+ -", "- ")
}
