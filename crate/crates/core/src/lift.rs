//! Lifting of semi-algebraic problems to polynomial problems.
//!
//! Each distinct non-polynomial node of the objective and constraint DAGs gets
//! one auxiliary variable `y` tied to its argument `c` (already lifted) by
//!
//! | node          | equality            | sign    |
//! |---------------|---------------------|---------|
//! | `abs(c)`      | `y^2 - c^2 = 0`     | `y >= 0`|
//! | `root(c, q)`  | `y^q - c = 0`       | `y >= 0` for even `q` |
//! | `a / b`       | `y * b - 1 = 0`     |         |
//!
//! and the node is replaced by `y` (`a * y` for a quotient). `min` and `max`
//! are rewritten as `(a + b -/+ |a - b|) / 2` and need no variable of their
//! own. The objective stays a polynomial in `(x, y)`; no epigraph variable is
//! added.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::expr::{Constraint, Expr, ExprError, ExprKind, ExprPool, Problem, Relation, Sense, VarBox};
use crate::poly::Polynomial;

pub const BALL_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("expression is not well defined on the box: {0}")]
    NotWellDefined(String),
    #[error("cannot bound the lifted variables over the box; supply a ball radius (--ball-M)")]
    EmptyBoxBound,
    #[error("ball bound must be positive, got {0}")]
    BadBallBound(f64),
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    Abs,
    Root(u32),
    Reciprocal,
}

#[derive(Debug, Clone)]
pub struct AuxVar {
    pub kind: AuxKind,
    /// Function of `x` this variable equals on the lifted set.
    pub provenance: Expr,
    pub nonneg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "from", content = "index", rename_all = "lowercase")]
pub enum Origin {
    /// Input constraint (0-based position in the constraint list).
    Constraint(usize),
    /// Defining equation of an auxiliary variable.
    Aux(usize),
}

/// Lifted problem over the variables `(x, aux)`:
/// `min/max objective` s.t. `equalities == 0`, `base_ineqs >= 0`,
/// `aux[k] >= 0` for `k in nonneg`.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    pub n: usize,
    /// Names of `x` followed by generated auxiliary names.
    pub names: Vec<String>,
    pub aux: Vec<AuxVar>,
    pub equalities: Vec<Polynomial>,
    pub equality_origin: Vec<Origin>,
    pub base_ineqs: Vec<Polynomial>,
    pub ineq_origin: Vec<usize>,
    pub nonneg: Vec<usize>,
    pub objective: Polynomial,
    /// Original (unlifted) objective.
    pub source_objective: Expr,
    /// Original constraints, normalized to `>= 0` or `== 0`.
    pub source_constraints: Vec<Constraint>,
    pub sense: Sense,
    pub ball_m: f64,
    pub bounds: VarBox,
    /// Auxiliary index sets, one per group of top-level items sharing aux variables.
    pub groups: Vec<Vec<usize>>,
}

impl LiftedProblem {
    /// Total variable count `n + |aux|`.
    pub fn n_vars(&self) -> usize {
        self.n + self.aux.len()
    }

    pub fn x_names(&self) -> &[String] {
        &self.names[..self.n]
    }

    /// Ball polynomial `M - |(x, aux)|^2`.
    pub fn ball_polynomial(&self) -> Polynomial {
        let nv = self.n_vars();
        let mut p = Polynomial::constant(nv, self.ball_m);
        for v in 0..nv {
            let xv = Polynomial::var(nv, v);
            p = &p - &(&xv * &xv);
        }
        p
    }

    /// Maximum violation of the lifted constraints at a point of `(x, aux)`.
    pub fn feasibility_residual(&self, point: &[f64]) -> f64 {
        let mut r: f64 = 0.0;
        for e in &self.equalities {
            r = r.max(e.eval(point).abs());
        }
        for g in &self.base_ineqs {
            r = r.max(-g.eval(point));
        }
        for &k in &self.nonneg {
            r = r.max(-point[self.n + k]);
        }
        r
    }

    /// Minimization form of the objective (negated for `maximize`).
    pub fn min_objective(&self) -> Polynomial {
        match self.sense {
            Sense::Minimize => self.objective.clone(),
            Sense::Maximize => -&self.objective,
        }
    }

    pub fn dump(&self) -> LiftedDump {
        let terms = |p: &Polynomial| -> std::collections::BTreeMap<String, f64> {
            p.terms()
                .map(|(m, c)| {
                    let key = m.exponents().iter().map(u32::to_string).collect::<Vec<_>>().join(",");
                    (key, c)
                })
                .collect()
        };
        LiftedDump {
            schema: "liftedproblem/1",
            variables: self.names.clone(),
            n_original: self.n,
            sense: self.sense,
            objective: terms(&self.objective),
            objective_text: self.objective.display_with(&self.names).to_string(),
            equalities: self
                .equalities
                .iter()
                .zip(&self.equality_origin)
                .map(|(p, o)| DumpedPoly {
                    terms: terms(p),
                    text: p.display_with(&self.names).to_string(),
                    origin: *o,
                })
                .collect(),
            inequalities: self
                .base_ineqs
                .iter()
                .zip(&self.ineq_origin)
                .map(|(p, &o)| DumpedPoly {
                    terms: terms(p),
                    text: p.display_with(&self.names).to_string(),
                    origin: Origin::Constraint(o),
                })
                .collect(),
            nonneg: self.nonneg.iter().map(|k| self.n + k).collect(),
            provenance: self
                .aux
                .iter()
                .enumerate()
                .map(|(k, a)| DumpedAux {
                    variable: self.names[self.n + k].clone(),
                    kind: a.kind,
                    expr: a.provenance.display_with(self.x_names()).to_string(),
                })
                .collect(),
            groups: self
                .groups
                .iter()
                .map(|g| g.iter().map(|k| self.n + k).collect())
                .collect(),
            ball_m: self.ball_m,
        }
    }
}

/// Serializable summary of a [`LiftedProblem`]. Polynomials are maps from
/// comma-joined exponent vectors to coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct LiftedDump {
    pub schema: &'static str,
    pub variables: Vec<String>,
    pub n_original: usize,
    pub sense: Sense,
    pub objective: std::collections::BTreeMap<String, f64>,
    pub objective_text: String,
    pub equalities: Vec<DumpedPoly>,
    pub inequalities: Vec<DumpedPoly>,
    /// Variable indices (into `variables`) constrained to be nonnegative.
    pub nonneg: Vec<usize>,
    pub provenance: Vec<DumpedAux>,
    pub groups: Vec<Vec<usize>>,
    #[serde(rename = "ball_M")]
    pub ball_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpedPoly {
    pub terms: std::collections::BTreeMap<String, f64>,
    pub text: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpedAux {
    pub variable: String,
    pub kind: AuxKind,
    pub expr: String,
}

/// Incremental lifting state shared by all items of one problem.
pub struct Lifter<'a> {
    pool: &'a mut ExprPool,
    bounds: &'a VarBox,
    n: usize,
    aux: Vec<AuxVar>,
    aux_eqs: Vec<Polynomial>,
    memo: HashMap<u64, (Polynomial, BTreeSet<usize>)>,
}

impl<'a> Lifter<'a> {
    pub fn new(pool: &'a mut ExprPool, bounds: &'a VarBox) -> Self {
        let n = pool.n_vars();
        Lifter {
            pool,
            bounds,
            n,
            aux: Vec::new(),
            aux_eqs: Vec::new(),
            memo: HashMap::new(),
        }
    }

    fn total(&self) -> usize {
        self.n + self.aux.len()
    }

    pub fn aux(&self) -> &[AuxVar] {
        &self.aux
    }

    fn new_aux(&mut self, kind: AuxKind, provenance: Expr, nonneg: bool) -> (usize, Polynomial) {
        let k = self.aux.len();
        self.aux.push(AuxVar { kind, provenance, nonneg });
        // placeholder, replaced by the caller once the variable exists
        self.aux_eqs.push(Polynomial::zero(0));
        let nv = self.total();
        (k, Polynomial::var(nv, self.n + k))
    }

    /// Lifts `e`, returning its representation as a polynomial in `(x, aux)`
    /// and the auxiliary indices that representation depends on.
    pub fn lift_node(&mut self, e: &Expr) -> Result<(Polynomial, BTreeSet<usize>), LiftError> {
        if let Some((p, d)) = self.memo.get(&e.id()) {
            return Ok((p.padded(self.total()), d.clone()));
        }
        let (p, deps) = match e.kind() {
            ExprKind::Poly(p) => (p.padded(self.total()), BTreeSet::new()),
            ExprKind::Add(a, b) | ExprKind::Mul(a, b) => {
                let is_add = matches!(e.kind(), ExprKind::Add(..));
                let (pa, mut da) = self.lift_node(a)?;
                let (pb, db) = self.lift_node(b)?;
                let nv = self.total();
                let (pa, pb) = (pa.padded(nv), pb.padded(nv));
                da.extend(db);
                (if is_add { &pa + &pb } else { &pa * &pb }, da)
            }
            ExprKind::Div(a, b) => {
                match b.interval_eval(self.bounds) {
                    Ok(iv) if !iv.contains(0.0) => {}
                    Ok(iv) => {
                        return Err(LiftError::NotWellDefined(format!(
                            "denominator range [{}, {}] contains zero",
                            iv.lo, iv.hi
                        )))
                    }
                    Err(err) => {
                        return Err(LiftError::NotWellDefined(format!(
                            "cannot certify a nonvanishing denominator: {err}"
                        )))
                    }
                }
                let one = self.pool.constant(1.0);
                let recip = self.pool.div(&one, b);
                let (r, mut deps) = match self.memo.get(&recip.id()) {
                    Some((r, d)) => (r.clone(), d.clone()),
                    None => {
                        let (pb, mut db) = self.lift_node(b)?;
                        let (k, y) = self.new_aux(AuxKind::Reciprocal, recip.clone(), false);
                        let nv = self.total();
                        self.aux_eqs[k] = &(&y * &pb.padded(nv)) - &Polynomial::constant(nv, 1.0);
                        db.insert(k);
                        self.memo.insert(recip.id(), (y.clone(), db.clone()));
                        (y, db)
                    }
                };
                let (pa, da) = self.lift_node(a)?;
                let nv = self.total();
                deps.extend(da);
                (&pa.padded(nv) * &r.padded(nv), deps)
            }
            ExprKind::Abs(c) => {
                let (pc, mut dc) = self.lift_node(c)?;
                let (k, y) = self.new_aux(AuxKind::Abs, e.clone(), true);
                let nv = self.total();
                let pc = pc.padded(nv);
                self.aux_eqs[k] = &(&y * &y) - &(&pc * &pc);
                dc.insert(k);
                (y, dc)
            }
            ExprKind::Root(c, q) => {
                if *q % 2 == 0 {
                    if let Ok(iv) = c.interval_eval(self.bounds) {
                        if iv.hi < 0.0 {
                            return Err(LiftError::NotWellDefined(format!(
                                "even root of an argument with range [{}, {}]",
                                iv.lo, iv.hi
                            )));
                        }
                    }
                }
                let (pc, mut dc) = self.lift_node(c)?;
                let (k, y) = self.new_aux(AuxKind::Root(*q), e.clone(), *q % 2 == 0);
                let nv = self.total();
                self.aux_eqs[k] = &y.pow(*q) - &pc.padded(nv);
                dc.insert(k);
                (y, dc)
            }
            ExprKind::Min(a, b) | ExprKind::Max(a, b) => {
                let sign = if matches!(e.kind(), ExprKind::Min(..)) { -1.0 } else { 1.0 };
                let d = self.pool.sub(a, b);
                let ad = self.pool.abs(&d);
                let (pa, mut da) = self.lift_node(a)?;
                let (pb, db) = self.lift_node(b)?;
                let (pd, dd) = self.lift_node(&ad)?;
                let nv = self.total();
                da.extend(db);
                da.extend(dd);
                let sum = &pa.padded(nv) + &pb.padded(nv);
                ((&sum + &pd.padded(nv).scale(sign)).scale(0.5), da)
            }
        };
        self.memo.insert(e.id(), (p.clone(), deps.clone()));
        Ok((p, deps))
    }
}

/// Lifts a parsed problem. `ball_m` overrides the computed ball bound.
pub fn build_problem(problem: &mut Problem, ball_m: Option<f64>) -> Result<LiftedProblem, LiftError> {
    let names = problem.names.clone();
    build_problem_parts(
        &mut problem.pool,
        &names,
        problem.sense,
        &problem.objective,
        &problem.constraints,
        &problem.bounds,
        ball_m,
    )
}

pub fn build_problem_parts(
    pool: &mut ExprPool,
    names: &[String],
    sense: Sense,
    objective: &Expr,
    constraints: &[Constraint],
    bounds: &VarBox,
    ball_m: Option<f64>,
) -> Result<LiftedProblem, LiftError> {
    let n = pool.n_vars();
    if bounds.dim() != n || names.len() != n {
        return Err(LiftError::DimensionMismatch { expected: n, got: bounds.dim() });
    }
    // h <= 0 is stored as -h >= 0
    let normalized: Vec<Constraint> = constraints
        .iter()
        .map(|c| match c.relation {
            Relation::Le => Constraint { expr: pool.neg(&c.expr), relation: Relation::Ge },
            _ => c.clone(),
        })
        .collect();

    let mut lifter = Lifter::new(pool, bounds);
    let mut item_deps: Vec<BTreeSet<usize>> = Vec::new();
    let (obj, deps) = lifter.lift_node(objective)?;
    item_deps.push(deps);
    let mut lifted_cons = Vec::new();
    for c in &normalized {
        let (p, deps) = lifter.lift_node(&c.expr)?;
        item_deps.push(deps);
        lifted_cons.push(p);
    }
    let aux = lifter.aux.clone();
    let aux_eqs = lifter.aux_eqs.clone();
    let nv = n + aux.len();

    let mut equalities = Vec::new();
    let mut equality_origin = Vec::new();
    let mut base_ineqs = Vec::new();
    let mut ineq_origin = Vec::new();
    for (j, (c, p)) in normalized.iter().zip(&lifted_cons).enumerate() {
        let p = p.padded(nv);
        if p.is_zero() {
            continue;
        }
        match c.relation {
            Relation::Eq => {
                equalities.push(p);
                equality_origin.push(Origin::Constraint(j));
            }
            _ => {
                base_ineqs.push(p);
                ineq_origin.push(j);
            }
        }
    }
    for (k, e) in aux_eqs.iter().enumerate() {
        equalities.push(e.padded(nv));
        equality_origin.push(Origin::Aux(k));
    }
    let nonneg: Vec<usize> = aux.iter().enumerate().filter(|(_, a)| a.nonneg).map(|(k, _)| k).collect();

    let mut aux_names = Vec::new();
    for k in 0..aux.len() {
        let mut name = format!("y{}", k + 1);
        while names.contains(&name) {
            name = format!("_{name}");
        }
        aux_names.push(name);
    }

    let mut lp = LiftedProblem {
        n,
        names: names.iter().cloned().chain(aux_names).collect(),
        aux,
        equalities,
        equality_origin,
        base_ineqs,
        ineq_origin,
        nonneg,
        objective: obj.padded(nv),
        source_objective: objective.clone(),
        source_constraints: normalized,
        sense,
        ball_m: 0.0,
        bounds: bounds.clone(),
        groups: merge_groups(&item_deps),
    };
    lp.ball_m = match ball_m {
        Some(m) if m > 0.0 => m,
        Some(m) => return Err(LiftError::BadBallBound(m)),
        None => compute_ball_bound(&lp, bounds)?,
    };
    Ok(lp)
}

// Items sharing an auxiliary variable end up in the same group, so distinct
// groups only meet in x.
fn merge_groups(items: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    let mut groups: Vec<BTreeSet<usize>> = Vec::new();
    for deps in items.iter().filter(|d| !d.is_empty()) {
        let mut merged = deps.clone();
        let mut rest = Vec::new();
        let mut first_hit: Option<usize> = None;
        for (gi, g) in groups.into_iter().enumerate() {
            if g.intersection(deps).next().is_some() {
                first_hit.get_or_insert(gi);
                merged.extend(g);
            } else {
                rest.push(g);
            }
        }
        let pos = first_hit.unwrap_or(rest.len()).min(rest.len());
        rest.insert(pos, merged);
        groups = rest;
    }
    groups.into_iter().map(|g| g.into_iter().collect()).collect()
}

/// `(1 + margin) * (sum_i max(lo_i^2, hi_i^2) + sum_k sup |v_k|^2)` over the box.
pub fn compute_ball_bound(lp: &LiftedProblem, bounds: &VarBox) -> Result<f64, LiftError> {
    if !bounds.is_bounded() {
        return Err(LiftError::EmptyBoxBound);
    }
    let mut total: f64 = bounds.bounds.iter().map(|b| b.lo.powi(2).max(b.hi.powi(2))).sum();
    for a in &lp.aux {
        let iv = a.provenance.interval_eval(bounds).map_err(|_| LiftError::EmptyBoxBound)?;
        total += iv.mag().powi(2);
    }
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 + BALL_MARGIN) * total)
}

/// `(x, v(x))`: the original point followed by every provenance function.
pub fn eval_lifting(lp: &LiftedProblem, x: &[f64]) -> Result<Vec<f64>, LiftError> {
    if x.len() != lp.n {
        return Err(LiftError::DimensionMismatch { expected: lp.n, got: x.len() });
    }
    let mut out = x.to_vec();
    for (k, a) in lp.aux.iter().enumerate() {
        let v = a.provenance.eval(x).map_err(|e: ExprError| {
            LiftError::NotWellDefined(format!("auxiliary {} at {x:?}: {e}", lp.names[lp.n + k]))
        })?;
        out.push(v);
    }
    Ok(out)
}
