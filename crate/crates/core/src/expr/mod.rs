//! Expressions over the algebra generated by polynomials under
//! `+ * / min max abs root`.
//!
//! Nodes are hash-consed through an [`ExprPool`]: building the same node twice
//! returns the same shared node, so a lifted problem introduces exactly one
//! auxiliary variable per distinct non-polynomial subexpression. Polynomial
//! subtrees are folded eagerly into a single [`ExprKind::Poly`] leaf.

mod interval;
mod parse;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::poly::Polynomial;

pub use interval::{Interval, VarBox};
pub use parse::{parse_expr, parse_problem, Constraint, Problem, Relation, Sense};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown identifier `{name}` at line {line}, column {col}")]
    UnknownIdentifier { name: String, line: usize, col: usize },
    #[error("root index must be at least 1 (line {line}, column {col})")]
    BadRootIndex { line: usize, col: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("even root of a negative number")]
    EvenRootOfNegative,
    #[error("dimension mismatch: expression has {expected} variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("interval enclosure is unbounded")]
    Unbounded,
}

#[derive(Debug)]
pub enum ExprKind {
    Poly(Polynomial),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Min(Expr, Expr),
    Max(Expr, Expr),
    Abs(Expr),
    Root(Expr, u32),
}

#[derive(Debug)]
pub struct Node {
    id: u64,
    n_vars: usize,
    kind: ExprKind,
}

/// Shared handle to a hash-consed expression node.
#[derive(Debug, Clone)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }

    pub fn n_vars(&self) -> usize {
        self.0.n_vars
    }

    /// Identifier unique within the pool that built this node.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn as_poly(&self) -> Option<&Polynomial> {
        match &self.0.kind {
            ExprKind::Poly(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_poly(&self) -> bool {
        self.as_poly().is_some()
    }

    /// Evaluates with `max`/`min` for the lattice operations and real roots
    /// (sign-preserving for odd index, principal for even index).
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        if x.len() != self.n_vars() {
            return Err(ExprError::DimensionMismatch {
                expected: self.n_vars(),
                got: x.len(),
            });
        }
        self.eval_unchecked(x)
    }

    fn eval_unchecked(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(match self.kind() {
            ExprKind::Poly(p) => p.eval(x),
            ExprKind::Add(a, b) => a.eval_unchecked(x)? + b.eval_unchecked(x)?,
            ExprKind::Mul(a, b) => a.eval_unchecked(x)? * b.eval_unchecked(x)?,
            ExprKind::Div(a, b) => {
                let den = b.eval_unchecked(x)?;
                if den == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                a.eval_unchecked(x)? / den
            }
            ExprKind::Min(a, b) => a.eval_unchecked(x)?.min(b.eval_unchecked(x)?),
            ExprKind::Max(a, b) => a.eval_unchecked(x)?.max(b.eval_unchecked(x)?),
            ExprKind::Abs(a) => a.eval_unchecked(x)?.abs(),
            ExprKind::Root(a, q) => real_root(a.eval_unchecked(x)?, *q)?,
        })
    }

    /// Structural equality, independent of which pool built the nodes.
    pub fn structurally_eq(&self, other: &Expr) -> bool {
        if self.ptr_eq(other) {
            return true;
        }
        match (self.kind(), other.kind()) {
            (ExprKind::Poly(p), ExprKind::Poly(q)) => p == q,
            (ExprKind::Add(a, b), ExprKind::Add(c, d))
            | (ExprKind::Mul(a, b), ExprKind::Mul(c, d))
            | (ExprKind::Div(a, b), ExprKind::Div(c, d))
            | (ExprKind::Min(a, b), ExprKind::Min(c, d))
            | (ExprKind::Max(a, b), ExprKind::Max(c, d)) => {
                a.structurally_eq(c) && b.structurally_eq(d)
            }
            (ExprKind::Abs(a), ExprKind::Abs(b)) => a.structurally_eq(b),
            (ExprKind::Root(a, p), ExprKind::Root(b, q)) => p == q && a.structurally_eq(b),
            _ => false,
        }
    }

    /// Number of distinct nodes reachable from this one.
    pub fn dag_size(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.id()) {
                continue;
            }
            stack.extend(e.children().into_iter().cloned());
        }
        seen.len()
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.kind() {
            ExprKind::Poly(_) => vec![],
            ExprKind::Add(a, b)
            | ExprKind::Mul(a, b)
            | ExprKind::Div(a, b)
            | ExprKind::Min(a, b)
            | ExprKind::Max(a, b) => vec![a, b],
            ExprKind::Abs(a) | ExprKind::Root(a, _) => vec![a],
        }
    }

    /// DSL text that parses back to a structurally equal expression.
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }
}

pub(crate) fn real_root(v: f64, q: u32) -> Result<f64, ExprError> {
    if q == 1 {
        return Ok(v);
    }
    if q % 2 == 0 {
        if v < 0.0 {
            return Err(ExprError::EvenRootOfNegative);
        }
        if q == 2 {
            return Ok(v.sqrt());
        }
        Ok(v.powf(1.0 / q as f64))
    } else if q == 3 {
        Ok(v.cbrt())
    } else {
        Ok(v.signum() * v.abs().powf(1.0 / q as f64))
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl<'a> fmt::Display for ExprDisplay<'a> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.names;
        let sub = |e: &'a Expr| ExprDisplay { expr: e, names: n };
        match self.expr.kind() {
            ExprKind::Poly(p) => write!(f, "({})", p.display_with(n)),
            ExprKind::Add(a, b) => write!(f, "({} + {})", sub(a), sub(b)),
            ExprKind::Mul(a, b) => write!(f, "({} * {})", sub(a), sub(b)),
            ExprKind::Div(a, b) => write!(f, "({} / {})", sub(a), sub(b)),
            ExprKind::Min(a, b) => write!(f, "min({}, {})", sub(a), sub(b)),
            ExprKind::Max(a, b) => write!(f, "max({}, {})", sub(a), sub(b)),
            ExprKind::Abs(a) => write!(f, "abs({})", sub(a)),
            ExprKind::Root(a, q) => write!(f, "root({}, {})", sub(a), q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum NodeKey {
    // canonical term list: (exponents, coefficient bits)
    Poly(Vec<(Vec<u32>, u64)>),
    Add(u64, u64),
    Mul(u64, u64),
    Div(u64, u64),
    Min(u64, u64),
    Max(u64, u64),
    Abs(u64),
    Root(u64, u32),
}

/// Hash-consing constructor for expressions over a fixed variable count.
#[derive(Debug)]
pub struct ExprPool {
    n_vars: usize,
    nodes: HashMap<NodeKey, Expr>,
    next_id: u64,
}

impl ExprPool {
    pub fn new(n_vars: usize) -> Self {
        ExprPool {
            n_vars,
            nodes: HashMap::new(),
            next_id: 0,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Number of distinct nodes created so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn intern(&mut self, key: NodeKey, kind: ExprKind) -> Expr {
        if let Some(e) = self.nodes.get(&key) {
            return e.clone();
        }
        let e = Expr(Arc::new(Node {
            id: self.next_id,
            n_vars: self.n_vars,
            kind,
        }));
        self.next_id += 1;
        self.nodes.insert(key, e.clone());
        e
    }

    pub fn poly(&mut self, p: Polynomial) -> Expr {
        assert_eq!(p.n_vars(), self.n_vars, "polynomial dimension must match pool");
        let key = NodeKey::Poly(
            p.terms()
                .map(|(m, c)| (m.exponents().to_vec(), c.to_bits()))
                .collect(),
        );
        self.intern(key, ExprKind::Poly(p))
    }

    pub fn constant(&mut self, c: f64) -> Expr {
        let p = Polynomial::constant(self.n_vars, c);
        self.poly(p)
    }

    pub fn var(&mut self, i: usize) -> Expr {
        let p = Polynomial::var(self.n_vars, i);
        self.poly(p)
    }

    pub fn add(&mut self, a: &Expr, b: &Expr) -> Expr {
        if let (Some(p), Some(q)) = (a.as_poly(), b.as_poly()) {
            let s = p + q;
            return self.poly(s);
        }
        self.intern(
            NodeKey::Add(a.id(), b.id()),
            ExprKind::Add(a.clone(), b.clone()),
        )
    }

    pub fn neg(&mut self, a: &Expr) -> Expr {
        if let Some(p) = a.as_poly() {
            let n = -p;
            return self.poly(n);
        }
        let m1 = self.constant(-1.0);
        self.mul(&m1, a)
    }

    pub fn sub(&mut self, a: &Expr, b: &Expr) -> Expr {
        let nb = self.neg(b);
        self.add(a, &nb)
    }

    pub fn mul(&mut self, a: &Expr, b: &Expr) -> Expr {
        if let (Some(p), Some(q)) = (a.as_poly(), b.as_poly()) {
            let s = p * q;
            return self.poly(s);
        }
        self.intern(
            NodeKey::Mul(a.id(), b.id()),
            ExprKind::Mul(a.clone(), b.clone()),
        )
    }

    /// Polynomial divided by a nonzero constant folds into a polynomial.
    pub fn div(&mut self, a: &Expr, b: &Expr) -> Expr {
        if let (Some(p), Some(c)) = (a.as_poly(), b.as_poly().and_then(Polynomial::as_constant)) {
            if c != 0.0 {
                let s = p.scale(1.0 / c);
                return self.poly(s);
            }
        }
        self.intern(
            NodeKey::Div(a.id(), b.id()),
            ExprKind::Div(a.clone(), b.clone()),
        )
    }

    pub fn min(&mut self, a: &Expr, b: &Expr) -> Expr {
        self.intern(
            NodeKey::Min(a.id(), b.id()),
            ExprKind::Min(a.clone(), b.clone()),
        )
    }

    pub fn max(&mut self, a: &Expr, b: &Expr) -> Expr {
        self.intern(
            NodeKey::Max(a.id(), b.id()),
            ExprKind::Max(a.clone(), b.clone()),
        )
    }

    pub fn abs(&mut self, a: &Expr) -> Expr {
        self.intern(NodeKey::Abs(a.id()), ExprKind::Abs(a.clone()))
    }

    /// Real `q`-th root; `q == 1` is the identity. Panics on `q == 0`.
    pub fn root(&mut self, a: &Expr, q: u32) -> Expr {
        assert!(q >= 1, "root index must be positive");
        if q == 1 {
            return a.clone();
        }
        self.intern(NodeKey::Root(a.id(), q), ExprKind::Root(a.clone(), q))
    }

    /// `a^k` as a balanced product chain; polynomials fold directly.
    pub fn pow(&mut self, a: &Expr, k: u32) -> Expr {
        if let Some(p) = a.as_poly() {
            let s = p.pow(k);
            return self.poly(s);
        }
        match k {
            0 => self.constant(1.0),
            1 => a.clone(),
            _ => {
                let half = self.pow(a, k / 2);
                let sq = self.mul(&half, &half);
                if k % 2 == 1 {
                    self.mul(&sq, a)
                } else {
                    sq
                }
            }
        }
    }
}
