//! Sparse multivariate polynomials over `f64` and graded monomial indexing.
//!
//! Monomials are ordered by total degree first; within one degree the
//! exponent vector that is lexicographically *larger* comes first, so for two
//! variables the degree-one block reads `[x1, x2]` and the degree-two block
//! `[x1^2, x1*x2, x2^2]`. Every moment matrix, localizing matrix and SDPA
//! export in this crate uses this order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: {left} vs {right} variables")]
    DimensionMismatch { left: usize, right: usize },
}

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(n_vars: usize) -> Self {
        Monomial(vec![0; n_vars])
    }

    /// The monomial `x_var` in `n_vars` variables.
    pub fn var(n_vars: usize, var: usize) -> Self {
        let mut e = vec![0; n_vars];
        e[var] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn n_vars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Product of two monomials (sum of exponents).
    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Indices of variables with a positive exponent.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, _)| i)
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    /// Same monomial embedded into a larger variable space (new exponents zero).
    pub fn padded(&self, n_vars: usize) -> Monomial {
        assert!(n_vars >= self.0.len());
        let mut e = self.0.clone();
        e.resize(n_vars, 0);
        Monomial(e)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `n_vars` variables of total degree at most `degree`, in
/// graded order. The length is `C(n_vars + degree, degree)`.
pub fn monomial_basis(n_vars: usize, degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut current = vec![0u32; n_vars];
        homogeneous(n_vars, d, 0, &mut current, &mut out);
    }
    out
}

// Emits degree-`remaining` monomials with lexicographically larger vectors first.
fn homogeneous(n: usize, remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if n == 0 {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(Monomial(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        homogeneous(n, remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Monomials of degree at most `degree` whose support lies in `vars`, in
/// graded order, expressed over `n_vars` variables.
pub fn monomial_basis_on(n_vars: usize, vars: &[usize], degree: u32) -> Vec<Monomial> {
    monomial_basis(vars.len(), degree)
        .into_iter()
        .map(|m| {
            let mut e = vec![0; n_vars];
            for (k, &v) in vars.iter().enumerate() {
                e[v] = m.0[k];
            }
            Monomial(e)
        })
        .collect()
}

/// Sparse polynomial: canonical map from monomial to nonzero coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    n_vars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(n_vars: usize) -> Self {
        Polynomial {
            n_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n_vars: usize, c: f64) -> Self {
        let mut p = Self::zero(n_vars);
        p.add_term(Monomial::one(n_vars), c);
        p
    }

    pub fn var(n_vars: usize, var: usize) -> Self {
        let mut p = Self::zero(n_vars);
        p.add_term(Monomial::var(n_vars, var), 1.0);
        p
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, f64)>>(n_vars: usize, terms: I) -> Self {
        let mut p = Self::zero(n_vars);
        for (m, c) in terms {
            assert_eq!(m.n_vars(), n_vars, "monomial length must match n_vars");
            p.add_term(m, c);
        }
        p
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// `Some(c)` when the polynomial is a constant (including zero).
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (m, &c) = self.terms.iter().next().unwrap();
                m.is_one().then_some(c)
            }
            _ => None,
        }
    }

    /// Variables that occur in some term.
    pub fn support(&self) -> Vec<usize> {
        let mut used = vec![false; self.n_vars];
        for m in self.terms.keys() {
            for v in m.support() {
                used[v] = true;
            }
        }
        (0..self.n_vars).filter(|&v| used[v]).collect()
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&m);
        }
    }

    fn check(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.n_vars != other.n_vars {
            return Err(PolyError::DimensionMismatch {
                left: self.n_vars,
                right: other.n_vars,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = Polynomial::zero(self.n_vars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.n_vars);
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.n_vars, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Same polynomial over `n_vars >= self.n_vars()` variables.
    pub fn padded(&self, n_vars: usize) -> Polynomial {
        if n_vars == self.n_vars {
            return self.clone();
        }
        Polynomial {
            n_vars,
            terms: self.terms.iter().map(|(m, &c)| (m.padded(n_vars), c)).collect(),
        }
    }

    /// Evaluates `sum c * point^alpha`. Panics on a length mismatch; see
    /// [`Polynomial::try_eval`] for the checked variant.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.try_eval(point).expect("point length must equal n_vars")
    }

    pub fn try_eval(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.n_vars {
            return Err(PolyError::DimensionMismatch {
                left: self.n_vars,
                right: point.len(),
            });
        }
        Ok(self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum())
    }

    /// Renders with the given variable names, e.g. `x1^2 - 4*x1*x2 + 4*x2^2`.
    /// The output parses back to the identical polynomial.
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> PolyDisplay<'a> {
        PolyDisplay { poly: self, names }
    }
}

pub struct PolyDisplay<'a> {
    poly: &'a Polynomial,
    names: &'a [String],
}

impl fmt::Display for PolyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.poly.is_zero() {
            return write!(f, "0");
        }
        // highest degree first, graded order within a degree
        let mut terms: Vec<(&Monomial, &f64)> = self.poly.terms.iter().collect();
        terms.sort_by(|a, b| b.0.degree().cmp(&a.0.degree()).then_with(|| a.0.cmp(b.0)));
        for (k, (m, &c)) in terms.into_iter().enumerate() {
            let mag = c.abs();
            if k == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut factors = Vec::new();
            if mag != 1.0 || m.is_one() {
                factors.push(format!("{mag}"));
            }
            for (v, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(self.names[v].clone()),
                    _ => factors.push(format!("{}^{}", self.names[v], e)),
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (1..=self.n_vars).map(|i| format!("x{i}")).collect();
        write!(f, "{}", self.display_with(&names))
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl std::ops::$trait<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$checked(rhs).expect("polynomial dimension mismatch")
            }
        }
        impl std::ops::$trait<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$checked(&rhs).expect("polynomial dimension mismatch")
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl std::ops::Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}
