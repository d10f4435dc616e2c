//! Interval enclosures of expressions over an axis-aligned box.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{real_root, Expr, ExprError, ExprKind};
use crate::poly::Polynomial;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn scale(self, c: f64) -> Interval {
        let (a, b) = (self.lo * c, self.hi * c);
        Interval::new(a.min(b), a.max(b))
    }

    pub fn mul(self, o: Interval) -> Interval {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        Interval::new(
            p.iter().copied().fold(f64::INFINITY, f64::min),
            p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn powi(self, e: u32) -> Interval {
        if e == 0 {
            return Interval::point(1.0);
        }
        let (a, b) = (self.lo.powi(e as i32), self.hi.powi(e as i32));
        if e % 2 == 1 || self.lo >= 0.0 {
            Interval::new(a, b)
        } else if self.hi <= 0.0 {
            Interval::new(b, a)
        } else {
            Interval::new(0.0, a.max(b))
        }
    }

    pub fn abs(self) -> Interval {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval::new(0.0, self.mag())
        }
    }

    /// `1/self`; `Unbounded` when zero lies in the interval.
    pub fn recip(self) -> Result<Interval, ExprError> {
        if self.contains(0.0) {
            return Err(ExprError::Unbounded);
        }
        Ok(Interval::new(1.0 / self.hi, 1.0 / self.lo))
    }

    pub fn min(self, o: Interval) -> Interval {
        Interval::new(self.lo.min(o.lo), self.hi.min(o.hi))
    }

    pub fn max(self, o: Interval) -> Interval {
        Interval::new(self.lo.max(o.lo), self.hi.max(o.hi))
    }

    /// Root over the part of the interval where it is defined.
    pub fn root(self, q: u32) -> Result<Interval, ExprError> {
        if q % 2 == 0 {
            if self.hi < 0.0 {
                return Err(ExprError::EvenRootOfNegative);
            }
            Ok(Interval::new(
                real_root(self.lo.max(0.0), q)?,
                real_root(self.hi, q)?,
            ))
        } else {
            Ok(Interval::new(real_root(self.lo, q)?, real_root(self.hi, q)?))
        }
    }
}

/// Per-variable closed bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarBox {
    pub bounds: Vec<Interval>,
}

impl VarBox {
    pub fn new(bounds: Vec<Interval>) -> Self {
        VarBox { bounds }
    }

    /// `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        VarBox {
            bounds: vec![Interval::new(lo, hi); n],
        }
    }

    /// All coordinates unbounded.
    pub fn unbounded(n: usize) -> Self {
        VarBox {
            bounds: vec![
                Interval {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY
                };
                n
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.bounds.iter().all(Interval::is_finite)
    }

    /// Maps `u in [0,1]^n` affinely onto the box.
    pub fn lerp(&self, u: &[f64]) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(u)
            .map(|(b, &t)| b.lo + t * (b.hi - b.lo))
            .collect()
    }
}

pub fn poly_enclosure(p: &Polynomial, bx: &VarBox) -> Interval {
    let mut acc = Interval::point(0.0);
    for (m, c) in p.terms() {
        let mut t = Interval::point(1.0);
        for (v, &e) in m.exponents().iter().enumerate() {
            if e > 0 {
                t = t.mul(bx.bounds[v].powi(e));
            }
        }
        acc = acc.add(t.scale(c));
    }
    acc
}

impl Expr {
    /// Enclosure of the expression's values over the box, restricted to
    /// points where the expression is well defined.
    pub fn interval_eval(&self, bx: &VarBox) -> Result<Interval, ExprError> {
        if bx.dim() != self.n_vars() {
            return Err(ExprError::DimensionMismatch {
                expected: self.n_vars(),
                got: bx.dim(),
            });
        }
        if !bx.is_bounded() {
            return Err(ExprError::Unbounded);
        }
        let mut memo = HashMap::new();
        let r = enclose(self, bx, &mut memo)?;
        if r.is_finite() {
            Ok(r)
        } else {
            Err(ExprError::Unbounded)
        }
    }
}

fn enclose(e: &Expr, bx: &VarBox, memo: &mut HashMap<u64, Interval>) -> Result<Interval, ExprError> {
    if let Some(&iv) = memo.get(&e.id()) {
        return Ok(iv);
    }
    let iv = match e.kind() {
        ExprKind::Poly(p) => poly_enclosure(p, bx),
        ExprKind::Add(a, b) => enclose(a, bx, memo)?.add(enclose(b, bx, memo)?),
        ExprKind::Mul(a, b) => {
            if a.ptr_eq(b) {
                enclose(a, bx, memo)?.powi(2)
            } else {
                enclose(a, bx, memo)?.mul(enclose(b, bx, memo)?)
            }
        }
        ExprKind::Div(a, b) => enclose(a, bx, memo)?.mul(enclose(b, bx, memo)?.recip()?),
        ExprKind::Min(a, b) => enclose(a, bx, memo)?.min(enclose(b, bx, memo)?),
        ExprKind::Max(a, b) => enclose(a, bx, memo)?.max(enclose(b, bx, memo)?),
        ExprKind::Abs(a) => enclose(a, bx, memo)?.abs(),
        ExprKind::Root(a, q) => enclose(a, bx, memo)?.root(*q)?,
    };
    if !iv.is_finite() {
        return Err(ExprError::Unbounded);
    }
    memo.insert(e.id(), iv);
    Ok(iv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprPool;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn abs_over_symmetric_interval() {
        let mut pool = ExprPool::new(1);
        let x = pool.var(0);
        let a = pool.abs(&x);
        let iv = a.interval_eval(&VarBox::cube(1, -1.0, 1.0)).unwrap();
        assert_eq!(iv, Interval::new(0.0, 1.0));
    }

    #[test]
    fn reciprocal_straddling_zero_is_unbounded() {
        let mut pool = ExprPool::new(1);
        let x = pool.var(0);
        let one = pool.constant(1.0);
        let inv = pool.div(&one, &x);
        assert_eq!(
            inv.interval_eval(&VarBox::cube(1, -1.0, 1.0)),
            Err(ExprError::Unbounded)
        );
    }

    #[test]
    fn example_objective_enclosure_contains_grid_range() {
        let mut pool = ExprPool::new(2);
        let x1 = pool.var(0);
        let x2 = pool.var(1);
        let a = pool.abs(&x1);
        let p = pool.mul(&a, &x2);
        let sq = pool.mul(&x1, &x1);
        let f = pool.sub(&p, &sq);
        let bx = VarBox::cube(2, -1.0, 1.0);
        let iv = f.interval_eval(&bx).unwrap();
        // dense grid oracle for the true range on the box
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let n = 201;
        for i in 0..n {
            for j in 0..n {
                let x = [-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64];
                let v = f.eval(&x).unwrap();
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        assert!((lo + 2.0).abs() < 1e-12 && (hi - 0.25).abs() < 1e-12);
        assert!(iv.lo <= -2.0 && iv.hi >= 1.0, "{iv:?}");
    }

    #[test]
    fn enclosure_is_sound_on_random_points() {
        let mut pool = ExprPool::new(2);
        let x1 = pool.var(0);
        let x2 = pool.var(1);
        let d = pool.sub(&x1, &x2);
        let ad = pool.abs(&d);
        let r = pool.root(&ad, 3);
        let m = pool.max(&r, &x2);
        let three = pool.constant(3.0);
        let den = pool.add(&three, &x1);
        let q = pool.div(&m, &den);
        let s = pool.root(&x1, 2);
        let f = pool.add(&q, &s);
        let bx = VarBox::new(vec![Interval::new(-0.5, 2.0), Interval::new(-1.0, 1.0)]);
        let iv = f.interval_eval(&bx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            let x = bx.lerp(&u);
            if let Ok(v) = f.eval(&x) {
                assert!(iv.contains(v), "{v} not in {iv:?}");
            }
        }
    }
}
