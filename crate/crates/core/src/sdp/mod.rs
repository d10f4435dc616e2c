//! Dense primal-dual interior-point solver for moment relaxations, plus SDPA
//! sparse-format export and import ([`sdpa`]).
//!
//! The relaxation is treated as the problem
//!
//! ```text
//! min c.w   s.t.  S_b = sum_k w_k A_{b,k} >= 0 (every block b),   E w = f
//! ```
//!
//! with dual `max f.lambda` s.t. `sum_b <A_{b,k}, X_b> + (E^T lambda)_k = c_k`,
//! `X_b >= 0`. The iteration uses the HKM search direction with a Mehrotra
//! predictor-corrector from the infeasible start `X = S = xi I`, `w = 0`.
//! Equality rows are first reduced to an orthonormal basis of their row space.

pub mod sdpa;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};
use serde::Serialize;
use thiserror::Error;

use crate::moment::LmiRelaxation;

pub use sdpa::{export_sdpa, import_sdpa, SdpaError};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_MAX_PSD_SIZE: usize = 200;
pub const MAX_MOMENTS: usize = 5000;
pub const PSD_SIZE_ENV: &str = "SEMIALG_MAX_PSD_SIZE";

const STEP_FRACTION: f64 = 0.95;
const INITIAL_SCALE: f64 = 10.0;
const REFINE_STEPS: usize = 2;
const FACE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("tolerance must lie in (0, 1e-2], got {0}")]
    BadTolerance(f64),
    #[error("relaxation too large: total PSD size {psd} and {moments} moments (limits {max_psd} and {max_moments}); raise {env} or export to SDPA")]
    TooLarge {
        psd: usize,
        moments: usize,
        max_psd: usize,
        max_moments: usize,
        env: &'static str,
    },
    #[error("malformed relaxation: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SdpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    NumericalTrouble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// Moment side: block and equality-row infeasibility (relative).
    pub primal: f64,
    /// Multiplier side: `c - A(X) - E^T lambda` (relative).
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub w: Vec<f64>,
    /// Relaxation value in the problem's own sense.
    pub objective: f64,
    /// Dual value in the problem's own sense.
    pub dual_objective: f64,
    /// One multiplier matrix per pencil, in block order.
    pub dual_blocks: Vec<DMatrix<f64>>,
    /// One multiplier per equality row of the relaxation.
    pub eq_duals: Vec<f64>,
    pub status: SdpStatus,
    pub iterations: usize,
    pub residuals: Residuals,
}

/// Limit on the total PSD size, from the environment or the default.
pub fn max_psd_size() -> usize {
    std::env::var(PSD_SIZE_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_PSD_SIZE)
}

// Coefficient matrix A_{b,k}: sparse (row, col, value) list with both
// triangles, or dense after facial reduction.
enum Term {
    Sparse(Vec<(usize, usize, f64)>),
    Dense(DMatrix<f64>),
}

impl Term {
    fn dot(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            Term::Sparse(e) => e.iter().map(|&(p, q, a)| a * x[(p, q)]).sum(),
            Term::Dense(a) => a.dot(x),
        }
    }

    fn to_dense(&self, n: usize) -> DMatrix<f64> {
        match self {
            Term::Sparse(e) => {
                let mut m = DMatrix::zeros(n, n);
                for &(p, q, a) in e {
                    m[(p, q)] += a;
                }
                m
            }
            Term::Dense(a) => a.clone(),
        }
    }
}

struct Block {
    size: usize,
    terms: Vec<(usize, Term)>,
    /// Columns spanning the face the block was restricted to (original size x size).
    face: Option<DMatrix<f64>>,
}

impl Block {
    fn adjoint(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for (k, term) in &self.terms {
            let wk = w[*k];
            if wk == 0.0 {
                continue;
            }
            match term {
                Term::Sparse(e) => {
                    for &(p, q, a) in e {
                        m[(p, q)] += a * wk;
                    }
                }
                Term::Dense(a) => m += a * wk,
            }
        }
        m
    }

    fn apply(&self, x: &DMatrix<f64>, out: &mut DVector<f64>) {
        for (k, term) in &self.terms {
            out[*k] += term.dot(x);
        }
    }

    // Adds <A_k, X A_l S^-1> to h (upper triangle).
    fn add_schur(&self, x: &DMatrix<f64>, sinv: &DMatrix<f64>, h: &mut DMatrix<f64>) {
        let n = self.size;
        for (k, tk) in &self.terms {
            let p = match tk {
                Term::Sparse(e) => {
                    let mut p = DMatrix::<f64>::zeros(n, n);
                    for &(pp, qq, a) in e {
                        p.ger(a, &x.column(pp), &sinv.row(qq).transpose(), 1.0);
                    }
                    p
                }
                Term::Dense(a) => x * a * sinv,
            };
            for (l, tl) in &self.terms {
                if l >= k {
                    h[(*k, *l)] += tl.dot(&p);
                }
            }
        }
    }

    fn expand(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.face {
            Some(q) => q * x * q.transpose(),
            None => x.clone(),
        }
    }

    // Restricts the block to the orthogonal complement of the common kernel of
    // A(d) over the given directions.
    fn reduce(self, dirs: &[DVector<f64>]) -> Block {
        let n = self.size;
        if n == 0 {
            return self;
        }
        let mut g = DMatrix::<f64>::zeros(n, n);
        for d in dirs {
            let a = self.adjoint(d);
            g += &a * &a;
        }
        let eig = SymmetricEigen::new(g);
        let gmax = eig.eigenvalues.amax();
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > FACE_TOL * gmax).collect();
        if keep.len() == n {
            return self;
        }
        let q = DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
        let terms = self
            .terms
            .iter()
            .map(|(k, t)| (*k, Term::Dense(q.transpose() * t.to_dense(n) * &q)))
            .collect();
        Block {
            size: keep.len(),
            terms,
            face: Some(q),
        }
    }
}

fn build_blocks(r: &LmiRelaxation) -> Result<Vec<Block>, SdpError> {
    let m = r.n_moments();
    let mut blocks = Vec::with_capacity(r.blocks.len());
    for (b, pencil) in r.blocks.iter().enumerate() {
        if pencil.entries.len() != pencil.size * pencil.size {
            return Err(SdpError::Malformed(format!("block {b} has the wrong number of entries")));
        }
        if !pencil.is_symmetric() {
            return Err(SdpError::Malformed(format!("block {b} is not symmetric")));
        }
        let mut per_k: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
        for i in 0..pencil.size {
            for j in 0..pencil.size {
                for &(k, a) in pencil.entry(i, j) {
                    if k >= m {
                        return Err(SdpError::Malformed(format!("block {b} references moment {k}")));
                    }
                    per_k.entry(k).or_default().push((i, j, a));
                }
            }
        }
        blocks.push(Block {
            size: pencil.size,
            terms: per_k.into_iter().map(|(k, e)| (k, Term::Sparse(e))).collect(),
            face: None,
        });
    }
    Ok(blocks)
}

fn frob(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

// Largest step in (0, 1] keeping X + a dX positive definite, damped.
fn max_step(chol: &Cholesky<f64, Dyn>, dx: &DMatrix<f64>) -> f64 {
    if dx.nrows() == 0 {
        return 1.0;
    }
    let l = chol.l();
    let Some(y) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(z) = l.solve_lower_triangular(&y.transpose()) else {
        return 0.0;
    };
    let mut z = z;
    symmetrize(&mut z);
    let lmin = SymmetricEigen::new(z).eigenvalues.min();
    if lmin >= 0.0 {
        1.0
    } else {
        (STEP_FRACTION * (-1.0 / lmin)).min(1.0)
    }
}

// Cholesky factorization with a growing diagonal shift once H has lost
// definiteness to rounding; gives up after the shift reaches 1e-6 relative.
fn regularized_cholesky(h: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Some(c);
    }
    let dmax = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * dmax;
    while shift <= 1e-6 * dmax {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(c) = Cholesky::new(hs) {
            return Some(c);
        }
        shift *= 100.0;
    }
    None
}

// Equality rows reduced to orthonormal rows spanning the same space.
struct Equalities {
    /// r x m with orthonormal rows.
    e: DMatrix<f64>,
    f: DVector<f64>,
    /// lambda_orig = back * lambda.
    back: DMatrix<f64>,
    /// m x (m - r) orthonormal basis of the null space of `e`.
    null: DMatrix<f64>,
    consistent: bool,
}

fn null_basis(e: &DMatrix<f64>) -> DMatrix<f64> {
    let m = e.ncols();
    if e.nrows() == 0 {
        return DMatrix::identity(m, m);
    }
    let proj = DMatrix::<f64>::identity(m, m) - e.transpose() * e;
    let eig = SymmetricEigen::new(proj);
    let cols: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    DMatrix::from_fn(m, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])])
}

fn reduce_equalities(r: &LmiRelaxation) -> Equalities {
    let m = r.n_moments();
    let neq = r.eq_rows.len();
    let mut e = DMatrix::zeros(neq, m);
    let mut f = DVector::zeros(neq);
    for (i, row) in r.eq_rows.iter().enumerate() {
        for &(k, a) in &row.coeffs {
            e[(i, k)] += a;
        }
        f[i] = row.rhs;
    }
    if neq == 0 {
        return Equalities {
            e: DMatrix::zeros(0, m),
            f: DVector::zeros(0),
            back: DMatrix::zeros(0, 0),
            null: DMatrix::identity(m, m),
            consistent: true,
        };
    }
    let svd = SVD::new(e.clone(), true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let cut = smax * 1e-10 * (neq.max(m) as f64);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > cut).collect();
    let rk = keep.len();
    let mut er = DMatrix::zeros(rk, m);
    let mut fr = DVector::zeros(rk);
    let mut back = DMatrix::zeros(neq, rk);
    for (t, &i) in keep.iter().enumerate() {
        let s = svd.singular_values[i];
        er.set_row(t, &vt.row(i));
        fr[t] = u.column(i).dot(&f) / s;
        back.set_column(t, &(u.column(i) / s));
    }
    // f must lie in the range of E
    let mut proj = DVector::zeros(neq);
    for &i in &keep {
        proj += u.column(i) * u.column(i).dot(&f);
    }
    let consistent = (&f - proj).norm() <= 1e-9 * (1.0 + f.norm());
    let null = null_basis(&er);
    Equalities {
        e: er,
        f: fr,
        back,
        null,
        consistent,
    }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    w: DVector<f64>,
    lam: DVector<f64>,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    ds: Vec<DMatrix<f64>>,
    dw: DVector<f64>,
    dlam: DVector<f64>,
}

/// Solves the relaxation. Solver failures are reported through
/// [`SdpSolution::status`]; `Err` is reserved for invalid input.
pub fn solve(r: &LmiRelaxation, tol: f64, max_iter: usize) -> Result<SdpSolution, SdpError> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(SdpError::BadTolerance(tol));
    }
    let max_psd = max_psd_size();
    if r.psd_size() > max_psd || r.n_moments() > MAX_MOMENTS {
        return Err(SdpError::TooLarge {
            psd: r.psd_size(),
            moments: r.n_moments(),
            max_psd,
            max_moments: MAX_MOMENTS,
            env: PSD_SIZE_ENV,
        });
    }
    let m = r.n_moments();
    let eqs = reduce_equalities(r);
    let mut blocks = build_blocks(r)?;
    if eqs.e.nrows() > 0 && eqs.consistent {
        // Equalities can force a fixed kernel on a block for every feasible w;
        // solving on the complementary face keeps both sides strictly feasible.
        let mut dirs: Vec<DVector<f64>> = eqs.null.column_iter().map(|c| c.into_owned()).collect();
        let wp = eqs.e.transpose() * &eqs.f;
        if wp.norm() > 0.0 {
            dirs.push(&wp / wp.norm());
        }
        blocks = blocks.into_iter().map(|b| b.reduce(&dirs)).collect();
    }
    let mut c = DVector::zeros(m);
    for &(k, a) in &r.objective {
        c[k] += a;
    }
    let n_total: usize = blocks.iter().map(|b| b.size).sum();

    let adjoint = |w: &DVector<f64>| -> Vec<DMatrix<f64>> { blocks.iter().map(|b| b.adjoint(w)).collect() };
    let apply = |x: &[DMatrix<f64>]| -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for (b, xb) in blocks.iter().zip(x) {
            b.apply(xb, &mut out);
        }
        out
    };

    let mut it = Iterate {
        x: blocks.iter().map(|b| DMatrix::identity(b.size, b.size) * INITIAL_SCALE).collect(),
        s: blocks.iter().map(|b| DMatrix::identity(b.size, b.size) * INITIAL_SCALE).collect(),
        w: eqs.e.transpose() * &eqs.f,
        lam: DVector::zeros(eqs.e.nrows()),
    };

    let finish = |it: &Iterate, status: SdpStatus, iterations: usize, res: Residuals| -> SdpSolution {
        let sign = match r.sense {
            crate::expr::Sense::Minimize => 1.0,
            crate::expr::Sense::Maximize => -1.0,
        };
        SdpSolution {
            w: it.w.iter().copied().collect(),
            objective: sign * c.dot(&it.w),
            dual_objective: sign * eqs.f.dot(&it.lam),
            dual_blocks: blocks.iter().zip(&it.x).map(|(b, x)| b.expand(x)).collect(),
            eq_duals: if eqs.back.ncols() == 0 {
                vec![0.0; r.eq_rows.len()]
            } else {
                (&eqs.back * &it.lam).iter().copied().collect()
            },
            status,
            iterations,
            residuals: res,
        }
    };

    if !eqs.consistent {
        let res = Residuals {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            gap: f64::INFINITY,
        };
        return Ok(finish(&it, SdpStatus::Infeasible, 0, res));
    }

    let c_norm = c.norm();
    let f_norm = eqs.f.norm();
    let mut res = Residuals {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
        gap: f64::INFINITY,
    };
    // Failures return the iterate with the smallest worst residual seen.
    let mut best: Option<(f64, Iterate, usize, Residuals)> = None;
    macro_rules! bail {
        ($status:expr, $iter:expr) => {{
            let (bi, bit, bres) = match &best {
                Some((_, b, i, r)) => (*i, b, *r),
                None => ($iter, &it, res),
            };
            return Ok(finish(bit, $status, bi, bres));
        }};
    }
    for iter in 0..max_iter {
        let aw = adjoint(&it.w);
        let rd: Vec<DMatrix<f64>> = aw.iter().zip(&it.s).map(|(a, s)| a - s).collect();
        let rp = &c - apply(&it.x) - eqs.e.transpose() * &it.lam;
        let re = &eqs.f - &eqs.e * &it.w;
        let pobj = c.dot(&it.w);
        let dobj = eqs.f.dot(&it.lam);
        res = Residuals {
            primal: (re.norm() / (1.0 + f_norm)).max(frob(&rd) / (1.0 + frob(&aw))),
            dual: rp.norm() / (1.0 + c_norm),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        };
        if res.primal <= tol && res.dual <= tol && res.gap <= tol {
            return Ok(finish(&it, SdpStatus::Optimal, iter, res));
        }
        let worst = res.primal.max(res.dual).max(res.gap);
        if best.as_ref().is_none_or(|b| worst < b.0) {
            best = Some((worst, it.clone(), iter, res));
        }
        let scale = frob(&it.x) + it.lam.norm();
        if scale > 1e8 * (1.0 + c_norm) && dobj / scale > 1e-6 && res.dual <= tol.sqrt() {
            return Ok(finish(&it, SdpStatus::Infeasible, iter, res));
        }

        let mu = inner(&it.x, &it.s) / n_total as f64;
        let mut chol_s = Vec::with_capacity(blocks.len());
        let mut chol_x = Vec::with_capacity(blocks.len());
        for (x, s) in it.x.iter().zip(&it.s) {
            match (Cholesky::new(s.clone()), Cholesky::new(x.clone())) {
                (Some(cs), Some(cx)) => {
                    chol_s.push(cs);
                    chol_x.push(cx);
                }
                _ => bail!(SdpStatus::NumericalTrouble, iter),
            }
        }
        let sinv: Vec<DMatrix<f64>> = chol_s.iter().map(|c| c.inverse()).collect();

        // Schur complement H_kl = <A_k, X A_l S^-1>
        let mut h = DMatrix::<f64>::zeros(m, m);
        for ((b, x), si) in blocks.iter().zip(&it.x).zip(&sinv) {
            b.add_schur(x, si, &mut h);
        }
        for k in 0..m {
            for l in 0..k {
                h[(k, l)] = h[(l, k)];
            }
        }
        // Newton system restricted to the null space of E; the directions fixed
        // by the equalities are where S^-1 blows up.
        let nb = &eqs.null;
        let hn = &h * nb;
        let Some(chol_h) = regularized_cholesky(nb.transpose() * &hn) else {
            bail!(SdpStatus::NumericalTrouble, iter);
        };
        let w_corr = eqs.e.transpose() * &re;
        let h_corr = &h * &w_corr;

        let direction = |target: f64, corr: Option<&[DMatrix<f64>]>| -> Direction {
            let z: Vec<DMatrix<f64>> = (0..blocks.len())
                .map(|b| {
                    let n = blocks[b].size;
                    let mut t = DMatrix::identity(n, n) * target;
                    if let Some(mc) = corr {
                        t -= &mc[b];
                    }
                    t * &sinv[b] - &it.x[b] - &it.x[b] * &rd[b] * &sinv[b]
                })
                .collect();
            let g = apply(&z) - &rp;
            let mut dz = chol_h.solve(&(nb.transpose() * (&g - &h_corr)));
            let schur = |dw: &DVector<f64>| -> DVector<f64> {
                let adw = adjoint(dw);
                let prod: Vec<DMatrix<f64>> =
                    (0..blocks.len()).map(|b| &it.x[b] * &adw[b] * &sinv[b]).collect();
                apply(&prod)
            };
            for _ in 0..REFINE_STEPS {
                let hdw = schur(&(&w_corr + nb * &dz));
                let rr = nb.transpose() * (&g - hdw);
                dz += chol_h.solve(&rr);
            }
            let dw = &w_corr + nb * &dz;
            let dlam = &eqs.e * (schur(&dw) - &g);
            let adw = adjoint(&dw);
            let mut dx = Vec::with_capacity(blocks.len());
            let mut ds = Vec::with_capacity(blocks.len());
            for b in 0..blocks.len() {
                let mut d = &z[b] - &it.x[b] * &adw[b] * &sinv[b];
                symmetrize(&mut d);
                dx.push(d);
                ds.push(&adw[b] + &rd[b]);
            }
            Direction { dx, ds, dw, dlam }
        };
        let steps = |d: &Direction| -> (f64, f64) {
            let ap = chol_x.iter().zip(&d.dx).map(|(c, dx)| max_step(c, dx)).fold(1.0, f64::min);
            let ad = chol_s.iter().zip(&d.ds).map(|(c, ds)| max_step(c, ds)).fold(1.0, f64::min);
            (ap, ad)
        };

        let pred = direction(0.0, None);
        let (ap, ad) = steps(&pred);
        let mut mu_aff = 0.0;
        for b in 0..blocks.len() {
            let xa = &it.x[b] + &pred.dx[b] * ap;
            let sa = &it.s[b] + &pred.ds[b] * ad;
            mu_aff += xa.dot(&sa);
        }
        mu_aff /= n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let corr: Vec<DMatrix<f64>> = pred.dx.iter().zip(&pred.ds).map(|(dx, ds)| dx * ds).collect();
        let dir = direction(sigma * mu, Some(&corr));
        let (ap, ad) = steps(&dir);

        for b in 0..blocks.len() {
            it.x[b] += &dir.dx[b] * ap;
            it.s[b] += &dir.ds[b] * ad;
            symmetrize(&mut it.x[b]);
            symmetrize(&mut it.s[b]);
        }
        it.lam += &dir.dlam * ap;
        it.w += &dir.dw * ad;
    }
    bail!(SdpStatus::MaxIter, max_iter)
}
