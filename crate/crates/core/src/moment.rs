//! Moment relaxations of a lifted problem as linear matrix inequalities in the
//! moment vector `w` (one entry per monomial of degree at most `2i`).
//!
//! Block order: moment matrix (one per clique in sparse mode), localizers of
//! the inequalities in input order, localizers of the nonnegative auxiliary
//! variables by index, ball localizer(s) last. Equalities contribute linear
//! rows `L_w(u * x^mu) = 0` for every `mu` with `deg mu <= 2(i - ceil(deg u / 2))`,
//! i.e. their localizing matrices are constrained entrywise to zero.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::Sense;
use crate::lift::LiftedProblem;
use crate::poly::{monomial_basis, monomial_basis_on, Monomial, Polynomial};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentError {
    #[error("relaxation order {order} is too small; the minimum admissible order is {minimum}")]
    OrderTooSmall { order: u32, minimum: u32 },
    #[error("monomial of degree {degree} exceeds the relaxation degree {max}")]
    DegreeOverflow { degree: u32, max: u32 },
    #[error("support of {0} is not contained in any clique")]
    SupportNotCovered(String),
    #[error("variable cliques violate the running intersection property")]
    NoRunningIntersection,
}

/// Sparse linear form in `w`: sorted `(index, coefficient)` pairs.
pub type LinearForm = Vec<(usize, f64)>;

pub fn eval_form(form: &LinearForm, w: &[f64]) -> f64 {
    form.iter().map(|&(k, c)| c * w[k]).sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PencilLabel {
    Moment { clique: Option<usize> },
    Inequality(usize),
    Nonneg(usize),
    Ball { clique: Option<usize> },
    /// Unlabeled block of an imported file.
    Block(usize),
}

impl fmt::Display for PencilLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PencilLabel::Moment { clique: None } => write!(f, "moment"),
            PencilLabel::Moment { clique: Some(c) } => write!(f, "moment@{c}"),
            PencilLabel::Inequality(j) => write!(f, "ineq:{j}"),
            PencilLabel::Nonneg(k) => write!(f, "nonneg:{k}"),
            PencilLabel::Ball { clique: None } => write!(f, "ball"),
            PencilLabel::Ball { clique: Some(c) } => write!(f, "ball@{c}"),
            PencilLabel::Block(b) => write!(f, "block:{b}"),
        }
    }
}

impl std::str::FromStr for PencilLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.parse::<usize>().map_err(|_| format!("bad block label `{s}`"));
        Ok(match s {
            "moment" => PencilLabel::Moment { clique: None },
            "ball" => PencilLabel::Ball { clique: None },
            _ => {
                if let Some(t) = s.strip_prefix("moment@") {
                    PencilLabel::Moment { clique: Some(num(t)?) }
                } else if let Some(t) = s.strip_prefix("ball@") {
                    PencilLabel::Ball { clique: Some(num(t)?) }
                } else if let Some(t) = s.strip_prefix("ineq:") {
                    PencilLabel::Inequality(num(t)?)
                } else if let Some(t) = s.strip_prefix("nonneg:") {
                    PencilLabel::Nonneg(num(t)?)
                } else if let Some(t) = s.strip_prefix("block:") {
                    PencilLabel::Block(num(t)?)
                } else {
                    return Err(format!("bad block label `{s}`"));
                }
            }
        })
    }
}

/// How a pencil was generated: `entry(a, b) = L_w(weight * basis[a] * basis[b])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PencilOrigin {
    pub basis: Vec<Monomial>,
    pub weight: Polynomial,
}

/// Symmetric matrix whose entries are linear forms in `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPencil {
    pub label: PencilLabel,
    pub size: usize,
    /// Row-major, `size * size` entries.
    pub entries: Vec<LinearForm>,
    /// Absent for pencils read back from an SDPA file.
    pub origin: Option<PencilOrigin>,
}

impl MatrixPencil {
    pub fn entry(&self, i: usize, j: usize) -> &LinearForm {
        &self.entries[i * self.size + j]
    }

    pub fn eval(&self, w: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| eval_form(self.entry(i, j), w))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|i| (0..i).all(|j| self.entry(i, j) == self.entry(j, i)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowOrigin {
    Normalization,
    /// Row `L_w(equalities[index] * shift) = 0`.
    Equality { index: usize, shift: Monomial },
    Imported,
}

/// Linear equation `coeffs . w = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: LinearForm,
    pub rhs: f64,
    pub origin: RowOrigin,
}

#[derive(Debug, Clone)]
pub struct LmiRelaxation {
    pub order: u32,
    pub n_vars: usize,
    pub w_index: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
    pub blocks: Vec<MatrixPencil>,
    pub eq_rows: Vec<LinearRow>,
    /// Minimized functional; for `maximize` this is the negated objective.
    pub objective: LinearForm,
    pub sense: Sense,
    /// Largest localizer degree offset (at least 1); the `c` of the rank test.
    pub flat_offset: u32,
    /// Variable cliques in sparse mode.
    pub cliques: Option<Vec<Vec<usize>>>,
}

impl LmiRelaxation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        order: u32,
        n_vars: usize,
        w_index: Vec<Monomial>,
        blocks: Vec<MatrixPencil>,
        eq_rows: Vec<LinearRow>,
        objective: LinearForm,
        sense: Sense,
        flat_offset: u32,
    ) -> Self {
        let index = w_index.iter().cloned().enumerate().map(|(k, m)| (m, k)).collect();
        LmiRelaxation {
            order,
            n_vars,
            w_index,
            index,
            blocks,
            eq_rows,
            objective,
            sense,
            flat_offset,
            cliques: None,
        }
    }

    pub fn n_moments(&self) -> usize {
        self.w_index.len()
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Position of `alpha + beta` in the moment vector.
    pub fn moment_entry(&self, alpha: &Monomial, beta: &Monomial) -> Result<usize, MomentError> {
        let m = alpha.mul(beta);
        self.index_of(&m).ok_or(MomentError::DegreeOverflow {
            degree: m.degree(),
            max: 2 * self.order,
        })
    }

    /// `L_w(p)` as a linear form; `None` if some monomial is not indexed.
    pub fn riesz(&self, p: &Polynomial) -> Option<LinearForm> {
        let mut form: Vec<(usize, f64)> = Vec::with_capacity(p.n_terms());
        for (m, c) in p.terms() {
            form.push((self.index_of(m)?, c));
        }
        form.sort_by_key(|t| t.0);
        Some(form)
    }

    /// Localizing pencil of `g` over the given basis.
    pub fn localizer(&self, g: &Polynomial, basis: &[Monomial], label: PencilLabel) -> Result<MatrixPencil, MomentError> {
        let s = basis.len();
        let mut entries = vec![LinearForm::new(); s * s];
        for a in 0..s {
            for b in a..s {
                let ab = basis[a].mul(&basis[b]);
                let mut acc: HashMap<usize, f64> = HashMap::new();
                for (gm, gc) in g.terms() {
                    let m = ab.mul(gm);
                    let k = self.index_of(&m).ok_or(MomentError::DegreeOverflow {
                        degree: m.degree(),
                        max: 2 * self.order,
                    })?;
                    *acc.entry(k).or_insert(0.0) += gc;
                }
                let mut form: LinearForm = acc.into_iter().filter(|&(_, c)| c != 0.0).collect();
                form.sort_by_key(|t| t.0);
                entries[b * s + a] = form.clone();
                entries[a * s + b] = form;
            }
        }
        Ok(MatrixPencil {
            label,
            size: s,
            entries,
            origin: Some(PencilOrigin {
                basis: basis.to_vec(),
                weight: g.clone(),
            }),
        })
    }

    /// Moment vector of the Dirac measure at `point`: `w_gamma = point^gamma`.
    pub fn dirac_moments(&self, point: &[f64]) -> Vec<f64> {
        self.w_index.iter().map(|m| m.eval(point)).collect()
    }

    /// Objective value in the declared sense.
    pub fn objective_value(&self, w: &[f64]) -> f64 {
        let v = eval_form(&self.objective, w);
        match self.sense {
            Sense::Minimize => v,
            Sense::Maximize => -v,
        }
    }

    /// Total size of all PSD blocks.
    pub fn psd_size(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }
}

fn ceil_half(d: u32) -> u32 {
    d.div_ceil(2)
}

/// Smallest admissible relaxation order for `lp`.
pub fn minimum_order(lp: &LiftedProblem) -> u32 {
    let mut m = 1.max(ceil_half(lp.objective.degree()));
    for g in lp.base_ineqs.iter().chain(&lp.equalities) {
        m = m.max(ceil_half(g.degree()));
    }
    m
}

fn flat_offset(lp: &LiftedProblem) -> u32 {
    lp.base_ineqs
        .iter()
        .chain(&lp.equalities)
        .map(|g| ceil_half(g.degree()))
        .fold(1, u32::max)
}

/// Variable cliques `x ∪ group` and whether they satisfy the running
/// intersection property.
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueCover {
    pub cliques: Vec<Vec<usize>>,
    pub rip: bool,
}

pub fn detect_cliques(lp: &LiftedProblem) -> CliqueCover {
    let xs: Vec<usize> = (0..lp.n).collect();
    let cliques: Vec<Vec<usize>> = if lp.groups.is_empty() {
        vec![xs.clone()]
    } else {
        lp.groups
            .iter()
            .map(|g| xs.iter().copied().chain(g.iter().map(|k| lp.n + k)).collect())
            .collect()
    };
    let rip = running_intersection(&cliques, lp.n);
    debug_assert!(rip, "lifted groups always meet only in x");
    CliqueCover { cliques, rip }
}

fn running_intersection(cliques: &[Vec<usize>], n: usize) -> bool {
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    for c in cliques {
        if c.iter().any(|v| *v >= n && seen.contains(v)) {
            return false;
        }
        seen.extend(c.iter().copied());
    }
    true
}

/// Dense order-`order` relaxation.
pub fn build_relaxation(lp: &LiftedProblem, order: u32) -> Result<LmiRelaxation, MomentError> {
    let all: Vec<usize> = (0..lp.n_vars()).collect();
    assemble(lp, order, &[all], false)
}

/// Clique-sparse order-`order` relaxation.
pub fn build_sparse_relaxation(lp: &LiftedProblem, order: u32) -> Result<LmiRelaxation, MomentError> {
    let cover = detect_cliques(lp);
    if !cover.rip {
        return Err(MomentError::NoRunningIntersection);
    }
    let mut r = assemble(lp, order, &cover.cliques, true)?;
    r.cliques = Some(cover.cliques);
    Ok(r)
}

fn assemble(lp: &LiftedProblem, order: u32, cliques: &[Vec<usize>], sparse: bool) -> Result<LmiRelaxation, MomentError> {
    let minimum = minimum_order(lp);
    if order < minimum {
        return Err(MomentError::OrderTooSmall { order, minimum });
    }
    let nv = lp.n_vars();
    let covering = |p: &Polynomial, what: String| -> Result<usize, MomentError> {
        let sup = p.support();
        cliques
            .iter()
            .position(|c| sup.iter().all(|v| c.contains(v)))
            .ok_or(MomentError::SupportNotCovered(what))
    };

    let w_index: Vec<Monomial> = if sparse {
        let mut set: BTreeSet<Monomial> = BTreeSet::new();
        for c in cliques {
            set.extend(monomial_basis_on(nv, c, 2 * order));
        }
        set.into_iter().collect()
    } else {
        monomial_basis(nv, 2 * order)
    };
    let mut r = LmiRelaxation::new(
        order,
        nv,
        w_index,
        Vec::new(),
        Vec::new(),
        Vec::new(),
        lp.sense,
        flat_offset(lp),
    );
    let clique_label = |c: usize| if sparse { Some(c) } else { None };

    let mut blocks = Vec::new();
    for (ci, c) in cliques.iter().enumerate() {
        let basis = monomial_basis_on(nv, c, order);
        blocks.push(r.localizer(&Polynomial::constant(nv, 1.0), &basis, PencilLabel::Moment { clique: clique_label(ci) })?);
    }
    for (j, g) in lp.base_ineqs.iter().enumerate() {
        let ci = covering(g, format!("inequality {j}"))?;
        let basis = monomial_basis_on(nv, &cliques[ci], order - ceil_half(g.degree()));
        blocks.push(r.localizer(g, &basis, PencilLabel::Inequality(j))?);
    }
    for &k in &lp.nonneg {
        let y = Polynomial::var(nv, lp.n + k);
        let ci = covering(&y, format!("auxiliary {k}"))?;
        let basis = monomial_basis_on(nv, &cliques[ci], order - 1);
        blocks.push(r.localizer(&y, &basis, PencilLabel::Nonneg(k))?);
    }
    for (ci, c) in cliques.iter().enumerate() {
        let mut theta = Polynomial::constant(nv, lp.ball_m);
        for &v in c {
            let xv = Polynomial::var(nv, v);
            theta = &theta - &(&xv * &xv);
        }
        let basis = monomial_basis_on(nv, c, order - 1);
        blocks.push(r.localizer(&theta, &basis, PencilLabel::Ball { clique: clique_label(ci) })?);
    }

    let mut rows = vec![LinearRow {
        coeffs: vec![(r.index_of(&Monomial::one(nv)).expect("constant moment"), 1.0)],
        rhs: 1.0,
        origin: RowOrigin::Normalization,
    }];
    for (k, u) in lp.equalities.iter().enumerate() {
        let ci = covering(u, format!("equality {k}"))?;
        let shift_deg = 2 * (order - ceil_half(u.degree()));
        for mu in monomial_basis_on(nv, &cliques[ci], shift_deg) {
            let shifted = u * &Polynomial::from_terms(nv, [(mu.clone(), 1.0)]);
            let coeffs = r.riesz(&shifted).ok_or(MomentError::DegreeOverflow {
                degree: shifted.degree(),
                max: 2 * order,
            })?;
            rows.push(LinearRow {
                coeffs,
                rhs: 0.0,
                origin: RowOrigin::Equality { index: k, shift: mu },
            });
        }
    }

    let objective = r
        .riesz(&lp.min_objective())
        .ok_or_else(|| MomentError::SupportNotCovered("objective".into()))?;
    r.blocks = blocks;
    r.eq_rows = rows;
    r.objective = objective;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_problem;
    use crate::lift::build_problem;

    fn lifted(src: &str) -> LiftedProblem {
        let mut p = parse_problem(src).unwrap();
        build_problem(&mut p, None).unwrap()
    }

    const EX1: &str = "vars x1 x2; maximize abs(x1)*x2 - x1^2; x1^2 + x2^2 == 1; box x1 in [-1,1]; box x2 in [-1,1];";

    #[test]
    fn univariate_hankel_structure() {
        let lp = lifted("vars x; minimize x; box x in [-1, 1];");
        let r = build_relaxation(&lp, 1).unwrap();
        let m = &r.blocks[0];
        assert_eq!(m.size, 2);
        assert_eq!(m.entry(0, 0), &vec![(0, 1.0)]);
        assert_eq!(m.entry(0, 1), &vec![(1, 1.0)]);
        assert_eq!(m.entry(1, 0), &vec![(1, 1.0)]);
        assert_eq!(m.entry(1, 1), &vec![(2, 1.0)]);
        let x = Monomial::new(vec![1]);
        assert_eq!(r.moment_entry(&x, &x).unwrap(), 2);
        assert!(matches!(
            r.moment_entry(&Monomial::new(vec![2]), &x),
            Err(MomentError::DegreeOverflow { degree: 3, max: 2 })
        ));
    }

    #[test]
    fn first_example_block_sizes() {
        let lp = lifted(EX1);
        let r = build_relaxation(&lp, 2).unwrap();
        let sizes: Vec<usize> = r.blocks.iter().map(|b| b.size).collect();
        assert_eq!(sizes, vec![10, 4, 4]);
        assert_eq!(r.blocks[1].label, PencilLabel::Nonneg(0));
        assert_eq!(r.blocks[2].label, PencilLabel::Ball { clique: None });
        // 1 normalization row + 10 rows for each quadratic equality
        assert_eq!(r.eq_rows.len(), 21);
        assert_eq!(r.eq_rows.iter().filter(|row| row.origin == RowOrigin::Normalization).count(), 1);
        assert_eq!(r.n_moments(), 35);
        assert!(r.blocks.iter().all(MatrixPencil::is_symmetric));
        assert_eq!(r.flat_offset, 1);
    }

    #[test]
    fn ball_localizer_entries() {
        let mut lp = lifted(EX1);
        lp.ball_m = 3.0;
        let r = build_relaxation(&lp, 2).unwrap();
        let ball = &r.blocks[2];
        let idx = |e: Vec<u32>| r.index_of(&Monomial::new(e)).unwrap();
        let mut expected = vec![
            (idx(vec![0, 0, 0]), 3.0),
            (idx(vec![2, 0, 0]), -1.0),
            (idx(vec![0, 2, 0]), -1.0),
            (idx(vec![0, 0, 2]), -1.0),
        ];
        expected.sort_by_key(|t| t.0);
        assert_eq!(ball.entry(0, 0), &expected);
        // nonneg localizer: entry(a, b) = w_{a + b + z}
        let zl = &r.blocks[1];
        assert_eq!(zl.entry(1, 2), &vec![(idx(vec![1, 1, 1]), 1.0)]);
    }

    #[test]
    fn unit_weight_localizer_is_moment_matrix() {
        let lp = lifted(EX1);
        let r = build_relaxation(&lp, 2).unwrap();
        let basis = monomial_basis(3, 2);
        let l = r.localizer(&Polynomial::constant(3, 1.0), &basis, PencilLabel::Moment { clique: None }).unwrap();
        assert_eq!(l.entries, r.blocks[0].entries);
    }

    #[test]
    fn hankel_entries_depend_on_sum_only() {
        let lp = lifted(EX1);
        let r = build_relaxation(&lp, 2).unwrap();
        let basis = &r.blocks[0].origin.as_ref().unwrap().basis;
        for a in 0..basis.len() {
            for b in 0..basis.len() {
                let k = r.moment_entry(&basis[a], &basis[b]).unwrap();
                assert_eq!(r.blocks[0].entry(a, b), &vec![(k, 1.0)]);
            }
        }
    }

    #[test]
    fn order_too_small_reports_minimum() {
        let lp = lifted("vars x; minimize x^4; box x in [-1,1];");
        assert_eq!(
            build_relaxation(&lp, 1).unwrap_err(),
            MomentError::OrderTooSmall { order: 1, minimum: 2 }
        );
    }

    #[test]
    fn polynomial_problem_is_classic_relaxation() {
        let lp = lifted("vars x1 x2; minimize x1^2 + x2; 1 - x1^2 - x2^2 >= 0; box x1 in [-1,1]; box x2 in [-1,1];");
        let r = build_relaxation(&lp, 1).unwrap();
        let sizes: Vec<usize> = r.blocks.iter().map(|b| b.size).collect();
        assert_eq!(sizes, vec![3, 1, 1]);
        assert_eq!(r.eq_rows.len(), 1);
        assert_eq!(detect_cliques(&lp).cliques, vec![vec![0, 1]]);
    }

    #[test]
    fn sparse_two_abs_problem() {
        let lp = lifted(
            "vars x1 x2; minimize (x1 - 0.3)^2 + (x2 + 0.2)^2; abs(x1) >= 0.5; abs(x2) >= 0.5;\
             1 - x1^2 >= 0; 1 - x2^2 >= 0; box x1 in [-1,1]; box x2 in [-1,1];",
        );
        let cover = detect_cliques(&lp);
        assert_eq!(cover.cliques, vec![vec![0, 1, 2], vec![0, 1, 3]]);
        assert!(cover.rip);
        let s = build_sparse_relaxation(&lp, 2).unwrap();
        assert_eq!(s.blocks[0].size, 10);
        assert_eq!(s.blocks[1].size, 10);
        let d = build_relaxation(&lp, 2).unwrap();
        assert_eq!(d.blocks[0].size, 15);
        assert!(s.n_moments() < d.n_moments());
        let single = lifted(EX1);
        let s1 = build_sparse_relaxation(&single, 2).unwrap();
        let d1 = build_relaxation(&single, 2).unwrap();
        assert_eq!(s1.w_index, d1.w_index);
        assert_eq!(s1.eq_rows, d1.eq_rows);
        let strip = |r: &LmiRelaxation| r.blocks.iter().map(|b| b.entries.clone()).collect::<Vec<_>>();
        assert_eq!(strip(&s1), strip(&d1));
    }

    #[test]
    fn rip_detects_shared_aux() {
        assert!(running_intersection(&[vec![0, 1, 2], vec![0, 1, 3]], 2));
        assert!(!running_intersection(&[vec![0, 2], vec![0, 2, 3]], 1));
    }

    #[test]
    fn labels_round_trip_through_text() {
        for l in [
            PencilLabel::Moment { clique: None },
            PencilLabel::Moment { clique: Some(3) },
            PencilLabel::Inequality(2),
            PencilLabel::Nonneg(0),
            PencilLabel::Ball { clique: None },
            PencilLabel::Ball { clique: Some(1) },
            PencilLabel::Block(4),
        ] {
            assert_eq!(l.to_string().parse::<PencilLabel>().unwrap(), l);
        }
    }
}
