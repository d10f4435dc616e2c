//! Optimality certificates: flat-extension rank test, atom extraction and
//! verification, and recovery of the weighted sum-of-squares identity from the
//! solver's dual matrices.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Sense;
use crate::lift::{eval_lifting, AuxKind, LiftedProblem};
use crate::moment::{eval_form, LmiRelaxation, PencilLabel};
use crate::poly::Monomial;
use crate::sdp::{SdpSolution, SdpStatus};

pub const DEFAULT_RANK_TOL: f64 = 1e-6;
pub const DEFAULT_SEED: u64 = 0x5eed;
pub const DEDUP_TOL: f64 = 1e-6;
pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const PROVENANCE_TOL: f64 = 1e-5;
pub const SOS_SAMPLES: usize = 200;
/// Even-root arguments below this count as on the domain boundary.
pub const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("atom extraction failed: {0}")]
    ExtractionFailed(String),
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(mat: &DMatrix<f64>, rel_tol: f64) -> usize {
    if mat.is_empty() {
        return 0;
    }
    let sv = SVD::new(mat.clone(), false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Moment matrix of one clique (or the dense relaxation) with its row basis.
pub fn moment_matrix(sol: &SdpSolution, r: &LmiRelaxation, clique: Option<usize>) -> Option<(DMatrix<f64>, Vec<Monomial>)> {
    let block = r
        .blocks
        .iter()
        .find(|b| b.label == PencilLabel::Moment { clique })?;
    let basis = block.origin.as_ref()?.basis.clone();
    Some((block.eval(&sol.w), basis))
}

fn leading(m: &DMatrix<f64>, basis: &[Monomial], degree: u32) -> DMatrix<f64> {
    let k = basis.iter().take_while(|b| b.degree() <= degree).count();
    m.view((0, 0), (k, k)).into_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    /// `None` for the dense relaxation.
    pub clique: Option<usize>,
    pub rank_full: usize,
    pub rank_truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flatness {
    pub c: u32,
    pub ranks: Vec<RankReport>,
    /// Atom count when the rank condition holds.
    pub d: Option<usize>,
}

/// Rank test `rank M_i = rank M_{i-c}` on every moment block. In sparse mode
/// the test only certifies when every clique has rank one.
pub fn flatness(sol: &SdpSolution, r: &LmiRelaxation, rel_tol: f64) -> Flatness {
    let c = r.flat_offset.max(1);
    let cliques: Vec<Option<usize>> = match &r.cliques {
        Some(cl) => (0..cl.len()).map(Some).collect(),
        None => vec![None],
    };
    let mut ranks = Vec::new();
    let mut all_flat = true;
    for cl in cliques {
        let Some((m, basis)) = moment_matrix(sol, r, cl) else {
            all_flat = false;
            continue;
        };
        let full = numerical_rank(&m, rel_tol);
        let sub = if r.order >= c {
            numerical_rank(&leading(&m, &basis, r.order - c), rel_tol)
        } else {
            0
        };
        all_flat &= full == sub && full > 0;
        ranks.push(RankReport {
            clique: cl,
            rank_full: full,
            rank_truncated: sub,
        });
    }
    let d = if !all_flat || ranks.is_empty() {
        None
    } else if r.cliques.is_some() {
        ranks.iter().all(|rr| rr.rank_full == 1).then_some(1)
    } else {
        Some(ranks[0].rank_full)
    };
    Flatness { c, ranks, d }
}

/// Atom count `d` if the solution is optimal and flat.
pub fn check_flatness(sol: &SdpSolution, r: &LmiRelaxation, rel_tol: f64) -> Option<usize> {
    if sol.status != SdpStatus::Optimal {
        return None;
    }
    flatness(sol, r, rel_tol).d
}

/// Points in `(x, aux)` space supporting the measure whose moments are `w`.
pub fn extract_atoms(sol: &SdpSolution, r: &LmiRelaxation, d: usize, seed: u64) -> Result<Vec<Vec<f64>>, CertifyError> {
    let nv = r.n_vars;
    if d == 1 {
        // Dirac measure: first-order moments are the point
        let w0 = r
            .index_of(&Monomial::one(nv))
            .map(|k| sol.w[k])
            .ok_or_else(|| CertifyError::ExtractionFailed("no constant moment".into()))?;
        let mut point = Vec::with_capacity(nv);
        for v in 0..nv {
            let k = r
                .index_of(&Monomial::var(nv, v))
                .ok_or_else(|| CertifyError::ExtractionFailed(format!("no first moment of variable {v}")))?;
            point.push(sol.w[k] / w0);
        }
        return Ok(vec![point]);
    }
    if r.cliques.is_some() {
        return Err(CertifyError::ExtractionFailed("sparse relaxations only certify Dirac measures".into()));
    }
    let (m, basis) = moment_matrix(sol, r, None)
        .ok_or_else(|| CertifyError::ExtractionFailed("relaxation has no moment block".into()))?;
    let s = basis.len();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if d > s || eig.eigenvalues[order[d - 1]] <= 0.0 {
        return Err(CertifyError::ExtractionFailed(format!("moment matrix has fewer than {d} positive eigenvalues")));
    }
    let v = DMatrix::from_fn(s, d, |i, j| eig.eigenvectors[(i, order[j])] * eig.eigenvalues[order[j]].sqrt());

    // greedy choice of d independent rows of low degree
    let scale = v.row_iter().map(|row| row.norm()).fold(0.0, f64::max);
    let mut chosen: Vec<usize> = Vec::new();
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for i in 0..s {
        if chosen.len() == d || basis[i].degree() >= r.order {
            break;
        }
        let mut res: DVector<f64> = v.row(i).transpose();
        for q in &ortho {
            let p = q.dot(&res);
            res -= q * p;
        }
        let nrm = res.norm();
        if nrm > 1e-6 * scale {
            ortho.push(res / nrm);
            chosen.push(i);
        }
    }
    if chosen.len() < d {
        return Err(CertifyError::ExtractionFailed("no monomial basis of the required size".into()));
    }
    let vb = DMatrix::from_fn(d, d, |a, j| v[(chosen[a], j)]);
    let vb_inv = vb
        .try_inverse()
        .ok_or_else(|| CertifyError::ExtractionFailed("singular basis block".into()))?;
    let u = &v * vb_inv;

    let row_of = |mono: &Monomial| basis.iter().position(|b| b == mono);
    let mut mult = Vec::with_capacity(nv);
    for j in 0..nv {
        let xj = Monomial::var(nv, j);
        let mut nj = DMatrix::zeros(d, d);
        for (a, &bi) in chosen.iter().enumerate() {
            let target = basis[bi].mul(&xj);
            let row = row_of(&target)
                .ok_or_else(|| CertifyError::ExtractionFailed(format!("shifted monomial of degree {} missing", target.degree())))?;
            nj.set_row(a, &u.row(row));
        }
        mult.push(nj);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..nv).map(|_| rng.gen_range(0.0..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut combo = DMatrix::zeros(d, d);
    for (nj, wj) in mult.iter().zip(&weights) {
        combo += nj * (wj / total);
    }
    let schur = Schur::try_new(combo, 1e-14, 10_000)
        .ok_or_else(|| CertifyError::ExtractionFailed("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let tnorm = t.norm().max(1e-300);
    for k in 0..d.saturating_sub(1) {
        if t[(k + 1, k)].abs() > 1e-8 * tnorm {
            return Err(CertifyError::ExtractionFailed("complex eigenvalues in the multiplication matrices".into()));
        }
    }
    let mut atoms: Vec<Vec<f64>> = Vec::new();
    for k in 0..d {
        let qk = q.column(k);
        let point: Vec<f64> = mult.iter().map(|nj| qk.dot(&(nj * qk))).collect();
        let dup = atoms
            .iter()
            .any(|a| a.iter().zip(&point).all(|(p, q)| (p - q).abs() <= DEDUP_TOL));
        if !dup {
            atoms.push(point);
        }
    }
    Ok(atoms)
}

/// Least-squares weights of the atoms reproducing the moments of degree up to `degree`.
pub fn atom_weights(sol: &SdpSolution, r: &LmiRelaxation, atoms: &[Vec<f64>], degree: u32) -> Vec<f64> {
    let rows: Vec<usize> = (0..r.n_moments()).filter(|&k| r.w_index[k].degree() <= degree).collect();
    let a = DMatrix::from_fn(rows.len(), atoms.len(), |i, j| r.w_index[rows[i]].eval(&atoms[j]));
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&k| sol.w[k]));
    match SVD::new(a, true, true).solve(&b, 1e-12) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![f64::NAN; atoms.len()],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomReport {
    pub x: Vec<f64>,
    pub aux: Vec<f64>,
    /// Largest violation of the lifted constraints.
    pub feasibility_residual: f64,
    /// Largest `|aux_k - v_k(x)|`.
    pub provenance_residual: f64,
    /// Original objective at `x`.
    pub objective: f64,
    pub feasible: bool,
    pub provenance_ok: bool,
    pub matches_rho: bool,
    /// Some even root sits at the edge of its domain, where provenance is
    /// only accurate to about the square root of the solver tolerance.
    pub even_root_boundary: bool,
}

/// Checks each atom against the lifted constraints, the provenance of its
/// auxiliary coordinates and the original objective.
pub fn verify_atoms(atoms: &[Vec<f64>], lp: &LiftedProblem, rho: f64) -> Vec<AtomReport> {
    atoms
        .iter()
        .map(|atom| {
            let x = atom[..lp.n].to_vec();
            let aux = atom[lp.n..].to_vec();
            let feas = if atom.len() == lp.n_vars() {
                lp.feasibility_residual(atom)
            } else {
                f64::INFINITY
            };
            let lifted = eval_lifting(lp, &x).ok();
            let prov = match &lifted {
                Some(l) => l[lp.n..].iter().zip(&aux).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                None => f64::INFINITY,
            };
            let boundary = lifted.is_some_and(|l| {
                lp.aux.iter().enumerate().any(|(k, a)| match a.kind {
                    AuxKind::Root(q) if q % 2 == 0 => l[lp.n + k].powi(q as i32) <= BOUNDARY_TOL,
                    _ => false,
                })
            });
            let objective = lp.source_objective.eval(&x).unwrap_or(f64::NAN);
            AtomReport {
                feasible: feas <= FEASIBILITY_TOL,
                provenance_ok: prov <= PROVENANCE_TOL,
                matches_rho: (objective - rho).abs() <= 1e-6 * (1.0 + rho.abs()),
                even_root_boundary: boundary,
                x,
                aux,
                feasibility_residual: feas,
                provenance_residual: prov,
                objective,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SosMultiplier {
    /// Block label: `moment` gives sigma_0, `ineq:j` sigma_j, `nonneg:k` psi_k, `ball` phi_0.
    pub label: String,
    pub basis: Vec<Vec<u32>>,
    pub gram: Vec<Vec<f64>>,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SosRecord {
    /// Constant of the identity (the dual bound, minimization form).
    pub rho: f64,
    pub multipliers: Vec<SosMultiplier>,
    /// One free polynomial multiplier per lifted equality: exponent keys to coefficients.
    pub equality_multipliers: Vec<Vec<(Vec<u32>, f64)>>,
    pub identity_residual: f64,
    pub min_gram_eigenvalue: f64,
    pub samples: usize,
}

/// Weighted-SOS identity
/// `f(u) - rho = sum_b g_b(u) v_b(u)^T X_b v_b(u) + sum_k h_k(u) u_k(u)`
/// read off the dual solution, with its residual at sampled graph points
/// `u = (x, v(x))`, normalized by `1 + |rho|`.
pub fn extract_sos_certificate(sol: &SdpSolution, r: &LmiRelaxation, lp: &LiftedProblem, seed: u64) -> SosRecord {
    use crate::moment::RowOrigin;
    let mut rho = 0.0;
    let mut eq_mult: Vec<std::collections::BTreeMap<Vec<u32>, f64>> = vec![Default::default(); lp.equalities.len()];
    for (row, &lam) in r.eq_rows.iter().zip(&sol.eq_duals) {
        match &row.origin {
            RowOrigin::Normalization => rho += lam * row.rhs,
            RowOrigin::Equality { index, shift } => {
                *eq_mult[*index].entry(shift.exponents().to_vec()).or_insert(0.0) += lam;
            }
            RowOrigin::Imported => rho += lam * row.rhs,
        }
    }
    let mut multipliers = Vec::new();
    let mut min_eig = f64::INFINITY;
    for (pencil, x) in r.blocks.iter().zip(&sol.dual_blocks) {
        let ev = if x.is_empty() {
            0.0
        } else {
            SymmetricEigen::new(x.clone()).eigenvalues.min()
        };
        min_eig = min_eig.min(ev);
        multipliers.push(SosMultiplier {
            label: pencil.label.to_string(),
            basis: pencil
                .origin
                .as_ref()
                .map(|o| o.basis.iter().map(|m| m.exponents().to_vec()).collect())
                .unwrap_or_default(),
            gram: x.row_iter().map(|row| row.iter().copied().collect()).collect(),
            min_eigenvalue: ev,
        });
    }

    let f_min = lp.min_objective();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut taken = 0;
    let mut attempts = 0;
    while taken < SOS_SAMPLES && attempts < 50 * SOS_SAMPLES {
        attempts += 1;
        let x: Vec<f64> = lp
            .bounds
            .bounds
            .iter()
            .map(|b| {
                let (lo, hi) = if b.lo.is_finite() && b.hi.is_finite() { (b.lo, b.hi) } else { (-1.0, 1.0) };
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect();
        let Ok(u) = eval_lifting(lp, &x) else { continue };
        taken += 1;
        let mono: Vec<f64> = r.w_index.iter().map(|m| m.eval(&u)).collect();
        let mut val = f_min.eval(&u);
        for (row, &lam) in r.eq_rows.iter().zip(&sol.eq_duals) {
            val -= lam * eval_form(&row.coeffs, &mono);
        }
        for (pencil, x) in r.blocks.iter().zip(&sol.dual_blocks) {
            val -= pencil.eval(&mono).dot(x);
        }
        worst = worst.max(val.abs());
    }
    SosRecord {
        rho,
        multipliers,
        equality_multipliers: eq_mult.into_iter().map(|m| m.into_iter().collect()).collect(),
        identity_residual: worst / (1.0 + rho.abs()),
        min_gram_eigenvalue: min_eig,
        samples: taken,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifiedAtom {
    pub x: Vec<f64>,
    pub aux: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub schema: &'static str,
    pub order: u32,
    pub status: SdpStatus,
    /// Relaxation bound in the problem's own sense.
    pub rho: f64,
    pub flat: bool,
    pub d: Option<usize>,
    pub c: u32,
    pub ranks: Vec<RankReport>,
    pub atoms: Vec<CertifiedAtom>,
    pub atom_report: Vec<AtomReport>,
    pub extraction_error: Option<String>,
    /// True when the relaxation is flat and every atom verifies.
    pub certified: bool,
    pub sos: Option<SosRecord>,
    pub seed: u64,
    pub rank_tol: f64,
}

/// Full certification of one solved relaxation.
pub fn certify(sol: &SdpSolution, r: &LmiRelaxation, lp: &LiftedProblem, rank_tol: f64, seed: u64) -> Certificate {
    let fl = flatness(sol, r, rank_tol);
    let d = if sol.status == SdpStatus::Optimal { fl.d } else { None };
    let mut atoms = Vec::new();
    let mut report = Vec::new();
    let mut extraction_error = None;
    if let Some(d) = d {
        match extract_atoms(sol, r, d, seed) {
            Ok(pts) => {
                let deg = r.order.saturating_sub(fl.c);
                let weights = atom_weights(sol, r, &pts, 2 * deg.max(1));
                report = verify_atoms(&pts, lp, sol.objective);
                atoms = pts
                    .iter()
                    .zip(weights)
                    .map(|(p, wgt)| CertifiedAtom {
                        x: p[..lp.n].to_vec(),
                        aux: p[lp.n..].to_vec(),
                        weight: wgt,
                    })
                    .collect();
            }
            Err(e) => extraction_error = Some(e.to_string()),
        }
    }
    let certified = d.is_some()
        && !report.is_empty()
        && report.iter().all(|a| a.feasible && a.provenance_ok)
        && best_objective(&report, lp.sense).is_some_and(|b| (b - sol.objective).abs() <= 1e-6 * (1.0 + sol.objective.abs()));
    let sos = (sol.status == SdpStatus::Optimal).then(|| extract_sos_certificate(sol, r, lp, seed));
    Certificate {
        schema: "certificate/1",
        order: r.order,
        status: sol.status,
        rho: sol.objective,
        flat: d.is_some(),
        d,
        c: fl.c,
        ranks: fl.ranks,
        atoms,
        atom_report: report,
        extraction_error,
        certified,
        sos,
        seed,
        rank_tol,
    }
}

fn best_objective(report: &[AtomReport], sense: Sense) -> Option<f64> {
    let vals = report.iter().map(|a| a.objective).filter(|v| v.is_finite());
    match sense {
        Sense::Minimize => vals.reduce(f64::min),
        Sense::Maximize => vals.reduce(f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_problem;
    use crate::lift::build_problem;
    use crate::moment::build_relaxation;
    use crate::sdp::{solve, DEFAULT_MAX_ITER, DEFAULT_TOL};

    const EX1: &str = "vars x1 x2; maximize abs(x1)*x2 - x1^2; x1^2 + x2^2 == 1; box x1 in [-1,1]; box x2 in [-1,1];";
    const EX2: &str = "vars x1 x2; maximize x1*abs(x1 - 2*x2); x1^2 + x2^2 == 1; box x1 in [-1,1]; box x2 in [-1,1];";

    fn solved(src: &str, order: u32) -> (LiftedProblem, LmiRelaxation, SdpSolution) {
        let mut p = parse_problem(src).unwrap();
        let lp = build_problem(&mut p, None).unwrap();
        let r = build_relaxation(&lp, order).unwrap();
        let sol = solve(&r, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        (lp, r, sol)
    }

    #[test]
    fn rank_of_simple_matrices() {
        assert_eq!(numerical_rank(&DMatrix::identity(5, 5), DEFAULT_RANK_TOL), 5);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(numerical_rank(&(&v * v.transpose()), DEFAULT_RANK_TOL), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn first_example_two_atoms() {
        let (lp, r, sol) = solved(EX1, 2);
        let (m, _) = moment_matrix(&sol, &r, None).unwrap();
        assert_eq!(numerical_rank(&m, DEFAULT_RANK_TOL), 2);
        assert_eq!(check_flatness(&sol, &r, DEFAULT_RANK_TOL), Some(2));
        let cert = certify(&sol, &r, &lp, DEFAULT_RANK_TOL, DEFAULT_SEED);
        assert!(cert.certified, "{cert:#?}");
        let s = (std::f64::consts::PI / 8.0).sin();
        let c = (std::f64::consts::PI / 8.0).cos();
        let mut xs: Vec<f64> = cert.atoms.iter().map(|a| a.x[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + s).abs() < 1e-2 && (xs[1] - s).abs() < 1e-2, "{xs:?}");
        for a in &cert.atoms {
            assert!((a.x[1] - c).abs() < 1e-2);
            assert!((a.aux[0] - s).abs() < 1e-2);
            assert!((a.weight - 0.5).abs() < 1e-3);
        }
        let sos = cert.sos.unwrap();
        assert!(sos.identity_residual <= 1e-5, "{}", sos.identity_residual);
        assert!(sos.min_gram_eigenvalue >= -1e-7);
    }

    #[test]
    fn second_example_one_atom() {
        let (lp, r, sol) = solved(EX2, 2);
        assert_eq!(check_flatness(&sol, &r, DEFAULT_RANK_TOL), Some(1));
        let cert = certify(&sol, &r, &lp, DEFAULT_RANK_TOL, DEFAULT_SEED);
        assert!(cert.certified, "{cert:#?}");
        let a = &cert.atoms[0];
        let expected = [0.8507, -0.5257, 1.9021];
        for (got, want) in a.x.iter().chain(&a.aux).zip(expected) {
            assert!((got - want).abs() < 1e-2, "{a:?}");
        }
        assert!(cert.sos.unwrap().identity_residual <= 1e-5);
    }

    #[test]
    fn dirac_moments_give_back_the_point() {
        let mut p = parse_problem(EX1).unwrap();
        let lp = build_problem(&mut p, None).unwrap();
        let r = build_relaxation(&lp, 2).unwrap();
        let x = [0.6, -0.8];
        let u = eval_lifting(&lp, &x).unwrap();
        let sol = SdpSolution {
            w: r.dirac_moments(&u),
            objective: 0.0,
            dual_objective: 0.0,
            dual_blocks: vec![],
            eq_duals: vec![],
            status: SdpStatus::Optimal,
            iterations: 0,
            residuals: crate::sdp::Residuals { primal: 0.0, dual: 0.0, gap: 0.0 },
        };
        assert_eq!(check_flatness(&sol, &r, DEFAULT_RANK_TOL), Some(1));
        let atoms = extract_atoms(&sol, &r, 1, 0).unwrap();
        for (a, b) in atoms[0].iter().zip(&u) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn two_point_measure_is_recovered_by_the_general_path() {
        let mut p = parse_problem(EX1).unwrap();
        let lp = build_problem(&mut p, None).unwrap();
        let r = build_relaxation(&lp, 2).unwrap();
        let a = eval_lifting(&lp, &[0.6, 0.8]).unwrap();
        let b = eval_lifting(&lp, &[-0.28, -0.96]).unwrap();
        let wa = r.dirac_moments(&a);
        let wb = r.dirac_moments(&b);
        let w: Vec<f64> = wa.iter().zip(&wb).map(|(p, q)| 0.3 * p + 0.7 * q).collect();
        let sol = SdpSolution {
            w,
            objective: 0.0,
            dual_objective: 0.0,
            dual_blocks: vec![],
            eq_duals: vec![],
            status: SdpStatus::Optimal,
            iterations: 0,
            residuals: crate::sdp::Residuals { primal: 0.0, dual: 0.0, gap: 0.0 },
        };
        assert_eq!(check_flatness(&sol, &r, DEFAULT_RANK_TOL), Some(2));
        let mut atoms = extract_atoms(&sol, &r, 2, 7).unwrap();
        atoms.sort_by(|p, q| p[0].total_cmp(&q[0]));
        for (got, want) in atoms.iter().zip([&b, &a]) {
            for (x, y) in got.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-8, "{got:?} vs {want:?}");
            }
        }
        let weights = atom_weights(&sol, &r, &atoms, 2);
        assert!((weights[0] - 0.7).abs() < 1e-8 && (weights[1] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn square_root_at_zero_is_flagged() {
        let (lp, r, sol) = solved("vars x; minimize sqrt(x) + 1/(1 + x); box x in [0, 2];", 2);
        let cert = certify(&sol, &r, &lp, DEFAULT_RANK_TOL, DEFAULT_SEED);
        assert!((cert.rho - 1.0).abs() < 1e-6);
        assert_eq!(cert.d, Some(1));
        assert!(cert.atom_report[0].even_root_boundary);
        let (lp, r, sol) = solved(EX1, 2);
        let cert = certify(&sol, &r, &lp, DEFAULT_RANK_TOL, DEFAULT_SEED);
        assert!(cert.atom_report.iter().all(|a| !a.even_root_boundary));
    }

    #[test]
    fn perturbed_aux_fails_provenance() {
        let mut p = parse_problem(EX1).unwrap();
        let lp = build_problem(&mut p, None).unwrap();
        let s = (std::f64::consts::PI / 8.0).sin();
        let c = (std::f64::consts::PI / 8.0).cos();
        let good = verify_atoms(&[vec![s, c, s]], &lp, (2f64.sqrt() - 1.0) / 2.0);
        assert!(good[0].provenance_ok && good[0].feasible && good[0].matches_rho);
        let bad = verify_atoms(&[vec![s, c, -s]], &lp, (2f64.sqrt() - 1.0) / 2.0);
        assert!(!bad[0].provenance_ok);
        assert!(!bad[0].feasible);
    }

    #[test]
    fn constant_objective_has_constant_sigma() {
        let (lp, r, sol) = solved("vars x; minimize 1; 1 - x^2 >= 0; box x in [-1,1];", 1);
        assert!((sol.objective - 1.0).abs() < 1e-7);
        let sos = extract_sos_certificate(&sol, &r, &lp, 1);
        assert!(sos.identity_residual < 1e-7);
        assert!((sos.rho - 1.0).abs() < 1e-7);
    }

    #[test]
    fn unconverged_low_order_is_not_flat() {
        // box-constrained triangle form: the first relaxation gives -3/2 while
        // the minimum over vertices of the cube is -1
        let src = "vars x1 x2 x3; minimize x1*x2 + x2*x3 + x1*x3; 1 - x1^2 >= 0; 1 - x2^2 >= 0; 1 - x3^2 >= 0;\
                   box x1 in [-1,1]; box x2 in [-1,1]; box x3 in [-1,1];";
        let mut oracle = f64::INFINITY;
        let n = 40;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let (a, b, c) = (
                        -1.0 + 2.0 * i as f64 / n as f64,
                        -1.0 + 2.0 * j as f64 / n as f64,
                        -1.0 + 2.0 * k as f64 / n as f64,
                    );
                    oracle = oracle.min(a * b + b * c + a * c);
                }
            }
        }
        let (_, r, sol) = solved(src, 1);
        assert!(sol.objective < oracle - 0.1, "{} vs {oracle}", sol.objective);
        assert_eq!(check_flatness(&sol, &r, DEFAULT_RANK_TOL), None);
    }
}
