mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_expr, rel_close};
use semialg::expr::{parse_expr, ExprPool, Sense, VarBox};
use semialg::lift::{build_problem_parts, eval_lifting};

fn names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn min_max_reduce_to_abs(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = ExprPool::new(n);
        let f = random_expr(&mut rng, &mut pool, 3);
        let g = random_expr(&mut rng, &mut pool, 3);
        let lo = pool.min(&f, &g);
        let hi = pool.max(&f, &g);
        for _ in 0..50 {
            let x = point(&mut rng, n);
            let (a, b) = (f.eval(&x).unwrap(), g.eval(&x).unwrap());
            let (mn, mx) = (lo.eval(&x).unwrap(), hi.eval(&x).unwrap());
            prop_assert!(rel_close(2.0 * mn, (a + b) - (a - b).abs(), 1e-10));
            prop_assert!(rel_close(2.0 * mx, (a + b) + (a - b).abs(), 1e-10));
        }
    }

    #[test]
    fn printed_expressions_parse_back(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = ExprPool::new(n);
        let e = random_expr(&mut rng, &mut pool, 4);
        let text = e.display_with(&names(n)).to_string();
        let mut fresh = ExprPool::new(n);
        let back = parse_expr(&text, &names(n), &mut fresh).unwrap();
        prop_assert!(back.structurally_eq(&e), "{}", text);
    }

    #[test]
    fn interval_enclosures_contain_values(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = ExprPool::new(n);
        let e = random_expr(&mut rng, &mut pool, 4);
        let iv = e.interval_eval(&VarBox::cube(n, -1.0, 1.0)).unwrap();
        for _ in 0..200 {
            let v = e.eval(&point(&mut rng, n)).unwrap();
            let slop = 1e-12 * v.abs().max(1.0);
            prop_assert!(iv.lo - slop <= v && v <= iv.hi + slop, "{} not in [{}, {}]", v, iv.lo, iv.hi);
        }
    }

    #[test]
    fn lifted_objective_matches_expression(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = ExprPool::new(n);
        let e = random_expr(&mut rng, &mut pool, 4);
        let lp = build_problem_parts(&mut pool, &names(n), Sense::Minimize, &e, &[], &VarBox::cube(n, -1.0, 1.0), None).unwrap();
        for _ in 0..100 {
            let x = point(&mut rng, n);
            let lifted = lp.objective.eval(&eval_lifting(&lp, &x).unwrap());
            prop_assert!(rel_close(lifted, e.eval(&x).unwrap(), 1e-9));
        }
    }
}
