use glab_core::ambiguity::{iid_sum_expect, nested_expect, AmbiguitySet, DiscreteDistribution, LatticeSpec};
use glab_core::axioms::{axiom_pairs, random_ambiguity_set, verify_axioms};
use glab_core::function::{named, named_pair, Growth, TestFunction};
use glab_core::gfunc::{g_1d, g_eval, verify_g_laws, GFunction, SigmaInterval};
use glab_core::lab::{fdd_prelimit, run_clt_experiment, ArrayMode, ArraySpec, Scaling};
use glab_core::pde::{gbm_fdd_expect, gnormal_expect, solve_gheat, solve_gheat_snapshots, Grid, PdeOptions};
use glab_core::tree::{
    random_tree, rosenthal_first, verify_operator_laws, MartingaleArray, MeanMode, TreeGen,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_law() -> impl Strategy<Value = AmbiguitySet> {
    // up to 3 points in [-2, 2], up to 2 members
    (
        prop::collection::btree_set(-2i32..=2, 1..=3),
        1usize..=2,
        any::<u64>(),
    )
        .prop_map(|(pts, m, seed)| {
            let pts: Vec<f64> = pts.into_iter().map(f64::from).collect();
            let mut state = seed | 1;
            let members = (0..m)
                .map(|_| {
                    let w: Vec<f64> = pts
                        .iter()
                        .map(|_| {
                            state ^= state << 13;
                            state ^= state >> 7;
                            state ^= state << 17;
                            0.05 + (state % 1000) as f64 / 1000.0
                        })
                        .collect();
                    let t: f64 = w.iter().sum();
                    let mut p: Vec<f64> = w.iter().map(|x| x / t).collect();
                    let head: f64 = p[..p.len() - 1].iter().sum();
                    *p.last_mut().unwrap() = 1.0 - head;
                    DiscreteDistribution::scalar(&pts, &p).unwrap()
                })
                .collect();
            AmbiguitySet::new(LatticeSpec::centered(1, 1.0).unwrap(), members).unwrap()
        })
}

fn band() -> AmbiguitySet {
    AmbiguitySet::bernoulli_band(0.5, 1.0).unwrap()
}

fn band_g() -> GFunction {
    GFunction::from_interval(SigmaInterval::new(0.5, 1.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn axioms_hold_for_any_seed(seed in any::<u64>()) {
        let r = verify_axioms(4, seed).unwrap();
        prop_assert_eq!(r.total_violations(), 0, "{:?}", r);
    }

    #[test]
    fn lower_equals_upper_iff_single_member(seed in any::<u64>()) {
        let x = random_ambiguity_set(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut strict = false;
        for (f, g) in axiom_pairs() {
            for h in [f, g] {
                let up = x.expect_upper(&h).unwrap().value;
                let lo = x.expect_lower(&h).unwrap().value;
                prop_assert!(lo <= up + 1e-12);
                strict |= up - lo > 1e-12;
            }
        }
        // point indicators separate distinct members
        for m in x.members() {
            for z in m.support() {
                let z = z.clone();
                let ind = TestFunction::vector("1{z}", Growth::Bounded, move |p| f64::from(p == z.as_slice()));
                let gap = x.expect_upper(&ind).unwrap().value - x.expect_lower(&ind).unwrap().value;
                strict |= gap > 1e-12;
            }
        }
        let distinct = x.members().iter().skip(1).any(|m| m != &x.members()[0]);
        prop_assert_eq!(strict, distinct);
    }

    #[test]
    fn dp_equals_nesting_up_to_six(x in scalar_law(), n in 1usize..=6, id in prop::sample::select(vec!["pos", "x2", "sin", "x3", "ind_pos"])) {
        let phi = named(id).unwrap();
        let dp = iid_sum_expect(&x, n, &phi, 0.5).unwrap();
        let refs = vec![&x; n];
        let f = TestFunction::new("nested", n, Growth::Power(3.0), move |z| phi.eval(&[0.5 * z.iter().sum::<f64>()]));
        let nested = nested_expect(&refs, &f).unwrap();
        prop_assert!((dp - nested).abs() < 1e-12, "{} vs {}", dp, nested);
    }

    #[test]
    fn dp_ignores_lattice_origin(x in scalar_law(), shift in -5i32..=5, n in 1usize..=20) {
        let moved = AmbiguitySet::new(
            LatticeSpec::new(1.0, vec![f64::from(shift)]).unwrap(),
            x.members().to_vec(),
        ).unwrap();
        for id in ["pos", "sin", "x2m1pos"] {
            let phi = named(id).unwrap();
            prop_assert_eq!(
                iid_sum_expect(&x, n, &phi, 0.3).unwrap(),
                iid_sum_expect(&moved, n, &phi, 0.3).unwrap()
            );
        }
    }

    #[test]
    fn operator_laws_on_generated_trees(seed in any::<u64>()) {
        let tree = random_tree(&TreeGen { max_depth: 4, max_children: 3, ..TreeGen::default() }, seed);
        let z = MartingaleArray::from_tree(&tree);
        let d = tree.depth();
        let s = tree.path_variable(|p| p.iter().map(|&id| z.get(id)[0]).sum());
        let mid = tree.variable(d / 2, |id| tree.node(id).increment[0].sin());
        let bump = s.map(|v| (v - 0.25).max(0.0).powi(2) - v.abs());
        let r = verify_operator_laws(&tree, &[s, mid, bump]).unwrap();
        prop_assert!(r.all_pass(), "{:?}", r);
    }

    #[test]
    fn martingale_transport_on_mean_zero_trees(seed in any::<u64>()) {
        let tree = random_tree(&TreeGen::with_mode(MeanMode::Zero), seed);
        let z = MartingaleArray::from_tree(&tree);
        let terminal = tree.path_variable(|p| p.iter().map(|&id| z.get(id)[0]).sum());
        for k in 0..=tree.depth() {
            let running = tree.variable(k, |id| tree.path(id).iter().map(|&i| z.get(i)[0]).sum());
            let up = tree.cond_expect(&terminal, k).unwrap();
            let lo = tree.cond_expect_lower(&terminal, k).unwrap();
            for i in 0..running.values.len() {
                prop_assert!((up.values[i] - running.values[i]).abs() < 1e-10);
                prop_assert!((lo.values[i] - running.values[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rosenthal_first_never_fails_when_means_nonpositive(seed in any::<u64>()) {
        let tree = random_tree(&TreeGen::with_mode(MeanMode::Nonpositive), seed);
        let z = MartingaleArray::from_tree(&tree);
        let r = rosenthal_first(&tree, &z).unwrap();
        prop_assert!(r.pass, "{:?}", r);
    }

    #[test]
    fn g_sublinear_monotone(seed in any::<u64>(), d in 1usize..=2) {
        let g = if d == 1 {
            band_g()
        } else {
            GFunction::from_rows(2, &[vec![1.0, 0.2, 0.2, 0.4], vec![0.3, -0.1, -0.1, 0.9], vec![0.0, 0.0, 0.0, 0.0]]).unwrap()
        };
        let r = verify_g_laws(&g, 50, seed).unwrap();
        prop_assert!(r.all_pass(), "{:?}", r);
    }

    #[test]
    fn g_1d_matches_g_eval(alpha in -50.0f64..50.0) {
        let s = SigmaInterval::new(0.5, 1.0).unwrap();
        let a = DMatrix::from_element(1, 1, alpha);
        prop_assert_eq!(g_1d(s, alpha), g_eval(&band_g(), &a).unwrap());
    }

    #[test]
    fn g_homogeneity_exact_for_powers_of_two(seed in any::<u64>(), e in -4i32..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(2, 2, |_, _| rand::Rng::gen_range(&mut rng, -3.0..3.0));
        let a = (&a + a.transpose()) * 0.5;
        let g = GFunction::from_rows(2, &[vec![1.0, 0.2, 0.2, 0.4], vec![0.3, -0.1, -0.1, 0.9]]).unwrap();
        let lambda = 2f64.powi(e);
        prop_assert_eq!(g_eval(&g, &(&a * lambda)).unwrap(), lambda * g_eval(&g, &a).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_is_monotone_in_data(shift in 0.0f64..1.0, amp in 0.1f64..2.0) {
        let g = band_g();
        let grid = Grid::auto(&g, 3.0, 0.1, 0.5).unwrap();
        let f1 = TestFunction::scalar("f1", Growth::Bounded, |x| x.sin());
        let f2 = TestFunction::scalar("f2", Growth::Bounded, move |x| x.sin() + amp * (x - shift).cos().powi(2));
        let (_, a) = solve_gheat_snapshots(&g, &f1, &grid, 1).unwrap();
        let (_, b) = solve_gheat_snapshots(&g, &f2, &grid, 1).unwrap();
        for (u, v) in a.iter().zip(&b) {
            for (x, y) in u.values.iter().zip(&v.values) {
                prop_assert!(x <= y);
            }
        }
    }

    #[test]
    fn solver_is_sublinear_in_data(lambda in 0.0f64..3.0, c in -2.0f64..2.0) {
        let g = band_g();
        let grid = Grid::auto(&g, 4.0, 0.1, 0.5).unwrap();
        let f = named("sin").unwrap();
        let h = named("abs").unwrap();
        let uf = solve_gheat(&g, &f, &grid).unwrap();
        let uh = solve_gheat(&g, &h, &grid).unwrap();
        let sum = solve_gheat(&g, &f.add(&h), &grid).unwrap();
        let scaled = solve_gheat(&g, &f.scale(lambda), &grid).unwrap();
        let konst = solve_gheat(&g, &TestFunction::constant(c), &grid).unwrap();
        for i in 0..grid.len() {
            prop_assert!(sum.values[i] <= uf.values[i] + uh.values[i] + 1e-8);
            prop_assert!((scaled.values[i] - lambda * uf.values[i]).abs() < 1e-8);
            prop_assert_eq!(konst.values[i], c);
        }
    }

    #[test]
    fn singleton_theta_is_classical(v in 0.1f64..1.0) {
        let g = GFunction::from_rows(1, &[vec![v]]).unwrap();
        let h = 0.05;
        let out = gnormal_expect(&g, &named("x2").unwrap(), &PdeOptions { h: Some(h), ..Default::default() }).unwrap();
        prop_assert!((out.value - v).abs() < 2.0 * h * h);
        let neg = gnormal_expect(&g, &named("neg_x2").unwrap(), &PdeOptions { h: Some(h), ..Default::default() }).unwrap();
        prop_assert!((neg.value + v).abs() < 2.0 * h * h);
    }

    #[test]
    fn stability_of_independent_copies(alpha in 0.2f64..1.5, beta in 0.2f64..1.5) {
        let g = band_g();
        let r = (alpha * alpha + beta * beta).sqrt();
        let s = alpha * alpha / (r * r);
        let opts = PdeOptions { h: Some(0.05), ..Default::default() };
        let direct = gnormal_expect(&g, &named("sin").unwrap().rescale_argument(r), &opts).unwrap();
        let psi = TestFunction::new("sin(r*x2)", 2, Growth::Bounded, move |x| (r * x[1]).sin());
        let split = gbm_fdd_expect(&g, &[s, 1.0], &psi, &opts).unwrap();
        prop_assert!(
            (direct.value - split.value).abs() <= direct.error_bar + split.error_bar + 2e-3,
            "{:?} vs {:?}", direct, split
        );
    }

    #[test]
    fn linear_functionals_vanish_for_mean_zero_specs(lo in 0.0f64..1.0, n in 1usize..40) {
        let x = AmbiguitySet::bernoulli_band(lo, 1.0).unwrap();
        let spec = ArraySpec::iid(x, vec![n, n + 7]).unwrap();
        let opts = PdeOptions { h: Some(0.1), refine: false, ..Default::default() };
        let r = run_clt_experiment(&spec, &[named("x").unwrap(), named("neg_x").unwrap()], &opts).unwrap();
        for row in &r.rows {
            prop_assert!(row.prelimit.abs() < 1e-12, "{}", row.prelimit);
        }
    }

    #[test]
    fn fdd_increments_are_stationary(start in 1usize..6, width in 1usize..4) {
        let spec = ArraySpec::new(ArrayMode::Iid(band()), vec![24], Scaling::SqrtN).unwrap();
        let psi = named_pair("incr_sq").unwrap();
        let t0 = start as f64 / 12.0;
        let t1 = (start + width) as f64 / 12.0;
        let a = fdd_prelimit(&spec, 24, &[t0, t1], &psi).unwrap();
        let b = fdd_prelimit(&spec, 24, &[1.0 / 12.0, (1 + width) as f64 / 12.0], &psi).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
