use linkgt::corpus::{random_balanced_graph, run_verify, Mutation, VerifyOptions};
use linkgt::graph::{check_weight_balanced, laplacian, make_khop_ring, SwitchMode, SwitchingSchedule};
use linkgt::linalg::general_eigenvalues;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn verify_suites_pass_and_repeat_exactly() {
    let opts = VerifyOptions { seed: 11, stability_fixtures: 40, mutation: None };
    let first = run_verify(&opts);
    for s in &first {
        assert!(s.ok(), "{s}");
    }
    assert_eq!(first, run_verify(&opts));
}

#[test]
fn negated_feed_is_caught() {
    let opts = VerifyOptions {
        seed: 11,
        stability_fixtures: 40,
        mutation: Some(Mutation::NegatedGradientFeed),
    };
    let results = run_verify(&opts);
    let zero = results.iter().find(|s| s.name == "zero-eigenvalue").expect("suite present");
    assert!(!zero.ok());
}

fn zero_eigen_count(l: &nalgebra::DMatrix<f64>) -> usize {
    general_eigenvalues(l)
        .unwrap()
        .iter()
        .filter(|z| z.norm() < 1e-9)
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn random_balanced_laplacian_has_simple_zero(seed in any::<u64>(), n in 3usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_balanced_graph(n, &mut rng);
        prop_assert!(g.validate().is_ok());
        let l = laplacian(&g);
        for i in 0..n {
            prop_assert!(l.matrix().row(i).sum().abs() < 1e-12);
            prop_assert!(l.matrix().column(i).sum().abs() < 1e-12);
        }
        prop_assert_eq!(zero_eigen_count(l.matrix()), 1);
    }

    #[test]
    fn switching_keeps_balance_and_replays(seed in any::<u64>(), t in 0.0f64..50.0) {
        let base = make_khop_ring(7, 2, 0.8).unwrap();
        let sched = SwitchingSchedule::new(base, 0.25, seed, SwitchMode::Permute).unwrap();
        let g = sched.graph_at(t);
        prop_assert!(check_weight_balanced(&g, 1e-12).balanced);
        prop_assert!(g.is_strongly_connected());
        prop_assert_eq!(&g, &sched.graph_at(t));
        let k = sched.interval_index(t);
        prop_assert_eq!(&g, &sched.graph_for_interval(k));
        let again = SwitchingSchedule::new(sched.base().clone(), 0.25, seed, SwitchMode::Permute).unwrap();
        prop_assert_eq!(g, again.graph_at(t));
    }

    #[test]
    fn ring_spectrum_has_simple_zero(n in 3usize..12, k in 1usize..6, w in 0.05f64..0.99) {
        prop_assume!(2 * k <= n - 1);
        let g = make_khop_ring(n, k, w).unwrap();
        prop_assert!(g.is_symmetric());
        prop_assert_eq!(zero_eigen_count(laplacian(&g).matrix()), 1);
    }
}
