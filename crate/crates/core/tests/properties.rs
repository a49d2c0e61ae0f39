use koed::mocu::{estimate_mocu, mocu_from_costs, outcome_probabilities};
use koed::surrogate::{predict, BundleMeta};
use koed::types::{pair_from_index, pair_index};
use koed::{SimConfig, UncertaintyClass, WeightBundle};
use proptest::prelude::*;

fn class_strategy(n: usize) -> impl Strategy<Value = UncertaintyClass> {
    let m = n * (n - 1) / 2;
    (
        prop::collection::vec(-3.0..3.0f64, n),
        prop::collection::vec((0.0..2.0f64, 0.0..1.0f64), m),
    )
        .prop_map(|(omegas, iv)| {
            let lower = iv.iter().map(|p| p.0).collect();
            let upper = iv.iter().map(|p| p.0 + p.1).collect();
            UncertaintyClass::new(omegas, lower, upper).unwrap()
        })
}

proptest! {
    #[test]
    fn pair_index_round_trips(n in 2usize..12, seed in any::<usize>()) {
        let k = seed % (n * (n - 1) / 2);
        let (i, j) = pair_from_index(k, n).unwrap();
        prop_assert!(1 <= i && i < j && j <= n);
        prop_assert_eq!(pair_index(i, j, n).unwrap(), k);
    }

    #[test]
    fn mocu_of_costs_is_nonnegative(costs in prop::collection::vec(0.0..50.0f64, 1..64)) {
        prop_assert!(mocu_from_costs(&costs) >= 0.0);
    }

    #[test]
    fn outcome_probabilities_sum_to_one(class in class_strategy(4), k in 0usize..6) {
        let e = class.experiments()[k];
        let (p_sync, p_unsync) = outcome_probabilities(&class, e).unwrap();
        prop_assert!((0.0..=1.0).contains(&p_sync));
        prop_assert!((p_sync + p_unsync - 1.0).abs() < 1e-12);
    }

    #[test]
    fn surrogate_ignores_node_order(class in class_strategy(5), seed in 0u64..4) {
        let bundle: WeightBundle = WeightBundle::random(BundleMeta::new(8, 4), seed).unwrap();
        let base = predict(&bundle, &class);
        let permuted = class.permuted(&[3, 0, 4, 1, 2]).unwrap();
        prop_assert!((predict(&bundle, &permuted) - base).abs() <= 1e-9 * (1.0 + base.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn estimate_is_nonnegative(class in class_strategy(3), seed in any::<u64>()) {
        let w = class.mean_frequency();
        let est = estimate_mocu(&class, 16, w, &SimConfig::default(), seed).unwrap();
        prop_assert!(est.value >= 0.0);
    }
}
