use koed::fixtures::published_n5;
use koed::oed::{
    apply_outcome, conduct_experiment, run_oed, select_experiment, GroundTruth, OedPolicy,
    OedSettings,
};
use koed::{SimConfig, UncertaintyClass};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_settings() -> OedSettings<f64> {
    OedSettings {
        trials: 3,
        truth_seed: 1,
        eval_k: 64,
        eval_repeats: 2,
        eval_seed: 2,
        config: SimConfig::default(),
        simulate_outcomes: false,
    }
}

#[test]
fn truth_stays_inside_the_running_class() {
    let start: UncertaintyClass = published_n5();
    for trial in 0..20 {
        let truth = GroundTruth::draw(&start, 9, trial);
        let mut class = start.clone();
        for e in start.experiments() {
            class = apply_outcome(&class, e, conduct_experiment(&truth, e)).unwrap();
            for (k, a) in truth.instance.couplings().iter().enumerate() {
                let (lo, hi) = class.bounds(k);
                assert!(lo <= *a && *a <= hi, "trial {trial}, pair {k}");
            }
        }
    }
}

#[test]
fn entropy_picks_widest_interval() {
    let class = UncertaintyClass::new(vec![0.0, 1.0, 3.0], vec![0.1, 0.2, 0.3], vec![0.6, 0.4, 1.0])
        .unwrap();
    let remaining = class.experiments();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let picked = select_experiment(&class, &remaining, &OedPolicy::Entropy, &SimConfig::default(), &mut rng).unwrap();
    assert_eq!(picked.index(3).unwrap(), 2);
}

#[test]
fn traces_run_every_pair_once_with_bounded_curves() {
    let class: UncertaintyClass = published_n5();
    for policy in [OedPolicy::Entropy, OedPolicy::Random { seed: 4 }] {
        let traces = run_oed(&class, &policy, &small_settings()).unwrap();
        assert_eq!(traces.len(), 3);
        for t in &traces {
            assert_eq!(t.steps.len(), 10);
            assert!(t.has_distinct_experiments());
            assert!(t.curve().iter().all(|m| *m >= 0.0));
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let class: UncertaintyClass = published_n5();
    let policy = OedPolicy::Random { seed: 4 };
    let a = run_oed(&class, &policy, &small_settings()).unwrap();
    let b = run_oed(&class, &policy, &small_settings()).unwrap();
    let order = |ts: &[koed::types::OedTrace]| {
        ts.iter()
            .map(|t| t.steps.iter().map(|s| (s.experiment, s.mocu_mean)).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(order(&a), order(&b));
}
