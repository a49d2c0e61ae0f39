//! Monte Carlo estimation of the mean objective cost of uncertainty and of the
//! expected remaining MOCU after a pairwise experiment.
//!
//! Sample `i` of an estimate draws its couplings from its own ChaCha8 stream
//! `(seed, i)`, one uniform variate per pair in pair-index order, mapped onto
//! the pair's interval by inverse CDF. Two estimates with the same seed and
//! `k` therefore see the same variates, which is what makes comparisons across
//! conditioned classes low-noise (common random numbers).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{min_control_costs, SimConfig};
use crate::error::{Error, Result};
use crate::json::{serialize_scalar, serialize_scalars};
use crate::kernel::LANES;
use crate::oed::apply_outcome;
use crate::scalar::Scalar;
use crate::types::{ExperimentId, ExperimentOutcome, KuramotoInstance, UncertaintyClass};

/// Result of [`estimate_mocu`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct MocuEstimate<T> {
    #[serde(serialize_with = "serialize_scalar")]
    pub value: T,
    pub k: usize,
    pub seed: u64,
    pub elapsed_seconds: f64,
    /// Standard error of the sample mean of ξ; zero for `k = 1`.
    #[serde(serialize_with = "serialize_scalar")]
    pub std_error: T,
    /// Per-sample ξ values in sample order, when retained.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "serialize_opt_scalars"
    )]
    pub samples: Option<Vec<T>>,
}

fn serialize_opt_scalars<T: Scalar, S: serde::Serializer>(
    values: &Option<Vec<T>>,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    match values {
        Some(v) => serialize_scalars(v, serializer),
        None => serializer.serialize_none(),
    }
}

/// Options for [`estimate_mocu_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EstimateOptions {
    /// Keep the per-sample ξ values in the estimate.
    pub keep_samples: bool,
}

/// How the conditioned-class estimates inside [`expected_remaining_mocu`] draw
/// their samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Every conditioned class reuses the caller's seed.
    #[default]
    Common,
    /// Each (experiment, outcome) branch gets its own derived seed.
    Independent,
}

/// Draws one model from the class: every coupling independently uniform on
/// its interval.
pub fn sample_instance<T: Scalar, R: Rng + ?Sized>(
    class: &UncertaintyClass<T>,
    rng: &mut R,
) -> KuramotoInstance<T> {
    let couplings = class
        .lower()
        .iter()
        .zip(class.upper())
        .map(|(&lo, &hi)| {
            let u = T::lit(rng.gen::<f64>());
            (lo + u * (hi - lo)).min(hi)
        })
        .collect();
    KuramotoInstance::new(class.omegas().to_vec(), couplings)
        .expect("draws from a valid class are valid")
}

/// The generator for sample `index` of an estimate seeded with `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `min_control_cost` for `k` samples of the class, in sample order.
pub fn sample_costs<T: Scalar>(
    class: &UncertaintyClass<T>,
    k: usize,
    control_omega: T,
    config: &SimConfig<T>,
    seed: u64,
) -> Result<Vec<T>> {
    config.validate()?;
    // chunks are a multiple of the lane count so every batch fills its lanes
    const CHUNK: usize = 16 * LANES;
    let chunks: Vec<Result<Vec<T>>> = (0..k.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(k);
            let start = range.start;
            let instances: Vec<_> = range
                .map(|i| sample_instance(class, &mut sample_rng(seed, i)))
                .collect();
            min_control_costs(&instances, control_omega, config)?
                .into_iter()
                .enumerate()
                .map(|(off, r)| {
                    r.map_err(|e| Error::Sample {
                        index: start + off,
                        source: Box::new(e),
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(k);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// `max_i ξ_i − mean_i ξ_i`, accumulated as the mean of the non-negative
/// gaps in sample order (exactly zero for a single sample).
pub fn mocu_from_costs<T: Scalar>(costs: &[T]) -> T {
    let max = costs.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = costs.iter().map(|&x| max - x).sum();
    total / T::from_usize_lossy(costs.len())
}

fn std_error<T: Scalar>(costs: &[T]) -> T {
    let k = costs.len();
    if k < 2 {
        return T::zero();
    }
    let kt = T::from_usize_lossy(k);
    let mean = costs.iter().copied().sum::<T>() / kt;
    let var = costs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>()
        / T::from_usize_lossy(k - 1);
    (var / kt).sqrt()
}

/// MOCU of the class from `k` samples.
pub fn estimate_mocu<T: Scalar>(
    class: &UncertaintyClass<T>,
    k: usize,
    control_omega: T,
    config: &SimConfig<T>,
    seed: u64,
) -> Result<MocuEstimate<T>> {
    estimate_mocu_with(class, k, control_omega, config, seed, EstimateOptions::default())
}

pub fn estimate_mocu_with<T: Scalar>(
    class: &UncertaintyClass<T>,
    k: usize,
    control_omega: T,
    config: &SimConfig<T>,
    seed: u64,
    options: EstimateOptions,
) -> Result<MocuEstimate<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("sample count k must be at least 1".into()));
    }
    let started = Instant::now();
    let costs = sample_costs(class, k, control_omega, config, seed)?;
    Ok(MocuEstimate {
        value: mocu_from_costs(&costs),
        k,
        seed,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        std_error: std_error(&costs),
        samples: options.keep_samples.then_some(costs),
    })
}

/// Outcome probabilities `(P(sync), P(no sync))` of a pairwise experiment
/// under the uniform prior on the pair's interval. They sum to one exactly.
pub fn outcome_probabilities<T: Scalar>(
    class: &UncertaintyClass<T>,
    experiment: ExperimentId,
) -> Result<(T, T)> {
    let k = experiment.index(class.n())?;
    let (lo, hi) = class.bounds(k);
    let p_sync = if hi > lo {
        let t = class.sync_threshold(experiment)?;
        (hi - t) / (hi - lo)
    } else if class.lock_threshold(experiment) <= lo {
        T::one()
    } else {
        T::zero()
    };
    Ok((p_sync, T::one() - p_sync))
}

/// Per-branch detail of an expected-remaining-MOCU evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RemainingMocu<T> {
    pub value: T,
    pub p_sync: T,
    pub p_unsync: T,
    /// MOCU of the class conditioned on synchronization; `None` when skipped.
    pub sync_mocu: Option<T>,
    pub unsync_mocu: Option<T>,
}

/// Evaluates `Σ_B P(B) · M(A | B)` with the branch MOCU supplied by `mocu`.
/// Zero-probability branches are skipped.
pub fn expected_remaining_with<T: Scalar, F>(
    class: &UncertaintyClass<T>,
    experiment: ExperimentId,
    mut mocu: F,
) -> Result<RemainingMocu<T>>
where
    F: FnMut(&UncertaintyClass<T>, ExperimentOutcome) -> Result<T>,
{
    let (p_sync, p_unsync) = outcome_probabilities(class, experiment)?;
    let mut branch = |p: T, synchronized: bool| -> Result<Option<T>> {
        if p > T::zero() {
            let outcome = ExperimentOutcome { synchronized };
            let conditioned = apply_outcome(class, experiment, outcome)?;
            mocu(&conditioned, outcome).map(Some)
        } else {
            Ok(None)
        }
    };
    let sync_mocu = branch(p_sync, true)?;
    let unsync_mocu = branch(p_unsync, false)?;
    let value = sync_mocu.map_or(T::zero(), |m| p_sync * m)
        + unsync_mocu.map_or(T::zero(), |m| p_unsync * m);
    Ok(RemainingMocu {
        value,
        p_sync,
        p_unsync,
        sync_mocu,
        unsync_mocu,
    })
}

/// A sub-seed for `tag`, drawn from a stream of `seed` that sample streams
/// never reach.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 40) + tag);
    rng.gen()
}

/// Seed of one branch in [`NoiseMode::Independent`].
pub fn branch_seed(seed: u64, pair: usize, synchronized: bool) -> u64 {
    derive_seed(seed, 2 * pair as u64 + u64::from(synchronized))
}

/// Expected remaining MOCU `R(i, j)` of an experiment, estimated by sampling.
#[allow(clippy::too_many_arguments)]
pub fn expected_remaining_mocu<T: Scalar>(
    class: &UncertaintyClass<T>,
    experiment: ExperimentId,
    k: usize,
    control_omega: T,
    config: &SimConfig<T>,
    seed: u64,
    mode: NoiseMode,
) -> Result<RemainingMocu<T>> {
    let pair = experiment.index(class.n())?;
    expected_remaining_with(class, experiment, |c, outcome| {
        let s = match mode {
            NoiseMode::Common => seed,
            NoiseMode::Independent => branch_seed(seed, pair, outcome.synchronized),
        };
        Ok(estimate_mocu(c, k, control_omega, config, s)?.value)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::published_n5;

    fn cfg() -> SimConfig<f64> {
        SimConfig::default()
    }

    #[test]
    fn zero_width_class_draws_the_bounds() {
        let c = UncertaintyClass::new(vec![0.0, 1.0, 3.0], vec![0.2, 0.0, 0.7], vec![0.2, 0.0, 0.7])
            .unwrap();
        let inst = sample_instance(&c, &mut sample_rng(5, 0));
        assert_eq!(inst.couplings(), &[0.2, 0.0, 0.7]);
    }

    #[test]
    fn uniform_draws_have_the_right_mean() {
        let c = UncertaintyClass::<f64>::new(vec![0.0, 1.0, 3.0], vec![0.0; 3], vec![1.0; 3]).unwrap();
        let mut rng = sample_rng(11, 0);
        let mut sums = [0.0; 3];
        for _ in 0..10_000 {
            let inst = sample_instance(&c, &mut rng);
            for (s, a) in sums.iter_mut().zip(inst.couplings()) {
                assert!((0.0..=1.0).contains(a));
                *s += a;
            }
        }
        for s in sums {
            assert!((s / 10_000.0 - 0.5).abs() < 0.02, "{s}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let c = published_n5::<f64>();
        let a = sample_instance(&c, &mut sample_rng(3, 17));
        let b = sample_instance(&c, &mut sample_rng(3, 17));
        let other = sample_instance(&c, &mut sample_rng(3, 18));
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn single_sample_is_exactly_zero() {
        let e = estimate_mocu(&published_n5::<f64>(), 1, 0.77, &cfg(), 9).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn degenerate_class_has_zero_mocu() {
        let c = published_n5::<f64>();
        let point = UncertaintyClass::new(c.omegas().to_vec(), c.lower().to_vec(), c.lower().to_vec())
            .unwrap();
        let e = estimate_mocu(&point, 16, c.mean_frequency(), &cfg(), 1).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn zero_samples_is_an_error() {
        let r = estimate_mocu(&published_n5::<f64>(), 0, 0.0, &cfg(), 1);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mocu_from_costs_matches_definition() {
        let xs = [0.5, 0.25, 1.0, 0.75];
        assert_eq!(mocu_from_costs(&xs), 1.0 - 0.625);
    }

    #[test]
    fn estimate_is_independent_of_thread_count() {
        let c = published_n5::<f64>();
        let w = c.mean_frequency();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let opts = EstimateOptions { keep_samples: true };
                    estimate_mocu_with(&c, 150, w, &cfg(), 4, opts).unwrap()
                })
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn failures_carry_the_sample_index() {
        let c = UncertaintyClass::new(vec![0.0, 40.0], vec![0.0], vec![0.0]).unwrap();
        let small = SimConfig { max_control: 4.0, ..cfg() };
        match estimate_mocu(&c, 3, 20.0, &small, 0) {
            Err(Error::Sample { index: 0, source }) => {
                assert!(matches!(*source, Error::NoSynchronization { .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn outcome_probability_examples() {
        let c = UncertaintyClass::<f64>::new(vec![0.0, 1.2], vec![0.5], vec![1.0]).unwrap();
        let e = ExperimentId::new(1, 2, 2).unwrap();
        let (p1, p0) = outcome_probabilities(&c, e).unwrap();
        assert!((p1 - 0.8).abs() < 1e-15 && (p0 - 0.2).abs() < 1e-15);
        assert_eq!(p1 + p0, 1.0);

        // threshold below / above the interval
        let below = UncertaintyClass::new(vec![0.0, 0.4], vec![0.5], vec![1.0]).unwrap();
        assert_eq!(outcome_probabilities(&below, e).unwrap(), (1.0, 0.0));
        let above = UncertaintyClass::new(vec![0.0, 3.0], vec![0.5], vec![1.0]).unwrap();
        assert_eq!(outcome_probabilities(&above, e).unwrap(), (0.0, 1.0));

        // zero-width intervals follow the lock predicate at the point value
        let point = |dw: f64| UncertaintyClass::new(vec![0.0, dw], vec![0.5], vec![0.5]).unwrap();
        assert_eq!(outcome_probabilities(&point(1.0), e).unwrap(), (1.0, 0.0));
        assert_eq!(outcome_probabilities(&point(1.01), e).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn uninformative_experiment_leaves_mocu_unchanged() {
        let c = published_n5::<f64>();
        let w = c.mean_frequency();
        // a pair whose lock threshold sits outside its interval
        let e = c
            .experiments()
            .into_iter()
            .find(|&e| {
                let (lo, hi) = c.bounds(e.index(5).unwrap());
                let t = c.lock_threshold(e);
                t <= lo || t >= hi
            })
            .expect("published class has an uninformative pair");
        let r = expected_remaining_mocu(&c, e, 64, w, &cfg(), 2, NoiseMode::Common).unwrap();
        let m = estimate_mocu(&c, 64, w, &cfg(), 2).unwrap();
        assert_eq!(r.value.to_bits(), m.value.to_bits());
        assert!(r.sync_mocu.is_none() || r.unsync_mocu.is_none());
    }

    #[test]
    fn remaining_is_the_weighted_branch_sum() {
        let c = published_n5::<f64>();
        let e = ExperimentId::new(1, 2, 5).unwrap();
        let r = expected_remaining_with(&c, e, |_, o| Ok(if o.synchronized { 1.0 } else { 3.0 }))
            .unwrap();
        assert!((r.value - (r.p_sync + 3.0 * r.p_unsync)).abs() < 1e-15);
    }

    #[test]
    fn independent_mode_uses_distinct_branch_seeds() {
        let a = branch_seed(1, 0, true);
        assert_ne!(a, branch_seed(1, 0, false));
        assert_ne!(a, branch_seed(1, 1, true));
        assert_eq!(a, branch_seed(1, 0, true));
    }

    #[test]
    fn estimate_json_has_the_documented_fields() {
        let e = estimate_mocu(&published_n5::<f64>(), 2, 0.77, &cfg(), 42).unwrap();
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        for key in ["value", "k", "seed", "elapsed_seconds", "std_error"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v.get("samples").is_none());
        let back: MocuEstimate<f64> = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }
}
