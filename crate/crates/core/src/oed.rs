//! Sequential experimental design over pairwise synchronization experiments.
//!
//! A trial draws a hidden true model from the class, then repeatedly selects
//! an experiment, observes its outcome on the true model and tightens the
//! corresponding bound, until every pair has been measured. After each update
//! the current class is scored by averaging repeated sampling estimates.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{is_synchronized, SimConfig};
use crate::error::{Error, Result};
use crate::mocu::{derive_seed, estimate_mocu, expected_remaining_mocu, sample_instance, sample_rng, NoiseMode};
use crate::scalar::Scalar;
use crate::surrogate::{predict_expected_remaining, WeightBundle};
use crate::types::{
    ExperimentId, ExperimentOutcome, KuramotoInstance, OedTrace, TraceStep, UncertaintyClass,
};

/// Names of the selection strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Sampling,
    Surrogate,
    SurrogateIterative,
    Entropy,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Sampling,
        PolicyKind::Surrogate,
        PolicyKind::SurrogateIterative,
        PolicyKind::Entropy,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Sampling => "sampling",
            PolicyKind::Surrogate => "surrogate",
            PolicyKind::SurrogateIterative => "surrogate-iterative",
            PolicyKind::Entropy => "entropy",
            PolicyKind::Random => "random",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown OED method `{s}`")))
    }
}

/// A selection strategy with its parameters.
#[derive(Clone, Debug)]
pub enum OedPolicy<T> {
    /// Rank once by sampled expected remaining MOCU on the initial class.
    Sampling { k: usize, seed: u64, noise: NoiseMode },
    /// Rank by surrogate expected remaining MOCU; `iterative` re-ranks after
    /// every update.
    Surrogate {
        bundle: Arc<WeightBundle<T>>,
        iterative: bool,
    },
    /// Widest remaining interval first.
    Entropy,
    /// Uniform choice among the remaining experiments.
    Random { seed: u64 },
}

impl<T: Scalar> OedPolicy<T> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            OedPolicy::Sampling { .. } => PolicyKind::Sampling,
            OedPolicy::Surrogate { iterative: false, .. } => PolicyKind::Surrogate,
            OedPolicy::Surrogate { iterative: true, .. } => PolicyKind::SurrogateIterative,
            OedPolicy::Entropy => PolicyKind::Entropy,
            OedPolicy::Random { .. } => PolicyKind::Random,
        }
    }

    /// Builds a policy from its kind; surrogate kinds need a bundle.
    pub fn from_kind(
        kind: PolicyKind,
        k: usize,
        seed: u64,
        bundle: Option<Arc<WeightBundle<T>>>,
    ) -> Result<Self> {
        let need_bundle = || {
            bundle.clone().ok_or_else(|| {
                Error::InvalidArgument(format!("method `{}` needs a weight bundle", kind.name()))
            })
        };
        Ok(match kind {
            PolicyKind::Sampling => OedPolicy::Sampling {
                k,
                seed,
                noise: NoiseMode::Common,
            },
            PolicyKind::Surrogate => OedPolicy::Surrogate {
                bundle: need_bundle()?,
                iterative: false,
            },
            PolicyKind::SurrogateIterative => OedPolicy::Surrogate {
                bundle: need_bundle()?,
                iterative: true,
            },
            PolicyKind::Entropy => OedPolicy::Entropy,
            PolicyKind::Random => OedPolicy::Random { seed },
        })
    }

    /// Policies whose order is fixed by the initial class.
    fn ranks_once(&self) -> bool {
        matches!(
            self,
            OedPolicy::Sampling { .. } | OedPolicy::Surrogate { iterative: false, .. }
        )
    }
}

/// The hidden model an OED trial measures.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub instance: KuramotoInstance<T>,
}

impl<T: Scalar> GroundTruth<T> {
    /// The truth of trial `trial`: sample `trial` of the stream `seed`.
    pub fn draw(class: &UncertaintyClass<T>, seed: u64, trial: usize) -> Self {
        Self {
            instance: sample_instance(class, &mut sample_rng(seed, trial)),
        }
    }
}

/// Outcome of isolating pair `(i, j)` of the true model: it synchronizes iff
/// `|ω_i − ω_j| / 2 ≤ a_ij`.
pub fn conduct_experiment<T: Scalar>(
    truth: &GroundTruth<T>,
    experiment: ExperimentId,
) -> ExperimentOutcome {
    let inst = &truth.instance;
    let (i, j) = (experiment.i() - 1, experiment.j() - 1);
    let threshold = (inst.omegas()[i] - inst.omegas()[j]).abs() * T::half();
    let a = inst
        .coupling(experiment.i(), experiment.j())
        .expect("experiment fits the truth");
    ExperimentOutcome {
        synchronized: threshold <= a,
    }
}

/// Like [`conduct_experiment`], but simulates the isolated pair and applies
/// the frequency-spread detector.
pub fn conduct_experiment_simulated<T: Scalar>(
    truth: &GroundTruth<T>,
    experiment: ExperimentId,
    config: &SimConfig<T>,
) -> Result<ExperimentOutcome> {
    let inst = &truth.instance;
    let (i, j) = (experiment.i() - 1, experiment.j() - 1);
    let (wi, wj) = (inst.omegas()[i], inst.omegas()[j]);
    let pair = KuramotoInstance::new(vec![wi, wj], vec![inst.coupling(experiment.i(), experiment.j())?])?;
    let synchronized = is_synchronized(&pair, T::zero(), (wi + wj) * T::half(), config)?;
    Ok(ExperimentOutcome { synchronized })
}

/// Tightens the experiment's interval: a synchronized outcome raises the
/// lower bound to the clamped threshold, otherwise the upper bound drops to it.
pub fn apply_outcome<T: Scalar>(
    class: &UncertaintyClass<T>,
    experiment: ExperimentId,
    outcome: ExperimentOutcome,
) -> Result<UncertaintyClass<T>> {
    let k = experiment.index(class.n())?;
    let (lo, hi) = class.bounds(k);
    let t = class.sync_threshold(experiment)?;
    if outcome.synchronized {
        class.with_bounds(k, t, hi)
    } else {
        class.with_bounds(k, lo, t)
    }
}

/// Remaining experiments sorted by ascending score, ties by pair index.
fn sort_by_score<T: Scalar>(mut scored: Vec<(ExperimentId, T)>, n: usize) -> Vec<ExperimentId> {
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.index(n).ok().cmp(&b.0.index(n).ok()))
    });
    scored.into_iter().map(|(e, _)| e).collect()
}

/// Scores of the remaining experiments under a score-based policy (lower is
/// better), or `None` for policies that do not score.
pub fn score_experiments<T: Scalar>(
    class: &UncertaintyClass<T>,
    remaining: &[ExperimentId],
    policy: &OedPolicy<T>,
    config: &SimConfig<T>,
) -> Result<Option<Vec<(ExperimentId, T)>>> {
    let w = class.mean_frequency();
    Ok(match policy {
        OedPolicy::Sampling { k, seed, noise } => Some(
            remaining
                .iter()
                .map(|&e| {
                    let r = expected_remaining_mocu(class, e, *k, w, config, *seed, *noise)?;
                    Ok((e, r.value))
                })
                .collect::<Result<_>>()?,
        ),
        OedPolicy::Surrogate { bundle, .. } => Some(
            remaining
                .iter()
                .map(|&e| Ok((e, predict_expected_remaining(bundle, class, e)?)))
                .collect::<Result<_>>()?,
        ),
        OedPolicy::Entropy => Some(
            remaining
                .iter()
                .map(|&e| Ok((e, -class.width(e.index(class.n())?))))
                .collect::<Result<_>>()?,
        ),
        OedPolicy::Random { .. } => None,
    })
}

/// Chooses the next experiment. `rng` drives the random policy only.
pub fn select_experiment<T: Scalar, R: rand::Rng + ?Sized>(
    class: &UncertaintyClass<T>,
    remaining: &[ExperimentId],
    policy: &OedPolicy<T>,
    config: &SimConfig<T>,
    rng: &mut R,
) -> Result<ExperimentId> {
    if remaining.is_empty() {
        return Err(Error::InvalidArgument("no experiments remain".into()));
    }
    match score_experiments(class, remaining, policy, config)? {
        Some(scored) => Ok(sort_by_score(scored, class.n())[0]),
        None => Ok(*remaining.choose(rng).expect("non-empty")),
    }
}

/// Settings shared by every trial of an OED run.
#[derive(Clone, Debug)]
pub struct OedSettings<T> {
    pub trials: usize,
    /// Seed of the hidden true models.
    pub truth_seed: u64,
    /// Sample count of each evaluation estimate.
    pub eval_k: usize,
    /// Number of estimates averaged per evaluation.
    pub eval_repeats: usize,
    pub eval_seed: u64,
    pub config: SimConfig<T>,
    /// Decide outcomes by simulating the isolated pair instead of by the
    /// analytic lock condition.
    pub simulate_outcomes: bool,
}

impl<T: Scalar> Default for OedSettings<T> {
    fn default() -> Self {
        Self {
            trials: 10,
            truth_seed: 0,
            eval_k: 2048,
            eval_repeats: 10,
            eval_seed: 0,
            config: SimConfig::default(),
            simulate_outcomes: false,
        }
    }
}

/// Memoized evaluation of classes: the mean and standard deviation of
/// `eval_repeats` sampling estimates with fixed seeds. Identical classes
/// reached by different trials or policies are estimated once.
pub struct Evaluator<T> {
    k: usize,
    seeds: Vec<u64>,
    config: SimConfig<T>,
    cache: Mutex<HashMap<Vec<u64>, (f64, f64)>>,
}

impl<T: Scalar> Evaluator<T> {
    pub fn new(settings: &OedSettings<T>) -> Self {
        Self {
            k: settings.eval_k,
            seeds: (0..settings.eval_repeats as u64)
                .map(|r| derive_seed(settings.eval_seed, r))
                .collect(),
            config: settings.config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn key(class: &UncertaintyClass<T>) -> Vec<u64> {
        class
            .omegas()
            .iter()
            .chain(class.lower())
            .chain(class.upper())
            .map(|v| v.to_f64_lossless().to_bits())
            .collect()
    }

    /// `(mean, std)` of the repeated estimates.
    pub fn evaluate(&self, class: &UncertaintyClass<T>) -> Result<(f64, f64)> {
        let key = Self::key(class);
        if let Some(&hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit);
        }
        let w = class.mean_frequency();
        let values: Vec<f64> = self
            .seeds
            .iter()
            .map(|&s| Ok(estimate_mocu(class, self.k, w, &self.config, s)?.value.to_f64_lossless()))
            .collect::<Result<_>>()?;
        let stats = mean_std(&values);
        self.cache.lock().expect("cache lock").insert(key, stats);
        Ok(stats)
    }
}

/// Sample mean and (n − 1)-normalized standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Runs `settings.trials` OED trials of `policy` on `class`.
pub fn run_oed<T: Scalar>(
    class: &UncertaintyClass<T>,
    policy: &OedPolicy<T>,
    settings: &OedSettings<T>,
) -> Result<Vec<OedTrace>> {
    run_oed_with(class, policy, settings, &Evaluator::new(settings))
}

/// [`run_oed`] with a caller-owned evaluation cache, so several policies can
/// share estimates of identical classes.
pub fn run_oed_with<T: Scalar>(
    class: &UncertaintyClass<T>,
    policy: &OedPolicy<T>,
    settings: &OedSettings<T>,
    evaluator: &Evaluator<T>,
) -> Result<Vec<OedTrace>> {
    if settings.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if settings.eval_k == 0 || settings.eval_repeats == 0 {
        return Err(Error::InvalidArgument(
            "eval_k and eval_repeats must be at least 1".into(),
        ));
    }
    settings.config.validate()?;
    let initial = evaluator.evaluate(class)?;

    // fixed order for policies that rank once on the initial class
    let fixed = if policy.ranks_once() {
        let started = Instant::now();
        let scored = score_experiments(class, &class.experiments(), policy, &settings.config)
            .map_err(|e| Error::Step {
                step: 1,
                source: Box::new(e),
            })?
            .expect("ranking policies score");
        Some((sort_by_score(scored, class.n()), started.elapsed().as_secs_f64()))
    } else {
        None
    };

    (0..settings.trials)
        .into_par_iter()
        .map(|trial| run_trial(class, policy, settings, evaluator, trial, initial, fixed.as_ref()))
        .collect()
}

fn run_trial<T: Scalar>(
    class: &UncertaintyClass<T>,
    policy: &OedPolicy<T>,
    settings: &OedSettings<T>,
    evaluator: &Evaluator<T>,
    trial: usize,
    initial: (f64, f64),
    fixed: Option<&(Vec<ExperimentId>, f64)>,
) -> Result<OedTrace> {
    let truth = GroundTruth::draw(class, settings.truth_seed, trial);
    let mut rng = match policy {
        OedPolicy::Random { seed } => sample_rng(*seed, trial),
        _ => sample_rng(0, trial),
    };
    let mut current = class.clone();
    let mut remaining = class.experiments();
    let mut steps = Vec::with_capacity(remaining.len());
    let mut step = 0;
    while !remaining.is_empty() {
        step += 1;
        let tag = |e: Error| Error::Step {
            step,
            source: Box::new(e),
        };
        let started = Instant::now();
        let (experiment, select_seconds) = match fixed {
            Some((order, rank_seconds)) => {
                let e = order[step - 1];
                let t = if step == 1 { *rank_seconds } else { 0.0 };
                (e, t + started.elapsed().as_secs_f64())
            }
            None => {
                let e = select_experiment(&current, &remaining, policy, &settings.config, &mut rng)
                    .map_err(tag)?;
                (e, started.elapsed().as_secs_f64())
            }
        };
        remaining.retain(|&e| e != experiment);
        let outcome = if settings.simulate_outcomes {
            conduct_experiment_simulated(&truth, experiment, &settings.config).map_err(tag)?
        } else {
            conduct_experiment(&truth, experiment)
        };
        current = apply_outcome(&current, experiment, outcome).map_err(tag)?;
        let (mocu_mean, mocu_std) = evaluator.evaluate(&current).map_err(tag)?;
        steps.push(TraceStep {
            experiment,
            outcome,
            mocu_mean,
            mocu_std,
            select_seconds,
        });
    }
    Ok(OedTrace {
        trial,
        initial_mocu_mean: initial.0,
        initial_mocu_std: initial.1,
        steps,
    })
}

/// Writes traces as CSV: `trial,step,i,j,outcome,mocu_mean,mocu_std,select_seconds`.
/// Step 0 is the initial class and has empty experiment fields.
pub fn write_trace_csv<W: Write>(traces: &[OedTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "trial",
        "step",
        "i",
        "j",
        "outcome",
        "mocu_mean",
        "mocu_std",
        "select_seconds",
    ])
    .map_err(csv_error)?;
    for t in traces {
        w.write_record([
            t.trial.to_string(),
            "0".into(),
            String::new(),
            String::new(),
            String::new(),
            t.initial_mocu_mean.to_string(),
            t.initial_mocu_std.to_string(),
            "0".into(),
        ])
        .map_err(csv_error)?;
        for (s, step) in t.steps.iter().enumerate() {
            w.write_record([
                t.trial.to_string(),
                (s + 1).to_string(),
                step.experiment.i().to_string(),
                step.experiment.j().to_string(),
                u8::from(step.outcome.synchronized).to_string(),
                step.mocu_mean.to_string(),
                step.mocu_std.to_string(),
                step.select_seconds.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean MOCU after each step, averaged over trials.
pub fn mean_curve(traces: &[OedTrace]) -> Vec<f64> {
    let len = traces.iter().map(|t| t.steps.len() + 1).min().unwrap_or(0);
    (0..len)
        .map(|s| traces.iter().map(|t| t.curve()[s]).sum::<f64>() / traces.len() as f64)
        .collect()
}

/// Writes `step,<policy>,…` with one mean-MOCU column per policy.
pub fn write_curve_csv<W: Write>(curves: &[(String, Vec<f64>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(curves.iter().map(|(name, _)| name.clone()));
    w.write_record(&header).map_err(csv_error)?;
    let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for s in 0..len {
        let mut row = vec![s.to_string()];
        row.extend(
            curves
                .iter()
                .map(|(_, c)| c.get(s).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
