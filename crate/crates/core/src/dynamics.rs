//! Extended Kuramoto dynamics with a control oscillator, frequency
//! synchronization detection and the minimal-control search.
//!
//! The network integrated here has `N + 1` oscillators: the `N` model
//! oscillators followed by a control oscillator of frequency `ω̄` that is coupled
//! to every model oscillator with a common strength. All phases start at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, Observe, TimeGrid, LANES};
use crate::scalar::Scalar;
use crate::types::KuramotoInstance;

/// Integration and detection parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "T: Scalar")]
pub struct SimConfig<T> {
    /// Nominal RK4 step.
    pub step: T,
    /// Total integration time.
    pub duration: T,
    /// Trailing fraction of `[0, duration]` used to measure synchronization.
    pub window_fraction: T,
    /// Largest admissible time-averaged frequency spread.
    pub sync_tol: T,
    /// Give up when the control search bracket exceeds this strength.
    pub max_control: T,
    /// Bisection stops once the bracket is at most this wide.
    pub bisect_tol: T,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            step: T::lit(0.04),
            duration: T::lit(30.0),
            window_fraction: T::lit(0.2),
            sync_tol: T::lit(1e-2),
            max_control: T::lit(512.0),
            bisect_tol: T::lit(2.5e-4),
        }
    }
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        let finite = [
            self.step,
            self.duration,
            self.window_fraction,
            self.sync_tol,
            self.max_control,
            self.bisect_tol,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return fail("all fields must be finite".into());
        }
        if self.step <= T::zero() {
            return fail(format!("step must be positive, got {}", self.step));
        }
        if self.duration < T::lit(10.0) * self.step {
            return fail(format!(
                "duration {} shorter than 10 steps of {}",
                self.duration, self.step
            ));
        }
        if !(self.window_fraction > T::zero() && self.window_fraction < T::one()) {
            return fail(format!(
                "window_fraction must lie in (0, 1), got {}",
                self.window_fraction
            ));
        }
        if self.sync_tol <= T::zero() {
            return fail(format!("sync_tol must be positive, got {}", self.sync_tol));
        }
        if self.bisect_tol <= T::zero() {
            return fail(format!("bisect_tol must be positive, got {}", self.bisect_tol));
        }
        if self.max_control < T::two() {
            return fail(format!("max_control must be at least 2, got {}", self.max_control));
        }
        Ok(())
    }

    /// The resolved time grid for a network whose largest coupling row sum is
    /// `row_sum`. The step is shortened when needed so that `h · ‖J‖ ≤ 2.5`,
    /// which keeps RK4 inside its stability region.
    pub(crate) fn grid(&self, row_sum: T) -> TimeGrid<T> {
        let mut h = self.step;
        if row_sum > T::zero() {
            // symmetric Jacobian: spectral radius ≤ 2 · max row sum
            h = h.min(T::lit(1.25) / row_sum);
        }
        let steps = (self.duration / h - T::lit(1e-9))
            .ceil()
            .to_usize()
            .unwrap_or(1)
            .max(1);
        let window = (self.window_fraction * T::from_usize_lossy(steps))
            .round()
            .to_usize()
            .unwrap_or(1)
            .clamp(1, steps);
        TimeGrid {
            h: self.duration / T::from_usize_lossy(steps),
            steps,
            window_start: steps - window,
        }
    }
}

/// Instantaneous frequencies of all `N + 1` oscillators over the measurement window.
#[derive(Clone, Debug)]
pub struct FrequencyTrace<T> {
    oscillators: usize,
    times: Vec<T>,
    freqs: Vec<T>,
}

impl<T: Scalar> FrequencyTrace<T> {
    /// `N + 1`: the control oscillator is last.
    pub fn oscillators(&self) -> usize {
        self.oscillators
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Frequencies `θ̇_0 … θ̇_N` at window sample `s`.
    pub fn sample(&self, s: usize) -> &[T] {
        &self.freqs[s * self.oscillators..(s + 1) * self.oscillators]
    }

    /// `max_{i,j} |θ̇_i − θ̇_j|` at window sample `s`.
    pub fn spread(&self, s: usize) -> T {
        let (lo, hi) = self
            .sample(s)
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &f| {
                (lo.min(f), hi.max(f))
            });
        hi - lo
    }

    /// Time average of the spread over the window.
    pub fn mean_spread(&self) -> T {
        let total: T = (0..self.len()).map(|s| self.spread(s)).sum();
        total / T::from_usize_lossy(self.len())
    }
}

/// Extended network in the frame rotating with the control oscillator:
/// frequencies are stored relative to `control_omega`, which leaves spreads
/// unchanged and keeps the phasor rotation rate small.
struct Network<T> {
    m: usize,
    reference: T,
    omegas: Vec<T>,
    coupling: Vec<T>,
    base_row_sum: T,
}

impl<T: Scalar> Network<T> {
    fn new(instance: &KuramotoInstance<T>, control_omega: T) -> Self {
        let n = instance.n();
        let m = n + 1;
        let base = instance.coupling_matrix();
        let mut coupling = vec![T::zero(); m * m];
        let mut base_row_sum = T::zero();
        for i in 0..n {
            let mut row = T::zero();
            for j in 0..n {
                coupling[i * m + j] = base[i * n + j];
                row += base[i * n + j];
            }
            base_row_sum = base_row_sum.max(row);
        }
        let mut omegas: Vec<T> = instance.omegas().iter().map(|&w| w - control_omega).collect();
        omegas.push(T::zero());
        Self {
            m,
            reference: control_omega,
            omegas,
            coupling,
            base_row_sum,
        }
    }

    fn grid(&self, strength: T, config: &SimConfig<T>) -> TimeGrid<T> {
        // the control oscillator's row sums to N·c
        let n = T::from_usize_lossy(self.m - 1);
        config.grid((self.base_row_sum + strength).max(strength * n))
    }

    fn load<const L: usize>(&self, kernel: &mut Kernel<T, L>, lane: usize) {
        kernel.load(lane, &self.omegas, &self.coupling);
    }
}

/// Spread total that decides the verdict: synchronized iff the window total
/// stays below it.
fn spread_limit<T: Scalar>(grid: &TimeGrid<T>, config: &SimConfig<T>) -> T {
    config.sync_tol * T::from_usize_lossy(grid.window_len())
}

fn blowup<T: Scalar>(config: &SimConfig<T>) -> Error {
    Error::NumericalBlowup {
        time: config.duration.to_f64_lossless(),
    }
}

/// Single queries run in lane 0; the idle lanes integrate a trivial network.
const SOLO: [bool; LANES] = {
    let mut a = [false; LANES];
    a[0] = true;
    a
};

/// One synchronization verdict in lane 0.
fn decide<T: Scalar>(
    kernel: &mut Kernel<T, LANES>,
    net: &Network<T>,
    strength: T,
    config: &SimConfig<T>,
) -> Result<bool> {
    let grid = net.grid(strength, config);
    let limit = spread_limit(&grid, config);
    kernel.set_control(0, strength);
    let r = kernel.run(&grid, &SOLO, &mut Observe::Spread { limit: Some(limit) });
    if !r.finite[0] {
        return Err(blowup(config));
    }
    Ok(r.total[0] < limit)
}

fn check_strength<T: Scalar>(strength: T) -> Result<()> {
    if strength >= T::zero() && strength.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "control strength must be finite and non-negative, got {strength}"
        )))
    }
}

/// Integrates the extended model and returns the window frequencies.
pub fn integrate<T: Scalar>(
    instance: &KuramotoInstance<T>,
    control_strength: T,
    control_omega: T,
    config: &SimConfig<T>,
) -> Result<FrequencyTrace<T>> {
    config.validate()?;
    check_strength(control_strength)?;
    let net = Network::new(instance, control_omega);
    let grid = net.grid(control_strength, config);
    let mut kernel = Kernel::<T, LANES>::new(net.m);
    net.load(&mut kernel, 0);
    kernel.set_control(0, control_strength);
    let mut freqs = Vec::with_capacity(grid.window_len() * net.m);
    let r = kernel.run(&grid, &SOLO, &mut Observe::Record(&mut freqs));
    if !r.finite[0] || freqs.iter().any(|f| !f.is_finite()) {
        return Err(blowup(config));
    }
    freqs.iter_mut().for_each(|f| *f += net.reference);
    let times = (grid.window_start..=grid.steps)
        .map(|s| T::from_usize_lossy(s) * grid.h)
        .collect();
    Ok(FrequencyTrace {
        oscillators: net.m,
        times,
        freqs,
    })
}

/// Time-averaged frequency spread over the window; the quantity the
/// synchronization detector thresholds.
pub fn mean_spread<T: Scalar>(
    instance: &KuramotoInstance<T>,
    control_strength: T,
    control_omega: T,
    config: &SimConfig<T>,
) -> Result<T> {
    config.validate()?;
    check_strength(control_strength)?;
    let net = Network::new(instance, control_omega);
    let grid = net.grid(control_strength, config);
    let mut kernel = Kernel::<T, LANES>::new(net.m);
    net.load(&mut kernel, 0);
    kernel.set_control(0, control_strength);
    let r = kernel.run(&grid, &SOLO, &mut Observe::Spread { limit: None });
    if !r.finite[0] {
        return Err(blowup(config));
    }
    Ok(r.total[0] / T::from_usize_lossy(grid.window_len()))
}

/// True when the time-averaged `max |θ̇_i − θ̇_j|` over the window is below `sync_tol`.
pub fn is_synchronized<T: Scalar>(
    instance: &KuramotoInstance<T>,
    control_strength: T,
    control_omega: T,
    config: &SimConfig<T>,
) -> Result<bool> {
    config.validate()?;
    check_strength(control_strength)?;
    let net = Network::new(instance, control_omega);
    let mut kernel = Kernel::<T, LANES>::new(net.m);
    net.load(&mut kernel, 0);
    decide(&mut kernel, &net, control_strength, config)
}

/// State of one control search.
#[derive(Clone, Copy, Debug)]
enum Search<T> {
    Expand { hi: T },
    Bisect { lo: T, hi: T },
}

impl<T: Scalar> Search<T> {
    fn start() -> Self {
        Search::Expand { hi: T::two() }
    }

    fn query(&self) -> T {
        match *self {
            Search::Expand { hi } => hi,
            Search::Bisect { lo, hi } => (lo + hi) * T::half(),
        }
    }

    /// Feeds back the verdict for `query()`; returns the result once the
    /// search has finished.
    fn advance(&mut self, synchronized: bool, config: &SimConfig<T>) -> Option<Result<T>> {
        let (lo, hi) = match *self {
            Search::Expand { hi } if synchronized => (T::zero(), hi),
            Search::Expand { hi } => {
                let next = hi + T::two();
                if next > config.max_control {
                    return Some(Err(Error::NoSynchronization {
                        cap: config.max_control.to_f64_lossless(),
                    }));
                }
                *self = Search::Expand { hi: next };
                return None;
            }
            Search::Bisect { lo, hi } => {
                let mid = (lo + hi) * T::half();
                if synchronized {
                    (lo, mid)
                } else {
                    (mid, hi)
                }
            }
        };
        if hi - lo > config.bisect_tol {
            *self = Search::Bisect { lo, hi };
            None
        } else {
            Some(Ok((lo + hi) * T::half()))
        }
    }
}

/// Runs a search to completion in lane 0 of `kernel`, or until its next
/// query fits `grid` (when given).
fn drive_single<T: Scalar>(
    kernel: &mut Kernel<T, LANES>,
    net: &Network<T>,
    search: &mut Search<T>,
    until_grid: Option<&TimeGrid<T>>,
    config: &SimConfig<T>,
) -> Option<Result<T>> {
    net.load(kernel, 0);
    loop {
        let strength = search.query();
        if until_grid.is_some_and(|g| net.grid(strength, config) == *g) {
            return None;
        }
        let verdict = match decide(kernel, net, strength, config) {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        if let Some(done) = search.advance(verdict, config) {
            return Some(done);
        }
    }
}

/// Minimal control strength `ξ(a)` that synchronizes the extended model.
///
/// The upper end of the bracket starts at 2 and grows by 2 until the network
/// synchronizes, the lower end starts at 0, and the bracket is bisected until
/// it is at most `bisect_tol` wide. Returns the final bracket's midpoint.
pub fn min_control_cost<T: Scalar>(
    instance: &KuramotoInstance<T>,
    control_omega: T,
    config: &SimConfig<T>,
) -> Result<T> {
    config.validate()?;
    let net = Network::new(instance, control_omega);
    let mut kernel = Kernel::<T, LANES>::new(net.m);
    let mut search = Search::start();
    drive_single(&mut kernel, &net, &mut search, None, config).expect("search runs to completion")
}

/// [`min_control_cost`] for many instances of the same size, integrated in
/// lock-step lanes. Each result is identical to the one-at-a-time value.
pub fn min_control_costs<T: Scalar>(
    instances: &[KuramotoInstance<T>],
    control_omega: T,
    config: &SimConfig<T>,
) -> Result<Vec<Result<T>>> {
    config.validate()?;
    let Some(first) = instances.first() else {
        return Ok(Vec::new());
    };
    let n = first.n();
    if let Some(bad) = instances.iter().find(|i| i.n() != n) {
        return Err(Error::InvalidArgument(format!(
            "all instances must have {n} oscillators, found {}",
            bad.n()
        )));
    }
    let nominal = config.grid(T::zero());
    let limit = spread_limit(&nominal, config);
    let mut results: Vec<Option<Result<T>>> = (0..instances.len()).map(|_| None).collect();
    let mut single = Kernel::<T, LANES>::new(n + 1);
    let mut lanes = Kernel::<T, LANES>::new(n + 1);
    let mut slots: [Option<(usize, Network<T>, Search<T>)>; LANES] = Default::default();
    let mut next = 0usize;

    loop {
        for (lane, slot) in slots.iter_mut().enumerate() {
            while slot.is_none() && next < instances.len() {
                let idx = next;
                next += 1;
                let net = Network::new(&instances[idx], control_omega);
                let mut search = Search::start();
                if net.grid(search.query(), config) != nominal {
                    if let Some(done) =
                        drive_single(&mut single, &net, &mut search, Some(&nominal), config)
                    {
                        results[idx] = Some(done);
                        continue;
                    }
                }
                net.load(&mut lanes, lane);
                *slot = Some((idx, net, search));
            }
        }
        let active: [bool; LANES] = std::array::from_fn(|l| slots[l].is_some());
        if !active.iter().any(|&a| a) {
            break;
        }
        for (lane, slot) in slots.iter().enumerate() {
            if let Some((_, _, search)) = slot {
                lanes.set_control(lane, search.query());
            }
        }
        let r = lanes.run(&nominal, &active, &mut Observe::Spread { limit: Some(limit) });
        for (lane, slot) in slots.iter_mut().enumerate() {
            let Some((idx, net, search)) = slot else {
                continue;
            };
            let outcome = if r.finite[lane] {
                match search.advance(r.total[lane] < limit, config) {
                    None if net.grid(search.query(), config) != nominal => {
                        let done =
                            drive_single(&mut single, net, search, Some(&nominal), config);
                        if done.is_none() {
                            net.load(&mut lanes, lane);
                        }
                        done
                    }
                    other => other,
                }
            } else {
                Some(Err(blowup(config)))
            };
            if let Some(done) = outcome {
                results[*idx] = Some(done);
                *slot = None;
            }
        }
    }
    Ok(results
        .into_iter()
        .map(|r| r.expect("every search finishes"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dw: f64, a: f64) -> KuramotoInstance<f64> {
        KuramotoInstance::new(vec![0.0, dw], vec![a]).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        SimConfig::<f64>::default().validate().unwrap();
        SimConfig::<f32>::default().validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::<f64>::default();
        let cases = [
            SimConfig { step: 0.0, ..ok },
            SimConfig { duration: 0.05, ..ok },
            SimConfig { window_fraction: 1.0, ..ok },
            SimConfig { window_fraction: 0.0, ..ok },
            SimConfig { sync_tol: 0.0, ..ok },
            SimConfig { bisect_tol: -1.0, ..ok },
            SimConfig { max_control: f64::NAN, ..ok },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_json_fills_defaults() {
        let c: SimConfig<f64> = serde_json::from_str(r#"{"duration": 12.5}"#).unwrap();
        assert_eq!(c.duration, 12.5);
        assert_eq!(c.step, SimConfig::<f64>::default().step);
        assert!(serde_json::from_str::<SimConfig<f64>>(r#"{"stpe": 1}"#).is_err());
    }

    #[test]
    fn grid_shrinks_step_for_stiff_networks() {
        let c = SimConfig::<f64>::default();
        let g = c.grid(1.0);
        assert_eq!(g.steps, 750);
        assert!((g.h - 0.04).abs() < 1e-15);
        assert_eq!(g.window_start, 600);
        let g = c.grid(1000.0);
        assert!(g.h <= 1.25 / 1000.0 + 1e-15);
        assert!((g.h * g.steps as f64 - 30.0).abs() < 1e-9);
    }

    #[test]
    fn decoupled_identical_oscillators_are_constant() {
        let inst = KuramotoInstance::new(vec![0.7; 3], vec![0.0; 3]).unwrap();
        let tr = integrate(&inst, 0.0, 0.7, &SimConfig::<f64>::default()).unwrap();
        assert!(!tr.is_empty());
        for s in 0..tr.len() {
            assert!(tr.sample(s).iter().all(|&f| (f - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn uncoupled_single_oscillator_and_control() {
        let inst = KuramotoInstance::new(vec![1.3], vec![]).unwrap();
        let tr = integrate(&inst, 0.0, -0.4, &SimConfig::<f64>::default()).unwrap();
        assert_eq!(tr.oscillators(), 2);
        for s in 0..tr.len() {
            let f = tr.sample(s);
            assert!((f[0] - 1.3).abs() < 1e-12 && f[1] == -0.4, "{f:?}");
        }
        let last = *tr.times().last().unwrap();
        assert!((last - 30.0).abs() < 1e-9);
    }

    #[test]
    fn locked_pair_has_small_spread() {
        let tr = integrate(&pair(2.0, 1.5), 0.0, 1.0, &SimConfig::default()).unwrap();
        // the decoupled control oscillator sits at the mean frequency (1.0)
        // and the locked pair rotates at 1.0 too
        assert!(tr.mean_spread() < 1e-2);
    }

    #[test]
    fn lock_condition_margin_cases() {
        let cfg = SimConfig::default();
        assert!(is_synchronized(&pair(2.0, 1.0), 0.0, 1.0, &cfg).unwrap());
        assert!(!is_synchronized(&pair(2.0, 0.9), 0.0, 1.0, &cfg).unwrap());
    }

    #[test]
    fn single_oscillator_locked_to_matching_control() {
        let inst = KuramotoInstance::new(vec![2.5], vec![]).unwrap();
        for c in [0.0, 0.3, 7.0] {
            assert!(is_synchronized(&inst, c, 2.5, &SimConfig::default()).unwrap());
        }
    }

    #[test]
    fn negative_control_is_rejected() {
        let r = is_synchronized(&pair(1.0, 1.0), -1.0, 0.5, &SimConfig::default());
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn xi_is_zero_when_already_synchronized() {
        let cfg = SimConfig::<f64>::default();
        let inst = KuramotoInstance::new(vec![0.4; 4], vec![0.0; 6]).unwrap();
        let xi = min_control_cost(&inst, 0.4, &cfg).unwrap();
        assert!(xi <= cfg.bisect_tol, "{xi}");
        let single = KuramotoInstance::new(vec![-3.0], vec![]).unwrap();
        assert!(min_control_cost(&single, -3.0, &cfg).unwrap() <= cfg.bisect_tol);
    }

    #[test]
    fn xi_for_single_oscillator_matches_lock_threshold() {
        // one oscillator plus control is an isolated pair with Δω = 1.6, so it
        // locks once c ≥ 0.8 (up to the detector's finite-time margin)
        let cfg = SimConfig::<f64>::default();
        let inst = KuramotoInstance::new(vec![1.6], vec![]).unwrap();
        let xi = min_control_cost(&inst, 0.0, &cfg).unwrap();
        assert!((xi - 0.8).abs() < 0.02, "{xi}");
    }

    #[test]
    fn cap_exceeded_reports_no_synchronization() {
        let cfg = SimConfig {
            max_control: 4.0,
            ..SimConfig::<f64>::default()
        };
        let inst = KuramotoInstance::new(vec![0.0], vec![]).unwrap();
        // needs c ≥ 5
        let err = min_control_cost(&inst, 10.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::NoSynchronization { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn single_precision_agrees_with_double() {
        let i64 = KuramotoInstance::new(vec![-1.0, 0.2, 1.1], vec![0.3, 0.1, 0.4]).unwrap();
        let i32 = KuramotoInstance::new(vec![-1.0f32, 0.2, 1.1], vec![0.3, 0.1, 0.4]).unwrap();
        let a = min_control_cost(&i64, i64.mean_frequency(), &SimConfig::default()).unwrap();
        let b = min_control_cost(&i32, i32.mean_frequency(), &SimConfig::default()).unwrap();
        assert!((a - b as f64).abs() < 5e-3, "{a} vs {b}");
    }

    #[test]
    fn batched_costs_match_one_at_a_time() {
        let cfg = SimConfig::<f64>::default();
        let mut instances = Vec::new();
        for s in 0..19 {
            let t = s as f64;
            let omegas = vec![-1.5 + 0.1 * t, 0.3, 1.2 - 0.05 * t, 2.0];
            let couplings = (0..6).map(|k| 0.05 * ((k as f64 + t) % 7.0)).collect();
            instances.push(KuramotoInstance::new(omegas, couplings).unwrap());
        }
        // a stiff instance forces the shortened-step fallback
        instances.push(KuramotoInstance::new(vec![0.0, 1.0, 2.0, 3.0], vec![90.0; 6]).unwrap());
        let w = 0.9;
        let batched = min_control_costs(&instances, w, &cfg).unwrap();
        for (inst, b) in instances.iter().zip(&batched) {
            let one = min_control_cost(inst, w, &cfg).unwrap();
            assert_eq!(one.to_bits(), b.as_ref().unwrap().to_bits());
        }
    }

    #[test]
    fn batched_costs_reject_mixed_sizes() {
        let a = KuramotoInstance::new(vec![0.0, 1.0], vec![0.5]).unwrap();
        let b = KuramotoInstance::new(vec![0.0], vec![]).unwrap();
        assert!(min_control_costs(&[a, b], 0.0, &SimConfig::default()).is_err());
        assert!(min_control_costs::<f64>(&[], 0.0, &SimConfig::default())
            .unwrap()
            .is_empty());
    }

    /// Independent reference: classical RK4 on the phases with libm sines.
    fn reference_mean_spread(inst: &KuramotoInstance<f64>, c: f64, w: f64, h: f64) -> f64 {
        let n = inst.n();
        let m = n + 1;
        let dense = inst.coupling_matrix();
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = dense[i * n + j];
            }
            a[i][n] = c;
            a[n][i] = c;
        }
        let mut om = inst.omegas().to_vec();
        om.push(w);
        let f = |th: &[f64]| -> Vec<f64> {
            (0..m)
                .map(|i| om[i] + (0..m).map(|j| a[i][j] * (th[j] - th[i]).sin()).sum::<f64>())
                .collect()
        };
        let steps = (30.0 / h).round() as usize;
        let start = steps - (0.2 * steps as f64).round() as usize;
        let mut th = vec![0.0; m];
        let (mut total, mut count) = (0.0, 0);
        for s in 0..=steps {
            let k1 = f(&th);
            if s >= start {
                let hi = k1.iter().cloned().fold(f64::MIN, f64::max);
                let lo = k1.iter().cloned().fold(f64::MAX, f64::min);
                total += hi - lo;
                count += 1;
            }
            if s == steps {
                break;
            }
            let add = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> {
                x.iter().zip(k).map(|(x, k)| x + s * k).collect()
            };
            let k2 = f(&add(&th, &k1, h / 2.0));
            let k3 = f(&add(&th, &k2, h / 2.0));
            let k4 = f(&add(&th, &k3, h));
            for i in 0..m {
                th[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
            }
        }
        total / count as f64
    }

    #[test]
    fn phasor_integration_matches_phase_reference() {
        let inst =
            KuramotoInstance::new(vec![-2.5, -0.6, 1.2, 2.0, 5.8], vec![0.9, 0.5, 0.7, 1.2, 0.9, 0.6, 1.4, 0.4, 2.3, 1.9])
                .unwrap();
        let w = inst.mean_frequency();
        for c in [0.0, 0.3, 0.6, 1.0, 3.0] {
            let fine = SimConfig { step: 0.0025, ..SimConfig::default() };
            let ours = mean_spread(&inst, c, w, &fine).unwrap();
            let reference = reference_mean_spread(&inst, c, w, 0.0025);
            assert!((ours - reference).abs() < 1e-6 * (1.0 + reference), "c={c}: {ours} vs {reference}");
        }
    }
}
