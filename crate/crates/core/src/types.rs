//! Domain value types: uncertainty classes, concrete model instances,
//! pairwise experiments and OED traces.
//!
//! Couplings and bounds are stored as flat vectors in lexicographic pair order
//! `(1,2), (1,3), …, (N-1,N)`. Oscillator indices are 1-based at every public
//! boundary and 0-based only inside loops.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::serialize_scalars;
use crate::scalar::Scalar;

/// Number of unordered pairs among `n` oscillators.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of the pair `(i, j)` (1-based, `i < j`) in the flat pair vector.
pub fn pair_index(i: usize, j: usize, n: usize) -> Result<usize> {
    if !(1 <= i && i < j && j <= n) {
        return Err(Error::InvalidArgument(format!(
            "pair ({i},{j}) is not 1 <= i < j <= {n}"
        )));
    }
    let (i0, j0) = (i - 1, j - 1);
    Ok(i0 * (2 * n - i0 - 1) / 2 + (j0 - i0 - 1))
}

/// Inverse of [`pair_index`]: returns the 1-based pair at flat position `k`.
pub fn pair_from_index(k: usize, n: usize) -> Result<(usize, usize)> {
    if k >= pair_count(n) {
        return Err(Error::InvalidArgument(format!(
            "pair index {k} out of range for n = {n}"
        )));
    }
    let mut rest = k;
    for i0 in 0..n {
        let row = n - i0 - 1;
        if rest < row {
            return Ok((i0 + 1, i0 + rest + 2));
        }
        rest -= row;
    }
    unreachable!("k < pair_count(n)")
}

/// A pairwise synchronization experiment on oscillators `i < j` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExperimentId {
    i: usize,
    j: usize,
}

impl ExperimentId {
    pub fn new(i: usize, j: usize, n: usize) -> Result<Self> {
        pair_index(i, j, n)?;
        Ok(Self { i, j })
    }

    pub fn from_index(k: usize, n: usize) -> Result<Self> {
        let (i, j) = pair_from_index(k, n)?;
        Ok(Self { i, j })
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn index(&self, n: usize) -> Result<usize> {
        pair_index(self.i, self.j, n)
    }

    /// Every experiment for `n` oscillators, in pair order.
    pub fn all(n: usize) -> Vec<ExperimentId> {
        (0..pair_count(n))
            .map(|k| Self::from_index(k, n).expect("k in range"))
            .collect()
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub synchronized: bool,
}

fn check_finite<T: Scalar>(name: &str, values: &[T]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::InvalidClass(format!("{name}[{k}] is not finite"))),
        None => Ok(()),
    }
}

/// Natural frequencies plus interval bounds on every pairwise coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "ClassRecord<T>",
    bound(serialize = "T: Scalar", deserialize = "T: Scalar")
)]
pub struct UncertaintyClass<T> {
    n: usize,
    #[serde(serialize_with = "serialize_scalars")]
    omegas: Vec<T>,
    #[serde(serialize_with = "serialize_scalars")]
    lower: Vec<T>,
    #[serde(serialize_with = "serialize_scalars")]
    upper: Vec<T>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct ClassRecord<T> {
    n: usize,
    omegas: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> TryFrom<ClassRecord<T>> for UncertaintyClass<T> {
    type Error = Error;

    fn try_from(r: ClassRecord<T>) -> Result<Self> {
        if r.n != r.omegas.len() {
            return Err(Error::InvalidClass(format!(
                "n = {} but {} frequencies given",
                r.n,
                r.omegas.len()
            )));
        }
        Self::new(r.omegas, r.lower, r.upper)
    }
}

impl<T: Scalar> UncertaintyClass<T> {
    pub fn new(omegas: Vec<T>, lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        let n = omegas.len();
        if n < 2 {
            return Err(Error::InvalidClass(format!("need at least 2 oscillators, got {n}")));
        }
        let m = pair_count(n);
        if lower.len() != m || upper.len() != m {
            return Err(Error::InvalidClass(format!(
                "expected {m} pair bounds for n = {n}, got {} lower / {} upper",
                lower.len(),
                upper.len()
            )));
        }
        check_finite("omegas", &omegas)?;
        check_finite("lower", &lower)?;
        check_finite("upper", &upper)?;
        for k in 0..m {
            if lower[k] < T::zero() {
                return Err(Error::InvalidClass(format!("lower[{k}] = {} < 0", lower[k])));
            }
            if lower[k] > upper[k] {
                return Err(Error::InvalidClass(format!(
                    "lower[{k}] = {} exceeds upper[{k}] = {}",
                    lower[k], upper[k]
                )));
            }
        }
        Ok(Self {
            n,
            omegas,
            lower,
            upper,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omegas(&self) -> &[T] {
        &self.omegas
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn pair_count(&self) -> usize {
        self.lower.len()
    }

    pub fn bounds(&self, k: usize) -> (T, T) {
        (self.lower[k], self.upper[k])
    }

    pub fn width(&self, k: usize) -> T {
        self.upper[k] - self.lower[k]
    }

    pub fn experiments(&self) -> Vec<ExperimentId> {
        ExperimentId::all(self.n)
    }

    /// Mean natural frequency; the default control-oscillator frequency.
    pub fn mean_frequency(&self) -> T {
        mean(&self.omegas)
    }

    /// `|ω_i − ω_j| / 2`, the coupling at which an isolated pair starts to lock.
    pub fn lock_threshold(&self, experiment: ExperimentId) -> T {
        let (i, j) = (experiment.i() - 1, experiment.j() - 1);
        (self.omegas[i] - self.omegas[j]).abs() * T::half()
    }

    /// Lock threshold clamped into the pair's current interval.
    pub fn sync_threshold(&self, experiment: ExperimentId) -> Result<T> {
        let k = experiment.index(self.n)?;
        let (lo, hi) = self.bounds(k);
        Ok(self.lock_threshold(experiment).max(lo).min(hi))
    }

    /// Copy with the bounds of pair `k` replaced.
    pub fn with_bounds(&self, k: usize, lower: T, upper: T) -> Result<Self> {
        let mut lo = self.lower.clone();
        let mut hi = self.upper.clone();
        lo[k] = lower;
        hi[k] = upper;
        Self::new(self.omegas.clone(), lo, hi)
    }

    /// Relabels oscillators: new oscillator `p` is old oscillator `perm[p]` (0-based).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let omegas = perm.iter().map(|&p| self.omegas[p]).collect();
        let m = self.pair_count();
        let mut lower = vec![T::zero(); m];
        let mut upper = vec![T::zero(); m];
        for (k, (lo, hi)) in lower.iter_mut().zip(upper.iter_mut()).enumerate() {
            let (a, b) = pair_from_index(k, self.n)?;
            let (oa, ob) = (perm[a - 1], perm[b - 1]);
            let old = pair_index(oa.min(ob) + 1, oa.max(ob) + 1, self.n)?;
            *lo = self.lower[old];
            *hi = self.upper[old];
        }
        Self::new(omegas, lower, upper)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| l == u)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> UncertaintyClass<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossless())).collect();
        UncertaintyClass {
            n: self.n,
            omegas: c(&self.omegas),
            lower: c(&self.lower),
            upper: c(&self.upper),
        }
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let seen: HashSet<usize> = perm.iter().copied().filter(|&p| p < n).collect();
    if perm.len() != n || seen.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{perm:?} is not a permutation of 0..{n}"
        )));
    }
    Ok(())
}

pub(crate) fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len().max(1))
}

/// One fully specified Kuramoto model: frequencies and exact couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "InstanceRecord<T>",
    bound(serialize = "T: Scalar", deserialize = "T: Scalar")
)]
pub struct KuramotoInstance<T> {
    n: usize,
    #[serde(serialize_with = "serialize_scalars")]
    omegas: Vec<T>,
    #[serde(serialize_with = "serialize_scalars")]
    couplings: Vec<T>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct InstanceRecord<T> {
    n: usize,
    omegas: Vec<T>,
    couplings: Vec<T>,
}

impl<T: Scalar> TryFrom<InstanceRecord<T>> for KuramotoInstance<T> {
    type Error = Error;

    fn try_from(r: InstanceRecord<T>) -> Result<Self> {
        if r.n != r.omegas.len() {
            return Err(Error::InvalidClass(format!(
                "n = {} but {} frequencies given",
                r.n,
                r.omegas.len()
            )));
        }
        Self::new(r.omegas, r.couplings)
    }
}

impl<T: Scalar> KuramotoInstance<T> {
    /// A single oscillator (`n = 1`) is allowed; it is still meaningful with a
    /// control oscillator attached.
    pub fn new(omegas: Vec<T>, couplings: Vec<T>) -> Result<Self> {
        let n = omegas.len();
        if n == 0 {
            return Err(Error::InvalidClass("instance has no oscillators".into()));
        }
        if couplings.len() != pair_count(n) {
            return Err(Error::InvalidClass(format!(
                "expected {} couplings for n = {n}, got {}",
                pair_count(n),
                couplings.len()
            )));
        }
        check_finite("omegas", &omegas)?;
        check_finite("couplings", &couplings)?;
        if let Some(k) = couplings.iter().position(|a| *a < T::zero()) {
            return Err(Error::InvalidClass(format!("couplings[{k}] is negative")));
        }
        Ok(Self {
            n,
            omegas,
            couplings,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omegas(&self) -> &[T] {
        &self.omegas
    }

    pub fn couplings(&self) -> &[T] {
        &self.couplings
    }

    pub fn mean_frequency(&self) -> T {
        mean(&self.omegas)
    }

    /// Symmetric coupling between 1-based oscillators `i != j`.
    pub fn coupling(&self, i: usize, j: usize) -> Result<T> {
        let k = pair_index(i.min(j), i.max(j), self.n)?;
        Ok(self.couplings[k])
    }

    /// Dense row-major `n × n` coupling matrix with a zero diagonal.
    pub fn coupling_matrix(&self) -> Vec<T> {
        let n = self.n;
        let mut m = vec![T::zero(); n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                m[i * n + j] = self.couplings[k];
                m[j * n + i] = self.couplings[k];
                k += 1;
            }
        }
        m
    }
}

/// One executed experiment inside an OED run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub experiment: ExperimentId,
    pub outcome: ExperimentOutcome,
    /// Mean of the repeated sampling estimates of the updated class.
    pub mocu_mean: f64,
    pub mocu_std: f64,
    /// Wall-clock time spent choosing this experiment.
    pub select_seconds: f64,
}

/// The full record of one OED trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OedTrace {
    pub trial: usize,
    pub initial_mocu_mean: f64,
    pub initial_mocu_std: f64,
    pub steps: Vec<TraceStep>,
}

impl OedTrace {
    /// MOCU after 0, 1, …, len steps.
    pub fn curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_mocu_mean)
            .chain(self.steps.iter().map(|s| s.mocu_mean))
            .collect()
    }

    pub fn has_distinct_experiments(&self) -> bool {
        let ids: HashSet<_> = self.steps.iter().map(|s| s.experiment).collect();
        ids.len() == self.steps.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_index_examples() {
        assert_eq!(pair_index(1, 2, 5).unwrap(), 0);
        assert_eq!(pair_index(4, 5, 5).unwrap(), 9);
        assert_eq!(pair_index(1, 3, 5).unwrap(), 1);
    }

    #[test]
    fn pair_index_rejects_bad_pairs() {
        assert!(pair_index(0, 2, 5).is_err());
        assert!(pair_index(3, 3, 5).is_err());
        assert!(pair_index(4, 2, 5).is_err());
        assert!(pair_index(2, 6, 5).is_err());
        assert!(pair_from_index(10, 5).is_err());
    }

    #[test]
    fn pair_index_round_trips_up_to_twelve() {
        for n in 2..=12 {
            let mut expected = 0;
            for i in 1..=n {
                for j in i + 1..=n {
                    let k = pair_index(i, j, n).unwrap();
                    assert_eq!(k, expected, "lexicographic order");
                    assert_eq!(pair_from_index(k, n).unwrap(), (i, j));
                    expected += 1;
                }
            }
            assert_eq!(expected, pair_count(n));
        }
    }

    fn class(dw: f64, lo: f64, hi: f64) -> UncertaintyClass<f64> {
        UncertaintyClass::new(vec![0.0, dw], vec![lo], vec![hi]).unwrap()
    }

    #[test]
    fn sync_threshold_examples() {
        let e = ExperimentId::new(1, 2, 2).unwrap();
        assert!((class(1.2, 0.5, 1.0).sync_threshold(e).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(class(0.4, 0.5, 1.0).sync_threshold(e).unwrap(), 0.5);
        assert_eq!(class(3.0, 0.5, 1.0).sync_threshold(e).unwrap(), 1.0);
        // sign of the difference does not matter
        assert!((class(-1.2, 0.5, 1.0).sync_threshold(e).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn class_validation() {
        assert!(UncertaintyClass::new(vec![0.0], vec![], vec![]).is_err());
        assert!(UncertaintyClass::new(vec![0.0, 1.0], vec![0.6], vec![0.5]).is_err());
        assert!(UncertaintyClass::new(vec![0.0, 1.0], vec![-0.1], vec![0.5]).is_err());
        assert!(UncertaintyClass::new(vec![0.0, 1.0], vec![0.1, 0.2], vec![0.5, 0.5]).is_err());
        assert!(UncertaintyClass::new(vec![0.0, f64::NAN], vec![0.1], vec![0.5]).is_err());
        assert!(UncertaintyClass::new(vec![0.0, 1.0], vec![0.5], vec![0.5]).is_ok());
    }

    #[test]
    fn class_json_checks_n() {
        let bad = r#"{"n":3,"omegas":[0.0,1.0],"lower":[0.1],"upper":[0.2]}"#;
        assert!(serde_json::from_str::<UncertaintyClass<f64>>(bad).is_err());
        let bad = r#"{"n":2,"omegas":[0.0,1.0],"lower":[0.3],"upper":[0.2]}"#;
        assert!(serde_json::from_str::<UncertaintyClass<f64>>(bad).is_err());
    }

    #[test]
    fn instance_json_has_couplings_field() {
        let inst = KuramotoInstance::new(vec![0.0, 2.0, 1.0], vec![0.1, 0.2, 0.3]).unwrap();
        let text = serde_json::to_string(&inst).unwrap();
        assert!(text.contains("\"couplings\":[1.0000000000000001e-1,"), "{text}");
        let back: KuramotoInstance<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn single_oscillator_instance_is_allowed() {
        let inst = KuramotoInstance::new(vec![1.5], vec![]).unwrap();
        assert_eq!(inst.n(), 1);
        assert!(KuramotoInstance::<f64>::new(vec![], vec![]).is_err());
        assert!(KuramotoInstance::new(vec![0.0, 1.0], vec![-1.0]).is_err());
    }

    #[test]
    fn coupling_matrix_is_symmetric() {
        let inst = KuramotoInstance::new(vec![0.0; 4], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let m = inst.coupling_matrix();
        for i in 0..4 {
            assert_eq!(m[i * 4 + i], 0.0);
            for j in 0..4 {
                assert_eq!(m[i * 4 + j], m[j * 4 + i]);
            }
        }
        assert_eq!(inst.coupling(3, 2).unwrap(), 4.0);
        assert_eq!(m[2 * 4 + 3], 6.0);
    }

    #[test]
    fn permutation_moves_pair_bounds_with_nodes() {
        let c = UncertaintyClass::new(
            vec![1.0, 2.0, 3.0],
            vec![0.1, 0.2, 0.3],
            vec![1.1, 1.2, 1.3],
        )
        .unwrap();
        // new 0 = old 2, new 1 = old 0, new 2 = old 1
        let p = c.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.omegas(), &[3.0, 1.0, 2.0]);
        // new (1,2) = old (3,1) -> old pair (1,3) -> k = 1
        assert_eq!(p.bounds(0), (0.2, 1.2));
        // new (1,3) = old (3,2) -> old pair (2,3) -> k = 2
        assert_eq!(p.bounds(1), (0.3, 1.3));
        // new (2,3) = old (1,2) -> k = 0
        assert_eq!(p.bounds(2), (0.1, 1.1));
        assert!(c.permuted(&[0, 0, 1]).is_err());
    }
}
