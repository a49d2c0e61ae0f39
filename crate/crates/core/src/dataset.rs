//! Labeled datasets of random uncertainty classes.
//!
//! A class is drawn as follows. Frequencies are `ω_i ~ U[−C, C]`; for each
//! pair, `F = |ω_i − ω_j| / 2`, `d^s ~ U[0, D1]`, `d^w ~ U[0, D2]`,
//! `d^u ~ U[0, D3]`, and the interval is centered on `[b d^s + (1 − b) d^w] F`
//! with half-width `d^u F`, its lower end clamped at zero. For a partitioned
//! class every oscillator gets a flag `s_i ~ Ber(1/2)` and `b_ij = s_i`;
//! otherwise each `b_ij ~ Ber(1/2)` independently.
//!
//! On disk a dataset is JSON lines: one [`DatasetHeader`] line, then one
//! [`LabeledSample`] per line.

use std::io::{BufRead, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::SimConfig;
use crate::error::{Error, Result};
use crate::json::{serialize_scalar, Float17};
use crate::mocu::{derive_seed, estimate_mocu};
use crate::scalar::Scalar;
use crate::types::UncertaintyClass;

/// Dataset file layout version.
pub const DATASET_VERSION: u32 = 1;

/// Parameters of the class distribution and of the labeling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenProfile {
    pub n: usize,
    /// Frequency half-range.
    #[serde(rename = "C", serialize_with = "float17")]
    pub c: f64,
    /// Cap of the strong coupling factor.
    #[serde(rename = "D1", serialize_with = "float17")]
    pub d1: f64,
    /// Cap of the weak coupling factor.
    #[serde(rename = "D2", serialize_with = "float17")]
    pub d2: f64,
    /// Cap of the uncertainty factor.
    #[serde(rename = "D3", serialize_with = "float17")]
    pub d3: f64,
    /// Probability that a class uses per-oscillator strength flags.
    #[serde(serialize_with = "float17")]
    pub partitioned_fraction: f64,
    pub count: usize,
    pub label_k: usize,
    pub seed: u64,
}

fn float17<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    Float17(*x).serialize(s)
}

impl GenProfile {
    /// Five oscillators: `C = 6`, `D1 = 1.1`, `D2 = 0.6`, `D3 = 0.3`.
    pub fn n5() -> Self {
        Self {
            n: 5,
            c: 6.0,
            d1: 1.1,
            d2: 0.6,
            d3: 0.3,
            partitioned_fraction: 0.67,
            count: 2000,
            label_k: 2048,
            seed: 0,
        }
    }

    /// Seven oscillators: `C = 10`, `D1 = 1.2`, `D2 = 0.25`, `D3 = 0.6`.
    pub fn n7() -> Self {
        Self {
            n: 7,
            c: 10.0,
            d1: 1.2,
            d2: 0.25,
            d3: 0.6,
            count: 500,
            ..Self::n5()
        }
    }

    /// Built-in profile by name (`n5` or `n7`).
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "n5" => Some(Self::n5()),
            "n7" => Some(Self::n7()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 2 {
            return bad(format!("profile needs n >= 2, got {}", self.n));
        }
        for (name, v) in [("C", self.c), ("D1", self.d1), ("D2", self.d2), ("D3", self.d3)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.partitioned_fraction) {
            return bad(format!(
                "partitioned_fraction must lie in [0, 1], got {}",
                self.partitioned_fraction
            ));
        }
        if self.label_k == 0 {
            return bad("label_k must be at least 1".into());
        }
        Ok(())
    }
}

/// Draws one class from the profile's distribution.
pub fn generate_class<T: Scalar, R: Rng + ?Sized>(profile: &GenProfile, rng: &mut R) -> UncertaintyClass<T> {
    generate_class_detailed(profile, rng).0
}

/// [`generate_class`], also returning whether the class is partitioned and
/// the per-pair strong flags `b_ij`.
pub fn generate_class_detailed<T: Scalar, R: Rng + ?Sized>(
    profile: &GenProfile,
    rng: &mut R,
) -> (UncertaintyClass<T>, bool, Vec<bool>) {
    let n = profile.n;
    let omegas: Vec<f64> = (0..n).map(|_| rng.gen_range(-profile.c..=profile.c)).collect();
    let partitioned = rng.gen::<f64>() < profile.partitioned_fraction;
    let flags: Vec<bool> = if partitioned {
        (0..n).map(|_| rng.gen()).collect()
    } else {
        Vec::new()
    };
    let pairs = n * (n - 1) / 2;
    let (mut lower, mut upper, mut strong) = (
        Vec::with_capacity(pairs),
        Vec::with_capacity(pairs),
        Vec::with_capacity(pairs),
    );
    for i in 0..n {
        for j in i + 1..n {
            let f = (omegas[i] - omegas[j]).abs() / 2.0;
            let ds = rng.gen_range(0.0..=profile.d1);
            let dw = rng.gen_range(0.0..=profile.d2);
            let du = rng.gen_range(0.0..=profile.d3);
            let b = if partitioned { flags[i] } else { rng.gen() };
            let mid = if b { ds } else { dw } * f;
            let half = du * f;
            lower.push(T::lit((mid - half).max(0.0)));
            upper.push(T::lit(mid + half));
            strong.push(b);
        }
    }
    let omegas = omegas.into_iter().map(T::lit).collect();
    let class = UncertaintyClass::new(omegas, lower, upper).expect("generated class is valid");
    (class, partitioned, strong)
}

/// Generator of class `index`.
pub fn class_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    rng.set_stream(index as u64);
    rng
}

/// Seed of the MOCU estimate labeling class `index`.
pub fn label_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, 1), index as u64)
}

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub profile: GenProfile,
    pub seed: u64,
    pub label_k: usize,
    /// Mean of the raw labels.
    #[serde(serialize_with = "float17")]
    pub mean: f64,
    /// Population standard deviation of the raw labels (1 when undefined).
    #[serde(serialize_with = "float17")]
    pub std: f64,
    /// True when `std` was substituted because fewer than two distinct labels exist.
    pub std_substituted: bool,
    /// Number of samples in the file.
    pub count: usize,
    /// Indices whose labeling failed and were left out.
    pub failed: Vec<usize>,
    pub sim_config: SimConfig<f64>,
}

/// A class with its MOCU label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct LabeledSample<T> {
    /// Position in the generation sequence.
    pub index: usize,
    pub class: UncertaintyClass<T>,
    #[serde(serialize_with = "serialize_scalar")]
    pub mocu_label: T,
    #[serde(serialize_with = "serialize_scalar")]
    pub normalized_label: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample<T>>,
}

/// Label statistics `(mean, std, substituted)`; `std` is replaced by 1 when
/// it is zero or undefined.
pub fn label_stats(labels: &[f64]) -> (f64, f64, bool) {
    if labels.is_empty() {
        return (0.0, 1.0, true);
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if labels.len() < 2 || !(std > 0.0) {
        (mean, 1.0, true)
    } else {
        (mean, std, false)
    }
}

/// Generates `profile.count` classes and labels them with `estimate_mocu`
/// at `profile.label_k`. Classes whose labeling fails are dropped and listed
/// in the header. The result does not depend on the thread count.
pub fn generate_dataset(profile: &GenProfile, config: &SimConfig<f64>) -> Result<Dataset<f64>> {
    profile.validate()?;
    config.validate()?;
    let started = Instant::now();
    let labeled: Vec<(UncertaintyClass<f64>, Result<f64>)> = (0..profile.count)
        .into_par_iter()
        .map(|i| {
            let class = generate_class(profile, &mut class_rng(profile.seed, i));
            let label = estimate_mocu(
                &class,
                profile.label_k,
                class.mean_frequency(),
                config,
                label_seed(profile.seed, i),
            )
            .map(|e| e.value);
            (class, label)
        })
        .collect();

    let mut failed = Vec::new();
    let mut kept = Vec::new();
    for (index, (class, label)) in labeled.into_iter().enumerate() {
        match label {
            Ok(v) => kept.push((index, class, v)),
            Err(e) => {
                log::warn!("class {index}: labeling failed: {e}");
                failed.push(index);
            }
        }
    }
    if !failed.is_empty() {
        log::warn!("{} of {} classes excluded after labeling failures", failed.len(), profile.count);
    }
    let labels: Vec<f64> = kept.iter().map(|k| k.2).collect();
    let (mean, std, std_substituted) = label_stats(&labels);
    let samples = kept
        .into_iter()
        .map(|(index, class, raw)| LabeledSample {
            index,
            class,
            mocu_label: raw,
            normalized_label: (raw - mean) / std,
        })
        .collect::<Vec<_>>();
    log::info!(
        "labeled {} classes in {:.1} s",
        samples.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(Dataset {
        header: DatasetHeader {
            format_version: DATASET_VERSION,
            profile: profile.clone(),
            seed: profile.seed,
            label_k: profile.label_k,
            mean,
            std,
            std_substituted,
            count: samples.len(),
            failed,
            sim_config: *config,
        },
        samples,
    })
}

/// Sizes `(⌊fraction · count⌋, rest)` of a train/validation split.
pub fn split_sizes(count: usize, fraction: f64) -> (usize, usize) {
    // the epsilon absorbs products such as 0.96 · 25 landing just below 24
    let train = ((count as f64 * fraction) + 1e-9).floor().clamp(0.0, count as f64) as usize;
    (train, count - train)
}

impl<T: Scalar> Dataset<T> {
    /// Splits off the first `⌊fraction · count⌋` samples.
    pub fn split(&self, fraction: f64) -> (&[LabeledSample<T>], &[LabeledSample<T>]) {
        let (train, _) = split_sizes(self.samples.len(), fraction);
        self.samples.split_at(train)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(buf)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| {
            l.as_ref().map_or(true, |l| !l.trim().is_empty())
        });
        let line_err = |no: usize, e: serde_json::Error| Error::Format(format!("dataset line {}: {e}", no + 1));
        let (no, first) = lines
            .next()
            .ok_or_else(|| Error::Format("dataset is empty".into()))?;
        let header: DatasetHeader = serde_json::from_str(&first?).map_err(|e| line_err(no, e))?;
        if header.format_version != DATASET_VERSION {
            return Err(Error::FormatVersion {
                found: header.format_version,
                expected: DATASET_VERSION,
            });
        }
        let mut samples = Vec::new();
        for (no, line) in lines {
            samples.push(serde_json::from_str(&line?).map_err(|e| line_err(no, e))?);
        }
        if samples.len() != header.count {
            return Err(Error::Format(format!(
                "header announces {} samples, file has {}",
                header.count,
                samples.len()
            )));
        }
        Ok(Self { header, samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::mock::StepRng;

    fn small(count: usize) -> GenProfile {
        GenProfile {
            count,
            label_k: 8,
            seed: 11,
            ..GenProfile::n5()
        }
    }

    #[test]
    fn presets() {
        let p = GenProfile::n7();
        assert_eq!((p.n, p.c, p.d1, p.d2, p.d3), (7, 10.0, 1.2, 0.25, 0.6));
        assert_eq!(p.partitioned_fraction, 0.67);
        assert_eq!(GenProfile::named("n5"), Some(GenProfile::n5()));
        assert!(GenProfile::named("n6").is_none());
    }

    #[test]
    fn invalid_profiles() {
        assert!(GenProfile { d2: 0.0, ..GenProfile::n5() }.validate().is_err());
        assert!(GenProfile { partitioned_fraction: 1.5, ..GenProfile::n5() }.validate().is_err());
        assert!(GenProfile { n: 1, ..GenProfile::n5() }.validate().is_err());
    }

    #[test]
    fn generated_classes_respect_the_distribution() {
        let p = GenProfile::n5();
        for i in 0..200 {
            let (c, partitioned, strong) = generate_class_detailed::<f64, _>(&p, &mut class_rng(3, i));
            assert!(c.omegas().iter().all(|w| w.abs() <= 6.0));
            for (k, e) in c.experiments().into_iter().enumerate() {
                let (lo, hi) = c.bounds(k);
                let f = (c.omegas()[e.i() - 1] - c.omegas()[e.j() - 1]).abs() / 2.0;
                let cap = if strong[k] { 1.1 } else { 0.6 };
                assert!(lo >= 0.0 && lo <= hi);
                assert!((lo + hi) / 2.0 <= (cap + 0.3) * f + 1e-12);
                assert!(hi - lo <= 0.6 * f + 1e-12);
            }
            if partitioned {
                // flags are constant along each row
                for i in 1..5 {
                    let row: Vec<bool> = (i + 1..=5)
                        .map(|j| strong[crate::types::pair_index(i, j, 5).unwrap()])
                        .collect();
                    assert!(row.windows(2).all(|w| w[0] == w[1]));
                }
            }
        }
    }

    #[test]
    fn partition_share() {
        let p = GenProfile::n5();
        let hits = (0..2000)
            .filter(|&i| generate_class_detailed::<f64, _>(&p, &mut class_rng(5, i)).1)
            .count();
        assert!((hits as f64 / 2000.0 - 0.67).abs() < 0.04, "{hits}");
    }

    #[test]
    fn equal_frequencies_collapse_the_interval() {
        // a constant generator makes every draw identical
        let mut rng = StepRng::new(1 << 63, 0);
        let c = generate_class::<f64, _>(&small(1), &mut rng);
        assert!(c.omegas().windows(2).all(|w| w[0] == w[1]));
        assert!(c.lower().iter().chain(c.upper()).all(|&v| v == 0.0));
    }

    #[test]
    fn stats_and_normalization() {
        let labels = [0.1, 0.4, 0.25, 0.9, 0.0];
        let (mean, std, sub) = label_stats(&labels);
        assert!(!sub);
        let z: Vec<f64> = labels.iter().map(|x| (x - mean) / std).collect();
        let zm = z.iter().sum::<f64>() / 5.0;
        let zv = z.iter().map(|x| (x - zm).powi(2)).sum::<f64>() / 5.0;
        assert!(zm.abs() < 1e-12 && (zv - 1.0).abs() < 1e-9);
        assert_eq!(label_stats(&[0.3]), (0.3, 1.0, true));
        assert_eq!(label_stats(&[0.2, 0.2]).1, 1.0);
    }

    #[test]
    fn split_sizes_floor() {
        assert_eq!(split_sizes(100, 0.96), (96, 4));
        assert_eq!(split_sizes(25, 0.96), (24, 1));
        assert_eq!(split_sizes(2000, 0.96), (1920, 80));
        assert_eq!(split_sizes(1, 0.96), (0, 1));
        assert_eq!(split_sizes(7, 1.0), (7, 0));
    }

    #[test]
    fn single_sample_dataset_flags_std() {
        let d = generate_dataset(&small(1), &SimConfig::default()).unwrap();
        assert_eq!(d.header.count, 1);
        assert!(d.header.std_substituted);
        assert_eq!(d.header.std, 1.0);
        assert_eq!(d.samples[0].normalized_label, 0.0);
    }

    #[test]
    fn dataset_is_reproducible_and_round_trips() {
        let cfg = SimConfig::default();
        let a = generate_dataset(&small(6), &cfg).unwrap();
        let b = generate_dataset(&small(6), &cfg).unwrap();
        assert_eq!(a, b);
        let z: Vec<f64> = a.samples.iter().map(|s| s.normalized_label).collect();
        assert!((z.iter().sum::<f64>() / 6.0).abs() < 1e-12);
        let text = a.to_jsonl().unwrap();
        assert_eq!(text.iter().filter(|&&c| c == b'\n').count(), 7);
        let back = Dataset::<f64>::read_jsonl(&text[..]).unwrap();
        assert_eq!(back, a);
        let other = generate_dataset(&GenProfile { seed: 12, ..small(6) }, &cfg).unwrap();
        assert_ne!(other.samples[0].class, a.samples[0].class);
    }

    #[test]
    fn prefix_stability() {
        // class i does not depend on the requested count
        let p = small(3);
        let q = small(9);
        for i in 0..3 {
            let a: UncertaintyClass<f64> = generate_class(&p, &mut class_rng(p.seed, i));
            let b: UncertaintyClass<f64> = generate_class(&q, &mut class_rng(q.seed, i));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn failures_are_excluded_and_listed() {
        let cfg = SimConfig { max_control: 2.0, ..SimConfig::default() };
        let p = GenProfile { c: 40.0, ..small(4) };
        let d = generate_dataset(&p, &cfg).unwrap();
        assert_eq!(d.header.failed.len() + d.samples.len(), 4);
        assert!(!d.header.failed.is_empty());
    }

    #[test]
    fn bad_files() {
        assert!(Dataset::<f64>::read_jsonl(&b""[..]).unwrap_err().is_format());
        let d = generate_dataset(&small(2), &SimConfig::default()).unwrap();
        let mut text = String::from_utf8(d.to_jsonl().unwrap()).unwrap();
        text.push_str("{\"nope\":1}\n");
        assert!(Dataset::<f64>::read_jsonl(text.as_bytes()).unwrap_err().is_format());
    }
}
