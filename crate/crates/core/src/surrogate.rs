//! Forward pass of the message-passing surrogate that predicts MOCU.
//!
//! Architecture (hidden width `d`, filter width `f`):
//!
//! * embedding: `h_v = ReLU(W x_v + b)` with `x_v = [ω_v]`;
//! * `T` rounds of edge-conditioned messages and a GRU update with shared
//!   weights: `m_v = Σ_{w≠v} h_w Θ(e_vw)`, `h_v ← GRU(state h_v, input m_v)`,
//!   where `e_vw = [a^ℓ, a^u]` and `Θ(e)` is the `d × d` matrix (row = input
//!   channel) produced by the filter net `Linear(2, f) → ReLU → Linear(f, d²)`;
//! * set2set readout over the node states for `set2set_steps` rounds, giving
//!   a `2d` graph vector;
//! * head `Linear(2d, d) → ReLU → Linear(d, 1)`, then de-normalization with the
//!   label mean and standard deviation.
//!
//! Dense weights are stored `[out, in]` row-major. The GRU stacks its gates in
//! the order reset, update, candidate; the set2set LSTM stacks input, forget,
//! cell, output.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::json::{write_atomic, Float17};
use crate::mocu::expected_remaining_with;
use crate::scalar::Scalar;
use crate::types::{ExperimentId, UncertaintyClass};

/// Bundle layout version this runtime reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// A class as a complete graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEncoding<T> {
    /// `x_v = [ω_v]`.
    pub nodes: Vec<T>,
    /// Every ordered pair `(v, w)`, `v ≠ w`, with `e_vw = [a^ℓ, a^u]`.
    pub edges: Vec<DirectedEdge<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectedEdge<T> {
    /// Receiving node.
    pub target: usize,
    pub source: usize,
    pub features: [T; 2],
}

/// Encodes a class; edges are listed by target, then source.
pub fn encode<T: Scalar>(class: &UncertaintyClass<T>) -> GraphEncoding<T> {
    let n = class.n();
    let mut edges = Vec::with_capacity(n * (n - 1));
    for v in 0..n {
        for w in (0..n).filter(|&w| w != v) {
            let k = crate::types::pair_index(v.min(w) + 1, v.max(w) + 1, n)
                .expect("pair inside the class");
            let (lo, hi) = class.bounds(k);
            edges.push(DirectedEdge {
                target: v,
                source: w,
                features: [lo, hi],
            });
        }
    }
    GraphEncoding {
        nodes: class.omegas().to_vec(),
        edges,
    }
}

/// Architecture sizes and label statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub format_version: u32,
    pub hidden_dim: usize,
    pub filter_hidden: usize,
    pub message_steps: usize,
    pub set2set_steps: usize,
    #[serde(serialize_with = "float17")]
    pub label_mean: f64,
    #[serde(serialize_with = "float17")]
    pub label_std: f64,
    /// Inputs are multiplied by these before the forward pass.
    #[serde(default = "one", serialize_with = "float17")]
    pub omega_scale: f64,
    #[serde(default = "one", serialize_with = "float17")]
    pub bound_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn float17<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    Float17(*x).serialize(s)
}

impl BundleMeta {
    /// Default architecture: `d = 64`, `f = 32`, three message and three
    /// set2set steps, identity label scaling.
    pub fn new(hidden_dim: usize, filter_hidden: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            hidden_dim,
            filter_hidden,
            message_steps: 3,
            set2set_steps: 3,
            label_mean: 0.0,
            label_std: 1.0,
            omega_scale: 1.0,
            bound_scale: 1.0,
        }
    }

    /// `(name, shape)` of every tensor, in file order.
    pub fn tensor_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (d, f) = (self.hidden_dim, self.filter_hidden);
        vec![
            ("embed.weight", vec![d, 1]),
            ("embed.bias", vec![d]),
            ("filter1.weight", vec![f, 2]),
            ("filter1.bias", vec![f]),
            ("filter2.weight", vec![d * d, f]),
            ("filter2.bias", vec![d * d]),
            ("gru.weight_ih", vec![3 * d, d]),
            ("gru.weight_hh", vec![3 * d, d]),
            ("gru.bias_ih", vec![3 * d]),
            ("gru.bias_hh", vec![3 * d]),
            ("set2set.weight_ih", vec![4 * d, 2 * d]),
            ("set2set.weight_hh", vec![4 * d, d]),
            ("set2set.bias_ih", vec![4 * d]),
            ("set2set.bias_hh", vec![4 * d]),
            ("head1.weight", vec![d, 2 * d]),
            ("head1.bias", vec![d]),
            ("head2.weight", vec![1, d]),
            ("head2.bias", vec![1]),
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let bad = |m: String| Err(Error::Format(m));
        if self.hidden_dim == 0 || self.filter_hidden == 0 {
            return bad("hidden_dim and filter_hidden must be positive".into());
        }
        if self.message_steps == 0 || self.set2set_steps == 0 {
            return bad("message_steps and set2set_steps must be at least 1".into());
        }
        if !(self.label_std > 0.0 && self.label_std.is_finite()) {
            return bad(format!("label_std must be positive, got {}", self.label_std));
        }
        if !self.label_mean.is_finite() || !self.omega_scale.is_finite() || !self.bound_scale.is_finite() {
            return bad("label_mean and input scales must be finite".into());
        }
        Ok(())
    }
}

/// One named dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleRecord {
    meta: BundleMeta,
    tensors: BTreeMap<String, TensorRecord>,
}

/// Surrogate weights plus metadata; immutable once validated.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle<T> {
    meta: BundleMeta,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> WeightBundle<T> {
    /// Validates shapes and metadata.
    pub fn new(meta: BundleMeta, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        meta.validate()?;
        let expected = meta.tensor_shapes();
        for (name, shape) in &expected {
            let t = tensors.get(*name).ok_or_else(|| Error::TensorShape {
                tensor: name.to_string(),
                reason: "missing".into(),
            })?;
            if &t.shape != shape {
                return Err(Error::TensorShape {
                    tensor: name.to_string(),
                    reason: format!("expected shape {shape:?}, found {:?}", t.shape),
                });
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::TensorShape {
                    tensor: name.to_string(),
                    reason: format!(
                        "shape {shape:?} needs {} values, found {}",
                        shape.iter().product::<usize>(),
                        t.data.len()
                    ),
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::TensorShape {
                    tensor: name.to_string(),
                    reason: "non-finite value".into(),
                });
            }
        }
        if let Some(extra) = tensors.keys().find(|k| !expected.iter().any(|(n, _)| n == k)) {
            return Err(Error::TensorShape {
                tensor: extra.clone(),
                reason: "unknown tensor".into(),
            });
        }
        Ok(Self { meta, tensors })
    }

    /// Random weights, uniform in `±sqrt(6 / (fan_in + fan_out))`, biases
    /// uniform in `±0.1`. Deterministic in `seed`.
    pub fn random(meta: BundleMeta, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in meta.tensor_shapes() {
            let limit = if shape.len() == 2 {
                (6.0 / (shape[0] + shape[1]) as f64).sqrt()
            } else {
                0.1
            };
            let len = shape.iter().product();
            let data = (0..len)
                .map(|_| T::lit(rng.gen_range(-limit..limit)))
                .collect();
            tensors.insert(name.to_string(), Tensor { shape, data });
        }
        Self::new(meta, tensors)
    }

    pub fn meta(&self) -> &BundleMeta {
        &self.meta
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Same weights with different label statistics.
    pub fn with_label_stats(mut self, mean: f64, std: f64) -> Result<Self> {
        self.meta.label_mean = mean;
        self.meta.label_std = std;
        self.meta.validate()?;
        Ok(self)
    }

    fn data(&self, name: &str) -> &[T] {
        &self.tensors[name].data
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let record: BundleRecord = serde_json::from_str(text).map_err(|e| {
            if e.is_data() || e.is_syntax() || e.is_eof() {
                Error::Format(format!("weight bundle: {e}"))
            } else {
                Error::Json(e)
            }
        })?;
        // check the version before anything shape-related
        record.meta.validate()?;
        let tensors = record
            .tensors
            .into_iter()
            .map(|(name, t)| {
                let data = t.data.into_iter().map(T::lit).collect();
                (name, Tensor { shape: t.shape, data })
            })
            .collect();
        Self::new(record.meta, tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json_string()?.as_bytes())
    }
}

impl<T: Scalar> Serialize for WeightBundle<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Tensors<'a, T>(&'a BTreeMap<String, Tensor<T>>);
        struct One<'a, T>(&'a Tensor<T>);
        impl<T: Scalar> Serialize for One<'_, T> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("shape", &self.0.shape)?;
                let data: Vec<Float17> =
                    self.0.data.iter().map(|v| Float17(v.to_f64_lossless())).collect();
                m.serialize_entry("data", &data)?;
                m.end()
            }
        }
        impl<T: Scalar> Serialize for Tensors<'_, T> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.len()))?;
                for (k, v) in self.0 {
                    m.serialize_entry(k, &One(v))?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("meta", &self.meta)?;
        m.serialize_entry("tensors", &Tensors(&self.tensors))?;
        m.end()
    }
}

/// `out = W x + b` with `W` stored `[out, in]`.
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for ((o, row), &bias) in out.iter_mut().zip(w.chunks_exact(cols)).zip(b) {
        *o = bias + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>();
    }
}

fn relu<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = x.max(T::zero()));
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Predicted MOCU of the class on the raw label scale.
pub fn predict<T: Scalar>(bundle: &WeightBundle<T>, class: &UncertaintyClass<T>) -> T {
    let meta = &bundle.meta;
    let d = meta.hidden_dim;
    let graph = encode(class);
    let n = graph.nodes.len();
    let omega_scale = T::lit(meta.omega_scale);
    let bound_scale = T::lit(meta.bound_scale);

    // node embedding
    let mut h: Vec<Vec<T>> = graph
        .nodes
        .iter()
        .map(|&w| {
            let mut v = vec![T::zero(); d];
            affine(bundle.data("embed.weight"), bundle.data("embed.bias"), &[w * omega_scale], &mut v);
            relu(&mut v);
            v
        })
        .collect();

    // one filter per unordered pair: e_vw = e_wv
    let filters: Vec<Vec<T>> = class
        .lower()
        .iter()
        .zip(class.upper())
        .map(|(&lo, &hi)| {
            let mut hidden = vec![T::zero(); meta.filter_hidden];
            let e = [lo * bound_scale, hi * bound_scale];
            affine(bundle.data("filter1.weight"), bundle.data("filter1.bias"), &e, &mut hidden);
            relu(&mut hidden);
            let mut theta = vec![T::zero(); d * d];
            affine(bundle.data("filter2.weight"), bundle.data("filter2.bias"), &hidden, &mut theta);
            theta
        })
        .collect();

    let mut m = vec![vec![T::zero(); d]; n];
    let (mut gi, mut gh) = (vec![T::zero(); 3 * d], vec![T::zero(); 3 * d]);
    for _ in 0..meta.message_steps {
        for (v, mv) in m.iter_mut().enumerate() {
            mv.iter_mut().for_each(|x| *x = T::zero());
            for edge in graph.edges.iter().filter(|e| e.target == v) {
                let w = edge.source;
                let k = crate::types::pair_index(v.min(w) + 1, v.max(w) + 1, n)
                    .expect("pair inside the class");
                let theta = &filters[k];
                for (&hw, row) in h[w].iter().zip(theta.chunks_exact(d)) {
                    for (o, &t) in mv.iter_mut().zip(row) {
                        *o += hw * t;
                    }
                }
            }
        }
        for (hv, mv) in h.iter_mut().zip(&m) {
            affine(bundle.data("gru.weight_ih"), bundle.data("gru.bias_ih"), mv, &mut gi);
            affine(bundle.data("gru.weight_hh"), bundle.data("gru.bias_hh"), hv, &mut gh);
            for c in 0..d {
                let r = sigmoid(gi[c] + gh[c]);
                let z = sigmoid(gi[d + c] + gh[d + c]);
                let cand = (gi[2 * d + c] + r * gh[2 * d + c]).tanh();
                hv[c] = (T::one() - z) * cand + z * hv[c];
            }
        }
    }

    let g = set2set(bundle, &h, d);
    let mut hidden = vec![T::zero(); d];
    affine(bundle.data("head1.weight"), bundle.data("head1.bias"), &g, &mut hidden);
    relu(&mut hidden);
    let mut y = [T::zero()];
    affine(bundle.data("head2.weight"), bundle.data("head2.bias"), &hidden, &mut y);
    y[0] * T::lit(meta.label_std) + T::lit(meta.label_mean)
}

fn set2set<T: Scalar>(bundle: &WeightBundle<T>, nodes: &[Vec<T>], d: usize) -> Vec<T> {
    let mut q_star = vec![T::zero(); 2 * d];
    let mut hidden = vec![T::zero(); d];
    let mut cell = vec![T::zero(); d];
    let (mut gi, mut gh) = (vec![T::zero(); 4 * d], vec![T::zero(); 4 * d]);
    for _ in 0..bundle.meta.set2set_steps {
        affine(bundle.data("set2set.weight_ih"), bundle.data("set2set.bias_ih"), &q_star, &mut gi);
        affine(bundle.data("set2set.weight_hh"), bundle.data("set2set.bias_hh"), &hidden, &mut gh);
        for c in 0..d {
            let i = sigmoid(gi[c] + gh[c]);
            let f = sigmoid(gi[d + c] + gh[d + c]);
            let g = (gi[2 * d + c] + gh[2 * d + c]).tanh();
            let o = sigmoid(gi[3 * d + c] + gh[3 * d + c]);
            cell[c] = f * cell[c] + i * g;
            hidden[c] = o * cell[c].tanh();
        }
        let scores: Vec<T> = nodes
            .iter()
            .map(|x| x.iter().zip(&hidden).map(|(&a, &b)| a * b).sum())
            .collect();
        let top = scores.iter().copied().fold(T::neg_infinity(), T::max);
        let weights: Vec<T> = scores.iter().map(|&s| (s - top).exp()).collect();
        let total: T = weights.iter().copied().sum();
        q_star[..d].copy_from_slice(&hidden);
        let readout = &mut q_star[d..];
        readout.iter_mut().for_each(|r| *r = T::zero());
        for (x, &w) in nodes.iter().zip(&weights) {
            let a = w / total;
            for (r, &v) in readout.iter_mut().zip(x) {
                *r += a * v;
            }
        }
    }
    q_star
}

/// [`predict`] for many classes, in input order.
pub fn predict_batch<T: Scalar>(bundle: &WeightBundle<T>, classes: &[UncertaintyClass<T>]) -> Vec<T> {
    classes.par_iter().map(|c| predict(bundle, c)).collect()
}

/// Expected remaining MOCU of an experiment with the surrogate in place of
/// the sampling estimate.
pub fn predict_expected_remaining<T: Scalar>(
    bundle: &WeightBundle<T>,
    class: &UncertaintyClass<T>,
    experiment: ExperimentId,
) -> Result<T> {
    Ok(expected_remaining_with(class, experiment, |c, _| Ok(predict(bundle, c)))?.value)
}
