//! Compression operators and compressor collections.
//!
//! A single operator maps a dense vector to a [`SparseMessage`]. A
//! [`Collection`] produces one message per worker and fixes how the n
//! messages relate to each other: one shared draw (`Same`), n independent
//! draws (`Independent`), or a correlated draw where the coordinates are
//! partitioned across workers by a shared random permutation (`Correlated`,
//! the PermK construction).

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{stream, Rng, Role};

/// Minimum Monte-Carlo sample count accepted by the estimators.
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Variance constant of the natural compressor.
pub const NATURAL_OMEGA: f64 = 1.0 / 8.0;

/// How the values of a message are encoded on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Full-precision floats.
    Float,
    /// Signed powers of two produced by the natural compressor.
    Natural,
}

/// A compressed vector: sorted unique coordinates plus their values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMessage {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Payload size in coordinates.
    pub cost: f64,
    pub encoding: Encoding,
}

impl SparseMessage {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
            cost: 0.0,
            encoding: Encoding::Float,
        }
    }

    /// A message carrying all of `x`.
    pub fn dense(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            indices: (0..x.len()).collect(),
            values: x.to_vec(),
            cost: x.len() as f64,
            encoding: Encoding::Float,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.add_scaled_to(1.0, &mut out);
        out
    }

    /// `out += scale * self`.
    pub fn add_scaled_to(&self, scale: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += scale * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(param("values", "length differs from indices"));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param("indices", "not strictly increasing"));
        }
        if self.indices.last().is_some_and(|&i| i >= self.dim) {
            return Err(param("indices", "index out of range"));
        }
        if self.cost < 0.0 {
            return Err(param("cost", "negative"));
        }
        Ok(())
    }

    fn clear(&mut self, dim: usize) {
        self.dim = dim;
        self.indices.clear();
        self.values.clear();
        self.cost = 0.0;
        self.encoding = Encoding::Float;
    }

    fn seal(&mut self, encoding: Encoding) {
        self.cost = self.indices.len() as f64;
        self.encoding = encoding;
    }

    fn value_at(&self, i: usize) -> f64 {
        match self.indices.binary_search(&i) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(param("k", format!("must satisfy 1 <= k <= d = {d}, got {k}")));
    }
    Ok(())
}

/// Checks the PermK shape restriction `d >= n`, `n | d`.
pub fn check_perm_shape(d: usize, n: usize) -> Result<()> {
    if n == 0 || d < n || d % n != 0 {
        return Err(Error::UnsupportedShape(format!(
            "PermK requires d >= n and n | d (d = {d}, n = {n})"
        )));
    }
    Ok(())
}

/// Uniform k-subset of `0..d` by Floyd's algorithm, sorted.
fn sample_subset(d: usize, k: usize, rng: &mut Rng, out: &mut Vec<usize>) {
    out.clear();
    if k <= 64 {
        for j in d - k..d {
            let t = rng.random_range(0..=j);
            if out.contains(&t) {
                out.push(j);
            } else {
                out.push(t);
            }
        }
    } else {
        let mut taken = vec![false; d];
        for j in d - k..d {
            let t = rng.random_range(0..=j);
            let pick = if taken[t] { j } else { t };
            taken[pick] = true;
            out.push(pick);
        }
    }
    out.sort_unstable();
}

fn rand_k_into(x: &[f64], k: usize, rng: &mut Rng, out: &mut SparseMessage) {
    let d = x.len();
    let scale = d as f64 / k as f64;
    out.clear(d);
    let mut idx = std::mem::take(&mut out.indices);
    sample_subset(d, k, rng, &mut idx);
    out.values.extend(idx.iter().map(|&i| scale * x[i]));
    out.indices = idx;
    out.seal(Encoding::Float);
}

fn top_k_into(x: &[f64], k: usize, out: &mut SparseMessage) {
    let d = x.len();
    out.clear(d);
    let mut order: Vec<usize> = (0..d).collect();
    let by_magnitude = |a: &usize, b: &usize| {
        x[*b]
            .abs()
            .partial_cmp(&x[*a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < d {
        order.select_nth_unstable_by(k - 1, by_magnitude);
        order.truncate(k);
    }
    order.sort_unstable();
    out.values.extend(order.iter().map(|&i| x[i]));
    out.indices = order;
    out.seal(Encoding::Float);
}

/// Unbiased two-point rounding of `t` to the neighbouring powers of two.
fn natural_round(t: f64, rng: &mut Rng) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let a = t.abs();
    let bits = a.to_bits();
    let exponent = (bits >> 52) & 0x7ff;
    let (lo, exact) = if exponent == 0 {
        // subnormal: the leading mantissa bit is the power of two below
        (f64::from_bits(1u64 << (63 - bits.leading_zeros())), bits.is_power_of_two())
    } else {
        (f64::from_bits(exponent << 52), bits & ((1u64 << 52) - 1) == 0)
    };
    if exact {
        return t;
    }
    let hi = 2.0 * lo;
    let p_down = (hi - a) / (hi - lo);
    let u: f64 = rng.random();
    let r = if u < p_down { lo } else { hi };
    r.copysign(t)
}

fn natural_in_place(msg: &mut SparseMessage, rng: &mut Rng) {
    for v in msg.values.iter_mut() {
        *v = natural_round(*v, rng);
    }
    msg.seal(Encoding::Natural);
}

/// RandK: keeps `k` uniformly sampled coordinates scaled by `d/k`.
pub fn apply_rand_k(x: &[f64], k: usize, rng: &mut Rng) -> Result<SparseMessage> {
    check_k(k, x.len())?;
    check_finite(x)?;
    let mut out = SparseMessage::empty(x.len());
    rand_k_into(x, k, rng, &mut out);
    Ok(out)
}

/// TopK: keeps the `k` largest-magnitude coordinates unscaled, ties to the
/// lowest index.
pub fn apply_top_k(x: &[f64], k: usize) -> Result<SparseMessage> {
    check_k(k, x.len())?;
    check_finite(x)?;
    let mut out = SparseMessage::empty(x.len());
    top_k_into(x, k, &mut out);
    Ok(out)
}

/// Natural compressor on a dense vector.
pub fn apply_natural(x: &[f64], rng: &mut Rng) -> Result<SparseMessage> {
    check_finite(x)?;
    let mut out = SparseMessage::dense(x);
    natural_in_place(&mut out, rng);
    Ok(out)
}

/// PermK collection for `n` workers with a freshly drawn permutation.
pub fn apply_perm_k_collection(x: &[f64], n: usize, rng: &mut Rng) -> Result<Vec<SparseMessage>> {
    check_perm_shape(x.len(), n)?;
    check_finite(x)?;
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.shuffle(rng);
    Ok(perm_k_with(x, n, &perm))
}

/// PermK collection for a given permutation of `0..d`.
pub fn perm_k_with(x: &[f64], n: usize, perm: &[usize]) -> Vec<SparseMessage> {
    let mut out = vec![SparseMessage::empty(x.len()); n];
    for (i, msg) in out.iter_mut().enumerate() {
        perm_block_into(x, n, perm, i, msg);
    }
    out
}

fn perm_block_into(x: &[f64], n: usize, perm: &[usize], worker: usize, out: &mut SparseMessage) {
    let q = x.len() / n;
    out.clear(x.len());
    out.indices.extend_from_slice(&perm[q * worker..q * (worker + 1)]);
    out.indices.sort_unstable();
    let scale = n as f64;
    out.values.extend(out.indices.iter().map(|&i| scale * x[i]));
    out.seal(Encoding::Float);
}

/// Declarative description of a compressor or collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorSpec {
    Identity,
    RandK { k: usize },
    /// One RandK draw shared by every worker.
    SameRandK { k: usize },
    PermK,
    TopK { k: usize },
    Natural,
    /// `outer ∘ inner`: `inner` is applied first.
    Compose {
        outer: Box<CompressorSpec>,
        inner: Box<CompressorSpec>,
    },
}

/// `outer ∘ inner`.
pub fn compose(outer: CompressorSpec, inner: CompressorSpec) -> CompressorSpec {
    CompressorSpec::Compose {
        outer: Box::new(outer),
        inner: Box::new(inner),
    }
}

/// Relationship between the n messages of one collection draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionMode {
    Same,
    Independent,
    Correlated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Identity,
    RandK(usize),
    TopK(usize),
    Natural,
    PermBlock,
}

impl Stage {
    fn omega(self, d: usize, n: usize) -> Option<f64> {
        match self {
            Stage::Identity => Some(0.0),
            Stage::RandK(k) => Some(d as f64 / k as f64 - 1.0),
            Stage::Natural => Some(NATURAL_OMEGA),
            Stage::PermBlock => Some(n as f64 - 1.0),
            Stage::TopK(_) => None,
        }
    }
}

impl CompressorSpec {
    fn flatten(&self, stages: &mut Vec<Stage>, same: &mut bool) {
        match self {
            CompressorSpec::Identity => stages.push(Stage::Identity),
            CompressorSpec::RandK { k } => stages.push(Stage::RandK(*k)),
            CompressorSpec::SameRandK { k } => {
                *same = true;
                stages.push(Stage::RandK(*k));
            }
            CompressorSpec::PermK => stages.push(Stage::PermBlock),
            CompressorSpec::TopK { k } => stages.push(Stage::TopK(*k)),
            CompressorSpec::Natural => stages.push(Stage::Natural),
            CompressorSpec::Compose { outer, inner } => {
                inner.flatten(stages, same);
                outer.flatten(stages, same);
            }
        }
    }

    /// Stages in application order, and whether a shared draw was requested.
    fn stages(&self) -> (Vec<Stage>, bool) {
        let mut stages = Vec::new();
        let mut same = false;
        self.flatten(&mut stages, &mut same);
        (stages, same)
    }

    /// Collection mode implied by the spec.
    pub fn default_mode(&self) -> CollectionMode {
        let (stages, same) = self.stages();
        if stages.contains(&Stage::PermBlock) {
            CollectionMode::Correlated
        } else if same {
            CollectionMode::Same
        } else {
            CollectionMode::Independent
        }
    }

    /// Checks the spec against dimension `d` and worker count `n`.
    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        if d == 0 {
            return Err(param("d", "must be positive"));
        }
        let (stages, same) = self.stages();
        for (pos, stage) in stages.iter().enumerate() {
            match *stage {
                Stage::RandK(k) | Stage::TopK(k) => check_k(k, d)?,
                Stage::PermBlock => {
                    if pos != 0 {
                        return Err(param("kind", "PermK must be the innermost stage"));
                    }
                    if same {
                        return Err(param("kind", "PermK cannot be combined with SameRandK"));
                    }
                    check_perm_shape(d, n)?;
                }
                Stage::Identity | Stage::Natural => {}
            }
        }
        Ok(())
    }

    /// Variance constant ω of each member, `None` for biased specs.
    pub fn omega(&self, d: usize, n: usize) -> Option<f64> {
        let (stages, _) = self.stages();
        stages
            .iter()
            .try_fold(1.0, |acc, s| s.omega(d, n).map(|w| acc * (1.0 + w)))
            .map(|prod| prod - 1.0)
    }

    /// Contraction constant α for a lone TopK (or identity).
    pub fn alpha(&self, d: usize) -> Option<f64> {
        match self {
            CompressorSpec::TopK { k } => Some(*k as f64 / d as f64),
            CompressorSpec::Identity => Some(1.0),
            _ => None,
        }
    }

    /// Collection constant θ under `mode`.
    pub fn theta(&self, d: usize, n: usize, mode: CollectionMode) -> Option<f64> {
        let omega = self.omega(d, n)?;
        match mode {
            CollectionMode::Same => Some(omega),
            CollectionMode::Independent => Some(omega / n as f64),
            CollectionMode::Correlated => {
                // Outer stages are drawn independently per worker on top of
                // the exact partition; their variance does not average out
                // against the n-fold scaling.
                let (stages, _) = self.stages();
                stages[1..]
                    .iter()
                    .try_fold(1.0, |acc, s| s.omega(d, n).map(|w| acc * (1.0 + w)))
                    .map(|prod| prod - 1.0)
            }
        }
    }

    /// Coordinates carried by one message.
    pub fn payload_coords(&self, d: usize, n: usize) -> usize {
        let (stages, _) = self.stages();
        let mut support = d;
        for s in stages {
            support = match s {
                Stage::Identity | Stage::Natural => support,
                Stage::RandK(k) | Stage::TopK(k) => k,
                Stage::PermBlock => d / n,
            };
        }
        support
    }

    pub fn is_unbiased(&self) -> bool {
        !self.stages().0.iter().any(|s| matches!(s, Stage::TopK(_)))
    }

    /// Whether the last stage is the natural compressor.
    pub fn ends_natural(&self) -> bool {
        self.stages().0.last() == Some(&Stage::Natural)
    }
}

/// Inputs to one collection draw.
#[derive(Debug, Clone, Copy)]
pub enum Inputs<'a> {
    /// Every worker compresses the same vector.
    Shared(&'a [f64]),
    /// Worker `i` compresses `vectors[i]`.
    PerWorker(&'a [Vec<f64>]),
}

impl<'a> Inputs<'a> {
    fn get(&self, i: usize) -> &'a [f64] {
        match *self {
            Inputs::Shared(x) => x,
            Inputs::PerWorker(v) => &v[i],
        }
    }
}

/// A validated compressor collection for `n` workers in dimension `d`.
#[derive(Debug, Clone)]
pub struct Collection {
    spec: CompressorSpec,
    stages: Vec<Stage>,
    mode: CollectionMode,
    n: usize,
    d: usize,
}

impl Collection {
    pub fn new(spec: CompressorSpec, n: usize, d: usize) -> Result<Self> {
        let mode = spec.default_mode();
        Self::with_mode(spec, mode, n, d)
    }

    pub fn with_mode(spec: CompressorSpec, mode: CollectionMode, n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(param("n", "must be positive"));
        }
        spec.validate(d, n)?;
        let (stages, same) = spec.stages();
        let correlated = stages.first() == Some(&Stage::PermBlock);
        if correlated != (mode == CollectionMode::Correlated) {
            return Err(param("mode", "correlated mode is exactly the PermK collection"));
        }
        if same && mode != CollectionMode::Same {
            return Err(param("mode", "SameRandK requires the same mode"));
        }
        Ok(Self {
            spec,
            stages,
            mode,
            n,
            d,
        })
    }

    pub fn spec(&self) -> &CompressorSpec {
        &self.spec
    }
    pub fn mode(&self) -> CollectionMode {
        self.mode
    }
    pub fn workers(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn omega(&self) -> Option<f64> {
        self.spec.omega(self.d, self.n)
    }
    pub fn theta(&self) -> Option<f64> {
        self.spec.theta(self.d, self.n, self.mode)
    }
    pub fn payload_coords(&self) -> usize {
        self.spec.payload_coords(self.d, self.n)
    }

    fn encoding(&self) -> Encoding {
        if self.stages.last() == Some(&Stage::Natural) {
            Encoding::Natural
        } else {
            Encoding::Float
        }
    }

    /// Applies `stages` to a dense input.
    fn chain(stages: &[Stage], x: &[f64], rng: &mut Rng, out: &mut SparseMessage) {
        let (first, rest) = stages.split_first().expect("non-empty stage list");
        match *first {
            Stage::Identity => {
                out.clear(x.len());
                out.indices.extend(0..x.len());
                out.values.extend_from_slice(x);
                out.seal(Encoding::Float);
            }
            Stage::RandK(k) => rand_k_into(x, k, rng, out),
            Stage::TopK(k) => top_k_into(x, k, out),
            Stage::Natural => {
                out.clear(x.len());
                out.indices.extend(0..x.len());
                out.values.extend_from_slice(x);
                natural_in_place(out, rng);
            }
            Stage::PermBlock => unreachable!("PermK is handled by the collection"),
        }
        Self::finish(rest, rng, out);
    }

    /// Applies the remaining `stages` to an already compressed message.
    fn finish(stages: &[Stage], rng: &mut Rng, out: &mut SparseMessage) {
        for &stage in stages {
            match stage {
                Stage::Identity => {}
                Stage::Natural => natural_in_place(out, rng),
                Stage::RandK(_) | Stage::TopK(_) => {
                    let dense = out.densify();
                    Self::chain(&[stage], &dense, rng, out);
                }
                Stage::PermBlock => unreachable!("PermK must be innermost"),
            }
        }
    }

    /// Draws one message per worker into `out` (length `n`).
    ///
    /// `server` drives shared randomness (the permutation, or the single
    /// shared draw); `workers[i]` drives worker `i`'s independent stages.
    pub fn compress_into(
        &self,
        inputs: Inputs<'_>,
        server: &mut Rng,
        workers: &mut [Rng],
        out: &mut [SparseMessage],
    ) {
        assert_eq!(out.len(), self.n);
        match self.mode {
            CollectionMode::Correlated => {
                let mut perm: Vec<usize> = (0..self.d).collect();
                perm.shuffle(server);
                for (i, msg) in out.iter_mut().enumerate() {
                    perm_block_into(inputs.get(i), self.n, &perm, i, msg);
                    Self::finish(&self.stages[1..], &mut workers[i], msg);
                }
            }
            CollectionMode::Independent => {
                for (i, msg) in out.iter_mut().enumerate() {
                    Self::chain(&self.stages, inputs.get(i), &mut workers[i], msg);
                }
            }
            CollectionMode::Same => match inputs {
                Inputs::Shared(x) => {
                    let (first, rest) = out.split_first_mut().expect("n >= 1");
                    Self::chain(&self.stages, x, server, first);
                    for msg in rest {
                        msg.clone_from(first);
                    }
                }
                Inputs::PerWorker(_) => {
                    // Same random draws replayed on every worker's input.
                    let snapshot = server.clone();
                    let mut last = snapshot.clone();
                    for (i, msg) in out.iter_mut().enumerate() {
                        last = snapshot.clone();
                        Self::chain(&self.stages, inputs.get(i), &mut last, msg);
                    }
                    *server = last;
                }
            },
        }
        debug_assert!(out.iter().all(|m| m.encoding == self.encoding()));
    }

    /// Allocating variant of [`Collection::compress_into`].
    pub fn compress(&self, inputs: Inputs<'_>, server: &mut Rng, workers: &mut [Rng]) -> Vec<SparseMessage> {
        let mut out = vec![SparseMessage::empty(self.d); self.n];
        self.compress_into(inputs, server, workers, &mut out);
        out
    }
}

fn check_probe(x: &[f64], samples: usize) -> Result<f64> {
    check_finite(x)?;
    if samples < MIN_MC_SAMPLES {
        return Err(param("samples", format!("need at least {MIN_MC_SAMPLES}")));
    }
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::ZeroInput);
    }
    Ok(norm_sq)
}

fn estimator_streams(seed: u64, n: usize) -> (Rng, Vec<Rng>) {
    (
        stream(seed, Role::Server, u64::MAX),
        (0..n as u64).map(|i| stream(seed, Role::Downlink, i)).collect(),
    )
}

/// Monte-Carlo estimate of `E‖C_i(x) − x‖² / ‖x‖²`, averaged over the
/// members of the collection.
pub fn estimate_omega(collection: &Collection, x: &[f64], samples: usize, seed: u64) -> Result<f64> {
    let norm_sq = check_probe(x, samples)?;
    if x.len() != collection.d {
        return Err(Error::DimensionMismatch {
            expected: collection.d,
            actual: x.len(),
        });
    }
    let (mut server, mut workers) = estimator_streams(seed, collection.n);
    let mut out = vec![SparseMessage::empty(collection.d); collection.n];
    let mut total = 0.0;
    for _ in 0..samples {
        collection.compress_into(Inputs::Shared(x), &mut server, &mut workers, &mut out);
        for msg in &out {
            total += deviation_sq(msg, x, 1.0);
        }
    }
    Ok(total / (samples * collection.n) as f64 / norm_sq)
}

/// Monte-Carlo estimate of `E‖(1/n)Σ C_i(x) − x‖² / ‖x‖²`.
///
/// A plain PermK collection is checked structurally on one draw and
/// reports exactly 0.
pub fn estimate_theta(collection: &Collection, x: &[f64], samples: usize, seed: u64) -> Result<f64> {
    let norm_sq = check_probe(x, samples)?;
    if x.len() != collection.d {
        return Err(Error::DimensionMismatch {
            expected: collection.d,
            actual: x.len(),
        });
    }
    let (mut server, mut workers) = estimator_streams(seed, collection.n);
    let mut out = vec![SparseMessage::empty(collection.d); collection.n];
    if collection.mode == CollectionMode::Correlated && collection.stages.len() == 1 {
        // A plain PermK draw is a partition of the coordinates with every
        // value scaled by n, so the average is x up to the rounding of n·x_j.
        collection.compress_into(Inputs::Shared(x), &mut server, &mut workers, &mut out);
        let scale = collection.n as f64;
        let mut seen = vec![false; collection.d];
        for msg in &out {
            for (&i, &v) in msg.indices.iter().zip(&msg.values) {
                if seen[i] || v != scale * x[i] {
                    return Err(param("collection", "PermK draw is not a scaled partition"));
                }
                seen[i] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            return Ok(0.0);
        }
        return Err(param("collection", "PermK draw does not cover every coordinate"));
    }
    let draws = samples;
    let inv_n = 1.0 / collection.n as f64;
    let mut avg = vec![0.0; collection.d];
    let mut total = 0.0;
    for _ in 0..draws {
        collection.compress_into(Inputs::Shared(x), &mut server, &mut workers, &mut out);
        avg.iter_mut().for_each(|v| *v = 0.0);
        for msg in &out {
            msg.add_scaled_to(inv_n, &mut avg);
        }
        total += avg.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / draws as f64 / norm_sq)
}

/// `‖scale·msg − x‖²` without densifying.
fn deviation_sq(msg: &SparseMessage, x: &[f64], scale: f64) -> f64 {
    let x_sq: f64 = x.iter().map(|v| v * v).sum();
    let mut acc = x_sq;
    for (&i, &v) in msg.indices.iter().zip(&msg.values) {
        let c = scale * v;
        acc += (c - x[i]) * (c - x[i]) - x[i] * x[i];
    }
    acc.max(0.0)
}

impl SparseMessage {
    /// Value at coordinate `i` (zero when absent).
    pub fn get(&self, i: usize) -> f64 {
        self.value_at(i)
    }
}
