//! Quadratic ensembles `f_i(x) = ½ xᵀA_i x + b_iᵀx + c_i`.
//!
//! Each `A_i` is stored as `scale_i · base_i`. Generated ensembles share one
//! base matrix, which keeps products `O(d)` for structured bases and gives the
//! differences `A_i − A` in closed form.

use std::sync::Arc;

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::{spectral_norm, SymMatrix, SPECTRAL_TOL};
use super::{ConstantsSource, Problem, ProblemConstants};
use crate::compressors::SparseMessage;
use crate::error::{param, Error, Result};
use crate::rng::Rng;

/// Entrywise tolerance for treating two matrices as equal.
pub const EQUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadBlock {
    pub scale: f64,
    pub base: Arc<SymMatrix>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadBlock {
    pub fn new(a: SymMatrix, b: Vec<f64>, c: f64) -> Self {
        Self {
            scale: 1.0,
            base: Arc::new(a),
            b,
            c,
        }
    }
}

#[derive(Debug, Clone)]
enum MeanMatrix {
    Scaled(f64, Arc<SymMatrix>),
    Dense(SymMatrix),
}

#[derive(Debug, Clone)]
pub struct QuadraticEnsemble {
    d: usize,
    blocks: Vec<QuadBlock>,
    /// All blocks use the same base (by pointer or by value).
    shared: bool,
    mean: MeanMatrix,
    mean_b: Vec<f64>,
    mean_c: f64,
}

fn max_abs_diff(a: &SymMatrix, sa: f64, b: &SymMatrix, sb: f64) -> f64 {
    let d = a.dim();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            worst = worst.max((sa * a.get(i, j) - sb * b.get(i, j)).abs());
        }
    }
    worst
}

impl QuadraticEnsemble {
    pub fn new(blocks: Vec<QuadBlock>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| param("blocks", "need at least one worker"))?;
        let d = first.base.dim();
        if d == 0 {
            return Err(param("dim", "must be positive"));
        }
        for blk in &blocks {
            if blk.base.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: blk.base.dim(),
                });
            }
            if blk.b.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: blk.b.len(),
                });
            }
            if blk.base.asymmetry() > EQUAL_TOL {
                return Err(param("A_i", "not symmetric within 1e-12"));
            }
            if !blk.scale.is_finite() || !blk.c.is_finite() || blk.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        let n = blocks.len() as f64;
        let shared = blocks
            .iter()
            .all(|b| Arc::ptr_eq(&b.base, &first.base) || *b.base == *first.base);
        let mean = if shared {
            MeanMatrix::Scaled(blocks.iter().map(|b| b.scale).sum::<f64>() / n, first.base.clone())
        } else {
            let mut acc = vec![0.0; d * d];
            for blk in &blocks {
                for (a, v) in acc.iter_mut().zip(blk.base.to_dense()) {
                    *a += blk.scale * v / n;
                }
            }
            // Averaging symmetric matrices in floating point stays symmetric.
            MeanMatrix::Dense(SymMatrix::Dense { dim: d, data: acc })
        };
        let mut mean_b = vec![0.0; d];
        for blk in &blocks {
            for (m, v) in mean_b.iter_mut().zip(&blk.b) {
                *m += v / n;
            }
        }
        let mean_c = blocks.iter().map(|b| b.c).sum::<f64>() / n;
        Ok(Self {
            d,
            blocks,
            shared,
            mean,
            mean_b,
            mean_c,
        })
    }

    pub fn blocks(&self) -> &[QuadBlock] {
        &self.blocks
    }

    pub fn mean_b(&self) -> &[f64] {
        &self.mean_b
    }

    /// The averaged matrix `A` as a dense row-major array.
    pub fn mean_matrix_dense(&self) -> Vec<f64> {
        match &self.mean {
            MeanMatrix::Scaled(s, base) => base.to_dense().into_iter().map(|v| s * v).collect(),
            MeanMatrix::Dense(m) => m.to_dense(),
        }
    }

    /// `out = A x`.
    pub fn mean_matvec(&self, x: &[f64], out: &mut [f64]) {
        match &self.mean {
            MeanMatrix::Scaled(s, base) => base.matvec_scaled(*s, x, out),
            MeanMatrix::Dense(m) => m.matvec_scaled(1.0, x, out),
        }
    }

    /// All `A_i` equal within [`EQUAL_TOL`] entrywise.
    pub fn is_homogeneous(&self) -> bool {
        let first = &self.blocks[0];
        if self.shared {
            let mag = first.base.max_abs();
            self.blocks.iter().all(|b| (b.scale - first.scale).abs() * mag <= EQUAL_TOL)
        } else {
            self.blocks
                .iter()
                .all(|b| max_abs_diff(&b.base, b.scale, &first.base, first.scale) <= EQUAL_TOL)
        }
    }

    /// Plain-data form for serialization.
    pub fn to_data(&self) -> EnsembleData {
        let mut bases: Vec<SymMatrix> = Vec::new();
        let mut ptrs: Vec<Arc<SymMatrix>> = Vec::new();
        let blocks = self
            .blocks
            .iter()
            .map(|blk| {
                let base = match ptrs.iter().position(|p| Arc::ptr_eq(p, &blk.base) || **p == *blk.base) {
                    Some(k) => k,
                    None => {
                        ptrs.push(blk.base.clone());
                        bases.push((*blk.base).clone());
                        bases.len() - 1
                    }
                };
                BlockData {
                    scale: blk.scale,
                    base,
                    b: blk.b.clone(),
                    c: blk.c,
                }
            })
            .collect();
        EnsembleData { bases, blocks }
    }

    pub fn from_data(data: EnsembleData) -> Result<Self> {
        let bases: Vec<Arc<SymMatrix>> = data.bases.into_iter().map(Arc::new).collect();
        let blocks = data
            .blocks
            .into_iter()
            .map(|b| {
                let base = bases
                    .get(b.base)
                    .ok_or_else(|| param("base", format!("index {} out of range", b.base)))?
                    .clone();
                Ok(QuadBlock {
                    scale: b.scale,
                    base,
                    b: b.b,
                    c: b.c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }
}

/// Serializable ensemble: a list of distinct base matrices plus per-worker
/// `(scale, base index, b, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleData {
    pub bases: Vec<SymMatrix>,
    pub blocks: Vec<BlockData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockData {
    pub scale: f64,
    pub base: usize,
    pub b: Vec<f64>,
    pub c: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Problem for QuadraticEnsemble {
    fn dim(&self) -> usize {
        self.d
    }

    fn workers(&self) -> usize {
        self.blocks.len()
    }

    fn local_value(&self, i: usize, x: &[f64]) -> f64 {
        let blk = &self.blocks[i];
        0.5 * blk.scale * blk.base.quad_form(x) + dot(&blk.b, x) + blk.c
    }

    fn local_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let blk = &self.blocks[i];
        blk.base.matvec_scaled(blk.scale, x, out);
        for (o, b) in out.iter_mut().zip(&blk.b) {
            *o += b;
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let q = match &self.mean {
            MeanMatrix::Scaled(s, base) => s * base.quad_form(x),
            MeanMatrix::Dense(m) => m.quad_form(x),
        };
        0.5 * q + dot(&self.mean_b, x) + self.mean_c
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        self.mean_matvec(x, out);
        for (o, b) in out.iter_mut().zip(&self.mean_b) {
            *o += b;
        }
    }

    fn add_local_grad_change(&self, i: usize, delta: &SparseMessage, scale: f64, out: &mut [f64]) -> bool {
        let blk = &self.blocks[i];
        if delta.nnz() * 4 > self.d {
            let dense = delta.densify();
            blk.base.matvec_add(scale * blk.scale, &dense, out);
        } else {
            for (&j, &v) in delta.indices.iter().zip(&delta.values) {
                blk.base.add_column(j, scale * blk.scale * v, out);
            }
        }
        true
    }
}

/// Which base matrix the generator scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaseMatrix {
    /// `(1/4)·tridiag(−1, 2, −1)`.
    #[default]
    SecondDifference,
    Identity,
}

/// Parameters of the heterogeneous quadratic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HetQuadraticParams {
    pub n: usize,
    pub d: usize,
    /// Base scale `v`.
    pub v: f64,
    /// Standard deviation of the per-worker perturbation `ξ_i`.
    pub sigma: f64,
    /// `ξ_i` is truncated to `[−v0, v0]`; no truncation when absent.
    #[serde(default)]
    pub v0: Option<f64>,
    #[serde(default)]
    pub base: BaseMatrix,
}

/// `A_i = (v + ξ_i)·X` with `ξ_i ~ N(0, σ²)` truncated to `[−v0, v0]` by
/// rejection, `b_i ~ N(0, I)`, `c_i = 0`.
pub fn generate_het_quadratic(p: &HetQuadraticParams, rng: &mut Rng) -> Result<QuadraticEnsemble> {
    if p.n == 0 {
        return Err(param("n", "must be positive"));
    }
    if p.d < 2 {
        return Err(param("d", "must be at least 2"));
    }
    if !(p.sigma >= 0.0) || !p.sigma.is_finite() {
        return Err(param("sigma", "must be finite and nonnegative"));
    }
    if !p.v.is_finite() {
        return Err(param("v", "must be finite"));
    }
    let v0 = p.v0.unwrap_or(f64::INFINITY);
    if p.sigma > 0.0 && !(v0 > 0.0) {
        return Err(param("v0", "must be positive when sigma > 0"));
    }
    let base = Arc::new(match p.base {
        BaseMatrix::SecondDifference => SymMatrix::second_difference(p.d),
        BaseMatrix::Identity => SymMatrix::Identity { dim: p.d },
    });
    let noise = Normal::new(0.0, p.sigma).map_err(|e| param("sigma", e.to_string()))?;
    let xi: Vec<f64> = (0..p.n)
        .map(|_| {
            if p.sigma == 0.0 {
                return 0.0;
            }
            loop {
                let s: f64 = noise.sample(rng);
                if s.abs() <= v0 {
                    break s;
                }
            }
        })
        .collect();
    let blocks = xi
        .into_iter()
        .map(|xi| QuadBlock {
            scale: p.v + xi,
            base: base.clone(),
            b: (0..p.d).map(|_| StandardNormal.sample(rng)).collect(),
            c: 0.0,
        })
        .collect();
    QuadraticEnsemble::new(blocks)
}

/// Exact constants of a quadratic ensemble. Homogeneous ensembles get the
/// tighter pair `L_A = 0`, `L_B = ‖A‖`.
pub fn quad_constants(ens: &QuadraticEnsemble) -> Result<ProblemConstants> {
    let (l, l_i, d_i) = match &ens.mean {
        MeanMatrix::Scaled(s, base) => {
            let nb = base.norm()?;
            let l_i = ens.blocks.iter().map(|b| b.scale.abs() * nb).collect();
            let d_i = ens.blocks.iter().map(|b| (b.scale - s).abs() * nb).collect();
            (s.abs() * nb, l_i, d_i)
        }
        MeanMatrix::Dense(mean) => {
            let mean_dense = mean.to_dense();
            let mut l_i = Vec::with_capacity(ens.blocks.len());
            let mut d_i = Vec::with_capacity(ens.blocks.len());
            for blk in &ens.blocks {
                l_i.push(blk.scale.abs() * blk.base.norm()?);
                let diff: Vec<f64> = blk
                    .base
                    .to_dense()
                    .iter()
                    .zip(&mean_dense)
                    .map(|(a, m)| blk.scale * a - m)
                    .collect();
                d_i.push(spectral_norm(&SymMatrix::Dense { dim: ens.d, data: diff }, SPECTRAL_TOL)?);
            }
            (spectral_norm(mean, SPECTRAL_TOL)?, l_i, d_i)
        }
    };
    let mut c = ProblemConstants::from_parts(l, l_i, d_i, ConstantsSource::Exact);
    if ens.is_homogeneous() {
        c.l_a = 0.0;
        c.l_b = c.l;
    }
    Ok(c)
}
