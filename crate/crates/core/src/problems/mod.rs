//! Objective families split across `n` workers: `f = (1/n) Σ f_i`.

pub mod chain;
pub mod matfac;
pub mod matrix;
pub mod quadratic;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compressors::SparseMessage;
use crate::error::{param, Result};
use crate::rng::Rng;

pub use chain::{prog, ChainProblem};
pub use matfac::MatrixFactorizationProblem;
pub use matrix::{spectral_norm, SymMatrix};
pub use quadratic::{generate_het_quadratic, quad_constants, HetQuadraticParams, QuadBlock, QuadraticEnsemble};

/// A finite-sum objective whose terms live on separate workers.
pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;
    fn workers(&self) -> usize;
    fn local_value(&self, i: usize, x: &[f64]) -> f64;
    fn local_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]);

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.workers();
        (0..n).map(|i| self.local_value(i, x)).sum::<f64>() / n as f64
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.workers();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut tmp = vec![0.0; self.dim()];
        for i in 0..n {
            self.local_grad_into(i, x, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
    }

    /// For affine local gradients: `out += scale · ∇²f_i · δ` and return
    /// `true`. Other problems leave `out` alone and return `false`.
    fn add_local_grad_change(&self, _i: usize, _delta: &SparseMessage, _scale: f64, _out: &mut [f64]) -> bool {
        false
    }

    fn local_grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.local_grad_into(i, x, &mut out);
        out
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(x, &mut out);
        out
    }
}

/// How a set of constants was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSource {
    Exact,
    /// Lower estimates from sampled curvature; not certified upper bounds.
    Sampled,
}

/// Smoothness and similarity constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l: f64,
    pub l_i: Vec<f64>,
    pub l_max: f64,
    pub l_hat: f64,
    pub l_a: f64,
    pub l_b: f64,
    pub d_i: Vec<f64>,
    pub source: ConstantsSource,
}

impl ProblemConstants {
    /// Fill in `L_max`, `L̂`, and the generic `L_A`, `L_B` from `L`, `L_i`, `D_i`.
    pub fn from_parts(l: f64, l_i: Vec<f64>, d_i: Vec<f64>, source: ConstantsSource) -> Self {
        let n = l_i.len() as f64;
        let l_max = l_i.iter().copied().fold(0.0, f64::max);
        let l_hat = (l_i.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let l_a = std::f64::consts::SQRT_2 * d_i.iter().copied().fold(0.0, f64::max);
        let l_b = std::f64::consts::SQRT_2 * l_i.iter().sum::<f64>() / n;
        Self {
            l,
            l_i,
            l_max,
            l_hat,
            l_a,
            l_b,
            d_i,
            source,
        }
    }
}

fn sample_in_ball(d: usize, radius: f64, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x *= r / norm);
    }
    v
}

/// Largest observed ratio `LHS/RHS` of the functional inequality
/// `‖(1/n)Σ(∇f_i(x+u_i) − ∇f_i(x))‖² ≤ L_A²·(1/n)Σ‖u_i‖² + L_B²·‖(1/n)Σu_i‖²`
/// with `x`, `u_i` drawn uniformly from the ball of the given radius.
/// A value `≤ 1` means no violation was observed.
pub fn verify_functional_inequality(
    problem: &dyn Problem,
    l_a: f64,
    l_b: f64,
    num_draws: usize,
    radius: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if num_draws == 0 {
        return Err(param("num_draws", "must be at least 1"));
    }
    if !(radius > 0.0) {
        return Err(param("radius", "must be positive"));
    }
    let (d, n) = (problem.dim(), problem.workers());
    let mut worst: f64 = 0.0;
    let mut g0 = vec![0.0; d];
    let mut g1 = vec![0.0; d];
    for _ in 0..num_draws {
        let x = sample_in_ball(d, radius, rng);
        let mut diff = vec![0.0; d];
        let mut u_bar = vec![0.0; d];
        let mut mean_sq = 0.0;
        for i in 0..n {
            let u = sample_in_ball(d, radius, rng);
            let shifted: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + b).collect();
            problem.local_grad_into(i, &x, &mut g0);
            problem.local_grad_into(i, &shifted, &mut g1);
            for j in 0..d {
                diff[j] += (g1[j] - g0[j]) / n as f64;
                u_bar[j] += u[j] / n as f64;
            }
            mean_sq += u.iter().map(|v| v * v).sum::<f64>() / n as f64;
        }
        let lhs: f64 = diff.iter().map(|v| v * v).sum();
        let rhs = l_a * l_a * mean_sq + l_b * l_b * u_bar.iter().map(|v| v * v).sum::<f64>();
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        } else if lhs > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Sampled lower estimates of the constants for a non-quadratic problem.
///
/// Local curvature along random directions is probed with gradient
/// differences `‖∇f_i(x+h) − ∇f_i(x)‖/‖h‖` at points in the given ball;
/// `D_i` uses the same probe on `f_i − f`.
pub fn sampled_constants(problem: &dyn Problem, draws: usize, radius: f64, step: f64, rng: &mut Rng) -> Result<ProblemConstants> {
    if draws == 0 {
        return Err(param("draws", "must be at least 1"));
    }
    if !(radius > 0.0 && step > 0.0) {
        return Err(param("radius", "radius and step must be positive"));
    }
    let (d, n) = (problem.dim(), problem.workers());
    let mut l: f64 = 0.0;
    let mut l_i = vec![0.0f64; n];
    let mut d_i = vec![0.0f64; n];
    let mut g0 = vec![0.0; d];
    let mut g1 = vec![0.0; d];
    let mut diffs = vec![vec![0.0; d]; n];
    for _ in 0..draws {
        let x = sample_in_ball(d, radius, rng);
        let mut h: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let hn = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        h.iter_mut().for_each(|v| *v *= step / hn);
        let shifted: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            problem.local_grad_into(i, &x, &mut g0);
            problem.local_grad_into(i, &shifted, &mut g1);
            for j in 0..d {
                diffs[i][j] = g1[j] - g0[j];
                mean[j] += diffs[i][j] / n as f64;
            }
            let r = diffs[i].iter().map(|v| v * v).sum::<f64>().sqrt() / step;
            l_i[i] = l_i[i].max(r);
        }
        l = l.max(mean.iter().map(|v| v * v).sum::<f64>().sqrt() / step);
        for i in 0..n {
            let r = diffs[i]
                .iter()
                .zip(&mean)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                / step;
            d_i[i] = d_i[i].max(r);
        }
    }
    Ok(ProblemConstants::from_parts(l, l_i, d_i, ConstantsSource::Sampled))
}
