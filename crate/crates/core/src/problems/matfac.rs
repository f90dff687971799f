//! Linear autoencoder objective
//! `f(D, E) = (1/m) Σ_j ‖D E b_j − b_j‖² + (λ/2)‖D E − I‖_F²`.

use rand_distr::{Distribution, StandardNormal};

use super::Problem;
use crate::error::{param, Error, Result};
use crate::rng::Rng;

/// Parameters are laid out as `vec(D) ⧺ vec(E)`, both row-major, with
/// `D: d1×d2` and `E: d2×d1`.
///
/// Samples are dealt round-robin to workers. Worker `i` holding the index set
/// `S_i` owns `f_i = (n/m) Σ_{j∈S_i} ‖D E b_j − b_j‖² + (λ/2)‖D E − I‖_F²`,
/// so that `(1/n) Σ f_i` is the full objective for any shard sizes.
#[derive(Debug, Clone)]
pub struct MatrixFactorizationProblem {
    d1: usize,
    d2: usize,
    m: usize,
    samples: Vec<f64>,
    lambda: f64,
    shards: Vec<Vec<usize>>,
}

impl MatrixFactorizationProblem {
    pub fn new(d1: usize, d2: usize, samples: Vec<f64>, lambda: f64, workers: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(param("d1", "layer dimensions must be positive"));
        }
        if samples.is_empty() || samples.len() % d1 != 0 {
            return Err(param("samples", "need at least one row of length d1"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(param("lambda", "must be finite and nonnegative"));
        }
        let m = samples.len() / d1;
        if workers == 0 || workers > m {
            return Err(param("workers", "need 1 ≤ n ≤ m"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut shards = vec![Vec::new(); workers];
        for j in 0..m {
            shards[j % workers].push(j);
        }
        Ok(Self {
            d1,
            d2,
            m,
            samples,
            lambda,
            shards,
        })
    }

    /// Standard normal sample rows.
    pub fn synthetic(d1: usize, d2: usize, m: usize, lambda: f64, workers: usize, rng: &mut Rng) -> Result<Self> {
        let samples = (0..m * d1).map(|_| StandardNormal.sample(rng)).collect();
        Self::new(d1, d2, samples, lambda, workers)
    }

    pub fn layer_dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn samples(&self) -> usize {
        self.m
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        x.split_at(self.d1 * self.d2)
    }

    /// `M = D E − I`.
    fn reg_residual(&self, d: &[f64], e: &[f64]) -> Vec<f64> {
        let (d1, d2) = (self.d1, self.d2);
        let mut out = vec![0.0; d1 * d1];
        for r in 0..d1 {
            for k in 0..d2 {
                let dv = d[r * d2 + k];
                for c in 0..d1 {
                    out[r * d1 + c] += dv * e[k * d1 + c];
                }
            }
            out[r * d1 + r] -= 1.0;
        }
        out
    }

    /// Data term over `rows`, weighted by `weight`, plus the regularizer;
    /// gradient written to `grad` when given.
    fn eval_rows(&self, rows: &[usize], weight: f64, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (d1, d2) = (self.d1, self.d2);
        let (d, e) = self.split(x);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut value = 0.0;
        let mut h = vec![0.0; d2];
        let mut r = vec![0.0; d1];
        let mut dtr = vec![0.0; d2];
        for &j in rows {
            let b = &self.samples[j * d1..(j + 1) * d1];
            for k in 0..d2 {
                h[k] = e[k * d1..(k + 1) * d1].iter().zip(b).map(|(a, c)| a * c).sum();
            }
            for row in 0..d1 {
                r[row] = d[row * d2..(row + 1) * d2].iter().zip(&h).map(|(a, c)| a * c).sum::<f64>() - b[row];
            }
            value += weight * r.iter().map(|v| v * v).sum::<f64>();
            if let Some(g) = grad.as_deref_mut() {
                let (gd, ge) = g.split_at_mut(d1 * d2);
                let s = 2.0 * weight;
                for row in 0..d1 {
                    for k in 0..d2 {
                        gd[row * d2 + k] += s * r[row] * h[k];
                    }
                }
                dtr.iter_mut().for_each(|v| *v = 0.0);
                for row in 0..d1 {
                    for k in 0..d2 {
                        dtr[k] += d[row * d2 + k] * r[row];
                    }
                }
                for k in 0..d2 {
                    for c in 0..d1 {
                        ge[k * d1 + c] += s * dtr[k] * b[c];
                    }
                }
            }
        }
        if self.lambda > 0.0 {
            let mm = self.reg_residual(d, e);
            value += 0.5 * self.lambda * mm.iter().map(|v| v * v).sum::<f64>();
            if let Some(g) = grad {
                let (gd, ge) = g.split_at_mut(d1 * d2);
                let l = self.lambda;
                // λ M Eᵀ
                for row in 0..d1 {
                    for k in 0..d2 {
                        gd[row * d2 + k] += l * (0..d1).map(|c| mm[row * d1 + c] * e[k * d1 + c]).sum::<f64>();
                    }
                }
                // λ Dᵀ M
                for k in 0..d2 {
                    for c in 0..d1 {
                        ge[k * d1 + c] += l * (0..d1).map(|row| d[row * d2 + k] * mm[row * d1 + c]).sum::<f64>();
                    }
                }
            }
        }
        value
    }

    /// Full objective and gradient.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let rows: Vec<usize> = (0..self.m).collect();
        let mut g = vec![0.0; self.dim()];
        let v = self.eval_rows(&rows, 1.0 / self.m as f64, x, Some(&mut g));
        Ok((v, g))
    }
}

impl Problem for MatrixFactorizationProblem {
    fn dim(&self) -> usize {
        2 * self.d1 * self.d2
    }

    fn workers(&self) -> usize {
        self.shards.len()
    }

    fn local_value(&self, i: usize, x: &[f64]) -> f64 {
        let w = self.shards.len() as f64 / self.m as f64;
        self.eval_rows(&self.shards[i], w, x, None)
    }

    fn local_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let w = self.shards.len() as f64 / self.m as f64;
        self.eval_rows(&self.shards[i], w, x, Some(out));
    }

    fn value(&self, x: &[f64]) -> f64 {
        let rows: Vec<usize> = (0..self.m).collect();
        self.eval_rows(&rows, 1.0 / self.m as f64, x, None)
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let rows: Vec<usize> = (0..self.m).collect();
        self.eval_rows(&rows, 1.0 / self.m as f64, x, Some(out));
    }
}
