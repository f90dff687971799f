//! Zero-chain hard instance
//! `F_T(x) = −Ψ(1)Φ(x_1) + Σ_{i=2..T} [Ψ(−x_{i−1})Φ(−x_i) − Ψ(x_{i−1})Φ(x_i)]`
//! and its rescaling `f(x) = (L λ² / l1) F_T(x/λ)`.

use statrs::function::erf::erfc;

use super::Problem;
use crate::error::{param, Result};

/// Bound on `F_T(0) − inf F_T` per coordinate.
pub const DELTA0: f64 = 12.0;
/// Smoothness constant of `F_T`.
pub const L1: f64 = 152.0;
/// Bound on `‖∇F_T‖_∞`.
pub const GAMMA_INF: f64 = 23.0;

pub fn psi(x: f64) -> f64 {
    if x <= 0.5 {
        0.0
    } else {
        (1.0 - 1.0 / (2.0 * x - 1.0).powi(2)).exp()
    }
}

pub fn psi_prime(x: f64) -> f64 {
    if x <= 0.5 {
        0.0
    } else {
        psi(x) * 4.0 / (2.0 * x - 1.0).powi(3)
    }
}

/// `Φ(x) = √e ∫_{−∞}^x e^{−t²/2} dt = √(2πe) · NormalCDF(x)`.
pub fn phi(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt() * 0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_prime(x: f64) -> f64 {
    (0.5 - 0.5 * x * x).exp()
}

/// `F_T(x)` with `T = x.len()`.
pub fn chain_value(x: &[f64]) -> f64 {
    let mut v = -psi(1.0) * phi(x[0]);
    for i in 1..x.len() {
        v += psi(-x[i - 1]) * phi(-x[i]) - psi(x[i - 1]) * phi(x[i]);
    }
    v
}

pub fn chain_grad_into(x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    out[0] = -psi(1.0) * phi_prime(x[0]);
    for i in 1..x.len() {
        let (a, b) = (x[i - 1], x[i]);
        out[i - 1] += -psi_prime(-a) * phi(-b) - psi_prime(a) * phi(b);
        out[i] += -psi(-a) * phi_prime(-b) - psi(a) * phi_prime(b);
    }
}

/// Largest 1-based index of a nonzero entry, 0 for the zero vector.
pub fn prog(x: &[f64]) -> usize {
    x.iter().rposition(|v| *v != 0.0).map_or(0, |i| i + 1)
}

/// `f(x) = (L λ² / l1) F_T(x/λ)` replicated on every worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainProblem {
    t: usize,
    lambda: f64,
    l_target: f64,
    workers: usize,
}

impl ChainProblem {
    pub fn new(t: usize, lambda: f64, l_target: f64, workers: usize) -> Result<Self> {
        if t == 0 {
            return Err(param("T", "must be positive"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(param("lambda", "must be positive"));
        }
        if !(l_target > 0.0 && l_target.is_finite()) {
            return Err(param("L", "must be positive"));
        }
        if workers == 0 {
            return Err(param("workers", "must be positive"));
        }
        Ok(Self {
            t,
            lambda,
            l_target,
            workers,
        })
    }

    /// Smoothness of the scaled function.
    pub fn smoothness(&self) -> f64 {
        self.l_target
    }

    fn scale(&self) -> f64 {
        self.l_target * self.lambda * self.lambda / L1
    }
}

impl Problem for ChainProblem {
    fn dim(&self) -> usize {
        self.t
    }

    fn workers(&self) -> usize {
        self.workers
    }

    fn local_value(&self, _i: usize, x: &[f64]) -> f64 {
        self.value(x)
    }

    fn local_grad_into(&self, _i: usize, x: &[f64], out: &mut [f64]) {
        self.grad_into(x, out)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().map(|v| v / self.lambda).collect();
        self.scale() * chain_value(&y)
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let y: Vec<f64> = x.iter().map(|v| v / self.lambda).collect();
        chain_grad_into(&y, out);
        let s = self.scale() / self.lambda;
        out.iter_mut().for_each(|v| *v *= s);
    }
}
