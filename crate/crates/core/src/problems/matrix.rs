//! Symmetric matrices with structure-aware products and spectral norms.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{stream, Role};

/// Default relative tolerance of [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Iteration budget of [`spectral_norm`].
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

/// Symmetric `dim × dim` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymMatrix {
    Identity { dim: usize },
    /// Constant `diag` on the main diagonal and `off` on both first
    /// off-diagonals.
    Tridiagonal { dim: usize, diag: f64, off: f64 },
    /// Row-major dense storage.
    Dense { dim: usize, data: Vec<f64> },
}

impl SymMatrix {
    /// `(1/4)·tridiag(−1, 2, −1)`.
    pub fn second_difference(dim: usize) -> Self {
        SymMatrix::Tridiagonal {
            dim,
            diag: 0.5,
            off: -0.25,
        }
    }

    pub fn dense(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: data.len(),
            });
        }
        let m = SymMatrix::Dense { dim, data };
        if m.asymmetry() > 1e-12 {
            return Err(param("matrix", "not symmetric within 1e-12"));
        }
        Ok(m)
    }

    /// Dense copy of `scale · M`.
    pub fn scaled_dense(&self, scale: f64) -> Self {
        SymMatrix::Dense {
            dim: self.dim(),
            data: self.to_dense().into_iter().map(|v| scale * v).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Identity { dim } | SymMatrix::Tridiagonal { dim, .. } | SymMatrix::Dense { dim, .. } => *dim,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            SymMatrix::Identity { .. } => f64::from(u8::from(i == j)),
            SymMatrix::Tridiagonal { diag, off, .. } => {
                if i == j {
                    *diag
                } else if i.abs_diff(j) == 1 {
                    *off
                } else {
                    0.0
                }
            }
            SymMatrix::Dense { dim, data } => data[i * dim + j],
        }
    }

    pub fn asymmetry(&self) -> f64 {
        match self {
            SymMatrix::Dense { dim, data } => {
                let mut worst: f64 = 0.0;
                for i in 0..*dim {
                    for j in 0..i {
                        worst = worst.max((data[i * dim + j] - data[j * dim + i]).abs());
                    }
                }
                worst
            }
            _ => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.get(i, j);
            }
        }
        out
    }

    /// `out = scale · M x`.
    pub fn matvec_scaled(&self, scale: f64, x: &[f64], out: &mut [f64]) {
        match self {
            SymMatrix::Identity { .. } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = scale * v;
                }
            }
            SymMatrix::Tridiagonal { dim, diag, off } => {
                let (a, b) = (scale * diag, scale * off);
                let d = *dim;
                if d == 1 {
                    out[0] = a * x[0];
                    return;
                }
                out[0] = a * x[0] + b * x[1];
                for i in 1..d - 1 {
                    out[i] = b * (x[i - 1] + x[i + 1]) + a * x[i];
                }
                out[d - 1] = b * x[d - 2] + a * x[d - 1];
            }
            SymMatrix::Dense { dim, data } => {
                for (row, o) in data.chunks_exact(*dim).zip(out.iter_mut()) {
                    *o = scale * row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>();
                }
            }
        }
    }

    /// `out += scale · M x`.
    pub fn matvec_add(&self, scale: f64, x: &[f64], out: &mut [f64]) {
        match self {
            SymMatrix::Identity { .. } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o += scale * v;
                }
            }
            SymMatrix::Tridiagonal { dim, diag, off } => {
                let (a, b) = (scale * diag, scale * off);
                let d = *dim;
                for i in 0..d {
                    let mut acc = a * x[i];
                    if i > 0 {
                        acc += b * x[i - 1];
                    }
                    if i + 1 < d {
                        acc += b * x[i + 1];
                    }
                    out[i] += acc;
                }
            }
            SymMatrix::Dense { dim, data } => {
                for (row, o) in data.chunks_exact(*dim).zip(out.iter_mut()) {
                    *o += scale * row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>();
                }
            }
        }
    }

    /// `out += scale · value · M e_j` (one column).
    pub fn add_column(&self, j: usize, scale: f64, out: &mut [f64]) {
        match self {
            SymMatrix::Identity { .. } => out[j] += scale,
            SymMatrix::Tridiagonal { dim, diag, off } => {
                out[j] += scale * diag;
                if j > 0 {
                    out[j - 1] += scale * off;
                }
                if j + 1 < *dim {
                    out[j + 1] += scale * off;
                }
            }
            SymMatrix::Dense { dim, data } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += scale * data[i * dim + j];
                }
            }
        }
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        match self {
            SymMatrix::Identity { .. } => x.iter().map(|v| v * v).sum(),
            SymMatrix::Tridiagonal { diag, off, .. } => {
                let d: f64 = x.iter().map(|v| v * v).sum();
                let o: f64 = x.windows(2).map(|w| w[0] * w[1]).sum();
                diag * d + 2.0 * off * o
            }
            SymMatrix::Dense { .. } => {
                let mut tmp = vec![0.0; x.len()];
                self.matvec_scaled(1.0, x, &mut tmp);
                tmp.iter().zip(x).map(|(a, b)| a * b).sum()
            }
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        match self {
            SymMatrix::Identity { .. } => 1.0,
            SymMatrix::Tridiagonal { dim, diag, off } => {
                if *dim > 1 {
                    diag.abs().max(off.abs())
                } else {
                    diag.abs()
                }
            }
            SymMatrix::Dense { data, .. } => data.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn frobenius(&self) -> f64 {
        match self {
            SymMatrix::Identity { dim } => (*dim as f64).sqrt(),
            SymMatrix::Tridiagonal { dim, diag, off } => {
                let d = *dim as f64;
                (d * diag * diag + 2.0 * (d - 1.0) * off * off).sqrt()
            }
            SymMatrix::Dense { data, .. } => data.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Spectral norm, in closed form where the structure allows it.
    ///
    /// A symmetric Toeplitz tridiagonal matrix has eigenvalues
    /// `diag + 2·off·cos(kπ/(d+1))`, `k = 1..d`.
    pub fn norm(&self) -> Result<f64> {
        match self {
            SymMatrix::Identity { .. } => Ok(1.0),
            SymMatrix::Tridiagonal { dim, diag, off } => {
                let c = (std::f64::consts::PI / (*dim as f64 + 1.0)).cos();
                let spread = if *dim == 1 { 0.0 } else { 2.0 * off.abs() * c };
                Ok((diag + spread).abs().max((diag - spread).abs()))
            }
            SymMatrix::Dense { .. } => spectral_norm(self, SPECTRAL_TOL),
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Outcome of one power-iteration phase.
enum Phase {
    Converged(f64),
    Stalled { gap: f64 },
}

/// Power iteration for the dominant eigenvalue of `shift·I + sign·M`.
/// Convergence is declared once the eigen-residual `‖Bv − ρv‖` drops below
/// `tol·|ρ|`.
fn power_phase(m: &SymMatrix, sign: f64, shift: f64, tol: f64, budget: usize) -> (Phase, usize) {
    let d = m.dim();
    let mut start = stream(0x5eed, Role::Init, d as u64);
    let mut v: Vec<f64> = (0..d).map(|_| start.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut w = vec![0.0; d];
    let mut last_gap = f64::INFINITY;
    for it in 1..=budget {
        m.matvec_scaled(sign, &v, &mut w);
        if shift != 0.0 {
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi += shift * vi;
            }
        }
        let rho = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - rho * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        let nrm = normalize(&mut w);
        if nrm == 0.0 {
            return (Phase::Converged(0.0), it);
        }
        last_gap = residual / rho.abs().max(f64::MIN_POSITIVE);
        if residual <= tol * rho.abs() {
            return (Phase::Converged(rho), it);
        }
        std::mem::swap(&mut v, &mut w);
    }
    (
        Phase::Stalled { gap: last_gap },
        budget,
    )
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
///
/// When the plain iteration stalls, which happens when `λ` and `−λ` are both
/// dominant, the extremes are recovered separately from the shifted
/// operators `sI + M` and `sI − M` with `s = ‖M‖_F`, both positive
/// semidefinite.
pub fn spectral_norm(m: &SymMatrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(param("tol", "must be positive"));
    }
    if m.dim() == 0 {
        return Err(param("dim", "must be positive"));
    }
    let half = SPECTRAL_MAX_ITERS / 2;
    let (phase, used) = power_phase(m, 1.0, 0.0, tol, half);
    if let Phase::Converged(rho) = phase {
        return Ok(rho.abs());
    }
    let shift = m.frobenius();
    let budget = (SPECTRAL_MAX_ITERS - used) / 2;
    let (top, _) = power_phase(m, 1.0, shift, tol * 0.5, budget);
    let (bottom, _) = power_phase(m, -1.0, shift, tol * 0.5, budget);
    match (top, bottom) {
        (Phase::Converged(a), Phase::Converged(b)) => Ok((a - shift).abs().max((b - shift).abs())),
        (Phase::Stalled { gap, .. }, _) | (_, Phase::Stalled { gap, .. }) => Err(Error::NoConvergence {
            iterations: SPECTRAL_MAX_ITERS,
            gap,
        }),
    }
}
