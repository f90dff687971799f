//! Step sizes and parameters prescribed by the convergence theory.
//!
//! Every function returns the bound itself; sweeps multiply it by `2^i`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Nonconvex,
    Pl,
}

/// Parameters for one method. Fields a method does not use are 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub gamma: f64,
    /// `p` for MARINA and MARINA-P, `p_P` for M3.
    pub p_primal: f64,
    /// `p_D` for M3.
    pub p_dual: f64,
    pub beta: f64,
    pub regime: Regime,
    /// PL constant, 0 in the nonconvex regime.
    pub mu: f64,
}

fn check_prob(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(param(name, format!("must lie in (0, 1], got {p}")))
    }
}

fn check_nonneg(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(param(name, format!("must be finite and nonnegative, got {v}")))
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && !mu.is_nan() {
        Ok(())
    } else {
        Err(param("mu", "must be positive in the PL regime"))
    }
}

/// Gradient descent: `1/L`.
pub fn step_gd(l: f64) -> Result<f64> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(param("L", "must be positive"));
    }
    Ok(1.0 / l)
}

fn marinap_check(l: f64, l_a: f64, l_b: f64, omega_p: f64, theta: f64, p: f64) -> Result<()> {
    check_nonneg("L", l)?;
    check_nonneg("L_A", l_a)?;
    check_nonneg("L_B", l_b)?;
    check_nonneg("omega_P", omega_p)?;
    check_nonneg("theta", theta)?;
    check_prob("p", p)
}

/// MARINA-P, nonconvex: `1 / (L + √((L_A²ω_P + L_B²θ)(1/p − 1)))`.
pub fn step_marinap_general(l: f64, l_a: f64, l_b: f64, omega_p: f64, theta: f64, p: f64) -> Result<f64> {
    marinap_check(l, l_a, l_b, omega_p, theta, p)?;
    Ok(1.0 / (l + ((l_a * l_a * omega_p + l_b * l_b * theta) * (1.0 / p - 1.0)).sqrt()))
}

/// MARINA-P, PL: `min{1 / (L + √(2(L_A²ω_P + L_B²θ)(1/p − 1))), p/(2μ)}`.
pub fn step_marinap_pl(l: f64, l_a: f64, l_b: f64, omega_p: f64, theta: f64, p: f64, mu: f64) -> Result<f64> {
    marinap_check(l, l_a, l_b, omega_p, theta, p)?;
    check_mu(mu)?;
    let first = 1.0 / (l + (2.0 * (l_a * l_a * omega_p + l_b * l_b * theta) * (1.0 / p - 1.0)).sqrt());
    Ok(first.min(p / (2.0 * mu)))
}

/// M3 with PermK on the server and RandK on the workers, `K = d/n`:
/// `γ = 1/(L + 34(n L_A + n^{2/3} L_B + n^{2/3} L_max))`,
/// `p_P = p_D = 1/n`, `β = n^{−2/3}`.
pub fn step_m3(l: f64, l_a: f64, l_b: f64, l_max: f64, n: usize) -> Result<TheoryParams> {
    check_nonneg("L", l)?;
    check_nonneg("L_A", l_a)?;
    check_nonneg("L_B", l_b)?;
    check_nonneg("L_max", l_max)?;
    if n == 0 {
        return Err(param("n", "must be positive"));
    }
    let nf = n as f64;
    let n23 = nf.powf(2.0 / 3.0);
    Ok(TheoryParams {
        gamma: 1.0 / (l + 34.0 * (nf * l_a + n23 * l_b + n23 * l_max)),
        p_primal: 1.0 / nf,
        p_dual: 1.0 / nf,
        beta: 1.0 / n23,
        regime: Regime::Nonconvex,
        mu: 0.0,
    })
}

/// Inputs of the general M3 step-size bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M3Inputs {
    pub l: f64,
    pub l_a: f64,
    pub l_b: f64,
    pub l_max: f64,
    pub n: usize,
    pub omega_p: f64,
    pub omega_d: f64,
    pub theta: f64,
    pub p_p: f64,
    pub p_d: f64,
    pub beta: f64,
}

impl M3Inputs {
    fn check(&self) -> Result<()> {
        check_nonneg("L", self.l)?;
        check_nonneg("L_A", self.l_a)?;
        check_nonneg("L_B", self.l_b)?;
        check_nonneg("L_max", self.l_max)?;
        check_nonneg("omega_P", self.omega_p)?;
        check_nonneg("omega_D", self.omega_d)?;
        check_nonneg("theta", self.theta)?;
        check_prob("p_P", self.p_p)?;
        check_prob("p_D", self.p_d)?;
        check_prob("beta", self.beta)?;
        if self.n == 0 {
            return Err(param("n", "must be positive"));
        }
        Ok(())
    }

    /// The bracket under the square root, without its numeric prefactor.
    fn bracket(&self) -> f64 {
        let n = self.n as f64;
        let (pp, pd, b) = (self.p_p, self.p_d, self.beta);
        let b2 = b * b;
        (self.theta / pp + (1.0 + self.theta * pp) / b2) * self.l_b * self.l_b
            + (self.omega_p / pp + (1.0 + self.omega_p * pp) / b2) * self.l_a * self.l_a
            + (self.omega_d * self.omega_p * b / (n * pd) + self.omega_d * (1.0 + self.omega_p * pp) / (n * pd))
                * self.l_max
                * self.l_max
    }

    fn params(&self, gamma: f64, regime: Regime, mu: f64) -> TheoryParams {
        TheoryParams {
            gamma,
            p_primal: self.p_p,
            p_dual: self.p_d,
            beta: self.beta,
            regime,
            mu,
        }
    }
}

/// M3 with general compressors, nonconvex: `1 / (L + √(288·[…]))`.
pub fn step_m3_general(inp: &M3Inputs) -> Result<TheoryParams> {
    inp.check()?;
    let gamma = 1.0 / (inp.l + (288.0 * inp.bracket()).sqrt());
    Ok(inp.params(gamma, Regime::Nonconvex, 0.0))
}

/// M3 with general compressors, PL:
/// `min{1 / (L + √(1536·[…])), p_P/(2μ), p_D/(2μ), β/(4μ)}`.
pub fn step_m3_pl(inp: &M3Inputs, mu: f64) -> Result<TheoryParams> {
    inp.check()?;
    check_mu(mu)?;
    let first = 1.0 / (inp.l + (1536.0 * inp.bracket()).sqrt());
    let gamma = first
        .min(inp.p_p / (2.0 * mu))
        .min(inp.p_d / (2.0 * mu))
        .min(inp.beta / (4.0 * mu));
    Ok(inp.params(gamma, Regime::Pl, mu))
}

/// `β = min{(n / (ω_D ω_P (ω_D + 1)))^{1/3}, 1}`; `1` when either `ω` is 0.
pub fn m3_beta_general(n: usize, omega_d: f64, omega_p: f64) -> Result<f64> {
    if n == 0 {
        return Err(param("n", "must be positive"));
    }
    check_nonneg("omega_D", omega_d)?;
    check_nonneg("omega_P", omega_p)?;
    let denom = omega_d * omega_p * (omega_d + 1.0);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((n as f64 / denom).cbrt().min(1.0))
}

/// Parameters for `θ = 0` server compressors:
/// `p_P = 1/(ω_P+1)`, `p_D = 1/(ω_D+1)` and [`m3_beta_general`].
pub fn m3_params_correlated(n: usize, omega_p: f64, omega_d: f64) -> Result<(f64, f64, f64)> {
    let beta = m3_beta_general(n, omega_d, omega_p)?;
    Ok((1.0 / (omega_p + 1.0), 1.0 / (omega_d + 1.0), beta))
}

/// Expected coordinates per worker per iteration when a full vector goes
/// out with probability `p` and `k` coordinates otherwise: `p·d + (1 − p)·k`.
pub fn expected_coords(p: f64, k: usize, d: usize) -> Result<f64> {
    check_prob("p", p)?;
    if k > d {
        return Err(param("k", "must not exceed d"));
    }
    Ok(p * d as f64 + (1.0 - p) * k as f64)
}

/// MARINA with uplink compressors of variance `ω`:
/// `1 / (L + L̂·√(ω(1 − p)/(p n)))`.
pub fn step_marina(l: f64, l_hat: f64, omega: f64, p: f64, n: usize) -> Result<f64> {
    check_nonneg("L", l)?;
    check_nonneg("L_hat", l_hat)?;
    check_nonneg("omega", omega)?;
    check_prob("p", p)?;
    if n == 0 {
        return Err(param("n", "must be positive"));
    }
    Ok(1.0 / (l + l_hat * (omega * (1.0 - p) / (p * n as f64)).sqrt()))
}

/// Error feedback with a contractive compressor of parameter `α`:
/// `1 / (L(1 + √(β/θ)))` with `θ = 1 − √(1 − α)`, `β = (1 − α)/(1 − √(1 − α))`.
pub fn step_ef21p(l: f64, alpha: f64) -> Result<f64> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(param("L", "must be positive"));
    }
    check_prob("alpha", alpha)?;
    let s = (1.0 - alpha).sqrt();
    let theta = 1.0 - s;
    let beta = (1.0 - alpha) / theta;
    Ok(1.0 / (l * (1.0 + (beta / theta).sqrt())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marinap_examples() {
        let g = step_marinap_general(1.0, 1.0, 0.0, 9.0, 0.0, 0.1).unwrap();
        assert!((g - 0.1).abs() < 1e-15);
        assert_eq!(step_marinap_general(2.0, 0.0, 5.0, 3.0, 0.0, 0.2).unwrap(), 0.5);
        assert!(step_marinap_general(1.0, 1.0, 0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn marinap_pl_examples() {
        let g = step_marinap_pl(1.0, 1.0, 0.0, 1.0, 0.0, 0.5, 0.25).unwrap();
        assert!((g - 1.0 / (1.0 + 2f64.sqrt())).abs() < 1e-15);
        let small = step_marinap_pl(1.0, 0.0, 0.0, 1.0, 0.0, 0.5, 1e12).unwrap();
        assert!((small - 0.5 / 2e12).abs() < 1e-25);
        assert!(step_marinap_pl(1.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.0).is_err());
        assert!(step_marinap_pl(1.0, 0.0, 0.0, 1.0, 0.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn m3_examples() {
        let t = step_m3(2.0, 0.0, 0.0, 3.0, 1).unwrap();
        assert!((t.gamma - 1.0 / (2.0 + 34.0 * 3.0)).abs() < 1e-15);
        assert_eq!(t.beta, 1.0);
        let t8 = step_m3(1.0, 0.0, 0.0, 1.0, 8).unwrap();
        assert!((t8.beta - 0.25).abs() < 1e-15);
        assert_eq!(t8.p_primal, 0.125);
    }

    #[test]
    fn m3_general_radical() {
        let inp = M3Inputs {
            l: 1.0,
            l_a: 0.5,
            l_b: 2.0,
            l_max: 3.0,
            n: 4,
            omega_p: 3.0,
            omega_d: 2.0,
            theta: 0.1,
            p_p: 0.25,
            p_d: 0.5,
            beta: 0.4,
        };
        let b2: f64 = 0.16;
        let bracket: f64 = (0.1 / 0.25 + (1.0 + 0.025) / b2) * 4.0
            + (3.0 / 0.25 + (1.0 + 0.75) / b2) * 0.25
            + (2.0 * 3.0 * 0.4 / 2.0 + 2.0 * 1.75 / 2.0) * 9.0;
        let g = step_m3_general(&inp).unwrap().gamma;
        assert!((g - 1.0 / (1.0 + (288.0 * bracket).sqrt())).abs() < 1e-15);
        let pl = step_m3_pl(&inp, 1e-3).unwrap();
        assert!((pl.gamma - 1.0 / (1.0 + (1536.0 * bracket).sqrt())).abs() < 1e-15);
        let pl_big = step_m3_pl(&inp, 100.0).unwrap();
        assert_eq!(pl_big.gamma, 0.4 / 400.0);
    }

    #[test]
    fn beta_general() {
        let b = m3_beta_general(27, 26.0, 26.0).unwrap();
        assert!((b - (27.0f64 / (26.0 * 26.0 * 27.0)).cbrt()).abs() < 1e-15);
        assert_eq!(m3_beta_general(5, 0.0, 3.0).unwrap(), 1.0);
        assert_eq!(m3_beta_general(1000, 1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn expected_coords_examples() {
        assert_eq!(expected_coords(1.0, 3, 300).unwrap(), 300.0);
        let k = 30;
        let c = expected_coords(k as f64 / 300.0, k, 300).unwrap();
        assert!(c <= 2.0 * k as f64);
    }

    #[test]
    fn ef21p_full_vector_is_gd() {
        assert_eq!(step_ef21p(4.0, 1.0).unwrap(), 0.25);
        assert!(step_ef21p(4.0, 0.1).unwrap() < 0.25);
    }

    #[test]
    fn marina_without_compression_is_gd() {
        assert_eq!(step_marina(2.0, 3.0, 0.0, 0.5, 4).unwrap(), 0.5);
        assert_eq!(step_marina(2.0, 3.0, 5.0, 1.0, 4).unwrap(), 0.5);
    }
}
