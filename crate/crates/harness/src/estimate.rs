//! `commsim estimate`: Monte-Carlo ω and θ for a compressor collection.

use anyhow::{Context, Result};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use commsim_core::compressors::{estimate_omega, estimate_theta, Collection, CollectionMode};
use commsim_core::rng::{stream, Role};

use crate::config::CompressorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    pub compressor: CompressorConfig,
    pub d: usize,
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default)]
    pub mode: Option<CollectionMode>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Number of random Gaussian probe vectors.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_samples() -> usize {
    10_000
}

fn default_probes() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub mode: CollectionMode,
    pub omega: Option<f64>,
    pub theta: Option<f64>,
    /// Largest estimate over the probes.
    pub omega_hat: f64,
    pub theta_hat: f64,
}

pub fn parse_request(text: &str) -> Result<EstimateRequest> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("request error at `{}`: {}", e.path(), e.inner()))
}

pub fn run_estimate(req: &EstimateRequest) -> Result<EstimateReport> {
    let spec = req.compressor.resolve(req.d, req.n);
    let col = match req.mode {
        Some(mode) => Collection::with_mode(spec, mode, req.n, req.d)?,
        None => Collection::new(spec, req.n, req.d)?,
    };
    let mut omega_hat: f64 = 0.0;
    let mut theta_hat: f64 = 0.0;
    for probe in 0..req.probes.max(1) {
        let mut rng = stream(req.seed, Role::Init, probe as u64);
        let x: Vec<f64> = (0..req.d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let seed = req.seed.wrapping_add(probe as u64);
        omega_hat = omega_hat.max(estimate_omega(&col, &x, req.samples, seed).context("omega")?);
        theta_hat = theta_hat.max(estimate_theta(&col, &x, req.samples, seed).context("theta")?);
    }
    Ok(EstimateReport {
        mode: col.mode(),
        omega: col.omega(),
        theta: col.theta(),
        omega_hat,
        theta_hat,
    })
}
