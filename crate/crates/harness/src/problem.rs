//! Turning configs into problems, constants, and algorithm configurations.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand_distr::{Distribution, Normal};

use commsim_core::algorithms::AlgoConfig;
use commsim_core::compressors::{Collection, CompressorSpec};
use commsim_core::problems::quadratic::EnsembleData;
use commsim_core::problems::{
    generate_het_quadratic, quad_constants, sampled_constants, ChainProblem, ConstantsSource,
    HetQuadraticParams, MatrixFactorizationProblem, Problem, ProblemConstants, QuadraticEnsemble,
};
use commsim_core::rng::{stream, Role};
use commsim_core::tuning::{
    m3_beta_general, step_ef21p, step_gd, step_m3, step_m3_general, step_marina, step_marinap_general, M3Inputs,
};

use crate::config::{AlgorithmConfig, ExperimentConfig, ExplicitParams, ProblemConfig, X0Config};

/// Probes used for sampled constants of non-quadratic problems.
const SAMPLED_DRAWS: usize = 32;
const SAMPLED_RADIUS: f64 = 1.0;
const SAMPLED_STEP: f64 = 1e-3;

pub enum BuiltProblem {
    Quadratic(QuadraticEnsemble),
    Matfac(MatrixFactorizationProblem),
    Chain(ChainProblem),
}

impl BuiltProblem {
    pub fn as_dyn(&self) -> &dyn Problem {
        match self {
            BuiltProblem::Quadratic(p) => p,
            BuiltProblem::Matfac(p) => p,
            BuiltProblem::Chain(p) => p,
        }
    }

    /// Exact constants for quadratics. Other families use the heterogeneity
    /// free pair `L_A = L_max`, `L_B = 0` on top of `L` and `L_i`, which are
    /// exact for the chain and sampled for the autoencoder.
    pub fn constants(&self, seed: u64) -> Result<ProblemConstants> {
        let generic = |l: f64, l_i: Vec<f64>, source| {
            let n = l_i.len();
            let mut c = ProblemConstants::from_parts(l, l_i, vec![0.0; n], source);
            c.l_a = c.l_max;
            c.l_b = 0.0;
            c
        };
        Ok(match self {
            BuiltProblem::Quadratic(q) => quad_constants(q)?,
            BuiltProblem::Chain(c) => generic(c.smoothness(), vec![c.smoothness(); c.workers()], ConstantsSource::Exact),
            BuiltProblem::Matfac(m) => {
                let mut rng = stream(seed, Role::Problem, 1);
                let s = sampled_constants(m, SAMPLED_DRAWS, SAMPLED_RADIUS, SAMPLED_STEP, &mut rng)?;
                generic(s.l, s.l_i, ConstantsSource::Sampled)
            }
        })
    }
}

/// Dimension of the problem a config describes.
pub fn problem_dim(cfg: &ProblemConfig) -> Result<usize> {
    Ok(match cfg {
        ProblemConfig::HetQuadratic { d, .. } => *d,
        ProblemConfig::Matfac { d1, d2, .. } => 2 * d1 * d2,
        ProblemConfig::Chain { t, .. } => *t,
        ProblemConfig::EnsembleFile { path } => load_ensemble(path)?.dim(),
    })
}

/// Builds the problem for one repeat. Generated families use the config's
/// fixed seed if present, else the repeat's seed.
pub fn build_problem(cfg: &ProblemConfig, run_seed: u64) -> Result<BuiltProblem> {
    Ok(match cfg {
        ProblemConfig::HetQuadratic {
            n,
            d,
            v,
            sigma,
            v0,
            base,
            seed,
        } => {
            let params = HetQuadraticParams {
                n: *n,
                d: *d,
                v: *v,
                sigma: *sigma,
                v0: *v0,
                base: *base,
            };
            let mut rng = stream(seed.unwrap_or(run_seed), Role::Problem, 0);
            BuiltProblem::Quadratic(generate_het_quadratic(&params, &mut rng)?)
        }
        ProblemConfig::EnsembleFile { path } => BuiltProblem::Quadratic(load_ensemble(path)?),
        ProblemConfig::Matfac {
            n,
            d1,
            d2,
            samples,
            lambda,
            seed,
        } => {
            let mut rng = stream(seed.unwrap_or(run_seed), Role::Problem, 0);
            BuiltProblem::Matfac(MatrixFactorizationProblem::synthetic(*d1, *d2, *samples, *lambda, *n, &mut rng)?)
        }
        ProblemConfig::Chain { n, t, lambda, l } => BuiltProblem::Chain(ChainProblem::new(*t, *lambda, *l, *n)?),
    })
}

pub fn load_ensemble(path: &Path) -> Result<QuadraticEnsemble> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let data: EnsembleData = serde_path_to_error::deserialize(de)
        .map_err(|e| anyhow::anyhow!("ensemble error at `{}`: {}", e.path(), e.inner()))?;
    Ok(QuadraticEnsemble::from_data(data)?)
}

pub fn save_ensemble(ens: &QuadraticEnsemble, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&ens.to_data())?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn initial_point(cfg: X0Config, d: usize, run_seed: u64) -> Result<Vec<f64>> {
    Ok(match cfg {
        X0Config::Zeros => vec![0.0; d],
        X0Config::Constant { value } => vec![value; d],
        X0Config::Normal { scale } => {
            let normal = Normal::new(0.0, scale).context("x0.scale")?;
            let mut rng = stream(run_seed, Role::Init, 0);
            (0..d).map(|_| normal.sample(&mut rng)).collect()
        }
    })
}

fn collection(spec: CompressorSpec, mode: Option<commsim_core::compressors::CollectionMode>, n: usize, d: usize) -> Result<Collection> {
    Ok(match mode {
        Some(mode) => Collection::with_mode(spec, mode, n, d)?,
        None => Collection::new(spec, n, d)?,
    })
}

/// Collections of an algorithm config, resolved for `(d, n)`, without any
/// step-size computation.
pub fn resolve_collections(alg: &AlgorithmConfig, d: usize, n: usize) -> Result<Vec<Collection>> {
    Ok(match alg {
        AlgorithmConfig::Gd { .. } => Vec::new(),
        AlgorithmConfig::Marina { uplink, mode, .. } => vec![collection(uplink.resolve(d, n), *mode, n, d)?],
        AlgorithmConfig::MarinaP { downlink, mode, .. } => vec![collection(downlink.resolve(d, n), *mode, n, d)?],
        AlgorithmConfig::M3 {
            downlink,
            uplink,
            downlink_mode,
            uplink_mode,
            ..
        } => vec![
            collection(downlink.resolve(d, n), *downlink_mode, n, d).context("downlink")?,
            collection(uplink.resolve(d, n), *uplink_mode, n, d).context("uplink")?,
        ],
        AlgorithmConfig::Ef21P { downlink, uplink, .. } => {
            let mut out = vec![collection(downlink.resolve(d, n), None, 1, d).context("downlink")?];
            if let Some(up) = uplink {
                out.push(collection(up.resolve(d, n), None, n, d).context("uplink")?);
            }
            out
        }
    })
}

/// Static checks of every (algorithm, n) combination a config can run.
pub fn check_shapes(cfg: &ExperimentConfig) -> Result<()> {
    if let ProblemConfig::EnsembleFile { .. } = cfg.problem {
        return Ok(());
    }
    let d = problem_dim(&cfg.problem)?;
    let base_n = cfg.problem.workers().unwrap_or(1);
    let sweep = cfg.sweep.as_ref();
    let mut ns = vec![base_n];
    ns.extend(sweep.and_then(|s| s.n.clone()).unwrap_or_default());
    let mut algs = vec![cfg.algorithm.clone()];
    if let Some(extra) = sweep.and_then(|s| s.algorithms.clone()) {
        algs.extend(extra);
    }
    for n in ns {
        for alg in &algs {
            resolve_collections(alg, d, n).with_context(|| format!("algorithm `{}` at n = {n}, d = {d}", alg.label()))?;
        }
    }
    Ok(())
}

fn payload_probability(c: &Collection) -> f64 {
    c.payload_coords() as f64 / c.dim() as f64
}

fn need_omega(c: &Collection, what: &str) -> Result<f64> {
    match c.omega() {
        Some(w) => Ok(w),
        None => bail!("{what}: theory step sizes need an unbiased compressor"),
    }
}

/// `spec` with trailing natural stages stripped.
fn innermost(spec: &CompressorSpec) -> &CompressorSpec {
    match spec {
        CompressorSpec::Compose { inner, outer } if **outer == CompressorSpec::Natural => innermost(inner),
        other => other,
    }
}

/// Full algorithm configuration: theory values, explicit overrides, then
/// the step-size multiplier.
pub fn build_algorithm(
    alg: &AlgorithmConfig,
    overrides: &ExplicitParams,
    multiplier: f64,
    constants: &ProblemConstants,
    d: usize,
    n: usize,
) -> Result<AlgoConfig> {
    let c = constants;
    let mut cols = resolve_collections(alg, d, n)?.into_iter();
    let mut cfg = match alg {
        AlgorithmConfig::Gd { .. } => AlgoConfig::Gd { gamma: step_gd(c.l)? },
        AlgorithmConfig::Marina { .. } => {
            let uplink = cols.next().expect("uplink");
            let p = overrides.p.unwrap_or_else(|| payload_probability(&uplink));
            let omega = need_omega(&uplink, "uplink")?;
            AlgoConfig::Marina {
                gamma: step_marina(c.l, c.l_hat, omega, p, n)?,
                p,
                uplink,
            }
        }
        AlgorithmConfig::MarinaP { .. } => {
            let downlink = cols.next().expect("downlink");
            let p = overrides.p.unwrap_or_else(|| payload_probability(&downlink));
            let omega = need_omega(&downlink, "downlink")?;
            let theta = downlink.theta().unwrap_or(omega);
            AlgoConfig::MarinaP {
                gamma: step_marinap_general(c.l, c.l_a, c.l_b, omega, theta, p)?,
                p,
                downlink,
            }
        }
        AlgorithmConfig::M3 { lean, .. } => {
            let downlink = cols.next().expect("downlink");
            let uplink = cols.next().expect("uplink");
            let omega_p = need_omega(&downlink, "downlink")?;
            let omega_d = need_omega(&uplink, "uplink")?;
            let k = d / n;
            let matched = n > 1
                && *innermost(downlink.spec()) == CompressorSpec::PermK
                && *innermost(uplink.spec()) == CompressorSpec::RandK { k };
            let base = if matched {
                step_m3(c.l, c.l_a, c.l_b, c.l_max, n)?
            } else {
                let p_p = payload_probability(&downlink);
                let p_d = payload_probability(&uplink);
                let beta = m3_beta_general(n, omega_d, omega_p)?;
                step_m3_general(&M3Inputs {
                    l: c.l,
                    l_a: c.l_a,
                    l_b: c.l_b,
                    l_max: c.l_max,
                    n,
                    omega_p,
                    omega_d,
                    theta: downlink.theta().unwrap_or(omega_p),
                    p_p: overrides.p_primal.unwrap_or(p_p),
                    p_d: overrides.p_dual.unwrap_or(p_d),
                    beta: overrides.beta.unwrap_or(beta),
                })?
            };
            AlgoConfig::M3 {
                gamma: base.gamma,
                p_primal: overrides.p_primal.unwrap_or(base.p_primal),
                p_dual: overrides.p_dual.unwrap_or(base.p_dual),
                beta: overrides.beta.unwrap_or(base.beta),
                downlink,
                uplink,
                lean: *lean,
            }
        }
        AlgorithmConfig::Ef21P { .. } => {
            let downlink = cols.next().expect("downlink");
            let uplink = cols.next();
            let alpha = match downlink.spec().alpha(d) {
                Some(a) => a,
                None => bail!("downlink: EF21-P theory step needs a TopK or identity compressor"),
            };
            let mut gamma = step_ef21p(c.l, alpha)?;
            if let Some(up) = &uplink {
                // Uplink noise enters like a MARINA estimator refreshed every step.
                let omega = need_omega(up, "uplink")?;
                gamma = 1.0 / (1.0 / gamma + c.l_hat * (omega / n as f64).sqrt());
            }
            AlgoConfig::Ef21P { gamma, downlink, uplink }
        }
    };
    if let Some(g) = overrides.gamma {
        cfg.set_gamma(g);
    }
    cfg.set_gamma(cfg.gamma() * multiplier);
    cfg.validate(d, n)?;
    Ok(cfg)
}
