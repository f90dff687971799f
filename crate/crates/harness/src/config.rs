//! Experiment configuration files (JSON).
//!
//! Unknown keys are rejected everywhere; parse errors carry the path of the
//! offending field.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use commsim_core::compressors::{CollectionMode, CompressorSpec};
use commsim_core::problems::quadratic::BaseMatrix;
use commsim_core::telemetry::CostModel;

/// Sparsity level: a number, or `"d/n"` for `⌊d/n⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSpec {
    Fixed(usize),
    Rule(KRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KRule {
    #[serde(rename = "d/n")]
    DOverN,
}

impl KSpec {
    pub fn resolve(self, d: usize, n: usize) -> usize {
        match self {
            KSpec::Fixed(k) => k,
            KSpec::Rule(KRule::DOverN) => (d / n).max(1),
        }
    }
}

/// Compressor as written in a config; resolves to a [`CompressorSpec`] once
/// `d` and `n` are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorConfig {
    Identity,
    RandK { k: KSpec },
    SameRandK { k: KSpec },
    PermK,
    TopK { k: KSpec },
    Natural,
    Compose {
        outer: Box<CompressorConfig>,
        inner: Box<CompressorConfig>,
    },
}

impl CompressorConfig {
    pub fn resolve(&self, d: usize, n: usize) -> CompressorSpec {
        match self {
            CompressorConfig::Identity => CompressorSpec::Identity,
            CompressorConfig::RandK { k } => CompressorSpec::RandK { k: k.resolve(d, n) },
            CompressorConfig::SameRandK { k } => CompressorSpec::SameRandK { k: k.resolve(d, n) },
            CompressorConfig::PermK => CompressorSpec::PermK,
            CompressorConfig::TopK { k } => CompressorSpec::TopK { k: k.resolve(d, n) },
            CompressorConfig::Natural => CompressorSpec::Natural,
            CompressorConfig::Compose { outer, inner } => CompressorSpec::Compose {
                outer: Box::new(outer.resolve(d, n)),
                inner: Box::new(inner.resolve(d, n)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Quadratics `A_i = (v + ξ_i)·X`.
    HetQuadratic {
        n: usize,
        d: usize,
        v: f64,
        sigma: f64,
        #[serde(default)]
        v0: Option<f64>,
        #[serde(default)]
        base: BaseMatrix,
        /// Fixed generator seed; by default each repeat draws its own problem.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A quadratic ensemble stored as JSON (see `commsim::problem::save_ensemble`).
    EnsembleFile { path: PathBuf },
    /// Two-layer linear autoencoder on synthetic standard-normal samples.
    Matfac {
        n: usize,
        d1: usize,
        d2: usize,
        samples: usize,
        lambda: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Scaled worst-case chain function, identical on every worker.
    Chain {
        n: usize,
        t: usize,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        l: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ProblemConfig {
    /// Worker count, if the config states it.
    pub fn workers(&self) -> Option<usize> {
        match self {
            ProblemConfig::HetQuadratic { n, .. }
            | ProblemConfig::Matfac { n, .. }
            | ProblemConfig::Chain { n, .. } => Some(*n),
            ProblemConfig::EnsembleFile { .. } => None,
        }
    }

    pub fn set_workers(&mut self, value: usize) -> Result<()> {
        match self {
            ProblemConfig::HetQuadratic { n, .. }
            | ProblemConfig::Matfac { n, .. }
            | ProblemConfig::Chain { n, .. } => {
                *n = value;
                Ok(())
            }
            ProblemConfig::EnsembleFile { .. } => bail!("the worker count of an ensemble file is fixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Gd {
        #[serde(default)]
        label: Option<String>,
    },
    Marina {
        uplink: CompressorConfig,
        #[serde(default)]
        mode: Option<CollectionMode>,
        #[serde(default)]
        label: Option<String>,
    },
    MarinaP {
        downlink: CompressorConfig,
        #[serde(default)]
        mode: Option<CollectionMode>,
        #[serde(default)]
        label: Option<String>,
    },
    M3 {
        downlink: CompressorConfig,
        uplink: CompressorConfig,
        #[serde(default)]
        downlink_mode: Option<CollectionMode>,
        #[serde(default)]
        uplink_mode: Option<CollectionMode>,
        #[serde(default)]
        lean: bool,
        #[serde(default)]
        label: Option<String>,
    },
    Ef21P {
        downlink: CompressorConfig,
        /// Compressed gradients at the shift; dense gradients when absent.
        #[serde(default)]
        uplink: Option<CompressorConfig>,
        #[serde(default)]
        label: Option<String>,
    },
}

impl AlgorithmConfig {
    pub fn method(&self) -> &'static str {
        match self {
            AlgorithmConfig::Gd { .. } => "gd",
            AlgorithmConfig::Marina { .. } => "marina",
            AlgorithmConfig::MarinaP { .. } => "marina_p",
            AlgorithmConfig::M3 { .. } => "m3",
            AlgorithmConfig::Ef21P { .. } => "ef21_p",
        }
    }

    /// Name used for output files: the label, or the method name.
    pub fn label(&self) -> String {
        let label = match self {
            AlgorithmConfig::Gd { label }
            | AlgorithmConfig::Marina { label, .. }
            | AlgorithmConfig::MarinaP { label, .. }
            | AlgorithmConfig::M3 { label, .. }
            | AlgorithmConfig::Ef21P { label, .. } => label,
        };
        label.clone().unwrap_or_else(|| self.method().to_string())
    }
}

/// `"theory"`, or explicit values. Fields left out of the explicit form are
/// filled in from theory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsConfig {
    Keyword(ParamsKeyword),
    Explicit(ExplicitParams),
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig::Keyword(ParamsKeyword::Theory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamsKeyword {
    Theory,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitParams {
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub p_primal: Option<f64>,
    #[serde(default)]
    pub p_dual: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
}

impl ParamsConfig {
    pub fn overrides(&self) -> ExplicitParams {
        match self {
            ParamsConfig::Keyword(ParamsKeyword::Theory) => ExplicitParams::default(),
            ParamsConfig::Explicit(e) => e.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    pub eps: f64,
    pub max_iters: usize,
}

/// Starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Config {
    #[default]
    Zeros,
    Constant {
        value: f64,
    },
    /// `N(0, scale²)` entries from the run's init stream.
    Normal {
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Keep every k-th trace record (plus the last one).
    #[serde(default = "one_usize")]
    pub trace_every: usize,
    /// Also write each generated quadratic ensemble as JSON.
    #[serde(default)]
    pub save_problem: bool,
}

fn one_usize() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trace_every: 1,
            save_problem: false,
        }
    }
}

/// Cost used to rank step-size multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    S2w,
    W2s,
    #[default]
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub algorithms: Option<Vec<AlgorithmConfig>>,
    /// Multipliers `2^i` tried on the step size.
    #[serde(default = "default_exponents")]
    pub gamma_exponents: Vec<i32>,
    #[serde(default)]
    pub select_by: SelectBy,
}

pub fn default_exponents() -> Vec<i32> {
    (-6..=6).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default = "one")]
    pub gamma_multiplier: f64,
    pub stop: StopConfig,
    #[serde(default = "one_usize")]
    pub repeats: usize,
    /// Repeat `r` runs with seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default)]
    pub x0: X0Config,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    /// Checks everything that can be checked without building the problem.
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            bail!("repeats: must be at least 1");
        }
        if !(self.stop.eps > 0.0) {
            bail!("stop.eps: must be positive");
        }
        if !(self.gamma_multiplier > 0.0 && self.gamma_multiplier.is_finite()) {
            bail!("gamma_multiplier: must be positive and finite");
        }
        if self.output.trace_every == 0 {
            bail!("output.trace_every: must be positive");
        }
        self.cost_model.validate().context("cost_model")?;
        if let Some(sweep) = &self.sweep {
            if sweep.gamma_exponents.is_empty() {
                bail!("sweep.gamma_exponents: must not be empty");
            }
            if sweep.n.as_ref().is_some_and(|ns| ns.is_empty() || ns.contains(&0)) {
                bail!("sweep.n: must be a non-empty list of positive counts");
            }
            if sweep.algorithms.as_ref().is_some_and(Vec::is_empty) {
                bail!("sweep.algorithms: must not be empty");
            }
        }
        Ok(())
    }
}

/// Parses and validates a config; static shape checks (e.g. PermK needs
/// `n | d`) run here too so a bad file fails before any simulation starts.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("config error at `{path}`: {}", e.into_inner())
    })?;
    cfg.validate()?;
    crate::problem::check_shapes(&cfg)?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}
