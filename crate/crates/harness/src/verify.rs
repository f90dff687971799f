//! Self-check suites behind `commsim verify`.
//!
//! Each check reports pass/fail with a one-line detail. The default
//! settings are the ones the acceptance suite uses.

use std::sync::Arc;

use anyhow::{bail, Result};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use commsim_core::algorithms::{AlgoConfig, Runner};
use commsim_core::compressors::{
    apply_perm_k_collection, compose, estimate_theta, Collection, CollectionMode, CompressorSpec, Inputs, SparseMessage,
};
use commsim_core::problems::chain::{chain_grad_into, chain_value};
use commsim_core::problems::quadratic::BaseMatrix;
use commsim_core::problems::{
    generate_het_quadratic, prog, quad_constants, verify_functional_inequality, ChainProblem, HetQuadraticParams,
    MatrixFactorizationProblem, Problem, QuadBlock, QuadraticEnsemble, SymMatrix,
};
use commsim_core::rng::{stream, Rng, Role};
use commsim_core::telemetry::CostModel;
use commsim_core::tuning::{step_ef21p, step_m3, step_marina, step_marinap_general};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

pub const SUITES: &[&str] = &[
    "compressors",
    "permk",
    "gd_equivalence",
    "constants",
    "chain",
    "gradients",
    "descent",
];

/// Runs one suite by name, or every suite for `all`.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<Check>> {
    Ok(match name {
        "compressors" => compressor_laws(&LawSettings::default(), seed),
        "permk" => permk_exactness(seed),
        "gd_equivalence" => gd_equivalence(seed),
        "constants" => constants(seed),
        "chain" => chain_properties(50, 1000, seed),
        "gradients" => gradient_checks(20, seed),
        "descent" => descent(100, seed),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed)?);
            }
            out
        }
        other => bail!("unknown suite `{other}`; known: {}, all", SUITES.join(", ")),
    })
}

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct LawSettings {
    pub d: usize,
    pub samples: usize,
    pub probes: usize,
    /// Allowed deviation of the mean, in standard errors.
    pub z: f64,
    /// Allowed relative excess of the empirical variance over ω.
    pub omega_slack: f64,
}

impl Default for LawSettings {
    fn default() -> Self {
        Self {
            d: 20,
            samples: 200_000,
            probes: 20,
            z: 4.0,
            omega_slack: 0.05,
        }
    }
}

/// Monte-Carlo unbiasedness and variance of the first member of each
/// unbiased collection.
pub fn compressor_laws(s: &LawSettings, seed: u64) -> Vec<Check> {
    let d = s.d;
    let n = 4;
    let kinds: Vec<(&str, CompressorSpec, usize)> = vec![
        ("rand_k", CompressorSpec::RandK { k: d / 4 }, 1),
        ("same_rand_k", CompressorSpec::SameRandK { k: d / 4 }, n),
        ("perm_k", CompressorSpec::PermK, n),
        ("natural", CompressorSpec::Natural, 1),
        ("natural_after_perm_k", compose(CompressorSpec::Natural, CompressorSpec::PermK), n),
    ];
    let mut checks = Vec::new();
    for (kind_idx, (name, spec, members)) in kinds.into_iter().enumerate() {
        let col = match Collection::new(spec, members, d) {
            Ok(c) => c,
            Err(e) => {
                checks.push(Check::new(format!("laws/{name}"), false, e.to_string()));
                continue;
            }
        };
        let omega = col.omega().unwrap_or(f64::NAN);
        let mut worst_z: f64 = 0.0;
        let mut worst_ratio: f64 = 0.0;
        let mut out = vec![SparseMessage::empty(d); members];
        for probe in 0..s.probes {
            let index = (kind_idx * 1000 + probe) as u64;
            let x = gaussian(d, &mut stream(seed, Role::Init, index));
            let x_sq: f64 = x.iter().map(|v| v * v).sum();
            let mut server = stream(seed, Role::Server, index);
            let mut workers: Vec<Rng> = (0..members as u64).map(|i| stream(seed, Role::Downlink, index * 64 + i)).collect();
            let mut sum = vec![0.0; d];
            let mut sum_sq = vec![0.0; d];
            let mut dev = 0.0;
            for _ in 0..s.samples {
                col.compress_into(Inputs::Shared(&x), &mut server, &mut workers, &mut out);
                let msg = &out[0];
                let mut err = x_sq;
                for (&i, &v) in msg.indices.iter().zip(&msg.values) {
                    sum[i] += v;
                    sum_sq[i] += v * v;
                    err += (v - x[i]) * (v - x[i]) - x[i] * x[i];
                }
                dev += err;
            }
            let m = s.samples as f64;
            for j in 0..d {
                let mean = sum[j] / m;
                let var = (sum_sq[j] / m - mean * mean).max(0.0);
                let se = (var / m).sqrt();
                let gap = (mean - x[j]).abs();
                let z = if se > 0.0 {
                    gap / se
                } else if gap <= 1e-12 * x[j].abs().max(1.0) {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst_z = worst_z.max(z);
            }
            worst_ratio = worst_ratio.max(dev / m / x_sq / omega);
        }
        checks.push(Check::new(
            format!("unbiased/{name}"),
            worst_z <= s.z,
            format!("max |mean − x| = {worst_z:.2} standard errors (limit {})", s.z),
        ));
        checks.push(Check::new(
            format!("variance/{name}"),
            worst_ratio <= 1.0 + s.omega_slack,
            format!("max E‖C(x) − x‖² / (ω‖x‖²) = {worst_ratio:.4} with ω = {omega:.4}"),
        ));
    }
    checks
}

/// PermK reconstruction, exact θ, and θ of independent RandK.
pub fn permk_exactness(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    for (pair, &(d, n)) in [(12usize, 3usize), (100, 10)].iter().enumerate() {
        let mut rng = stream(seed, Role::Init, pair as u64);
        let mut worst: f64 = 0.0;
        let mut theta_max: f64 = 0.0;
        let col = Collection::new(CompressorSpec::PermK, n, d).expect("valid shape");
        for trial in 0..100 {
            let x = gaussian(d, &mut rng);
            let msgs = apply_perm_k_collection(&x, n, &mut rng).expect("valid shape");
            let mut avg = vec![0.0; d];
            for m in &msgs {
                m.add_scaled_to(1.0 / n as f64, &mut avg);
            }
            let err = avg.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
            let theta = estimate_theta(&col, &x, 10_000, seed + trial).unwrap_or(f64::INFINITY);
            theta_max = theta_max.max(theta);
        }
        checks.push(Check::new(
            format!("permk_reconstruct/d{d}_n{n}"),
            worst <= 1e-12,
            format!("max |(1/n)ΣC_i(x) − x| = {worst:.3e} over 100 draws"),
        ));
        checks.push(Check::new(
            format!("permk_theta/d{d}_n{n}"),
            theta_max == 0.0,
            format!("estimated θ = {theta_max:e}"),
        ));
        let k = d / n;
        let indep = Collection::with_mode(CompressorSpec::RandK { k }, CollectionMode::Independent, n, d).expect("valid");
        let omega = indep.omega().expect("unbiased");
        let x = gaussian(d, &mut rng);
        let est = estimate_theta(&indep, &x, 50_000, seed).unwrap_or(f64::NAN);
        let expect = omega / n as f64;
        let rel = (est - expect).abs() / expect;
        checks.push(Check::new(
            format!("independent_rand_k_theta/d{d}_n{n}"),
            rel <= 0.10,
            format!("estimated θ = {est:.4}, ω/n = {expect:.4}, relative gap {rel:.3}"),
        ));
    }
    checks
}

/// MARINA-P with PermK on a homogeneous quadratic tracks GD exactly.
pub fn gd_equivalence(seed: u64) -> Vec<Check> {
    let (d, n) = (60, 6);
    let params = HetQuadraticParams {
        n,
        d,
        v: 1.0,
        sigma: 0.0,
        v0: None,
        base: BaseMatrix::SecondDifference,
    };
    let ens = generate_het_quadratic(&params, &mut stream(seed, Role::Problem, 0)).expect("valid params");
    let l = quad_constants(&ens).expect("constants").l;
    let gamma = 1.0 / l;
    let x0 = gaussian(d, &mut stream(seed, Role::Init, 0));
    let downlink = Collection::new(CompressorSpec::PermK, n, d).expect("n | d");
    let mp = AlgoConfig::MarinaP {
        gamma,
        p: 1.0 / n as f64,
        downlink,
    };
    let model = CostModel::default();
    let mut a = Runner::new(&ens, mp, x0.clone(), seed, model, false).expect("valid run");
    let mut b = Runner::new(&ens, AlgoConfig::Gd { gamma }, x0, seed, model, false).expect("valid run");
    let mut worst: f64 = 0.0;
    let mut shift_gap: f64 = 0.0;
    for _ in 0..200 {
        a.step();
        b.step();
        let gap = a.state().x.iter().zip(&b.state().x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
        let sg = a.state().w_bar.iter().zip(&a.state().x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        shift_gap = shift_gap.max(sg);
    }
    vec![
        Check::new(
            "gd_equivalence/trajectory",
            worst <= 1e-10,
            format!("max ‖x_MARINA-P − x_GD‖_∞ = {worst:.3e} over 200 steps"),
        ),
        Check::new(
            "gd_equivalence/mean_shift",
            shift_gap <= 1e-10,
            format!("max ‖w̄ − x‖_∞ = {shift_gap:.3e}"),
        ),
    ]
}

/// `L_A` on homogeneous and scaled-identity ensembles, and the functional
/// inequality on generated ensembles.
pub fn constants(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let flat = HetQuadraticParams {
        n: 5,
        d: 30,
        v: 2.0,
        sigma: 0.0,
        v0: None,
        base: BaseMatrix::SecondDifference,
    };
    let ens = generate_het_quadratic(&flat, &mut stream(seed, Role::Problem, 0)).expect("valid params");
    let c = quad_constants(&ens).expect("constants");
    checks.push(Check::new("constants/homogeneous", c.l_a == 0.0, format!("L_A = {:e}", c.l_a)));

    let mut rng = stream(seed, Role::Problem, 1);
    let d = 16;
    let scales: Vec<f64> = (0..7).map(|_| rng.random_range(0.5..3.0)).collect();
    let base = Arc::new(SymMatrix::Identity { dim: d });
    let blocks = scales
        .iter()
        .map(|&s| QuadBlock {
            scale: s,
            base: base.clone(),
            b: gaussian(d, &mut rng),
            c: 0.0,
        })
        .collect();
    let ens = QuadraticEnsemble::new(blocks).expect("valid blocks");
    let mean = scales.iter().sum::<f64>() / scales.len() as f64;
    let expect = std::f64::consts::SQRT_2 * scales.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
    let got = quad_constants(&ens).expect("constants").l_a;
    checks.push(Check::new(
        "constants/scaled_identity",
        (got - expect).abs() <= 1e-10,
        format!("L_A = {got:.12}, √2·max|L_i − L̄| = {expect:.12}"),
    ));

    let mut worst: f64 = 0.0;
    for (e, sigma) in [0.0, 0.1, 0.5, 1.0, 3.0].into_iter().enumerate() {
        let params = HetQuadraticParams {
            n: 8,
            d: 20,
            v: 1.0,
            sigma,
            v0: None,
            base: if e % 2 == 0 { BaseMatrix::SecondDifference } else { BaseMatrix::Identity },
        };
        let ens = generate_het_quadratic(&params, &mut stream(seed, Role::Problem, 10 + e as u64)).expect("valid params");
        let c = quad_constants(&ens).expect("constants");
        let ratio = verify_functional_inequality(&ens, c.l_a, c.l_b, 10_000, 1.0, &mut stream(seed, Role::Init, 10 + e as u64))
            .unwrap_or(f64::INFINITY);
        worst = worst.max(ratio);
    }
    checks.push(Check::new(
        "constants/functional_inequality",
        worst <= 1.0,
        format!("max LHS/RHS = {worst:.6} over 5 ensembles × 10^4 draws"),
    ));
    checks
}

/// Zero-chain gradient properties at random points with `prog(x) < T`.
pub fn chain_properties(t: usize, points: usize, seed: u64) -> Vec<Check> {
    let mut rng = stream(seed, Role::Init, 7);
    let mut min_norm = f64::INFINITY;
    let mut max_inf: f64 = 0.0;
    let mut prog_ok = true;
    let mut g = vec![0.0; t];
    for _ in 0..points {
        let j = rng.random_range(0..t);
        let scale = [0.1, 0.5, 1.0, 3.0][rng.random_range(0..4)];
        let mut x = vec![0.0; t];
        for v in x.iter_mut().take(j) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = scale * z;
        }
        if j > 0 && x[j - 1] == 0.0 {
            x[j - 1] = scale;
        }
        chain_grad_into(&x, &mut g);
        min_norm = min_norm.min(norm(&g));
        max_inf = max_inf.max(g.iter().map(|v| v.abs()).fold(0.0, f64::max));
        prog_ok &= prog(&g) <= prog(&x) + 1;
    }
    let f0 = chain_value(&vec![0.0; t]);
    let closed = -(std::f64::consts::E * std::f64::consts::PI / 2.0).sqrt();
    vec![
        Check::new("chain/gradient_norm", min_norm > 1.0, format!("min ‖∇F_T‖ = {min_norm:.4}")),
        Check::new("chain/gradient_sup", max_inf <= 23.0, format!("max ‖∇F_T‖_∞ = {max_inf:.4}")),
        Check::new("chain/progress", prog_ok, "prog(∇F_T(x)) ≤ prog(x) + 1 at every point"),
        Check::new(
            "chain/value_at_zero",
            (f0 - closed).abs() <= 1e-8,
            format!("F_T(0) = {f0:.12}, −√(eπ/2) = {closed:.12}"),
        ),
    ]
}

/// Largest relative error of central differences against `grad` over
/// `points` Gaussian points.
pub fn fd_gradient_error(problem: &dyn Problem, points: usize, scale: f64, rng: &mut Rng) -> f64 {
    let d = problem.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x: Vec<f64> = gaussian(d, rng).into_iter().map(|v| v * scale).collect();
        let g = problem.grad(&x);
        let h = 1e-5 * (1.0 + norm(&x));
        let mut fd = vec![0.0; d];
        let mut y = x.clone();
        for j in 0..d {
            y[j] = x[j] + h;
            let up = problem.value(&y);
            y[j] = x[j] - h;
            let down = problem.value(&y);
            y[j] = x[j];
            fd[j] = (up - down) / (2.0 * h);
        }
        let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&g).max(1e-12));
    }
    worst
}

pub fn gradient_checks(points: usize, seed: u64) -> Vec<Check> {
    let quad = |base| {
        let params = HetQuadraticParams {
            n: 5,
            d: 30,
            v: 2.0,
            sigma: 0.5,
            v0: None,
            base,
        };
        generate_het_quadratic(&params, &mut stream(seed, Role::Problem, 0)).expect("valid params")
    };
    let tri = quad(BaseMatrix::SecondDifference);
    let ident = quad(BaseMatrix::Identity);
    let matfac = MatrixFactorizationProblem::synthetic(6, 2, 4, 0.1, 2, &mut stream(seed, Role::Problem, 2)).expect("valid");
    let chain = ChainProblem::new(20, 1.0, 1.0, 3).expect("valid");
    let families: [(&str, &dyn Problem, f64); 4] = [
        ("het_quadratic", &tri, 1.0),
        ("identity_quadratic", &ident, 1.0),
        ("matfac", &matfac, 1.0),
        ("chain", &chain, 1.0),
    ];
    families
        .iter()
        .enumerate()
        .map(|(k, (name, p, scale))| {
            let err = fd_gradient_error(*p, points, *scale, &mut stream(seed, Role::Init, 20 + k as u64));
            Check::new(
                format!("gradient/{name}"),
                err <= 1e-5,
                format!("max relative error {err:.3e} over {points} points"),
            )
        })
        .collect()
}

/// Worst violation of
/// `f(x⁺) ≤ f(x) − (γ/2)‖∇f(x)‖² − (1/(2γ) − L/2)‖x⁺ − x‖² + (γ/2)‖g − ∇f(x)‖²`
/// over `steps` iterations of `runner`.
pub fn descent_violation(runner: &mut Runner<'_>, problem: &dyn Problem, l: f64, steps: usize) -> f64 {
    let gamma = runner.config().gamma();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        let st = runner.state();
        let (x, grad, g) = (st.x.clone(), st.grad.clone(), st.g.clone());
        let f = problem.value(&x);
        runner.step();
        let x_next = &runner.state().x;
        let f_next = problem.value(x_next);
        let step_sq: f64 = x_next.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        let grad_sq: f64 = grad.iter().map(|v| v * v).sum();
        let err_sq: f64 = g.iter().zip(&grad).map(|(a, b)| (a - b) * (a - b)).sum();
        let bound = f - 0.5 * gamma * grad_sq - (0.5 / gamma - 0.5 * l) * step_sq + 0.5 * gamma * err_sq;
        worst = worst.max(f_next - bound);
    }
    worst
}

/// The descent inequality for every method on a `d = 50` quadratic.
pub fn descent(steps: usize, seed: u64) -> Vec<Check> {
    let (d, n) = (50, 5);
    let params = HetQuadraticParams {
        n,
        d,
        v: 1.0,
        sigma: 0.3,
        v0: None,
        base: BaseMatrix::SecondDifference,
    };
    let ens = generate_het_quadratic(&params, &mut stream(seed, Role::Problem, 0)).expect("valid params");
    let c = quad_constants(&ens).expect("constants");
    let k = d / n;
    let p = k as f64 / d as f64;
    let col = |spec: CompressorSpec, members: usize| Collection::new(spec, members, d).expect("valid collection");
    let mp = |spec: CompressorSpec| {
        let downlink = col(spec, n);
        let gamma = step_marinap_general(c.l, c.l_a, c.l_b, downlink.omega().unwrap(), downlink.theta().unwrap(), p).unwrap();
        AlgoConfig::MarinaP { gamma, p, downlink }
    };
    let m3 = step_m3(c.l, c.l_a, c.l_b, c.l_max, n).unwrap();
    let top = CompressorSpec::TopK { k };
    let configs: Vec<(&str, AlgoConfig)> = vec![
        ("gd", AlgoConfig::Gd { gamma: 1.0 / c.l }),
        (
            "marina",
            AlgoConfig::Marina {
                gamma: step_marina(c.l, c.l_hat, (d / k - 1) as f64, p, n).unwrap(),
                p,
                uplink: col(CompressorSpec::RandK { k }, n),
            },
        ),
        ("marina_p/perm_k", mp(CompressorSpec::PermK)),
        ("marina_p/rand_k", mp(CompressorSpec::RandK { k })),
        ("marina_p/same_rand_k", mp(CompressorSpec::SameRandK { k })),
        (
            "m3",
            AlgoConfig::M3 {
                gamma: m3.gamma,
                p_primal: m3.p_primal,
                p_dual: m3.p_dual,
                beta: m3.beta,
                downlink: col(CompressorSpec::PermK, n),
                uplink: col(CompressorSpec::RandK { k }, n),
                lean: false,
            },
        ),
        (
            "ef21_p",
            AlgoConfig::Ef21P {
                gamma: step_ef21p(c.l, k as f64 / d as f64).unwrap(),
                downlink: col(top.clone(), 1),
                uplink: None,
            },
        ),
        (
            "ef21_p/bidirectional",
            AlgoConfig::Ef21P {
                gamma: step_ef21p(c.l, k as f64 / d as f64).unwrap() / 4.0,
                downlink: col(top, 1),
                uplink: Some(col(CompressorSpec::RandK { k }, n)),
            },
        ),
    ];
    configs
        .into_iter()
        .map(|(name, cfg)| {
            let x0 = gaussian(d, &mut stream(seed, Role::Init, 0));
            let mut runner = Runner::new(&ens, cfg, x0, seed, CostModel::default(), false).expect("valid run");
            let worst = descent_violation(&mut runner, &ens, c.l, steps);
            Check::new(
                format!("descent/{name}"),
                worst <= 1e-8,
                format!("max violation {worst:.3e} over {steps} steps"),
            )
        })
        .collect()
}
