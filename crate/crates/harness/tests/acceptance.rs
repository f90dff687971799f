//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};

use commsim::config::{AlgorithmConfig, CompressorConfig, SelectBy};
use commsim::exec::{run_point, thread_pool, Point};
use commsim::verify::{self, Check, LawSettings};
use commsim::{load_config, ExperimentConfig};
use commsim_core::problems::chain::{chain_value, phi, psi};
use commsim_core::telemetry::Target;

struct Verdict {
    passed: bool,
    detail: String,
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn from_checks(checks: Vec<Check>) -> Verdict {
    let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
    let detail = checks
        .iter()
        .map(|c| format!("{} [{}] {}", c.name, if c.passed { "ok" } else { "FAIL" }, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    Verdict { passed, detail }
}

fn compressor_laws() -> Result<Verdict> {
    let start = Instant::now();
    let mut v = from_checks(verify::compressor_laws(&LawSettings::default(), 1));
    let secs = start.elapsed().as_secs_f64();
    v.passed &= secs < 30.0;
    v.detail = format!("{:.1}s; {}", secs, v.detail);
    Ok(v)
}

/// Simpson's rule on [a, b] with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn chain() -> Result<Verdict> {
    let mut v = from_checks(verify::chain_properties(50, 1000, 3));
    // Φ(0) = √e ∫_{-∞}^0 exp(−t²/2) dt; the tail below −40 is far under 1e−300.
    let phi0 = 1f64.exp().sqrt() * simpson(|t| (-0.5 * t * t).exp(), -40.0, 0.0, 200_000);
    let oracle = -psi(1.0) * phi0;
    let f0 = chain_value(&[0.0; 50]);
    let gap = (f0 - oracle).abs();
    let phi_gap = (phi(0.0) - phi0).abs();
    v.passed &= gap <= 1e-8;
    v.detail = format!("{}; quadrature F_T(0) = {oracle:.12}, gap {gap:.2e}, Φ(0) gap {phi_gap:.2e}", v.detail);
    Ok(v)
}

fn downlink(alg: &AlgorithmConfig) -> Option<&CompressorConfig> {
    match alg {
        AlgorithmConfig::MarinaP { downlink, .. } => Some(downlink),
        _ => None,
    }
}

fn find_marinap(cfg: &ExperimentConfig, pick: fn(&CompressorConfig) -> bool) -> Result<AlgorithmConfig> {
    cfg.sweep
        .as_ref()
        .and_then(|s| s.algorithms.as_ref())
        .and_then(|algs| algs.iter().find(|a| downlink(a).is_some_and(pick)).cloned())
        .ok_or_else(|| anyhow!("compressor missing from the sweep list"))
}

fn max_iterations(point: &Point) -> Option<usize> {
    point
        .runs
        .iter()
        .map(|r| match r.target() {
            Some(Target::Reached { t, .. }) => Some(*t),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()
        .and_then(|v| v.into_iter().max())
}

fn downlink_ordering() -> Result<Verdict> {
    let start = Instant::now();
    let cfg = load_config(&configs_dir().join("downlink_compressors.json"))?;
    let pool = thread_pool()?;
    let perm = find_marinap(&cfg, |c| matches!(c, CompressorConfig::PermK))?;
    let rand = find_marinap(&cfg, |c| matches!(c, CompressorConfig::RandK { .. }))?;
    let same = find_marinap(&cfg, |c| matches!(c, CompressorConfig::SameRandK { .. }))?;

    let perm10 = run_point(&cfg, &perm, Some(10), None, &pool)?;
    let perm100 = run_point(&cfg, &perm, Some(100), None, &pool)?;
    let rand100 = run_point(&cfg, &rand, Some(100), None, &pool)?;
    // SameRandK pays the same downlink coordinates per step as RandK. Capping
    // it at 1.25× the slowest RandK run keeps its spent cost above every RandK
    // cost to target, so a not-reached run is still a valid lower bound.
    let cap = max_iterations(&rand100).context("independent RandK did not reach the target")?;
    let mut capped = cfg.clone();
    capped.stop.max_iters = cap + cap / 4;
    let same100 = run_point(&capped, &same, Some(100), None, &pool)?;

    let med = |p: &Point| p.median(SelectBy::S2w).unwrap_or(f64::NAN);
    let (p10, p100, r100, s100) = (med(&perm10), med(&perm100), med(&rand100), med(&same100));
    let all_reached = [&perm10, &perm100, &rand100].iter().all(|p| p.reached() == p.runs.len());
    let secs = start.elapsed().as_secs_f64();
    let passed = all_reached && p100 < r100 && r100 < s100 && p100 <= 0.5 * p10 && secs < 600.0;
    Ok(Verdict {
        passed,
        detail: format!(
            "median s2w at n=100: PermK {p100:.4e} < RandK {r100:.4e} < SameRandK {s100:.4e} ({}/5 reached, cap {} iters); \
             PermK n=10 {p10:.4e}, ratio {:.3}; {secs:.0}s",
            same100.reached(),
            capped.stop.max_iters,
            p100 / p10
        ),
    })
}

fn m3_scaling() -> Result<Verdict> {
    let cfg = load_config(&configs_dir().join("m3_scaling.json"))?;
    let pool = thread_pool()?;
    let exponents = cfg.sweep.as_ref().map(|s| s.gamma_exponents.clone()).unwrap_or_default();
    let best = |n: usize| -> Result<(f64, i32)> {
        let mut best: Option<(f64, i32)> = None;
        for &e in &exponents {
            let point = run_point(&cfg, &cfg.algorithm, Some(n), Some(e), &pool)?;
            if let Some(c) = point.score(SelectBy::Total) {
                if best.is_none_or(|(b, _)| c < b) {
                    best = Some((c, e));
                }
            }
        }
        best.ok_or_else(|| anyhow!("no step size reached the target at n={n}"))
    };
    let (c10, e10) = best(10)?;
    let (c100, e100) = best(100)?;
    Ok(Verdict {
        passed: c100 < c10,
        detail: format!("best mean total coords: n=100 {c100:.4e} (2^{e100}) vs n=10 {c10:.4e} (2^{e10})"),
    })
}

fn run_cli(config: &Path, out: &Path) -> Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_commsim"))
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()?;
    if !status.success() {
        return Err(anyhow!("commsim run exited with {status}"));
    }
    Ok(())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.retain(|p| p.extension().is_some_and(|x| x == "csv"));
    v.sort();
    Ok(v)
}

fn determinism() -> Result<Verdict> {
    let config = configs_dir().join("downlink_compressors.json");
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    run_cli(&config, a.path())?;
    run_cli(&config, b.path())?;
    let fa = csv_files(a.path())?;
    let fb = csv_files(b.path())?;
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    let mut passed = !fa.is_empty() && names(&fa) == names(&fb);
    let mut bytes = 0;
    for (x, y) in fa.iter().zip(&fb) {
        let (x, y) = (std::fs::read(x)?, std::fs::read(y)?);
        bytes += x.len();
        passed &= x == y;
    }
    Ok(Verdict {
        passed,
        detail: format!("{} CSV files, {bytes} bytes compared", fa.len()),
    })
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Result<Verdict>>)> = vec![
        ("1 compressor laws", Box::new(compressor_laws)),
        ("2 PermK exactness", Box::new(|| Ok(from_checks(verify::permk_exactness(2))))),
        ("3 GD equivalence", Box::new(|| Ok(from_checks(verify::gd_equivalence(3))))),
        ("4 constants", Box::new(|| Ok(from_checks(verify::constants(4))))),
        ("5 MARINA-P compressor ordering", Box::new(downlink_ordering)),
        ("6 M3 scaling", Box::new(m3_scaling)),
        ("7 worst-case chain", Box::new(chain)),
        ("8 gradient oracles", Box::new(|| Ok(from_checks(verify::gradient_checks(20, 8))))),
        ("9 descent inequality", Box::new(|| Ok(from_checks(verify::descent(100, 9))))),
        ("10 determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let v = run().unwrap_or_else(|e| Verdict {
            passed: false,
            detail: format!("error: {e:#}"),
        });
        if !v.passed {
            failed += 1;
        }
        println!("{} criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of 10 passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
