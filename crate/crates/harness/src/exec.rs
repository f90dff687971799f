//! Running repeats and sweeps, and writing their outputs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use commsim_core::algorithms::{Runner, StopRule};
use commsim_core::telemetry::{average_traces, coords_to_target, trace_to_csv, Target, TraceRecord};
use commsim_core::Error as CoreError;

use crate::config::{AlgorithmConfig, ExperimentConfig, SelectBy};
use crate::problem::{build_algorithm, build_problem, initial_point, save_ensemble, BuiltProblem};

/// Environment variable holding the worker-thread count (0 or unset: all cores).
pub const THREADS_ENV: &str = "COMMSIM_THREADS";

pub const SUMMARY_HEADER: &str = "algorithm,n,multiplier,seed,gamma,status,iterations,s2w,w2s,total";
pub const SWEEP_HEADER: &str = "algorithm,n,exponent,multiplier,reached,seeds,mean_s2w,mean_w2s,mean_total,selected";

#[derive(Debug, Clone)]
pub enum Outcome {
    Finished { trace: Vec<TraceRecord>, target: Target },
    Diverged { iteration: usize, value: f64 },
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub gamma: f64,
    pub outcome: Outcome,
}

impl SeedRun {
    pub fn target(&self) -> Option<&Target> {
        match &self.outcome {
            Outcome::Finished { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        match &self.outcome {
            Outcome::Finished { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// All repeats of one (algorithm, n, multiplier) combination.
#[derive(Debug, Clone)]
pub struct Point {
    pub label: String,
    pub n: usize,
    pub exponent: Option<i32>,
    pub multiplier: f64,
    pub runs: Vec<SeedRun>,
}

fn cost(t: &Target, by: SelectBy) -> f64 {
    match by {
        SelectBy::S2w => t.s2w(),
        SelectBy::W2s => t.w2s(),
        SelectBy::Total => t.total(),
    }
}

impl Point {
    /// Every repeat finished without diverging.
    pub fn completed(&self) -> bool {
        self.runs.iter().all(|r| matches!(r.outcome, Outcome::Finished { .. }))
    }

    pub fn reached(&self) -> usize {
        self.runs.iter().filter(|r| r.target().is_some_and(Target::reached)).count()
    }

    /// Mean cost to target, if every repeat reached it.
    pub fn score(&self, by: SelectBy) -> Option<f64> {
        if self.reached() != self.runs.len() {
            return None;
        }
        let sum: f64 = self.runs.iter().filter_map(|r| r.target()).map(|t| cost(t, by)).sum();
        Some(sum / self.runs.len() as f64)
    }

    /// Median cost over repeats that finished; not-reached runs contribute
    /// their spent cost.
    pub fn median(&self, by: SelectBy) -> Option<f64> {
        let mut v: Vec<f64> = self.runs.iter().filter_map(|r| r.target()).map(|t| cost(t, by)).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }

    /// Pointwise mean of the finished traces. Thinned traces are cut back to
    /// the shared record grid first.
    pub fn averaged(&self, every: usize) -> Vec<TraceRecord> {
        let traces: Vec<Vec<TraceRecord>> = self
            .runs
            .iter()
            .filter_map(|r| r.trace())
            .map(|tr| {
                let mut tr = tr.to_vec();
                if every > 1 && tr.last().is_some_and(|r| r.t % every != 0) {
                    tr.pop();
                }
                tr
            })
            .collect();
        average_traces(&traces)
    }
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn run_seed(cfg: &ExperimentConfig, alg: &AlgorithmConfig, problem: &BuiltProblem, multiplier: f64, seed: u64) -> Result<SeedRun> {
    let p = problem.as_dyn();
    let (d, n) = (p.dim(), p.workers());
    let constants = problem.constants(seed)?;
    let algo = build_algorithm(alg, &cfg.params.overrides(), multiplier, &constants, d, n)?;
    let gamma = algo.gamma();
    let x0 = initial_point(cfg.x0, d, seed)?;
    let stop = StopRule {
        eps: cfg.stop.eps,
        max_iters: cfg.stop.max_iters,
    };
    let outcome = match Runner::new(p, algo, x0, seed, cfg.cost_model, false)?.run_thinned(stop, cfg.output.trace_every) {
        Ok(trace) => {
            let target = coords_to_target(&trace, cfg.stop.eps)?;
            Outcome::Finished { trace, target }
        }
        Err(CoreError::Diverged { iteration, value, .. }) => Outcome::Diverged { iteration, value },
        Err(e) => Outcome::Failed(e.to_string()),
    };
    Ok(SeedRun { seed, gamma, outcome })
}

/// Config with the problem's worker count replaced.
pub fn with_workers(cfg: &ExperimentConfig, n: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = cfg.clone();
    if let Some(n) = n {
        cfg.problem.set_workers(n)?;
    }
    Ok(cfg)
}

pub fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.repeats as u64).map(|r| cfg.seed.wrapping_add(r)).collect()
}

/// Runs every repeat of one point. Divergence is an outcome; invalid
/// configurations are errors.
pub fn run_point(
    cfg: &ExperimentConfig,
    alg: &AlgorithmConfig,
    n: Option<usize>,
    exponent: Option<i32>,
    pool: &rayon::ThreadPool,
) -> Result<Point> {
    let cfg = with_workers(cfg, n)?;
    let multiplier = cfg.gamma_multiplier * exponent.map_or(1.0, |e| 2f64.powi(e));
    let runs = pool.install(|| {
        seeds(&cfg)
            .par_iter()
            .map(|&seed| {
                let problem = build_problem(&cfg.problem, seed)?;
                run_seed(&cfg, alg, &problem, multiplier, seed)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let n = match n {
        Some(n) => n,
        None => match cfg.problem.workers() {
            Some(n) => n,
            None => build_problem(&cfg.problem, cfg.seed)?.as_dyn().workers(),
        },
    };
    Ok(Point {
        label: alg.label(),
        n,
        exponent,
        multiplier,
        runs,
    })
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn summary_rows(point: &Point, out: &mut String) {
    for r in &point.runs {
        let head = format!("{},{},{},{},{}", point.label, point.n, fmt_f(point.multiplier), r.seed, fmt_f(r.gamma));
        let _ = match (&r.outcome, r.target()) {
            (Outcome::Finished { trace, .. }, Some(t)) => {
                let status = if t.reached() { "reached" } else { "not_reached" };
                let iters = trace.last().map_or(0, |x| x.t);
                writeln!(out, "{head},{status},{iters},{},{},{}", fmt_f(t.s2w()), fmt_f(t.w2s()), fmt_f(t.total()))
            }
            (Outcome::Diverged { iteration, .. }, _) => writeln!(out, "{head},diverged,{iteration},,,"),
            _ => writeln!(out, "{head},failed,,,,"),
        };
    }
}

fn safe_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn save_problems(cfg: &ExperimentConfig, dir: &Path, prefix: &str) -> Result<()> {
    for seed in seeds(cfg) {
        if let BuiltProblem::Quadratic(q) = build_problem(&cfg.problem, seed)? {
            save_ensemble(&q, &dir.join(format!("{prefix}problem_seed{seed}.json")))?;
        }
    }
    Ok(())
}

/// Result of `commsim run`.
#[derive(Debug)]
pub struct RunReport {
    pub point: Point,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.point.completed()
    }
}

/// Runs the configured algorithm; writes `trace_seed<s>.csv`,
/// `trace_avg.csv` and `summary.csv` into the output directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let pool = thread_pool()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let point = run_point(cfg, &cfg.algorithm, None, None, &pool)?;
    for r in &point.runs {
        if let Some(trace) = r.trace() {
            write(dir, &format!("trace_seed{}.csv", r.seed), &trace_to_csv(trace))?;
        }
    }
    write(dir, "trace_avg.csv", &trace_to_csv(&point.averaged(cfg.output.trace_every)))?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    summary_rows(&point, &mut summary);
    write(dir, "summary.csv", &summary)?;
    if cfg.output.save_problem {
        save_problems(cfg, dir, "")?;
    }
    Ok(RunReport { point })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    GammaMultiplier,
    Algorithm,
}

impl std::str::FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "n" => Axis::N,
            "gamma_multiplier" | "gamma" => Axis::GammaMultiplier,
            "algorithm" => Axis::Algorithm,
            other => bail!("unknown sweep axis `{other}` (expected n, gamma_multiplier, algorithm)"),
        })
    }
}

/// Outcome of one (algorithm, n) cell of a sweep.
#[derive(Debug)]
pub struct Cell {
    /// The winning multiplier's point, or the last one tried when no
    /// multiplier reached the target on every repeat.
    pub chosen: Point,
    pub selected: bool,
    /// `(multiplier, mean cost if every repeat reached the target)`.
    pub tried: Vec<(f64, Option<f64>)>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub cells: Vec<Cell>,
}

impl SweepReport {
    pub fn ok(&self) -> bool {
        self.cells.iter().all(|c| c.chosen.completed())
    }

    pub fn chosen(&self, label: &str, n: usize) -> Option<&Point> {
        self.cells
            .iter()
            .find(|c| c.chosen.label == label && c.chosen.n == n)
            .map(|c| &c.chosen)
    }
}

/// Grid over the chosen axes. Along the multiplier axis the point with the
/// least mean cost to target wins (ties go to the smaller multiplier).
pub fn cmd_sweep(cfg: &ExperimentConfig, axes: &[Axis]) -> Result<SweepReport> {
    let pool = thread_pool()?;
    let sweep = cfg.sweep.clone().unwrap_or(crate::config::SweepConfig {
        n: None,
        algorithms: None,
        gamma_exponents: crate::config::default_exponents(),
        select_by: SelectBy::default(),
    });
    let algorithms = if axes.contains(&Axis::Algorithm) {
        match &sweep.algorithms {
            Some(a) => a.clone(),
            None => bail!("sweep over algorithm needs `sweep.algorithms`"),
        }
    } else {
        vec![cfg.algorithm.clone()]
    };
    let ns: Vec<Option<usize>> = if axes.contains(&Axis::N) {
        match &sweep.n {
            Some(ns) => ns.iter().map(|&n| Some(n)).collect(),
            None => bail!("sweep over n needs `sweep.n`"),
        }
    } else {
        vec![None]
    };
    let exponents: Vec<Option<i32>> = if axes.contains(&Axis::GammaMultiplier) {
        let mut e = sweep.gamma_exponents.clone();
        e.sort_unstable();
        e.dedup();
        e.into_iter().map(Some).collect()
    } else {
        vec![None]
    };

    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut table = format!("{SWEEP_HEADER}\n");
    let mut cells = Vec::new();
    for &n in &ns {
        for alg in &algorithms {
            let mut tried = Vec::new();
            let mut best: Option<(f64, Point)> = None;
            let mut last = None;
            for &e in &exponents {
                let point = run_point(cfg, alg, n, e, &pool)?;
                let score = point.score(sweep.select_by);
                eprintln!(
                    "{} n={} multiplier={:e}: {}/{} reached{}",
                    point.label,
                    point.n,
                    point.multiplier,
                    point.reached(),
                    point.runs.len(),
                    score.map_or(String::new(), |s| format!(", mean cost {s:e}"))
                );
                summary_rows(&point, &mut summary);
                tried.push((point.multiplier, score));
                let means = mean_costs(&point);
                let cols = match means {
                    Some((s, w, t)) => format!("{},{},{}", fmt_f(s), fmt_f(w), fmt_f(t)),
                    None => ",,".to_string(),
                };
                let _ = writeln!(
                    table,
                    "{},{},{},{},{},{},{cols},",
                    point.label,
                    point.n,
                    e.map_or(String::new(), |e| e.to_string()),
                    fmt_f(point.multiplier),
                    point.reached(),
                    point.runs.len(),
                );
                match score {
                    Some(s) if best.as_ref().is_none_or(|(b, _)| s < *b) => best = Some((s, point)),
                    _ => last = Some(point),
                }
            }
            let (chosen, selected) = match best {
                Some((_, p)) => (p, true),
                None => (last.expect("at least one exponent"), false),
            };
            if selected {
                mark_selected(&mut table, &chosen);
            }
            let stem = format!("{}_n{}", safe_name(&chosen.label), chosen.n);
            write(dir, &format!("{stem}.csv"), &trace_to_csv(&chosen.averaged(cfg.output.trace_every)))?;
            for r in &chosen.runs {
                if let Some(trace) = r.trace() {
                    write(dir, &format!("{stem}_seed{}.csv", r.seed), &trace_to_csv(trace))?;
                }
            }
            if cfg.output.save_problem {
                save_problems(&with_workers(cfg, n)?, dir, &format!("{stem}_"))?;
            }
            cells.push(Cell { chosen, selected, tried });
        }
    }
    write(dir, "summary.csv", &summary)?;
    write(dir, "sweep.csv", &table)?;
    Ok(SweepReport { cells })
}

fn mean_costs(point: &Point) -> Option<(f64, f64, f64)> {
    let targets: Vec<&Target> = point.runs.iter().filter_map(|r| r.target()).collect();
    if targets.len() != point.runs.len() || targets.iter().any(|t| !t.reached()) {
        return None;
    }
    let k = targets.len() as f64;
    Some((
        targets.iter().map(|t| t.s2w()).sum::<f64>() / k,
        targets.iter().map(|t| t.w2s()).sum::<f64>() / k,
        targets.iter().map(|t| t.total()).sum::<f64>() / k,
    ))
}

/// Sets the `selected` column of the winning row of the cell just written.
fn mark_selected(table: &mut String, best: &Point) {
    let key = format!("{},{},", best.label, best.n);
    let mult = fmt_f(best.multiplier);
    let mut out = String::with_capacity(table.len() + 8);
    for line in table.lines() {
        out.push_str(line);
        if line.starts_with(&key) && line.split(',').nth(3) == Some(mult.as_str()) && line.ends_with(',') {
            out.push_str("yes");
        }
        out.push('\n');
    }
    *table = out;
}
