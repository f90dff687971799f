//! Iterative methods as single-step transitions over a [`RunState`], and a
//! runner that records traces.
//!
//! Cost charging convention: the step from `x^t` to `x^{t+1}` charges what
//! is transmitted during it, and those charges show up in record `t + 1`.
//! Methods that start from `g⁰ = ∇f(x⁰)` gathered from the workers charge a
//! dense uplink vector per worker to record 0.

use rand::Rng as _;

use crate::compressors::{Collection, Inputs, SparseMessage};
use crate::error::{param, Error, Result};
use crate::problems::Problem;
use crate::rng::RunStreams;
use crate::telemetry::{Coins, CostEvent, CostLedger, CostModel, Direction, Payload, TraceRecord};

/// `f > DIVERGENCE_FACTOR · max(|f(x⁰)|, 1)` aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e8;

/// Method and its parameters.
#[derive(Debug, Clone)]
pub enum AlgoConfig {
    Gd {
        gamma: f64,
    },
    /// Uplink-compressed gradient differences.
    Marina {
        gamma: f64,
        p: f64,
        uplink: Collection,
    },
    /// Downlink-compressed model differences, dense uplink gradients.
    MarinaP {
        gamma: f64,
        p: f64,
        downlink: Collection,
    },
    /// MARINA-P downlink with momentum shifts and MARINA-style uplink.
    M3 {
        gamma: f64,
        p_primal: f64,
        p_dual: f64,
        beta: f64,
        downlink: Collection,
        uplink: Collection,
        /// Keep only the aggregate estimator, not the per-worker `g_i`.
        lean: bool,
    },
    /// Error-feedback broadcast of `C(x^{t+1} − w^t)`; `downlink` has one
    /// member. Workers send dense gradients at `w` when `uplink` is `None`.
    Ef21P {
        gamma: f64,
        downlink: Collection,
        uplink: Option<Collection>,
    },
}

impl AlgoConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgoConfig::Gd { .. } => "gd",
            AlgoConfig::Marina { .. } => "marina",
            AlgoConfig::MarinaP { .. } => "marina_p",
            AlgoConfig::M3 { .. } => "m3",
            AlgoConfig::Ef21P { .. } => "ef21_p",
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            AlgoConfig::Gd { gamma }
            | AlgoConfig::Marina { gamma, .. }
            | AlgoConfig::MarinaP { gamma, .. }
            | AlgoConfig::M3 { gamma, .. }
            | AlgoConfig::Ef21P { gamma, .. } => *gamma,
        }
    }

    pub fn set_gamma(&mut self, value: f64) {
        match self {
            AlgoConfig::Gd { gamma }
            | AlgoConfig::Marina { gamma, .. }
            | AlgoConfig::MarinaP { gamma, .. }
            | AlgoConfig::M3 { gamma, .. }
            | AlgoConfig::Ef21P { gamma, .. } => *gamma = value,
        }
    }

    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        let gamma = self.gamma();
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(param("gamma", format!("must be positive and finite, got {gamma}")));
        }
        let prob = |name, p: f64| {
            if p > 0.0 && p <= 1.0 {
                Ok(())
            } else {
                Err(param(name, format!("must lie in (0, 1], got {p}")))
            }
        };
        let fits = |name, c: &Collection, members: usize, unbiased: bool| {
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: c.dim(),
                });
            }
            if c.workers() != members {
                return Err(param(name, format!("collection has {} members, need {members}", c.workers())));
            }
            if unbiased && !c.spec().is_unbiased() {
                return Err(param(name, "must be an unbiased compressor"));
            }
            Ok(())
        };
        match self {
            AlgoConfig::Gd { .. } => Ok(()),
            AlgoConfig::Marina { p, uplink, .. } => {
                prob("p", *p)?;
                fits("uplink", uplink, n, true)
            }
            AlgoConfig::MarinaP { p, downlink, .. } => {
                prob("p", *p)?;
                fits("downlink", downlink, n, true)
            }
            AlgoConfig::M3 {
                p_primal,
                p_dual,
                beta,
                downlink,
                uplink,
                ..
            } => {
                prob("p_P", *p_primal)?;
                prob("p_D", *p_dual)?;
                prob("beta", *beta)?;
                fits("downlink", downlink, n, true)?;
                fits("uplink", uplink, n, true)
            }
            AlgoConfig::Ef21P { downlink, uplink, .. } => {
                fits("downlink", downlink, 1, false)?;
                match uplink {
                    Some(u) => fits("uplink", u, n, true),
                    None => Ok(()),
                }
            }
        }
    }
}

/// Mutable state of one run.
///
/// `g` is the estimator the next step moves along. Per-worker vectors that a
/// method does not use stay empty. EF21-P keeps its single shift in `w[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub t: usize,
    pub x: Vec<f64>,
    /// `∇f(x^t)`.
    pub grad: Vec<f64>,
    pub g: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub w_bar: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub z_bar: Vec<f64>,
    pub g_i: Vec<Vec<f64>>,
    /// Last gradients each worker evaluated: `∇f_i(x^t)` for MARINA,
    /// `∇f_i(z_i^t)` for M3.
    pub local_grads: Vec<Vec<f64>>,
}

/// Stop once `‖∇f(x^t)‖² ≤ eps` or after `max_iters` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub eps: f64,
    pub max_iters: usize,
}

fn mean_into(vs: &[Vec<f64>], out: &mut [f64]) {
    let inv = 1.0 / vs.len() as f64;
    out.iter_mut().for_each(|o| *o = 0.0);
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o *= inv);
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Drives one method on one problem.
pub struct Runner<'p> {
    problem: &'p dyn Problem,
    config: AlgoConfig,
    state: RunState,
    streams: RunStreams,
    ledger: CostLedger,
    msgs: Vec<SparseMessage>,
    scratch: Vec<Vec<f64>>,
    delta: Vec<f64>,
    n: usize,
    d: usize,
}

impl<'p> Runner<'p> {
    pub fn new(
        problem: &'p dyn Problem,
        config: AlgoConfig,
        x0: Vec<f64>,
        seed: u64,
        model: CostModel,
        keep_events: bool,
    ) -> Result<Self> {
        let (n, d) = (problem.workers(), problem.dim());
        if x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        config.validate(d, n)?;
        model.validate()?;
        let grad = problem.grad(&x0);
        let mut runner = Self {
            problem,
            state: RunState {
                t: 0,
                x: x0,
                g: grad.clone(),
                grad,
                w: Vec::new(),
                w_bar: Vec::new(),
                z: Vec::new(),
                z_bar: Vec::new(),
                g_i: Vec::new(),
                local_grads: Vec::new(),
            },
            streams: RunStreams::new(seed, n),
            ledger: CostLedger::new(model, n, keep_events),
            msgs: vec![SparseMessage::empty(d); n],
            scratch: Vec::new(),
            delta: vec![0.0; d],
            n,
            d,
            config,
        };
        runner.init();
        Ok(runner)
    }

    fn init(&mut self) {
        let (n, d) = (self.n, self.d);
        let st = &mut self.state;
        let x = st.x.clone();
        match &self.config {
            AlgoConfig::Gd { .. } => {}
            AlgoConfig::Marina { .. } => {
                st.local_grads = (0..n).map(|i| self.problem.local_grad(i, &x)).collect();
                mean_into(&st.local_grads, &mut st.g);
                self.scratch = vec![vec![0.0; d]; n];
                self.ledger.charge_dense_all(0, Direction::W2s, d);
            }
            AlgoConfig::MarinaP { .. } => {
                st.w = vec![x.clone(); n];
                st.w_bar = x.clone();
                st.g_i = (0..n).map(|i| self.problem.local_grad(i, &x)).collect();
                mean_into(&st.g_i, &mut st.g);
            }
            AlgoConfig::M3 { lean, .. } => {
                st.w = vec![x.clone(); n];
                st.w_bar = x.clone();
                st.z = vec![x.clone(); n];
                st.z_bar = x.clone();
                st.local_grads = (0..n).map(|i| self.problem.local_grad(i, &x)).collect();
                mean_into(&st.local_grads, &mut st.g);
                if !lean {
                    st.g_i = st.local_grads.clone();
                }
                self.scratch = vec![vec![0.0; d]; n];
                self.ledger.charge_dense_all(0, Direction::W2s, d);
            }
            AlgoConfig::Ef21P { uplink, .. } => {
                st.w = vec![x.clone()];
                st.w_bar = x.clone();
                if let Some(up) = uplink {
                    self.scratch = (0..n).map(|i| self.problem.local_grad(i, &x)).collect();
                    up.compress_into(
                        Inputs::PerWorker(&self.scratch),
                        &mut self.streams.server,
                        &mut self.streams.uplink,
                        &mut self.msgs,
                    );
                    st.g.iter_mut().for_each(|v| *v = 0.0);
                    for (i, m) in self.msgs.iter().enumerate() {
                        m.add_scaled_to(1.0 / n as f64, &mut st.g);
                        self.ledger.charge(0, Direction::W2s, i, Payload::Sparse(m));
                    }
                } else {
                    self.ledger.charge_dense_all(0, Direction::W2s, d);
                }
            }
        }
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.config
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn take_events(&mut self) -> Option<Vec<CostEvent>> {
        self.ledger.take_events()
    }

    pub fn record(&self, coins: Coins) -> TraceRecord {
        let (s2w, w2s) = self.ledger.per_worker();
        TraceRecord {
            t: self.state.t,
            f: self.problem.value(&self.state.x),
            grad_norm_sq: norm_sq(&self.state.grad),
            s2w_cum: s2w,
            w2s_cum: w2s,
            coins,
        }
    }

    /// `x^{t+1} = x^t − γ g^t`; leaves `x^{t+1} − x^t` in `self.delta`.
    fn move_x(&mut self, gamma: f64) {
        for ((x, dl), g) in self.state.x.iter_mut().zip(self.delta.iter_mut()).zip(&self.state.g) {
            *dl = -gamma * g;
            *x += *dl;
        }
    }

    /// Updates the model shifts `w_i` with a shared coin of bias `p`.
    fn shift_models(&mut self, downlink: &Collection, p: f64) -> bool {
        let (n, t) = (self.n, self.state.t);
        let heads = self.streams.coins.random::<f64>() < p;
        let st = &mut self.state;
        if heads {
            for (i, w) in st.w.iter_mut().enumerate() {
                w.copy_from_slice(&st.x);
                self.ledger.charge(t, Direction::S2w, i, Payload::Dense(self.d));
            }
            st.w_bar.copy_from_slice(&st.x);
        } else {
            downlink.compress_into(
                Inputs::Shared(&self.delta),
                &mut self.streams.server,
                &mut self.streams.downlink,
                &mut self.msgs,
            );
            for (i, (w, m)) in st.w.iter_mut().zip(&self.msgs).enumerate() {
                m.add_scaled_to(1.0, w);
                m.add_scaled_to(1.0 / n as f64, &mut st.w_bar);
                self.ledger.charge(t, Direction::S2w, i, Payload::Sparse(m));
            }
        }
        heads
    }

    fn gd_step(&mut self, gamma: f64) -> Coins {
        let t = self.state.t;
        self.ledger.charge_dense_all(t, Direction::S2w, self.d);
        self.ledger.charge_dense_all(t, Direction::W2s, self.d);
        self.move_x(gamma);
        self.refresh_grad();
        self.state.g.copy_from_slice(&self.state.grad);
        Coins::default()
    }

    fn marina_step(&mut self, gamma: f64, p: f64, uplink: &Collection) -> Coins {
        let (n, d, t) = (self.n, self.d, self.state.t);
        self.move_x(gamma);
        self.ledger.charge_dense_all(t, Direction::S2w, d);
        let heads = self.streams.coins.random::<f64>() < p;
        let st = &mut self.state;
        for (i, s) in self.scratch.iter_mut().enumerate() {
            self.problem.local_grad_into(i, &st.x, s);
        }
        if heads {
            mean_into(&self.scratch, &mut st.g);
            self.ledger.charge_dense_all(t, Direction::W2s, d);
            std::mem::swap(&mut st.local_grads, &mut self.scratch);
        } else {
            // scratch ← ∇f_i(x^{t+1}) − ∇f_i(x^t), local_grads ← ∇f_i(x^{t+1})
            for (s, lg) in self.scratch.iter_mut().zip(st.local_grads.iter_mut()) {
                for (a, b) in s.iter_mut().zip(lg.iter_mut()) {
                    let new = *a;
                    *a = new - *b;
                    *b = new;
                }
            }
            uplink.compress_into(
                Inputs::PerWorker(&self.scratch),
                &mut self.streams.server,
                &mut self.streams.uplink,
                &mut self.msgs,
            );
            for (i, m) in self.msgs.iter().enumerate() {
                m.add_scaled_to(1.0 / n as f64, &mut st.g);
                self.ledger.charge(t, Direction::W2s, i, Payload::Sparse(m));
            }
        }
        self.refresh_grad();
        Coins {
            primal: Some(heads),
            dual: None,
        }
    }

    fn marina_p_step(&mut self, gamma: f64, p: f64, downlink: &Collection) -> Coins {
        let (n, t) = (self.n, self.state.t);
        // Workers sent ∇f_i(w_i^t), which make up g^t.
        self.ledger.charge_dense_all(t, Direction::W2s, self.d);
        self.move_x(gamma);
        let heads = self.shift_models(downlink, p);
        let st = &mut self.state;
        let inv_n = 1.0 / n as f64;
        let incremental = !heads
            && self.msgs.iter().enumerate().all(|(i, m)| {
                self.problem.add_local_grad_change(i, m, 1.0, &mut st.g_i[i])
                    && self.problem.add_local_grad_change(i, m, inv_n, &mut st.g)
            });
        if !incremental {
            for (i, (gi, w)) in st.g_i.iter_mut().zip(&st.w).enumerate() {
                self.problem.local_grad_into(i, w, gi);
            }
            mean_into(&st.g_i, &mut st.g);
        }
        self.refresh_grad();
        Coins {
            primal: Some(heads),
            dual: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn m3_step(
        &mut self,
        gamma: f64,
        p_primal: f64,
        p_dual: f64,
        beta: f64,
        downlink: &Collection,
        uplink: &Collection,
        lean: bool,
    ) -> Coins {
        let (n, d, t) = (self.n, self.d, self.state.t);
        self.move_x(gamma);
        let primal = self.shift_models(downlink, p_primal);
        let st = &mut self.state;
        for (z, w) in st.z.iter_mut().zip(&st.w) {
            for (zj, wj) in z.iter_mut().zip(w) {
                *zj = beta * wj + (1.0 - beta) * *zj;
            }
        }
        for (zj, wj) in st.z_bar.iter_mut().zip(&st.w_bar) {
            *zj = beta * wj + (1.0 - beta) * *zj;
        }
        let dual = self.streams.coins.random::<f64>() < p_dual;
        for (i, (s, z)) in self.scratch.iter_mut().zip(&st.z).enumerate() {
            self.problem.local_grad_into(i, z, s);
        }
        if dual {
            mean_into(&self.scratch, &mut st.g);
            if !lean {
                for (gi, s) in st.g_i.iter_mut().zip(&self.scratch) {
                    gi.copy_from_slice(s);
                }
            }
            self.ledger.charge_dense_all(t, Direction::W2s, d);
            std::mem::swap(&mut st.local_grads, &mut self.scratch);
        } else {
            for (s, lg) in self.scratch.iter_mut().zip(st.local_grads.iter_mut()) {
                for (a, b) in s.iter_mut().zip(lg.iter_mut()) {
                    let new = *a;
                    *a = new - *b;
                    *b = new;
                }
            }
            uplink.compress_into(
                Inputs::PerWorker(&self.scratch),
                &mut self.streams.server,
                &mut self.streams.uplink,
                &mut self.msgs,
            );
            for (i, m) in self.msgs.iter().enumerate() {
                if !lean {
                    m.add_scaled_to(1.0, &mut st.g_i[i]);
                }
                m.add_scaled_to(1.0 / n as f64, &mut st.g);
                self.ledger.charge(t, Direction::W2s, i, Payload::Sparse(m));
            }
        }
        self.refresh_grad();
        Coins {
            primal: Some(primal),
            dual: Some(dual),
        }
    }

    fn ef21p_step(&mut self, gamma: f64, downlink: &Collection, uplink: Option<&Collection>) -> Coins {
        let (n, d, t) = (self.n, self.d, self.state.t);
        self.move_x(gamma);
        let st = &mut self.state;
        for ((dl, x), w) in self.delta.iter_mut().zip(&st.x).zip(&st.w[0]) {
            *dl = x - w;
        }
        downlink.compress_into(
            Inputs::Shared(&self.delta),
            &mut self.streams.server,
            &mut self.streams.downlink[..1],
            &mut self.msgs[..1],
        );
        let m = &self.msgs[0];
        m.add_scaled_to(1.0, &mut st.w[0]);
        st.w_bar.copy_from_slice(&st.w[0]);
        for i in 0..n {
            self.ledger.charge(t, Direction::S2w, i, Payload::Sparse(m));
        }
        match uplink {
            None => {
                self.problem.grad_into(&st.w[0], &mut st.g);
                self.ledger.charge_dense_all(t, Direction::W2s, d);
            }
            Some(up) => {
                for (i, s) in self.scratch.iter_mut().enumerate() {
                    self.problem.local_grad_into(i, &st.w[0], s);
                }
                up.compress_into(
                    Inputs::PerWorker(&self.scratch),
                    &mut self.streams.server,
                    &mut self.streams.uplink,
                    &mut self.msgs,
                );
                st.g.iter_mut().for_each(|v| *v = 0.0);
                for (i, m) in self.msgs.iter().enumerate() {
                    m.add_scaled_to(1.0 / n as f64, &mut st.g);
                    self.ledger.charge(t, Direction::W2s, i, Payload::Sparse(m));
                }
            }
        }
        self.refresh_grad();
        Coins::default()
    }

    fn refresh_grad(&mut self) {
        self.problem.grad_into(&self.state.x, &mut self.state.grad);
    }

    /// One iteration; returns the coins it tossed.
    pub fn step(&mut self) -> Coins {
        // The config is moved out so the step can borrow `self` mutably.
        let config = std::mem::replace(&mut self.config, AlgoConfig::Gd { gamma: 1.0 });
        let coins = match &config {
            AlgoConfig::Gd { gamma } => self.gd_step(*gamma),
            AlgoConfig::Marina { gamma, p, uplink } => self.marina_step(*gamma, *p, uplink),
            AlgoConfig::MarinaP { gamma, p, downlink } => self.marina_p_step(*gamma, *p, downlink),
            AlgoConfig::M3 {
                gamma,
                p_primal,
                p_dual,
                beta,
                downlink,
                uplink,
                lean,
            } => self.m3_step(*gamma, *p_primal, *p_dual, *beta, downlink, uplink, *lean),
            AlgoConfig::Ef21P {
                gamma,
                downlink,
                uplink,
            } => self.ef21p_step(*gamma, downlink, uplink.as_ref()),
        };
        self.config = config;
        self.state.t += 1;
        coins
    }

    /// Runs until `stop` and returns the trace, starting with record 0.
    pub fn run(&mut self, stop: StopRule) -> Result<Vec<TraceRecord>> {
        self.run_thinned(stop, 1)
    }

    /// Like [`Runner::run`] but keeps only records with `t % every == 0`,
    /// plus the final one.
    pub fn run_thinned(&mut self, stop: StopRule, every: usize) -> Result<Vec<TraceRecord>> {
        if !(stop.eps > 0.0) {
            return Err(param("eps", "must be positive"));
        }
        if every == 0 {
            return Err(param("every", "must be positive"));
        }
        let first = self.record(Coins::default());
        let threshold = DIVERGENCE_FACTOR * first.f.abs().max(1.0);
        let mut trace = vec![first];
        let mut last = first;
        while last.grad_norm_sq > stop.eps && last.t < stop.max_iters {
            let coins = self.step();
            last = self.record(coins);
            if !(last.f <= threshold) || !last.grad_norm_sq.is_finite() {
                return Err(Error::Diverged {
                    iteration: last.t,
                    value: last.f,
                    threshold,
                });
            }
            if last.t % every == 0 {
                trace.push(last);
            }
        }
        if trace.last().map(|r| r.t) != Some(last.t) {
            trace.push(last);
        }
        Ok(trace)
    }
}

/// Deterministic run of `config` from `x0` with streams derived from `seed`.
pub fn run_experiment(
    problem: &dyn Problem,
    config: AlgoConfig,
    x0: Vec<f64>,
    stop: StopRule,
    seed: u64,
    model: CostModel,
) -> Result<Vec<TraceRecord>> {
    Runner::new(problem, config, x0, seed, model, false)?.run(stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressors::{CollectionMode, CompressorSpec};
    use crate::problems::{generate_het_quadratic, HetQuadraticParams, QuadBlock, QuadraticEnsemble, SymMatrix};
    use crate::rng::{stream, Role};

    fn quad(n: usize, d: usize, sigma: f64) -> QuadraticEnsemble {
        let p = HetQuadraticParams {
            n,
            d,
            v: 1.0,
            sigma,
            v0: Some(0.5),
            base: Default::default(),
        };
        generate_het_quadratic(&p, &mut stream(3, Role::Problem, 0)).unwrap()
    }

    fn coll(spec: CompressorSpec, n: usize, d: usize) -> Collection {
        Collection::new(spec, n, d).unwrap()
    }

    fn x0(d: usize) -> Vec<f64> {
        (0..d).map(|i| (i as f64 * 0.37).sin()).collect()
    }

    #[test]
    fn gd_one_dimensional() {
        let ens = QuadraticEnsemble::new(vec![QuadBlock::new(SymMatrix::Identity { dim: 1 }, vec![0.0], 0.0)]).unwrap();
        let mut r = Runner::new(&ens, AlgoConfig::Gd { gamma: 1.0 }, vec![5.0], 0, CostModel::default(), false).unwrap();
        r.step();
        assert_eq!(r.state().x, vec![0.0]);
        r.step();
        assert_eq!(r.state().x, vec![0.0]);
    }

    #[test]
    fn p_one_reduces_to_gd() {
        let (n, d) = (4, 12);
        let ens = quad(n, d, 0.2);
        let gamma = 1.0;
        let mut gd = Runner::new(&ens, AlgoConfig::Gd { gamma }, x0(d), 0, CostModel::default(), false).unwrap();
        let configs = vec![
            AlgoConfig::MarinaP {
                gamma,
                p: 1.0,
                downlink: coll(CompressorSpec::RandK { k: 2 }, n, d),
            },
            AlgoConfig::Marina {
                gamma,
                p: 1.0,
                uplink: coll(CompressorSpec::RandK { k: 2 }, n, d),
            },
            AlgoConfig::Marina {
                gamma,
                p: 0.3,
                uplink: coll(CompressorSpec::RandK { k: d }, n, d),
            },
            AlgoConfig::M3 {
                gamma,
                p_primal: 1.0,
                p_dual: 1.0,
                beta: 1.0,
                downlink: coll(CompressorSpec::PermK, n, d),
                uplink: coll(CompressorSpec::RandK { k: 3 }, n, d),
                lean: false,
            },
            AlgoConfig::Ef21P {
                gamma,
                downlink: coll(CompressorSpec::TopK { k: d }, 1, d),
                uplink: None,
            },
        ];
        let mut others: Vec<_> = configs
            .into_iter()
            .map(|c| Runner::new(&ens, c, x0(d), 9, CostModel::default(), false).unwrap())
            .collect();
        for _ in 0..30 {
            gd.step();
            for o in &mut others {
                o.step();
                for (a, b) in o.state().x.iter().zip(&gd.state().x) {
                    assert!((a - b).abs() < 1e-12, "{}", o.config().name());
                }
            }
        }
    }

    #[test]
    fn aggregates_match_means() {
        let (n, d) = (5, 10);
        let ens = quad(n, d, 0.3);
        let cfg = AlgoConfig::M3 {
            gamma: 0.05,
            p_primal: 0.3,
            p_dual: 0.4,
            beta: 0.5,
            downlink: coll(CompressorSpec::PermK, n, d),
            uplink: coll(CompressorSpec::RandK { k: 2 }, n, d),
            lean: false,
        };
        let mut r = Runner::new(&ens, cfg, x0(d), 1, CostModel::default(), false).unwrap();
        let mut mean = vec![0.0; d];
        for _ in 0..100 {
            r.step();
            let st = r.state();
            for (field, agg) in [(&st.g_i, &st.g), (&st.w, &st.w_bar), (&st.z, &st.z_bar)] {
                mean_into(field, &mut mean);
                for (a, b) in mean.iter().zip(agg.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lean_m3_matches_full() {
        let (n, d) = (4, 8);
        let ens = quad(n, d, 0.3);
        let make = |lean| AlgoConfig::M3 {
            gamma: 0.05,
            p_primal: 0.5,
            p_dual: 0.5,
            beta: 0.5,
            downlink: coll(CompressorSpec::PermK, n, d),
            uplink: coll(CompressorSpec::RandK { k: 2 }, n, d),
            lean,
        };
        let a = run_experiment(&ens, make(false), x0(d), StopRule { eps: 1e-30, max_iters: 50 }, 4, CostModel::default()).unwrap();
        let b = run_experiment(&ens, make(true), x0(d), StopRule { eps: 1e-30, max_iters: 50 }, 4, CostModel::default()).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert!((ra.f - rb.f).abs() < 1e-12);
            assert_eq!(ra.s2w_cum, rb.s2w_cum);
        }
    }

    #[test]
    fn ef21p_shift_contracts() {
        let (n, d) = (3, 20);
        let ens = quad(n, d, 0.3);
        let k = 4;
        let cfg = AlgoConfig::Ef21P {
            gamma: 0.5,
            downlink: coll(CompressorSpec::TopK { k }, 1, d),
            uplink: None,
        };
        let mut r = Runner::new(&ens, cfg, x0(d), 2, CostModel::default(), false).unwrap();
        for _ in 0..50 {
            let w_before = r.state().w[0].clone();
            r.step();
            let st = r.state();
            let before: f64 = w_before.iter().zip(&st.x).map(|(a, b)| (a - b).powi(2)).sum();
            let after: f64 = st.w[0].iter().zip(&st.x).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(after <= (1.0 - k as f64 / d as f64) * before + 1e-15);
        }
    }

    #[test]
    fn divergence_guard_fires() {
        let ens = quad(2, 6, 0.0);
        let err = run_experiment(
            &ens,
            AlgoConfig::Gd { gamma: 100.0 },
            x0(6),
            StopRule { eps: 1e-12, max_iters: 10_000 },
            0,
            CostModel::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn config_validation() {
        let ens = quad(4, 8, 0.1);
        let bad = [
            AlgoConfig::Gd { gamma: 0.0 },
            AlgoConfig::MarinaP {
                gamma: 1.0,
                p: 0.0,
                downlink: coll(CompressorSpec::PermK, 4, 8),
            },
            AlgoConfig::MarinaP {
                gamma: 1.0,
                p: 0.5,
                downlink: coll(CompressorSpec::PermK, 2, 8),
            },
            AlgoConfig::MarinaP {
                gamma: 1.0,
                p: 0.5,
                downlink: coll(CompressorSpec::TopK { k: 2 }, 4, 8),
            },
            AlgoConfig::Ef21P {
                gamma: 1.0,
                downlink: coll(CompressorSpec::TopK { k: 2 }, 4, 8),
                uplink: None,
            },
        ];
        for cfg in bad {
            assert!(Runner::new(&ens, cfg, vec![0.0; 8], 0, CostModel::default(), false).is_err());
        }
        let same = Collection::with_mode(CompressorSpec::SameRandK { k: 2 }, CollectionMode::Same, 4, 8).unwrap();
        let ok = AlgoConfig::MarinaP {
            gamma: 1.0,
            p: 0.5,
            downlink: same,
        };
        assert!(Runner::new(&ens, ok, vec![0.0; 8], 0, CostModel::default(), false).is_ok());
    }
}
