//! Communication cost accounting and per-iteration traces.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::compressors::{Encoding, SparseMessage};
use crate::error::{param, Result};

pub const CSV_HEADER: &str = "t,f,grad_norm_sq,s2w_cum,w2s_cum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostUnit {
    #[default]
    Coordinates,
    Bits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub unit: CostUnit,
    /// Fraction of a float's bits used by a natural-compressed coordinate
    /// (sign and exponent: 9 of 32).
    pub natural_weight: f64,
    pub full_float_bits: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            unit: CostUnit::Coordinates,
            natural_weight: 9.0 / 32.0,
            full_float_bits: 32,
        }
    }
}

impl CostModel {
    pub fn bits() -> Self {
        Self {
            unit: CostUnit::Bits,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.natural_weight > 0.0 && self.natural_weight.is_finite()) {
            return Err(param("natural_weight", "must be positive"));
        }
        if self.full_float_bits == 0 {
            return Err(param("full_float_bits", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Server to worker (downlink).
    S2w,
    /// Worker to server (uplink).
    W2s,
}

/// What travels over a link.
#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    /// An uncompressed vector of the given length.
    Dense(usize),
    Sparse(&'a SparseMessage),
}

/// Cost of one payload under `model`.
pub fn charge(payload: Payload<'_>, model: &CostModel) -> f64 {
    let (coords, natural) = match payload {
        Payload::Dense(d) => (d as f64, false),
        Payload::Sparse(m) => (m.cost, m.encoding == Encoding::Natural),
    };
    match model.unit {
        CostUnit::Coordinates => coords,
        CostUnit::Bits => {
            let w = if natural { model.natural_weight } else { 1.0 };
            coords * w * f64::from(model.full_float_bits)
        }
    }
}

/// One charged transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEvent {
    /// Iteration whose step emitted the event (the resulting record is `t + 1`,
    /// initialization events use `t = 0` and land in record 0).
    pub t: usize,
    pub direction: Direction,
    pub worker: usize,
    pub cost: f64,
}

/// Running totals of charged costs, optionally keeping every event.
#[derive(Debug, Clone)]
pub struct CostLedger {
    model: CostModel,
    workers: usize,
    s2w: f64,
    w2s: f64,
    events: Option<Vec<CostEvent>>,
}

impl CostLedger {
    pub fn new(model: CostModel, workers: usize, keep_events: bool) -> Self {
        Self {
            model,
            workers,
            s2w: 0.0,
            w2s: 0.0,
            events: keep_events.then(Vec::new),
        }
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn charge(&mut self, t: usize, direction: Direction, worker: usize, payload: Payload<'_>) {
        let cost = charge(payload, &self.model);
        match direction {
            Direction::S2w => self.s2w += cost,
            Direction::W2s => self.w2s += cost,
        }
        if let Some(ev) = self.events.as_mut() {
            ev.push(CostEvent {
                t,
                direction,
                worker,
                cost,
            });
        }
    }

    /// Every worker sends or receives a dense vector of length `d`.
    pub fn charge_dense_all(&mut self, t: usize, direction: Direction, d: usize) {
        for i in 0..self.workers {
            self.charge(t, direction, i, Payload::Dense(d));
        }
    }

    /// Cumulative `(s2w, w2s)` per worker.
    pub fn per_worker(&self) -> (f64, f64) {
        let n = self.workers as f64;
        (self.s2w / n, self.w2s / n)
    }

    pub fn totals(&self) -> (f64, f64) {
        (self.s2w, self.w2s)
    }

    pub fn events(&self) -> Option<&[CostEvent]> {
        self.events.as_deref()
    }

    pub fn take_events(&mut self) -> Option<Vec<CostEvent>> {
        self.events.take()
    }
}

/// Shared coin outcomes of the step that produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Coins {
    pub primal: Option<bool>,
    pub dual: Option<bool>,
}

/// State of a run after `t` iterations. Costs are cumulative per worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub f: f64,
    pub grad_norm_sq: f64,
    pub s2w_cum: f64,
    pub w2s_cum: f64,
    pub coins: Coins,
}

impl TraceRecord {
    pub fn total_cum(&self) -> f64 {
        self.s2w_cum + self.w2s_cum
    }
}

/// Cost to reach `‖∇f‖² ≤ eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Target {
    Reached { t: usize, s2w: f64, w2s: f64, total: f64 },
    /// Costs spent by the end of the trace, a lower bound on the cost to target.
    NotReached { s2w: f64, w2s: f64, total: f64 },
}

impl Target {
    pub fn reached(&self) -> bool {
        matches!(self, Target::Reached { .. })
    }

    pub fn s2w(&self) -> f64 {
        match self {
            Target::Reached { s2w, .. } | Target::NotReached { s2w, .. } => *s2w,
        }
    }

    pub fn w2s(&self) -> f64 {
        match self {
            Target::Reached { w2s, .. } | Target::NotReached { w2s, .. } => *w2s,
        }
    }

    pub fn total(&self) -> f64 {
        match self {
            Target::Reached { total, .. } | Target::NotReached { total, .. } => *total,
        }
    }
}

/// Costs at the first record with `grad_norm_sq ≤ eps`.
pub fn coords_to_target(trace: &[TraceRecord], eps: f64) -> Result<Target> {
    if !(eps > 0.0) {
        return Err(param("eps", "must be positive"));
    }
    if let Some(r) = trace.iter().find(|r| r.grad_norm_sq <= eps) {
        return Ok(Target::Reached {
            t: r.t,
            s2w: r.s2w_cum,
            w2s: r.w2s_cum,
            total: r.total_cum(),
        });
    }
    let (s2w, w2s) = trace.last().map_or((0.0, 0.0), |r| (r.s2w_cum, r.w2s_cum));
    Ok(Target::NotReached {
        s2w,
        w2s,
        total: s2w + w2s,
    })
}

/// Smallest objective value seen up to each record; a stand-in for `f*`.
pub fn running_min(trace: &[TraceRecord]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    trace
        .iter()
        .map(|r| {
            best = best.min(r.f);
            best
        })
        .collect()
}

fn push_row(out: &mut String, t: usize, f: f64, g: f64, s: f64, w: f64) {
    // `{:.16e}` prints 17 significant digits, enough to round-trip an f64.
    let _ = writeln!(out, "{t},{f:.16e},{g:.16e},{s:.16e},{w:.16e}");
}

pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(96 * (trace.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in trace {
        push_row(&mut out, r.t, r.f, r.grad_norm_sq, r.s2w_cum, r.w2s_cum);
    }
    out
}

/// Pointwise mean of several traces, truncated to the shortest one.
pub fn average_traces(traces: &[Vec<TraceRecord>]) -> Vec<TraceRecord> {
    let Some(len) = traces.iter().map(Vec::len).min() else {
        return Vec::new();
    };
    let k = traces.len() as f64;
    (0..len)
        .map(|t| {
            let mut acc = TraceRecord {
                t: traces[0][t].t,
                f: 0.0,
                grad_norm_sq: 0.0,
                s2w_cum: 0.0,
                w2s_cum: 0.0,
                coins: Coins::default(),
            };
            for tr in traces {
                let r = &tr[t];
                acc.f += r.f;
                acc.grad_norm_sq += r.grad_norm_sq;
                acc.s2w_cum += r.s2w_cum;
                acc.w2s_cum += r.w2s_cum;
            }
            acc.f /= k;
            acc.grad_norm_sq /= k;
            acc.s2w_cum /= k;
            acc.w2s_cum /= k;
            acc
        })
        .collect()
}

/// Parse a CSV produced by [`trace_to_csv`]. Coins are not stored in CSV.
pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(param("csv", "missing or unexpected header"));
    }
    lines
        .enumerate()
        .map(|(row, line)| {
            let bad = || param("csv", format!("malformed row {}", row + 1));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(TraceRecord {
                t: cols[0].parse().map_err(|_| bad())?,
                f: num(cols[1])?,
                grad_norm_sq: num(cols[2])?,
                s2w_cum: num(cols[3])?,
                w2s_cum: num(cols[4])?,
                coins: Coins::default(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, g: f64, s: f64, w: f64) -> TraceRecord {
        TraceRecord {
            t,
            f: g,
            grad_norm_sq: g,
            s2w_cum: s,
            w2s_cum: w,
            coins: Coins::default(),
        }
    }

    #[test]
    fn charge_examples() {
        let coords = CostModel::default();
        assert_eq!(charge(Payload::Dense(300), &coords), 300.0);
        let mut m = SparseMessage::empty(300);
        m.indices = vec![1, 2, 3];
        m.values = vec![1.0, 2.0, 4.0];
        m.cost = 3.0;
        assert_eq!(charge(Payload::Sparse(&m), &coords), 3.0);
        m.encoding = Encoding::Natural;
        assert_eq!(charge(Payload::Sparse(&m), &coords), 3.0);
        assert_eq!(charge(Payload::Sparse(&m), &CostModel::bits()), 27.0);
        assert_eq!(charge(Payload::Dense(2), &CostModel::bits()), 64.0);
    }

    #[test]
    fn target_examples() {
        let tr: Vec<_> = (0..10).map(|t| rec(t, 10.0 - t as f64, 3.0 * t as f64, t as f64)).collect();
        assert_eq!(
            coords_to_target(&tr, 5.0).unwrap(),
            Target::Reached {
                t: 5,
                s2w: 15.0,
                w2s: 5.0,
                total: 20.0
            }
        );
        assert_eq!(coords_to_target(&tr, 100.0).unwrap().total(), 0.0);
        let miss = coords_to_target(&tr, 0.5).unwrap();
        assert!(!miss.reached());
        assert_eq!(miss.s2w(), 27.0);
        assert!(coords_to_target(&tr, 0.0).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let tr = vec![rec(0, 1.0 / 3.0, 0.0, 0.0), rec(1, std::f64::consts::PI * 1e-9, 7.0, 300.0)];
        let csv = trace_to_csv(&tr);
        assert!(csv.starts_with("t,f,grad_norm_sq,s2w_cum,w2s_cum\n0,3.3333333333333331e-1,"));
        assert_eq!(trace_from_csv(&csv).unwrap(), tr);
    }

    #[test]
    fn averaging_truncates_and_preserves_constants() {
        let a: Vec<_> = (0..5).map(|t| rec(t, 2.0, 1.0, 1.0)).collect();
        let b: Vec<_> = (0..3).map(|t| rec(t, 2.0, 1.0, 1.0)).collect();
        let avg = average_traces(&[a, b]);
        assert_eq!(avg.len(), 3);
        assert!(avg.iter().all(|r| r.f == 2.0 && r.s2w_cum == 1.0));
    }

    #[test]
    fn ledger_keeps_events() {
        let mut l = CostLedger::new(CostModel::default(), 2, true);
        l.charge_dense_all(0, Direction::W2s, 4);
        l.charge(1, Direction::S2w, 1, Payload::Dense(3));
        assert_eq!(l.per_worker(), (1.5, 4.0));
        assert_eq!(l.events().unwrap().len(), 3);
    }

    #[test]
    fn running_min_is_monotone() {
        let tr = vec![rec(0, 3.0, 0.0, 0.0), rec(1, 5.0, 0.0, 0.0), rec(2, 1.0, 0.0, 0.0)];
        assert_eq!(running_min(&tr), vec![3.0, 3.0, 1.0]);
    }
}
