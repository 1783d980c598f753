//! Training-rate model for refreshed student models.
//!
//! Each refresh event `r` carries a high-probability KL rate `R_r` computed
//! at its own budget `delta_r = 6 delta_train / (pi^2 r^2)`. The rate of the
//! most recent event feeds the training slack.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must be nonnegative")]
    Negative(&'static str),
    #[error("delta = {0} is outside (0, 1)")]
    BadDelta(f64),
    #[error("no student covers step {0}")]
    NoInitialStudent(u64),
    #[error("event steps must be strictly increasing")]
    Unordered,
}

pub type Result<T> = std::result::Result<T, TrainingError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpldParams {
    pub k_nodes: u32,
    pub n_r: u64,
    pub m_r: u64,
    pub b_r: u32,
    pub v_vocab: u32,
    pub d_dim: u32,
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub eps_opt: f64,
    pub eps_fit: f64,
}

impl Default for FpldParams {
    fn default() -> Self {
        Self {
            k_nodes: 4,
            n_r: 1000,
            m_r: 10_000,
            b_r: 400,
            v_vocab: 100,
            d_dim: 10,
            rho: 1.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            eps_opt: 0.0,
            eps_fit: 0.0,
        }
    }
}

impl FpldParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_nodes == 0 {
            return Err(TrainingError::NonPositive("k_nodes"));
        }
        if self.n_r == 0 {
            return Err(TrainingError::NonPositive("n_r"));
        }
        if self.m_r == 0 {
            return Err(TrainingError::NonPositive("m_r"));
        }
        if self.v_vocab == 0 {
            return Err(TrainingError::NonPositive("v_vocab"));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("eps_opt", self.eps_opt),
            ("eps_fit", self.eps_fit),
        ] {
            if !(v >= 0.0) {
                return Err(TrainingError::Negative(name));
            }
        }
        Ok(())
    }
}

/// Five-term KL rate at confidence `delta_r`.
pub fn fpld_rate(p: &FpldParams, delta_r: f64) -> Result<f64> {
    p.validate()?;
    if !(delta_r > 0.0 && delta_r < 1.0) {
        return Err(TrainingError::BadDelta(delta_r));
    }
    let v = p.v_vocab as f64;
    let sample = p.c1 * p.d_dim as f64 / (p.k_nodes as f64 * p.n_r as f64);
    let probe = p.c2 * p.rho * v * (v / delta_r).ln() / (p.m_r as f64).sqrt();
    let quant = p.c3 * 2f64.powf(-2.0 * p.b_r as f64 / v);
    Ok(sample + probe + quant + p.eps_opt + p.eps_fit)
}

/// Budget for training event `r >= 1`.
pub fn event_budget(delta_train: f64, r: usize) -> f64 {
    let r = r.max(1) as f64;
    6.0 * delta_train / (PI * PI * r * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshEvent {
    pub step: u64,
    pub params: FpldParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshSchedule {
    pub events: Vec<RefreshEvent>,
    pub budget_total: f64,
}

impl RefreshSchedule {
    pub fn new(events: Vec<RefreshEvent>, budget_total: f64) -> Result<Self> {
        if !(budget_total > 0.0 && budget_total < 1.0) {
            return Err(TrainingError::BadDelta(budget_total));
        }
        if events.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(TrainingError::Unordered);
        }
        for e in &events {
            e.params.validate()?;
        }
        Ok(Self {
            events,
            budget_total,
        })
    }

    /// Budget per event, in event order.
    pub fn budgets(&self) -> Vec<f64> {
        (1..=self.events.len())
            .map(|r| event_budget(self.budget_total, r))
            .collect()
    }

    /// Rate of every event at its own budget.
    pub fn rates(&self) -> Result<Vec<f64>> {
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| fpld_rate(&e.params, event_budget(self.budget_total, i + 1)))
            .collect()
    }
}

/// Rate of the latest event at or before step `t`.
pub fn epsilon_train_at(schedule: &RefreshSchedule, t: u64) -> Result<f64> {
    let idx = schedule.events.partition_point(|e| e.step <= t);
    if idx == 0 {
        return Err(TrainingError::NoInitialStudent(t));
    }
    let e = &schedule.events[idx - 1];
    fpld_rate(&e.params, event_budget(schedule.budget_total, idx))
}

/// Weak training slack `f_max * R^{1/4}`.
pub fn delta_train_weak(rate: f64, f_max: f64) -> Result<f64> {
    if !(rate >= 0.0) {
        return Err(TrainingError::Negative("rate"));
    }
    Ok(f_max * rate.powf(0.25))
}

/// `KL(Bern(p) || Bern(q))`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// `E_p |log(p(Y) / q(Y))|` for Bernoulli laws: the mean absolute log-ratio
/// that the two-term bound controls.
pub fn bernoulli_abs_log_ratio(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln().abs() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}
