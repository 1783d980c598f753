//! Betting e-process for the deployment null `E[M_t | F_{t-1}] <= b_t`.
//!
//! Each step multiplies the wealth by `1 + lambda_t (M_t - b_t)` with a
//! predictable fraction `lambda_t in [0, 1/b_t]`, so the wealth stays
//! nonnegative and is a supermartingale under the null. Wealth lives in log
//! space; `-inf` marks bankruptcy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BettingError {
    #[error("bound b = {0} is outside (0, 1)")]
    BadBound(f64),
    #[error("lambda = {lambda} exceeds 1/b = {max}")]
    LambdaTooLarge { lambda: f64, max: f64 },
    #[error("lambda = {0} is negative")]
    NegativeLambda(f64),
    #[error("miscoverage bit must be 0 or 1, got {0}")]
    BadBit(u8),
    #[error("invalid bettor: {0}")]
    BadBettor(&'static str),
    #[error("delta_e = {0} is outside (0, 1)")]
    BadDelta(f64),
    #[error("warn_factor = {0} is outside (0, 1]")]
    BadWarnFactor(f64),
}

pub type Result<T> = std::result::Result<T, BettingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmStatus {
    Quiet,
    Warning,
    Alarmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BettorKind {
    Constant { lambda: f64 },
    /// Plug-in growth-rate bettor `sum Z / max(eps_var, sum Z^2)`.
    Agrapa { eps_var: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BettorSpec {
    pub kind: BettorKind,
    /// Global cap on the betting fraction.
    pub cap: f64,
}

impl BettorSpec {
    pub fn constant(lambda: f64, cap: f64) -> Self {
        Self {
            kind: BettorKind::Constant { lambda },
            cap,
        }
    }

    pub fn agrapa(eps_var: f64, cap: f64) -> Self {
        Self {
            kind: BettorKind::Agrapa { eps_var },
            cap,
        }
    }

    /// Cap `1 / (alpha + delta_max)`.
    pub fn cap_for(alpha: f64, delta_max: f64) -> f64 {
        1.0 / (alpha + delta_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap > 0.0) {
            return Err(BettingError::BadBettor("cap must be positive"));
        }
        match self.kind {
            BettorKind::Constant { lambda } if !(lambda >= 0.0) => {
                Err(BettingError::BadBettor("constant lambda must be nonnegative"))
            }
            BettorKind::Agrapa { eps_var } if !(eps_var > 0.0) => {
                Err(BettingError::BadBettor("eps_var must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmMode {
    /// The alarm latches and the wealth is never reset.
    Sticky,
    /// After an alarm the wealth restarts under the next epoch budget.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlarmPolicy {
    pub delta_e: f64,
    pub warn_factor: f64,
    pub mode: AlarmMode,
}

impl Default for AlarmPolicy {
    fn default() -> Self {
        Self {
            delta_e: 0.05,
            warn_factor: 0.5,
            mode: AlarmMode::Sticky,
        }
    }
}

impl AlarmPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_e > 0.0 && self.delta_e < 1.0) {
            return Err(BettingError::BadDelta(self.delta_e));
        }
        if !(self.warn_factor > 0.0 && self.warn_factor <= 1.0) {
            return Err(BettingError::BadWarnFactor(self.warn_factor));
        }
        Ok(())
    }
}

/// Alarm level for reset epoch `k >= 1`: `6 delta_e / (pi^2 k^2)`.
pub fn epoch_budget(delta_e: f64, epoch: u32) -> f64 {
    let k = epoch.max(1) as f64;
    6.0 * delta_e / (PI * PI * k * k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EProcessState {
    pub log_wealth: f64,
    pub alive: bool,
    pub t: u64,
    pub sum_z: f64,
    pub sum_z2: f64,
    pub peak_log_wealth: f64,
    pub status: AlarmStatus,
    /// Step at which the current (or latched) alarm fired.
    pub alarm_step: Option<u64>,
    /// Reset epoch, starting at 1.
    pub epoch: u32,
}

impl Default for EProcessState {
    fn default() -> Self {
        Self::new()
    }
}

impl EProcessState {
    pub fn new() -> Self {
        Self {
            log_wealth: 0.0,
            alive: true,
            t: 0,
            sum_z: 0.0,
            sum_z2: 0.0,
            peak_log_wealth: 0.0,
            status: AlarmStatus::Quiet,
            alarm_step: None,
            epoch: 1,
        }
    }

    pub fn wealth(&self) -> f64 {
        self.log_wealth.exp()
    }

    /// `E_t * 1{alive}`.
    pub fn truncated_wealth(&self) -> f64 {
        if self.alive {
            self.wealth()
        } else {
            0.0
        }
    }

    /// Alarm level in force for the current epoch.
    pub fn active_delta(&self, policy: &AlarmPolicy) -> f64 {
        match policy.mode {
            AlarmMode::Sticky => policy.delta_e,
            AlarmMode::Reset => epoch_budget(policy.delta_e, self.epoch),
        }
    }

    /// Restarts the wealth for the next reset epoch. Bettor statistics are
    /// kept since they are predictable either way.
    pub fn reset(&mut self) {
        self.log_wealth = 0.0;
        self.peak_log_wealth = 0.0;
        self.status = AlarmStatus::Quiet;
        self.epoch += 1;
    }
}

fn check_bound(b: f64) -> Result<()> {
    if b > 0.0 && b < 1.0 {
        Ok(())
    } else {
        Err(BettingError::BadBound(b))
    }
}

/// Betting fraction for the next step, computed from data strictly before it.
pub fn lambda_next(state: &EProcessState, bettor: &BettorSpec, b_t: f64) -> Result<f64> {
    check_bound(b_t)?;
    let hi = bettor.cap.min(1.0 / b_t);
    let raw = match bettor.kind {
        BettorKind::Constant { lambda } => lambda,
        BettorKind::Agrapa { eps_var } => state.sum_z / eps_var.max(state.sum_z2),
    };
    Ok(raw.clamp(0.0, hi))
}

/// Classifies the current wealth against the alarm and warning thresholds.
pub fn alarm_check(log_wealth: f64, delta: f64, warn_factor: f64) -> AlarmStatus {
    if log_wealth >= (1.0 / delta).ln() {
        AlarmStatus::Alarmed
    } else if log_wealth >= (warn_factor / delta).ln() {
        AlarmStatus::Warning
    } else {
        AlarmStatus::Quiet
    }
}

/// Applies one observation and refreshes the alarm status.
///
/// In sticky mode an alarm latches. In reset mode the caller decides when to
/// call [`EProcessState::reset`] after seeing `Alarmed`.
pub fn step(
    state: &mut EProcessState,
    m_t: u8,
    b_t: f64,
    lambda_t: f64,
    g_t: bool,
    policy: &AlarmPolicy,
) -> Result<()> {
    check_bound(b_t)?;
    if m_t > 1 {
        return Err(BettingError::BadBit(m_t));
    }
    if lambda_t < 0.0 || lambda_t.is_nan() {
        return Err(BettingError::NegativeLambda(lambda_t));
    }
    let max = 1.0 / b_t;
    if lambda_t > max {
        return Err(BettingError::LambdaTooLarge { lambda: lambda_t, max });
    }
    let z = m_t as f64 - b_t;
    let factor = 1.0 + lambda_t * z;
    state.log_wealth = if factor <= 0.0 {
        f64::NEG_INFINITY
    } else {
        state.log_wealth + factor.ln()
    };
    state.t += 1;
    state.alive &= g_t;
    state.sum_z += z;
    state.sum_z2 += z * z;
    state.peak_log_wealth = state.peak_log_wealth.max(state.log_wealth);

    let delta = state.active_delta(policy);
    let fresh = alarm_check(state.log_wealth, delta, policy.warn_factor);
    let latched = policy.mode == AlarmMode::Sticky && state.status == AlarmStatus::Alarmed;
    if !latched {
        // Warnings also latch in sticky mode so the status path is monotone.
        state.status = match policy.mode {
            AlarmMode::Sticky => fresh.max(state.status),
            AlarmMode::Reset => fresh,
        };
        if state.status == AlarmStatus::Alarmed {
            state.alarm_step = Some(state.t);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sticky() -> AlarmPolicy {
        AlarmPolicy::default()
    }

    #[test]
    fn zero_bettor_never_moves() {
        let mut s = EProcessState::new();
        let bettor = BettorSpec::constant(0.0, 3.0);
        for t in 0..100 {
            let lam = lambda_next(&s, &bettor, 0.2).unwrap();
            assert_eq!(lam, 0.0);
            step(&mut s, (t % 2) as u8, 0.2, lam, true, &sticky()).unwrap();
        }
        assert_eq!(s.wealth(), 1.0);
    }

    #[test]
    fn hand_product() {
        let mut s = EProcessState::new();
        for _ in 0..3 {
            step(&mut s, 1, 0.5, 1.0, true, &sticky()).unwrap();
        }
        assert!((s.wealth() - 3.375).abs() < 1e-12);
    }

    #[test]
    fn bankruptcy_is_absorbing() {
        let mut s = EProcessState::new();
        step(&mut s, 0, 0.5, 2.0, true, &sticky()).unwrap();
        assert_eq!(s.log_wealth, f64::NEG_INFINITY);
        step(&mut s, 1, 0.5, 2.0, true, &sticky()).unwrap();
        assert_eq!(s.wealth(), 0.0);
        assert_eq!(s.peak_log_wealth, 0.0);
    }

    #[test]
    fn rejects_overbet() {
        let mut s = EProcessState::new();
        let err = step(&mut s, 1, 0.5, 2.5, true, &sticky()).unwrap_err();
        assert!(matches!(err, BettingError::LambdaTooLarge { .. }));
        assert!(step(&mut s, 2, 0.5, 1.0, true, &sticky()).is_err());
        assert!(lambda_next(&s, &BettorSpec::constant(1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn lambda_clip_order() {
        let s = EProcessState::new();
        let lam = lambda_next(&s, &BettorSpec::constant(10.0, 3.23), 0.5).unwrap();
        assert_eq!(lam, 2.0);
        let lam = lambda_next(&s, &BettorSpec::constant(10.0, 3.23), 0.1).unwrap();
        assert_eq!(lam, 3.23);
    }

    #[test]
    fn agrapa_never_bets_against() {
        let mut s = EProcessState::new();
        let bettor = BettorSpec::agrapa(1.0, 3.0);
        for _ in 0..20 {
            step(&mut s, 0, 0.1, 0.0, true, &sticky()).unwrap();
        }
        assert!(s.sum_z < 0.0);
        assert_eq!(lambda_next(&s, &bettor, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn agrapa_formula() {
        let mut s = EProcessState::new();
        for m in [1u8, 1, 0, 1] {
            step(&mut s, m, 0.2, 0.0, true, &sticky()).unwrap();
        }
        // Z = 0.8, 0.8, -0.2, 0.8
        assert!((s.sum_z - 2.2).abs() < 1e-12);
        assert!((s.sum_z2 - 1.96).abs() < 1e-12);
        let lam = lambda_next(&s, &BettorSpec::agrapa(1.0, 5.0), 0.2).unwrap();
        assert!((lam - 2.2 / 1.96).abs() < 1e-12);
        let lam = lambda_next(&s, &BettorSpec::agrapa(100.0, 5.0), 0.2).unwrap();
        assert!((lam - 0.022).abs() < 1e-12);
    }

    #[test]
    fn alarm_thresholds() {
        assert_eq!(alarm_check(0.0, 0.05, 0.5), AlarmStatus::Quiet);
        assert_eq!(alarm_check(10f64.ln(), 0.05, 0.5), AlarmStatus::Warning);
        assert_eq!(alarm_check(20f64.ln(), 0.05, 0.5), AlarmStatus::Alarmed);
        assert_eq!(alarm_check(9.999f64.ln(), 0.05, 0.5), AlarmStatus::Quiet);
    }

    #[test]
    fn sticky_alarm_latches() {
        let mut s = EProcessState::new();
        let p = sticky();
        while s.status != AlarmStatus::Alarmed {
            step(&mut s, 1, 0.1, 3.0, true, &p).unwrap();
        }
        let fired = s.alarm_step;
        for _ in 0..50 {
            step(&mut s, 0, 0.1, 3.0, true, &p).unwrap();
        }
        assert_eq!(s.status, AlarmStatus::Alarmed);
        assert_eq!(s.alarm_step, fired);
        assert!(s.wealth() < 1.0);
    }

    #[test]
    fn reset_mode_uses_shrinking_budgets() {
        let p = AlarmPolicy {
            mode: AlarmMode::Reset,
            ..AlarmPolicy::default()
        };
        let mut s = EProcessState::new();
        let first = s.active_delta(&p);
        assert!((first - 6.0 * 0.05 / (PI * PI)).abs() < 1e-15);
        while s.status != AlarmStatus::Alarmed {
            step(&mut s, 1, 0.1, 3.0, true, &p).unwrap();
        }
        s.reset();
        assert_eq!(s.wealth(), 1.0);
        assert_eq!(s.epoch, 2);
        assert!((s.active_delta(&p) - first / 4.0).abs() < 1e-15);
        let total: f64 = (1..=100_000).map(|k| epoch_budget(0.05, k)).sum();
        assert!(total <= 0.05);
    }

    #[test]
    fn truncation_is_absorbing() {
        let mut s = EProcessState::new();
        step(&mut s, 1, 0.5, 1.0, false, &sticky()).unwrap();
        assert_eq!(s.truncated_wealth(), 0.0);
        step(&mut s, 1, 0.5, 1.0, true, &sticky()).unwrap();
        assert!(!s.alive);
        assert!(s.wealth() > 1.0);
    }

    #[test]
    fn policy_validation() {
        assert!(sticky().validate().is_ok());
        let bad = AlarmPolicy {
            warn_factor: 0.0,
            ..sticky()
        };
        assert!(bad.validate().is_err());
        assert!(BettorSpec::agrapa(0.0, 1.0).validate().is_err());
        assert!(BettorSpec::constant(-1.0, 1.0).validate().is_err());
        assert!((BettorSpec::cap_for(0.1, 0.21) - 3.2258).abs() < 1e-4);
    }
}
