//! Per-trajectory logs.

use serde::{Deserialize, Serialize};

use crate::betting::AlarmStatus;
use crate::controller::Action;

use super::runner::{Monitor, Observed};

/// `None` stands for `-inf` (bankrupt wealth), which JSON cannot carry.
fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: u64,
    pub m: u8,
    pub b: f64,
    pub lambda: f64,
    pub log_e: Option<f64>,
    pub s: f64,
    pub u_t: f64,
    pub g: bool,
    pub status: AlarmStatus,
    pub actions: Vec<Action>,
    pub gamma_cost: u64,
}

impl StepRow {
    #[allow(clippy::too_many_arguments)]
    pub fn from_monitor(
        t: u64,
        m: u8,
        b: f64,
        obs: &Observed,
        mon: &Monitor,
        g: bool,
        actions: Vec<Action>,
        gamma_cost: u64,
    ) -> Self {
        Self {
            t,
            m,
            b,
            lambda: obs.lambda,
            log_e: finite(mon.eproc.log_wealth),
            s: mon.env.s,
            u_t: obs.u_t,
            g,
            status: mon.eproc.status,
            actions,
            gamma_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSummary {
    pub steps: u64,
    pub alarmed: bool,
    pub alarm_step: Option<u64>,
    pub sup_log_e: f64,
    pub final_log_e: Option<f64>,
    pub alive: bool,
    pub breach: bool,
    pub total_cost: u64,
    pub clamped: u64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<StepRow>,
    pub summary: TerminalSummary,
}

impl TrajectoryRecord {
    pub fn from_monitor(
        seed: u32,
        mon: &Monitor,
        rows: Vec<StepRow>,
        total_cost: u64,
        clamped: u64,
        stopped_early: bool,
    ) -> Self {
        Self {
            seed,
            rows,
            summary: TerminalSummary {
                steps: mon.eproc.t,
                alarmed: mon.eproc.alarm_step.is_some(),
                alarm_step: mon.eproc.alarm_step,
                sup_log_e: mon.eproc.peak_log_wealth,
                final_log_e: finite(mon.eproc.log_wealth),
                alive: mon.eproc.alive,
                breach: mon.env.breached(),
                total_cost,
                clamped,
                stopped_early,
            },
        }
    }

    /// Whether the terminal summary agrees with what the rows imply.
    pub fn summary_matches_rows(&self) -> bool {
        if self.rows.is_empty() {
            return true;
        }
        let first_alarm = self
            .rows
            .iter()
            .find(|r| r.status == AlarmStatus::Alarmed)
            .map(|r| r.t);
        let sup = self
            .rows
            .iter()
            .filter_map(|r| r.log_e)
            .fold(0.0f64, f64::max);
        let breach = self.rows.iter().any(|r| r.s > r.u_t);
        let cost: u64 = self.rows.iter().map(|r| r.gamma_cost).sum();
        let s = &self.summary;
        s.steps == self.rows.len() as u64
            && s.alarm_step == first_alarm
            && s.alarmed == first_alarm.is_some()
            && s.sup_log_e == sup
            && s.breach == breach
            && s.total_cost == cost
    }
}
