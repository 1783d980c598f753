//! Predictable control policies and uplink cost accounting.
//!
//! `decide` sees a summary of the history through step `t` and returns the
//! actions for step `t + 1`. The only way to hand it information about a
//! future step is the `future_miss` field, and that is rejected unless the
//! policy was built with [`ControllerPolicy::unsafe_peeking`], which exists
//! solely for the necessity ablation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::betting::AlarmStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("observable carries a future-step field but the policy is predictable")]
    FutureLeak,
    #[error("invalid policy: {0}")]
    Invalid(&'static str),
    #[error("bit list is empty")]
    NoBits,
}

pub type Result<T> = std::result::Result<T, ControllerError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Static,
    /// Escalate every node to `bits_high` once the wealth reaches
    /// `warn_factor / delta_e`; never de-escalate.
    AdaptiveBandwidth {
        warn_factor: f64,
        bits_low: u32,
        bits_high: u32,
    },
    /// Recalibrate the threshold every `period` steps.
    RecalEvery { period: u64 },
    /// Refresh the student at the step an alarm fires.
    RefreshOnAlarm,
    /// Drop to `bits_low` right after a miss, otherwise use `bits_high`.
    /// With peeking enabled the switch keys on the upcoming miss instead.
    MissSwitch { bits_low: u32, bits_high: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerPolicy {
    pub kind: PolicyKind,
    unsafe_peek: bool,
}

impl ControllerPolicy {
    pub fn new(kind: PolicyKind) -> Result<Self> {
        let p = Self {
            kind,
            unsafe_peek: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// A policy allowed to read the next step's miss. Not valid for
    /// monitoring; it reproduces the failure mode of non-predictable control.
    pub fn unsafe_peeking(kind: PolicyKind) -> Result<Self> {
        let mut p = Self::new(kind)?;
        p.unsafe_peek = true;
        Ok(p)
    }

    pub fn peeks(&self) -> bool {
        self.unsafe_peek
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PolicyKind::AdaptiveBandwidth {
                warn_factor,
                bits_low,
                bits_high,
            } => {
                if bits_low == 0 || bits_low >= bits_high {
                    return Err(ControllerError::Invalid("need 1 <= bits_low < bits_high"));
                }
                if !(warn_factor > 0.0 && warn_factor <= 1.0) {
                    return Err(ControllerError::Invalid("warn_factor must lie in (0, 1]"));
                }
                Ok(())
            }
            PolicyKind::MissSwitch { bits_low, bits_high } if bits_low == 0 || bits_low >= bits_high => {
                Err(ControllerError::Invalid("need 1 <= bits_low < bits_high"))
            }
            PolicyKind::RecalEvery { period: 0 } => Err(ControllerError::Invalid("period must be >= 1")),
            _ => Ok(()),
        }
    }

    /// Bits a node starts with under this policy, if the policy sets bits.
    pub fn initial_bits(&self) -> Option<u32> {
        match self.kind {
            PolicyKind::AdaptiveBandwidth { bits_low, .. } => Some(bits_low),
            PolicyKind::MissSwitch { bits_high, .. } => Some(bits_high),
            _ => None,
        }
    }
}

/// What the controller may see after step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub t: u64,
    pub log_wealth: f64,
    pub status: AlarmStatus,
    pub delta_e: f64,
    pub alarm_step: Option<u64>,
    pub n_cal: usize,
    pub last_miss: Option<u8>,
    /// Whether step `t + 1` would miss at the low bandwidth. Future data.
    pub future_miss: Option<bool>,
}

impl Observable {
    pub fn initial(delta_e: f64) -> Self {
        Self {
            t: 0,
            log_wealth: 0.0,
            status: AlarmStatus::Quiet,
            delta_e,
            alarm_step: None,
            n_cal: 0,
            last_miss: None,
            future_miss: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Set the bit budget of one node, or of every node when `node` is `None`.
    SetBits { node: Option<usize>, bits: u32 },
    Recalibrate,
    RefreshStudent,
}

/// Actions to apply at step `obs.t + 1`.
pub fn decide(policy: &ControllerPolicy, obs: &Observable) -> Result<Vec<Action>> {
    if obs.future_miss.is_some() && !policy.unsafe_peek {
        return Err(ControllerError::FutureLeak);
    }
    let actions = match policy.kind {
        PolicyKind::Static => vec![],
        PolicyKind::AdaptiveBandwidth {
            warn_factor,
            bits_high,
            ..
        } => {
            let warned = obs.status != AlarmStatus::Quiet || obs.log_wealth >= (warn_factor / obs.delta_e).ln();
            if warned {
                vec![Action::SetBits {
                    node: None,
                    bits: bits_high,
                }]
            } else {
                vec![]
            }
        }
        PolicyKind::RecalEvery { period } => {
            if obs.t > 0 && obs.t.is_multiple_of(period) {
                vec![Action::Recalibrate]
            } else {
                vec![]
            }
        }
        PolicyKind::RefreshOnAlarm => {
            if obs.t > 0 && obs.alarm_step == Some(obs.t) {
                vec![Action::RefreshStudent]
            } else {
                vec![]
            }
        }
        PolicyKind::MissSwitch { bits_low, bits_high } => {
            let low = if policy.unsafe_peek {
                obs.future_miss == Some(true)
            } else {
                obs.last_miss == Some(1)
            };
            vec![Action::SetBits {
                node: None,
                bits: if low { bits_low } else { bits_high },
            }]
        }
    };
    Ok(actions)
}

/// Applies the bit-setting actions to a per-node bit vector. Returns whether
/// a recalibration or student refresh was requested.
pub fn apply_bits(actions: &[Action], bits: &mut [u32]) -> (bool, bool) {
    let mut recal = false;
    let mut refresh = false;
    for a in actions {
        match *a {
            Action::SetBits { node: None, bits: b } => bits.iter_mut().for_each(|x| *x = b),
            Action::SetBits { node: Some(i), bits: b } => {
                if let Some(x) = bits.get_mut(i) {
                    *x = b;
                }
            }
            Action::Recalibrate => recal = true,
            Action::RefreshStudent => refresh = true,
        }
    }
    (recal, refresh)
}

/// Per-step uplink cost `sum_i B_i + B_cal 1{refresh}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub total: u64,
    pub per_step: Vec<u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn account(&mut self, bits: &[u32], recal: bool, b_cal_bits: u32) -> Result<u64> {
        if bits.is_empty() {
            return Err(ControllerError::NoBits);
        }
        let gamma = bits.iter().map(|&b| u64::from(b)).sum::<u64>() + if recal { u64::from(b_cal_bits) } else { 0 };
        self.per_step.push(gamma);
        self.total += gamma;
        Ok(gamma)
    }
}
