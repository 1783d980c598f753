//! Seeded synthetic streams: Bernoulli miscoverage streams with hand-set
//! conditional rates, drift schedules, and the score law for the swarm.
//!
//! Every generator consumes exactly one uniform draw per emitted step, so
//! runs that share a seed share their random numbers step by step.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("bound series has length {got}, expected {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("invalid stream: {0}")]
    Invalid(&'static str),
}

pub type Result<T> = std::result::Result<T, StreamError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftKind {
    None,
    Sudden { onset: u64 },
    Gradual { onset: u64, ramp_len: u64 },
    Periodic { onset: u64, period: u64, duty: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub kind: DriftKind,
    pub magnitude: f64,
}

impl DriftSchedule {
    pub fn none() -> Self {
        Self {
            kind: DriftKind::None,
            magnitude: 0.0,
        }
    }

    pub fn sudden(onset: u64, magnitude: f64) -> Self {
        Self {
            kind: DriftKind::Sudden { onset },
            magnitude,
        }
    }

    pub fn gradual(onset: u64, ramp_len: u64, magnitude: f64) -> Self {
        Self {
            kind: DriftKind::Gradual { onset, ramp_len },
            magnitude,
        }
    }

    /// Periodic drift with the default period 500 and duty 0.5.
    pub fn periodic(onset: u64, magnitude: f64) -> Self {
        Self {
            kind: DriftKind::Periodic {
                onset,
                period: 500,
                duty: 0.5,
            },
            magnitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DriftKind::Gradual { ramp_len: 0, .. } => {
                Err(StreamError::Invalid("ramp_len must be >= 1"))
            }
            DriftKind::Periodic { period, duty, .. } if period < 2 || !(duty > 0.0 && duty < 1.0) => {
                Err(StreamError::Invalid("periodic drift needs period >= 2 and duty in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    pub fn onset(&self) -> Option<u64> {
        match self.kind {
            DriftKind::None => None,
            DriftKind::Sudden { onset }
            | DriftKind::Gradual { onset, .. }
            | DriftKind::Periodic { onset, .. } => Some(onset),
        }
    }

    /// Share of the full drift in force at step `t`, in `[0, 1]`.
    pub fn fraction(&self, t: u64) -> f64 {
        match self.kind {
            DriftKind::None => 0.0,
            DriftKind::Sudden { onset } => f64::from(u8::from(t >= onset)),
            DriftKind::Gradual { onset, ramp_len } => {
                if t < onset {
                    0.0
                } else {
                    ((t - onset) as f64 / ramp_len as f64).min(1.0)
                }
            }
            DriftKind::Periodic {
                onset,
                period,
                duty,
            } => {
                if t < onset {
                    0.0
                } else {
                    let phase = (t - onset) % period;
                    f64::from(u8::from((phase as f64) < duty * period as f64))
                }
            }
        }
    }

    /// Additive shift `magnitude * fraction(t)`.
    pub fn shift(&self, t: u64) -> f64 {
        self.magnitude * self.fraction(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamKind {
    /// `p_t = b_t`.
    Boundary,
    /// `p_t = b_t - gap`.
    Interior { gap: f64 },
    /// `p_t` moves from `b_t - pre_gap` to `b_t + magnitude` along the schedule.
    Drift { schedule: DriftSchedule, pre_gap: f64 },
    /// `p_t = base + shift(t)`, independent of `b_t`.
    Level { base: f64, schedule: DriftSchedule },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub horizon: u64,
    pub seed: u64,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(StreamError::Invalid("horizon must be >= 1"));
        }
        match self.kind {
            StreamKind::Interior { gap } if !(gap > 0.0) => Err(StreamError::Invalid("gap must be positive")),
            StreamKind::Drift { schedule, pre_gap } => {
                schedule.validate()?;
                if !(pre_gap >= 0.0) {
                    return Err(StreamError::Invalid("pre_gap must be nonnegative"));
                }
                if !(schedule.magnitude > 0.0) {
                    return Err(StreamError::Invalid("drift size must be positive"));
                }
                match schedule.onset() {
                    Some(o) if o >= 1 && o <= self.horizon => Ok(()),
                    _ => Err(StreamError::Invalid("onset must lie in [1, horizon]")),
                }
            }
            StreamKind::Level { schedule, .. } => schedule.validate(),
            _ => Ok(()),
        }
    }
}

/// Conditional miscoverage probability at step `t`, and whether it had to
/// be clamped into `[0, 1]`.
pub fn p_at(kind: &StreamKind, t: u64, b_t: f64) -> (f64, bool) {
    let raw = match *kind {
        StreamKind::Boundary => b_t,
        StreamKind::Interior { gap } => b_t - gap,
        StreamKind::Drift { schedule, pre_gap } => {
            let f = schedule.fraction(t);
            (b_t - pre_gap) * (1.0 - f) + (b_t + schedule.magnitude) * f
        }
        StreamKind::Level { base, schedule } => base + schedule.shift(t),
    };
    let p = raw.clamp(0.0, 1.0);
    (p, p != raw)
}

/// One Bernoulli draw from a single uniform.
pub fn draw<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

/// A generated miscoverage stream and its clamp count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStream {
    pub bits: Vec<u8>,
    pub clamped: u64,
}

/// Emits `M_t ~ Bernoulli(p_t)` for `t = 1..=T`, one draw per step.
pub fn gen<R: Rng + ?Sized>(spec: &StreamSpec, b_series: &[f64], rng: &mut R) -> Result<GeneratedStream> {
    spec.validate()?;
    if b_series.len() as u64 != spec.horizon {
        return Err(StreamError::LengthMismatch {
            got: b_series.len(),
            want: spec.horizon as usize,
        });
    }
    let mut clamped = 0;
    let bits = b_series
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let (p, c) = p_at(&spec.kind, i as u64 + 1, b);
            clamped += u64::from(c);
            draw(p, rng)
        })
        .collect();
    Ok(GeneratedStream { bits, clamped })
}

/// Score law of the synthetic swarm: `Uniform[0, s_max]` shifted upward by
/// the drift schedule and clipped at `s_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreLaw {
    pub s_max: f64,
    pub drift: DriftSchedule,
}

impl ScoreLaw {
    pub fn sample<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> f64 {
        (rng.random::<f64>() * self.s_max + self.drift.shift(t)).min(self.s_max)
    }

    /// Population `(1 - alpha)`-quantile at step `t`.
    pub fn quantile(&self, t: u64, alpha: f64) -> f64 {
        ((1.0 - alpha) * self.s_max + self.drift.shift(t)).min(self.s_max)
    }

    /// `P(s_t > q)` under the law at step `t`.
    pub fn exceedance(&self, t: u64, q: f64) -> f64 {
        if q >= self.s_max {
            return 0.0;
        }
        let lo = self.drift.shift(t);
        ((self.s_max + lo - q.max(lo)) / self.s_max).clamp(0.0, 1.0)
    }
}
