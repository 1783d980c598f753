//! Time-uniform Hoeffding envelope for the cumulative residual
//! `S_t = sum_{s<=t} (M_s - b_s)`.
//!
//! The stitched boundary is
//! `u_t = c_h * sqrt(0.5 * t * (ln(1/delta) + ln(1 + log2 t)))`, natural log
//! outside and base-2 log inside.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("step index must be >= 1")]
    ZeroStep,
    #[error("stopping step {tau} exceeds trajectory length {len}")]
    PastEnd { tau: usize, len: usize },
    #[error("invalid boundary parameters: {0}")]
    BadParams(&'static str),
}

pub type Result<T> = std::result::Result<T, EnvelopeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryParams {
    pub c_h: f64,
    pub delta_e: f64,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        Self {
            c_h: 1.7,
            delta_e: 0.05,
        }
    }
}

impl BoundaryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_h > 0.0 && self.c_h <= 2.0) {
            return Err(EnvelopeError::BadParams("c_h must lie in (0, 2]"));
        }
        if !(self.delta_e > 0.0 && self.delta_e < 1.0) {
            return Err(EnvelopeError::BadParams("delta_e must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Stitched boundary `u_t(delta_e)`.
pub fn boundary(t: u64, params: &BoundaryParams) -> Result<f64> {
    if t == 0 {
        return Err(EnvelopeError::ZeroStep);
    }
    let tf = t as f64;
    let inner = (1.0 / params.delta_e).ln() + (1.0 + tf.log2()).ln();
    Ok(params.c_h * (0.5 * tf * inner).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeState {
    pub s: f64,
    pub t: u64,
    /// Running sup of `S_t - u_t`; starts at `-inf`.
    pub max_excess: f64,
}

impl Default for EnvelopeState {
    fn default() -> Self {
        Self::new()
    }
}

impl EnvelopeState {
    pub fn new() -> Self {
        Self {
            s: 0.0,
            t: 0,
            max_excess: f64::NEG_INFINITY,
        }
    }

    /// Adds `m_t - b_t` and returns the boundary value at the new step.
    pub fn update(&mut self, m_t: u8, b_t: f64, params: &BoundaryParams) -> f64 {
        self.s += m_t as f64 - b_t;
        self.t += 1;
        let u = boundary(self.t, params).expect("t >= 1 after increment");
        self.max_excess = self.max_excess.max(self.s - u);
        u
    }

    pub fn breached(&self) -> bool {
        self.max_excess > 0.0
    }
}

/// Upper bound `(1/tau) sum_{s<=tau} b_s + u_tau / tau` on the realized
/// miscoverage rate up to `tau`.
pub fn miscoverage_rate_bound(bounds: &[f64], tau: usize, params: &BoundaryParams) -> Result<f64> {
    if tau == 0 {
        return Err(EnvelopeError::ZeroStep);
    }
    if tau > bounds.len() {
        return Err(EnvelopeError::PastEnd {
            tau,
            len: bounds.len(),
        });
    }
    let mean_b: f64 = bounds[..tau].iter().sum::<f64>() / tau as f64;
    Ok(mean_b + boundary(tau as u64, params)? / tau as f64)
}
