//! Subtractively dithered scalar quantization of scores.
//!
//! A score `s` in `[0, s_max]` is sent as `round((s + u) / step)` with a
//! shared dither `u ~ U[-step/2, step/2]`; the receiver subtracts `u` after
//! reconstruction. The resulting error is uniform on the cell and independent
//! of `s`, with variance `step^2 / 12`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("bit budget must be >= 1")]
    ZeroBits,
    #[error("score {s} is outside [0, {s_max}]")]
    OutOfRange { s: f64, s_max: f64 },
    #[error("dither {u} exceeds half a step ({half})")]
    DitherRange { u: f64, half: f64 },
    #[error("calibration buffer is empty")]
    EmptyBuffer,
    #[error("alpha = {0} is outside (0, 1)")]
    BadAlpha(f64),
    #[error("s_max must be positive")]
    BadRange,
}

pub type Result<T> = std::result::Result<T, QuantizeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DitheredQuantizer {
    bits: u32,
    s_max: f64,
    step: f64,
}

impl DitheredQuantizer {
    pub fn new(bits: u32, s_max: f64) -> Result<Self> {
        if bits == 0 {
            return Err(QuantizeError::ZeroBits);
        }
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(QuantizeError::BadRange);
        }
        Ok(Self {
            bits,
            s_max,
            step: s_max * pow2_neg(bits),
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Maps a unit uniform draw onto the dither cell `[-step/2, step/2)`.
    pub fn dither_from_unit(&self, u01: f64) -> f64 {
        (u01 - 0.5) * self.step
    }

    /// Quantizes `s` with the given dither and returns the reconstruction.
    pub fn quantize(&self, s: f64, dither: f64) -> Result<f64> {
        if !(0.0..=self.s_max).contains(&s) {
            return Err(QuantizeError::OutOfRange { s, s_max: self.s_max });
        }
        let half = 0.5 * self.step;
        if dither.abs() > half {
            return Err(QuantizeError::DitherRange { u: dither, half });
        }
        Ok(((s + dither) / self.step).round() * self.step - dither)
    }

    pub fn variance(&self) -> f64 {
        self.step * self.step / 12.0
    }
}

/// `2^{-bits}` built from the exponent so the result is exact.
fn pow2_neg(bits: u32) -> f64 {
    2f64.powi(-(bits.min(1074) as i32))
}

/// Per-node quantization variance bound `s_max^2 2^{-2B} / 12`.
pub fn dither_variance(bits: u32, s_max: f64) -> Result<f64> {
    if bits == 0 {
        return Err(QuantizeError::ZeroBits);
    }
    let step = s_max * pow2_neg(bits);
    Ok(step * step / 12.0)
}

/// Calibration-summary distortion bound `s_max 2^{-B}`.
pub fn phi(bits: u32, s_max: f64) -> Result<f64> {
    if bits == 0 {
        return Err(QuantizeError::ZeroBits);
    }
    Ok(s_max * pow2_neg(bits))
}

/// A compressed conformal threshold summary from one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalSummary {
    pub quantized_quantile: f64,
    pub exact_quantile: f64,
    pub bits_used: u32,
    /// Set when `ceil((1 - alpha)(n + 1)) > n` and the index was clamped.
    pub clamped: bool,
}

/// 1-based conformal order-statistic index, clamped to `n`.
pub fn conformal_rank(n: usize, alpha: f64) -> (usize, bool) {
    // The small offset keeps products like 0.9 * 10 from rounding up a rank.
    let raw = ((1.0 - alpha) * (n as f64 + 1.0) - 1e-9).ceil() as usize;
    if raw > n {
        (n, true)
    } else {
        (raw.max(1), false)
    }
}

/// Conformal order statistic of `scores`, rounded to the nearest point of a
/// `bits`-bit uniform grid on `[0, s_max]`.
pub fn compress_cal_summary(scores: &[f64], bits: u32, alpha: f64, s_max: f64) -> Result<CalSummary> {
    if scores.is_empty() {
        return Err(QuantizeError::EmptyBuffer);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QuantizeError::BadAlpha(alpha));
    }
    let grid = phi(bits, s_max)?;
    if let Some(&s) = scores.iter().find(|&&s| !(0.0..=s_max).contains(&s)) {
        return Err(QuantizeError::OutOfRange { s, s_max });
    }
    let (rank, clamped) = conformal_rank(scores.len(), alpha);
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let exact = sorted[rank - 1];
    let quantized = ((exact / grid).round() * grid).clamp(0.0, s_max);
    Ok(CalSummary {
        quantized_quantile: quantized,
        exact_quantile: exact,
        bits_used: bits,
        clamped,
    })
}
