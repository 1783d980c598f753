//! Score-level simulation of a K-node retrieval swarm.
//!
//! Each query carries an oracle score. Every node perturbs it with its own
//! noise, clips to `[0, s_max]`, and uploads a dithered `B_i`-bit code; the
//! hub averages the reconstructions and compares against the current
//! conformal threshold. Thresholds are refreshed from a rolling buffer of
//! scores from strictly earlier steps and take effect on the following step.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantize::{self, compress_cal_summary, DitheredQuantizer, QuantizeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error("buffer holds {have} scores, refresh needs {need}")]
    InsufficientBuffer { have: usize, need: usize },
    #[error("swarm has no nodes")]
    NoNodes,
    #[error("buffer entry from step {entry} is not before step {t}")]
    NotPredictable { entry: u64, t: u64 },
    #[error("invalid swarm: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}

pub type Result<T> = std::result::Result<T, FederationError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub node_id: usize,
    pub bits: u32,
    pub score_noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalBuffer {
    pub window: usize,
    pub refresh_period: u64,
    pub n_min: usize,
    entries: VecDeque<(u64, f64)>,
}

impl CalBuffer {
    pub fn new(window: usize, refresh_period: u64, n_min: usize) -> Result<Self> {
        if window == 0 {
            return Err(FederationError::Invalid("window must be >= 1"));
        }
        if refresh_period == 0 {
            return Err(FederationError::Invalid("refresh_period must be >= 1"));
        }
        Ok(Self {
            window,
            refresh_period,
            n_min,
            entries: VecDeque::with_capacity(window),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the score labeled at `step`, evicting the oldest past `window`.
    pub fn push(&mut self, step: u64, score: f64) {
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back((step, score));
    }

    pub fn latest_step(&self) -> Option<u64> {
        self.entries.back().map(|&(s, _)| s)
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, s)| s)
    }

    /// Whether `t` is a scheduled refresh step.
    pub fn is_refresh_step(&self, t: u64) -> bool {
        t > 0 && t.is_multiple_of(self.refresh_period)
    }
}

/// Result of serving one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServeOutcome {
    pub miss: u8,
    pub swarm_score: f64,
    pub uplink_bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshOutcome {
    pub threshold: f64,
    /// Exact conformal quantile of the noiseless buffer.
    pub exact_quantile: f64,
    pub clamped: bool,
    pub bits_per_node: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub nodes: Vec<NodeModel>,
    pub threshold: f64,
    pub buffer: CalBuffer,
    pub student_rate: f64,
    /// Oracle population quantile, for diagnostics only.
    pub true_quantile: f64,
    pub s_max: f64,
    /// Step at which `threshold` was computed.
    pub threshold_step: u64,
}

impl SwarmState {
    pub fn new(nodes: Vec<NodeModel>, buffer: CalBuffer, threshold: f64, s_max: f64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(FederationError::NoNodes);
        }
        if nodes.iter().any(|n| n.bits == 0 || !(n.score_noise_sd >= 0.0)) {
            return Err(FederationError::Invalid("nodes need bits >= 1 and noise_sd >= 0"));
        }
        Ok(Self {
            nodes,
            threshold,
            buffer,
            student_rate: 0.0,
            true_quantile: threshold,
            s_max,
            threshold_step: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.nodes.len()
    }

    pub fn bits(&self) -> Vec<u32> {
        self.nodes.iter().map(|n| n.bits).collect()
    }

    pub fn set_bits(&mut self, bits: &[u32]) {
        for (n, &b) in self.nodes.iter_mut().zip(bits) {
            n.bits = b;
        }
    }

    fn node_score<R: Rng + ?Sized>(&self, node: &NodeModel, score: f64, rng: &mut R) -> f64 {
        // The Normal draw is taken even at zero noise so draw counts never
        // depend on configuration.
        let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
        (score + node.score_noise_sd * z).clamp(0.0, self.s_max)
    }

    /// Serves one query against the current threshold. Draws are consumed in
    /// ascending node order: one normal, then one uniform dither, per node.
    pub fn serve_query<R: Rng + ?Sized>(&self, true_score: f64, rng: &mut R) -> Result<ServeOutcome> {
        let mut total = 0.0;
        let mut uplink = 0u64;
        for node in &self.nodes {
            let s = self.node_score(node, true_score, rng);
            let q = DitheredQuantizer::new(node.bits, self.s_max)?;
            let u = q.dither_from_unit(rng.random::<f64>());
            total += q.quantize(s, u)?;
            uplink += u64::from(node.bits);
        }
        // Projecting onto the score range can only shrink the error.
        let swarm_score = (total / self.k() as f64).clamp(0.0, self.s_max);
        Ok(ServeOutcome {
            miss: u8::from(swarm_score > self.threshold),
            swarm_score,
            uplink_bits: uplink,
        })
    }

    /// Recomputes the threshold from the buffer at step `t`; the caller uses
    /// it from step `t + 1`. Every node re-scores the buffer with its own
    /// noise, compresses its conformal quantile into `b_cal_bits / K` bits,
    /// and the hub averages the node summaries.
    pub fn refresh_threshold<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        b_cal_bits: u32,
        alpha: f64,
        rng: &mut R,
    ) -> Result<RefreshOutcome> {
        let need = self.buffer.n_min.max(1);
        if self.buffer.len() < need {
            return Err(FederationError::InsufficientBuffer {
                have: self.buffer.len(),
                need,
            });
        }
        if let Some(latest) = self.buffer.latest_step() {
            if latest > t {
                return Err(FederationError::NotPredictable { entry: latest, t });
            }
        }
        let share = (b_cal_bits / self.k() as u32).max(1);
        let raw: Vec<f64> = self.buffer.scores().collect();
        let exact = compress_cal_summary(&raw, 52, alpha, self.s_max)?;
        let mut sum = 0.0;
        let mut clamped = false;
        for node in &self.nodes.clone() {
            let rescored: Vec<f64> = raw.iter().map(|&s| self.node_score(node, s, rng)).collect();
            let summary = compress_cal_summary(&rescored, share, alpha, self.s_max)?;
            clamped |= summary.clamped;
            sum += summary.quantized_quantile;
        }
        self.threshold = sum / self.k() as f64;
        self.threshold_step = t;
        Ok(RefreshOutcome {
            threshold: self.threshold,
            exact_quantile: exact.exact_quantile,
            clamped,
            bits_per_node: share,
        })
    }
}

/// Appends the step-`t` score after its miss bit has been recorded.
pub fn buffer_update(buffer: &mut CalBuffer, t: u64, score: f64) {
    buffer.push(t, score);
}

/// Oracle cal-good bit: `|q_hat - q_pop| <= delta_fl / f_max`.
pub fn cal_good(threshold: f64, true_quantile: f64, delta_fl: f64, f_max: f64) -> bool {
    (threshold - true_quantile).abs() <= delta_fl / f_max
}

/// Distortion bound of a refresh with `b_cal_bits` shared across `k` nodes.
pub fn refresh_distortion(b_cal_bits: u32, k: usize, s_max: f64) -> f64 {
    let share = (b_cal_bits / k.max(1) as u32).max(1);
    quantize::phi(share, s_max).expect("share >= 1")
}

/// Records, per step, the provenance of the threshold and betting fraction
/// and counts any that used data from the step itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityAudit {
    pub checks: u64,
    pub violations: u64,
}

impl PredictabilityAudit {
    /// `threshold_step`: step whose data last set the threshold.
    /// `eprocess_t`: observations already folded into the e-process when
    /// `lambda_t` was chosen. `buffer_latest`: newest buffer entry.
    pub fn record(&mut self, t: u64, threshold_step: u64, eprocess_t: u64, buffer_latest: Option<u64>) {
        self.checks += 1;
        let ok = threshold_step < t && eprocess_t < t && buffer_latest.is_none_or(|s| s < t);
        if !ok {
            self.violations += 1;
        }
    }

    pub fn clean(&self) -> bool {
        self.violations == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn swarm(k: usize, bits: u32, sd: f64, threshold: f64) -> SwarmState {
        let nodes = (0..k)
            .map(|i| NodeModel {
                node_id: i,
                bits,
                score_noise_sd: sd,
            })
            .collect();
        SwarmState::new(nodes, CalBuffer::new(500, 50, 10).unwrap(), threshold, 1.0).unwrap()
    }

    #[test]
    fn lossless_single_node() {
        let s = swarm(1, 52, 0.0, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..1000 {
            let score = i as f64 / 1000.0 + 0.0005;
            let out = s.serve_query(score, &mut rng).unwrap();
            assert_eq!(out.miss, u8::from(score > 0.7));
            assert_eq!(out.uplink_bits, 52);
        }
    }

    #[test]
    fn top_threshold_covers_everything() {
        let s = swarm(4, 3, 0.2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let score: f64 = rng.random();
            assert_eq!(s.serve_query(score, &mut rng).unwrap().miss, 0);
        }
    }

    #[test]
    fn swarm_error_variance() {
        let (sd, bits) = (0.05, 4);
        let s = swarm(4, bits, sd, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let score = 0.2 + 0.6 * rng.random::<f64>();
            let e = s.serve_query(score, &mut rng).unwrap().swarm_score - score;
            sum2 += e * e;
        }
        let v = quantize::dither_variance(bits, 1.0).unwrap();
        let bound = (sd * sd + v) / 4.0;
        let mse = sum2 / n as f64;
        assert!(mse <= bound * 1.02, "{mse} vs {bound}");
        assert!(mse >= bound * 0.9);
    }

    #[test]
    fn buffer_fifo() {
        let mut b = CalBuffer::new(3, 10, 1).unwrap();
        for t in 1..=4 {
            buffer_update(&mut b, t, t as f64 / 10.0);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.scores().collect::<Vec<_>>(), vec![0.2, 0.3, 0.4]);
        assert_eq!(b.latest_step(), Some(4));
    }

    #[test]
    fn refresh_gate_and_lossless_path() {
        let mut s = swarm(1, 52, 0.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            s.refresh_threshold(0, 52, 0.1, &mut rng),
            Err(FederationError::InsufficientBuffer { have: 0, need: 10 })
        ));
        for i in 1..=99 {
            s.buffer.push(i, i as f64 / 100.0);
        }
        let out = s.refresh_threshold(99, 52, 0.1, &mut rng).unwrap();
        assert_eq!(out.exact_quantile, 0.90);
        assert!((s.threshold - 0.90).abs() < 1e-12);
        assert!(matches!(
            s.refresh_threshold(50, 52, 0.1, &mut rng),
            Err(FederationError::NotPredictable { .. })
        ));
    }

    #[test]
    fn refresh_error_within_phi_plus_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let sd = 0.01;
            let mut s = swarm(4, 8, sd, 0.5);
            for i in 0..200 {
                s.buffer.push(i, rng.random::<f64>());
            }
            let b_cal = 32;
            let out = s.refresh_threshold(200, b_cal, 0.1, &mut rng).unwrap();
            // A shift of every score by at most c moves an order statistic by
            // at most c; the normal tail is cut at 6 sd.
            let slack = refresh_distortion(b_cal, 4, 1.0) + 6.0 * sd;
            assert!(
                (out.threshold - out.exact_quantile).abs() <= slack,
                "trial {trial}"
            );
        }
    }

    #[test]
    fn stationary_coverage_sanity() {
        let mut s = swarm(4, 12, 0.0, 0.9);
        s.buffer = CalBuffer::new(2000, 100, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            s.buffer.push(0, rng.random::<f64>());
        }
        s.refresh_threshold(0, 48, 0.1, &mut rng).unwrap();
        let t_max = 10_000u64;
        let mut misses = 0u64;
        for t in 1..=t_max {
            let score: f64 = rng.random();
            misses += u64::from(s.serve_query(score, &mut rng).unwrap().miss);
            buffer_update(&mut s.buffer, t, score);
            if s.buffer.is_refresh_step(t) {
                s.refresh_threshold(t, 48, 0.1, &mut rng).unwrap();
            }
        }
        let rate = misses as f64 / t_max as f64;
        assert!((rate - 0.1).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn audit_flags_same_step_reads() {
        let mut a = PredictabilityAudit::default();
        a.record(5, 4, 4, Some(4));
        assert!(a.clean());
        a.record(6, 6, 5, Some(5));
        a.record(7, 6, 7, None);
        a.record(8, 7, 7, Some(8));
        assert_eq!(a.violations, 3);
        assert_eq!(a.checks, 4);
    }

    #[test]
    fn oracle_cal_good() {
        assert!(cal_good(0.9, 0.92, 0.05, 1.0));
        assert!(!cal_good(0.9, 0.96, 0.05, 1.0));
    }
}
