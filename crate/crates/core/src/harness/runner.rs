//! Seeded ensemble execution and the per-trajectory monitor loop.
//!
//! Trajectory `i` of sub-experiment `tag` draws from
//! `ChaCha8Rng::seed_from_u64(master)` on stream `(tag << 32) | i`. Streams
//! never overlap, so trajectories are independent of each other and of how
//! they are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

use crate::betting::{self, AlarmPolicy, AlarmStatus, BettorSpec, EProcessState};
use crate::envelope::{BoundaryParams, EnvelopeState};
use crate::simgen::{self, StreamKind};

use super::record::{StepRow, TrajectoryRecord};
use super::HarnessError;

/// RNG for trajectory `index` of sub-experiment `tag`.
pub fn trajectory_rng(master: u64, tag: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((u64::from(tag) << 32) | u64::from(index));
    rng
}

/// Runs `n` trajectories on a pool of `workers` threads (0 = all cores) and
/// returns their results in index order.
pub fn run_ensemble<T, F>(master: u64, tag: u32, n: usize, workers: usize, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(u32, &mut ChaCha8Rng) -> T + Sync,
{
    if n > u32::MAX as usize {
        return Err(HarnessError::Config(format!("too many trajectories: {n}")));
    }
    let pool = ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..n as u32)
            .into_par_iter()
            .map(|i| {
                let mut rng = trajectory_rng(master, tag, i);
                f(i, &mut rng)
            })
            .collect()
    }))
}

/// E-process, envelope, and bettor for one trajectory.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub eproc: EProcessState,
    pub env: EnvelopeState,
    pub bettor: BettorSpec,
    pub alarm: AlarmPolicy,
    pub boundary: BoundaryParams,
}

/// What one monitor step produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observed {
    pub lambda: f64,
    pub u_t: f64,
}

impl Monitor {
    pub fn new(bettor: BettorSpec, alarm: AlarmPolicy, boundary: BoundaryParams) -> Self {
        Self {
            eproc: EProcessState::new(),
            env: EnvelopeState::new(),
            bettor,
            alarm,
            boundary,
        }
    }

    /// Chooses `lambda_t` from the past, then folds in `M_t`.
    pub fn observe(&mut self, m: u8, b: f64, g: bool) -> Result<Observed, HarnessError> {
        let lambda = betting::lambda_next(&self.eproc, &self.bettor, b)?;
        betting::step(&mut self.eproc, m, b, lambda, g, &self.alarm)?;
        let u_t = self.env.update(m, b, &self.boundary);
        Ok(Observed { lambda, u_t })
    }

    pub fn alarmed(&self) -> bool {
        self.eproc.status == AlarmStatus::Alarmed
    }
}

/// Options for a Bernoulli trajectory at constant bound `b`.
#[derive(Debug, Clone, Copy)]
pub struct BernoulliRun {
    pub kind: StreamKind,
    pub b: f64,
    pub horizon: u64,
    pub stop_at_alarm: bool,
    pub keep_rows: bool,
}

/// Runs one Bernoulli stream through a fresh monitor.
pub fn run_bernoulli(
    run: &BernoulliRun,
    seed: u32,
    bettor: BettorSpec,
    alarm: AlarmPolicy,
    boundary: BoundaryParams,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryRecord, HarnessError> {
    let mut mon = Monitor::new(bettor, alarm, boundary);
    let mut rows = Vec::new();
    let mut clamped = 0u64;
    let mut stopped_early = false;
    for t in 1..=run.horizon {
        let (p, c) = simgen::p_at(&run.kind, t, run.b);
        clamped += u64::from(c);
        let m = simgen::draw(p, rng);
        let obs = mon.observe(m, run.b, true)?;
        if run.keep_rows {
            rows.push(StepRow::from_monitor(t, m, run.b, &obs, &mon, true, vec![], 0));
        }
        if run.stop_at_alarm && mon.alarmed() {
            stopped_early = t < run.horizon;
            break;
        }
    }
    Ok(TrajectoryRecord::from_monitor(seed, &mon, rows, 0, clamped, stopped_early))
}

/// Wilson score interval at 95% for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    // The endpoints are exact at k = 0 and k = n; rounding would miss them.
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Linear-interpolated empirical quantile of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn mean(data: &[f64]) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    data.iter().sum::<f64>() / data.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_se(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let m = mean(data);
    if data.len() < 2 {
        return (m, f64::NAN);
    }
    let var = data.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
