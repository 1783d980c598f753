//! Synthetic end-to-end swarm: nodes, rolling buffer, threshold refreshes,
//! student refreshes, controller, e-process, and envelope in one loop.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{self, ControllerPolicy, CostLedger, Observable, PolicyKind};
use crate::federation::{self, CalBuffer, NodeModel, PredictabilityAudit, SwarmState};
use crate::quantize::dither_variance;
use crate::simgen::{DriftKind, DriftSchedule, ScoreLaw};
use crate::slack_model::{assemble_b, delta_fl_at, delta_rag, delta_train_bound};
use crate::training_model::{epsilon_train_at, RefreshEvent, RefreshSchedule};

use super::config::{Config, Granularity};
use super::record::{StepRow, TrajectoryRecord};
use super::runner::{mean, quantile, run_ensemble, Monitor};
use super::{ExperimentId, ExperimentOutput, HarnessError, Metric, PlotData, TaggedTrajectory};

type Result<T> = std::result::Result<T, HarnessError>;

/// One swarm configuration to run.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmRun {
    pub drift: DriftSchedule,
    /// Starting bits per node.
    pub bits: Vec<u32>,
    pub policy: ControllerPolicy,
    pub keep_rows: bool,
}

/// Trajectory log plus swarm-level diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmTrajectory {
    pub record: TrajectoryRecord,
    pub miss_rate: f64,
    /// Share of steps whose threshold met the calibration bound.
    pub cal_good_rate: f64,
    pub refreshes: u64,
    pub audit: PredictabilityAudit,
    pub b_first: f64,
    pub b_last: f64,
}

fn schedule(cfg: &Config) -> Result<RefreshSchedule> {
    let c = &cfg.end_to_end;
    let mut events = vec![RefreshEvent {
        step: 0,
        params: c.student_initial,
    }];
    if c.student_refresh_step > 0 {
        events.push(RefreshEvent {
            step: c.student_refresh_step,
            params: c.student_refreshed,
        });
    }
    Ok(RefreshSchedule::new(events, cfg.slack.delta_train)?)
}

/// Runs one swarm trajectory on `rng`.
pub fn run_swarm(cfg: &Config, run: &SwarmRun, seed: u32, rng: &mut ChaCha8Rng) -> Result<SwarmTrajectory> {
    let c = &cfg.end_to_end;
    let slack = cfg.slack;
    let s_max = slack.s_max;
    let law = ScoreLaw {
        s_max,
        drift: run.drift,
    };
    let training = schedule(cfg)?;
    let nodes = run
        .bits
        .iter()
        .enumerate()
        .map(|(node_id, &bits)| NodeModel {
            node_id,
            bits,
            score_noise_sd: c.noise_sd,
        })
        .collect();
    let mut buffer = CalBuffer::new(c.window, c.refresh_period, c.n_min)?;
    for _ in 0..c.n_init {
        federation::buffer_update(&mut buffer, 0, law.sample(0, rng));
    }
    let mut swarm = SwarmState::new(nodes, buffer, s_max, s_max)?;
    swarm.refresh_threshold(0, c.b_cal_bits, slack.alpha, rng)?;
    swarm.true_quantile = law.quantile(0, slack.alpha);
    let mut n_cal = swarm.buffer.len();
    let phi_cal = federation::refresh_distortion(c.b_cal_bits, swarm.k(), s_max);
    let variance = |b: u32| dither_variance(b, s_max).unwrap_or(f64::NAN);

    let mut mon = Monitor::new(cfg.bettor.spec(slack.alpha), cfg.alarm, cfg.envelope);
    let mut ledger = CostLedger::new();
    let mut audit = PredictabilityAudit::default();
    let mut bits = swarm.bits();
    let mut rows = Vec::new();
    let (mut misses, mut good, mut refreshes) = (0u64, 0u64, 0u64);
    let (mut b_first, mut b_last) = (f64::NAN, f64::NAN);
    let mut recal_requested = false;

    for t in 1..=c.horizon {
        // Everything entering b_t and lambda_t was fixed by the end of t - 1.
        audit.record(t, swarm.threshold_step, mon.eproc.t, swarm.buffer.latest_step());
        let dfl = delta_fl_at(t, n_cal, phi_cal, &slack)?;
        let rag = delta_rag(&bits, slack.f_max, variance)?;
        let train = delta_train_bound(epsilon_train_at(&training, t - 1)?, slack.f_max)?;
        let b = assemble_b(&slack, n_cal, dfl, rag, train)?.b;
        if t == 1 {
            b_first = b;
        }
        b_last = b;

        swarm.true_quantile = law.quantile(t, slack.alpha);
        let is_good = federation::cal_good(swarm.threshold, swarm.true_quantile, dfl, slack.f_max);
        good += u64::from(is_good);
        let g = !c.oracle_g || is_good;

        let score = law.sample(t, rng);
        let served = swarm.serve_query(score, rng)?;
        misses += u64::from(served.miss);
        let obs = mon.observe(served.miss, b, g)?;

        federation::buffer_update(&mut swarm.buffer, t, score);
        let refresh = swarm.buffer.is_refresh_step(t) || recal_requested;
        if refresh {
            swarm.refresh_threshold(t, c.b_cal_bits, slack.alpha, rng)?;
            n_cal = swarm.buffer.len();
            refreshes += 1;
        }
        let gamma = ledger.account(&bits, refresh, c.b_cal_bits)?;

        let view = Observable {
            t,
            log_wealth: mon.eproc.log_wealth,
            status: mon.eproc.status,
            delta_e: cfg.alarm.delta_e,
            alarm_step: mon.eproc.alarm_step,
            n_cal,
            last_miss: Some(served.miss),
            future_miss: None,
        };
        let actions = controller::decide(&run.policy, &view)?;
        let (recal, _) = controller::apply_bits(&actions, &mut bits);
        recal_requested = recal;
        swarm.set_bits(&bits);
        if run.keep_rows {
            rows.push(StepRow::from_monitor(t, served.miss, b, &obs, &mon, g, actions, gamma));
        }
    }
    let record = TrajectoryRecord::from_monitor(seed, &mon, rows, ledger.total, 0, false);
    let steps = c.horizon.max(1) as f64;
    Ok(SwarmTrajectory {
        record,
        miss_rate: misses as f64 / steps,
        cal_good_rate: good as f64 / steps,
        refreshes,
        audit,
        b_first,
        b_last,
    })
}

fn adaptive(cfg: &Config) -> Result<ControllerPolicy> {
    let c = &cfg.end_to_end;
    Ok(ControllerPolicy::new(PolicyKind::AdaptiveBandwidth {
        warn_factor: cfg.alarm.warn_factor,
        bits_low: c.bits_low,
        bits_high: c.bits_high,
    })?)
}

/// Sudden drift at a quarter of the horizon.
pub fn default_drift(cfg: &Config, magnitude: f64) -> DriftSchedule {
    DriftSchedule::sudden(cfg.end_to_end.horizon / 4, magnitude)
}

/// The verbose single-trajectory run behind `simulate`.
pub fn simulate(cfg: &Config, seed: u32) -> Result<SwarmTrajectory> {
    cfg.validate()?;
    let c = &cfg.end_to_end;
    let run = SwarmRun {
        drift: default_drift(cfg, c.drift),
        bits: vec![c.bits_low; c.k],
        policy: adaptive(cfg)?,
        keep_rows: true,
    };
    let mut rng = super::runner::trajectory_rng(cfg.run.master_seed, 200, seed);
    run_swarm(cfg, &run, seed, &mut rng)
}

struct Variant {
    name: String,
    run: SwarmRun,
}

fn variants(cfg: &Config) -> Result<Vec<Variant>> {
    let c = &cfg.end_to_end;
    let onset = c.horizon / 4;
    let keep_rows = cfg.run.trajectories == Granularity::Steps;
    let low = vec![c.bits_low; c.k];
    let static_policy = ControllerPolicy::new(PolicyKind::Static)?;
    let mut out = vec![
        Variant {
            name: "no_drift".into(),
            run: SwarmRun {
                drift: DriftSchedule::none(),
                bits: low.clone(),
                policy: adaptive(cfg)?,
                keep_rows,
            },
        },
        Variant {
            name: "sudden_adaptive".into(),
            run: SwarmRun {
                drift: default_drift(cfg, c.drift),
                bits: low.clone(),
                policy: adaptive(cfg)?,
                keep_rows,
            },
        },
        Variant {
            name: "sudden_low_only".into(),
            run: SwarmRun {
                drift: default_drift(cfg, c.drift),
                bits: low.clone(),
                policy: static_policy,
                keep_rows,
            },
        },
        Variant {
            name: "sudden_high_only".into(),
            run: SwarmRun {
                drift: default_drift(cfg, c.drift),
                bits: vec![c.bits_high; c.k],
                policy: static_policy,
                keep_rows,
            },
        },
    ];
    let m = c.drift_type_magnitude;
    let types = [
        ("type_sudden", DriftSchedule::sudden(onset, m)),
        ("type_gradual", DriftSchedule::gradual(onset, c.ramp_len, m)),
        (
            "type_periodic",
            DriftSchedule {
                kind: DriftKind::Periodic {
                    onset,
                    period: c.period,
                    duty: 0.5,
                },
                magnitude: m,
            },
        ),
    ];
    for (name, drift) in types {
        drift.validate()?;
        out.push(Variant {
            name: name.into(),
            run: SwarmRun {
                drift,
                bits: low.clone(),
                policy: static_policy,
                keep_rows,
            },
        });
    }
    for (j, mix) in c.bandwidth_mixes.iter().enumerate() {
        if mix.len() != c.k {
            return Err(HarnessError::Config(format!(
                "end_to_end.bandwidth_mixes[{j}] has {} entries, expected k = {}",
                mix.len(),
                c.k
            )));
        }
        let label = mix.iter().map(u32::to_string).collect::<Vec<_>>().join("_");
        out.push(Variant {
            name: format!("mix_{label}"),
            run: SwarmRun {
                drift: default_drift(cfg, c.hetero_drift),
                bits: mix.clone(),
                policy: static_policy,
                keep_rows,
            },
        });
    }
    Ok(out)
}

/// All end-to-end variants with common random numbers across them.
pub fn end_to_end(cfg: &Config) -> Result<ExperimentOutput> {
    let c = &cfg.end_to_end;
    let onset = c.horizon / 4;
    let variants = variants(cfg)?;
    let results: Vec<Vec<SwarmTrajectory>> = run_ensemble(cfg.run.master_seed, 200, c.seeds, cfg.run.workers, |i, rng| {
        variants
            .iter()
            .map(|v| run_swarm(cfg, &v.run, i, &mut rng.clone()))
            .collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .collect::<Result<_>>()?;

    let per_variant = |j: usize| -> Vec<&SwarmTrajectory> { results.iter().map(|r| &r[j]).collect() };
    let rate = |v: &[&SwarmTrajectory]| v.iter().filter(|s| s.record.summary.alarmed).count() as f64 / v.len() as f64;
    let post_onset = |v: &[&SwarmTrajectory]| -> (f64, f64) {
        let delays: Vec<f64> = v
            .iter()
            .filter_map(|s| s.record.summary.alarm_step)
            .filter(|&a| a >= onset)
            .map(|a| (a - onset) as f64)
            .collect();
        (delays.len() as f64 / v.len() as f64, quantile(&delays, 0.5))
    };

    let mut metrics = Vec::new();
    let mut plot = PlotData::new(
        "variants",
        &["variant", "alarm_rate", "detected_fraction", "median_delay", "miss_rate", "b_first", "b_last", "normalized_cost"],
    );
    let norm = (c.horizon * c.k as u64 * u64::from(c.bits_low)) as f64;
    let validity = cfg.alarm.delta_e + cfg.slack.delta_cal;
    let mut audit_violations = 0u64;
    let mut rates = Vec::new();
    let mut costs = Vec::new();
    for (j, v) in variants.iter().enumerate() {
        let runs = per_variant(j);
        let r = rate(&runs);
        let (detected, delay) = post_onset(&runs);
        let miss = mean(&runs.iter().map(|s| s.miss_rate).collect::<Vec<_>>());
        let b_first = mean(&runs.iter().map(|s| s.b_first).collect::<Vec<_>>());
        let b_last = mean(&runs.iter().map(|s| s.b_last).collect::<Vec<_>>());
        let cost = mean(&runs.iter().map(|s| s.record.summary.total_cost as f64 / norm).collect::<Vec<_>>());
        audit_violations += runs.iter().map(|s| s.audit.violations).sum::<u64>();
        rates.push(r);
        costs.push(cost);
        plot.rows.push(vec![j as f64, r, detected, delay, miss, b_first, b_last, cost]);
        metrics.push(Metric::info(format!("{}_alarm_rate", v.name), r));
        metrics.push(Metric::info(format!("{}_median_delay", v.name), delay));
        metrics.push(Metric::info(format!("{}_miss_rate", v.name), miss));
        metrics.push(Metric::info(format!("{}_b_last", v.name), b_last));
        metrics.push(Metric::info(format!("{}_normalized_cost", v.name), cost));
    }
    let null = per_variant(0);
    let null_miss = mean(&null.iter().map(|s| s.miss_rate).collect::<Vec<_>>());
    let all_good = null.iter().filter(|s| s.cal_good_rate == 1.0).count() as f64 / null.len() as f64;
    metrics.push(Metric::bounded("no_drift_false_alarm_rate", rates[0], Some(0.0), None, Some(validity)));
    metrics.push(Metric::bounded(
        "no_drift_miss_rate",
        null_miss,
        Some(cfg.slack.alpha),
        Some(cfg.slack.alpha - 0.02),
        Some(cfg.slack.alpha + 0.02),
    ));
    metrics.push(Metric::bounded(
        "no_drift_cal_good_seed_fraction",
        all_good,
        None,
        Some(1.0 - cfg.slack.delta_cal),
        None,
    ));
    metrics.push(Metric::bounded("sudden_adaptive_detected_fraction", post_onset(&per_variant(1)).0, Some(1.0), Some(0.95), None));
    metrics.push(Metric::bounded("predictability_violations", audit_violations as f64, Some(0.0), None, Some(0.0)));
    let dominated = results.iter().all(|r| r[1].record.summary.total_cost <= r[3].record.summary.total_cost);
    metrics.push(Metric::bounded(
        "adaptive_cost_at_most_high_every_seed",
        f64::from(u8::from(dominated)),
        Some(1.0),
        Some(1.0),
        None,
    ));
    let (sudden, gradual, periodic) = (rates[4], rates[5], rates[6]);
    let ordered = sudden >= gradual && gradual >= periodic;
    metrics.push(Metric::bounded(
        "drift_type_ordering",
        f64::from(u8::from(ordered)),
        Some(1.0),
        Some(1.0),
        None,
    ));
    Ok(ExperimentOutput {
        id: ExperimentId::EndToEnd,
        headline: format!(
            "false alarms {:.3}, sudden-drift detection {:.3} (median delay {:.0}), adaptive cost {:.3}; drift types {sudden:.2}/{gradual:.2}/{periodic:.2}",
            rates[0],
            post_onset(&per_variant(1)).0,
            post_onset(&per_variant(1)).1,
            costs[1]
        ),
        metrics,
        plots: vec![plot],
        trajectories: variants
            .iter()
            .enumerate()
            .flat_map(|(j, v)| {
                results.iter().map(move |r| TaggedTrajectory {
                    group: v.name.clone(),
                    record: r[j].record.clone(),
                })
            })
            .collect(),
    })
}
