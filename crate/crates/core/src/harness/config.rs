//! TOML configuration. Every block and field has a default, so an empty file
//! reproduces the reference experiment settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::betting::{AlarmPolicy, BettorSpec};
use crate::envelope::BoundaryParams;
use crate::slack_model::SlackConfig;
use crate::training_model::FpldParams;

use super::{ExperimentId, HarnessError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub slack: SlackConfig,
    pub bettor: BettorConfig,
    pub alarm: AlarmPolicy,
    pub envelope: BoundaryParams,
    pub e1: E1Config,
    pub e2: E2Config,
    pub e4: E4Config,
    pub e5: E5Config,
    pub e7: E7Config,
    pub e8: E8Config,
    pub e10: E10Config,
    pub e11: E11Config,
    pub e12: E12Config,
    pub envelope_study: EnvelopeStudyConfig,
    pub necessity: NecessityConfig,
    pub end_to_end: EndToEndConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.slack.validate()?;
        self.alarm.validate()?;
        self.envelope.validate()?;
        self.bettor.spec(self.slack.alpha).validate()?;
        let de = [self.slack.delta_e, self.alarm.delta_e, self.envelope.delta_e];
        if de.iter().any(|&d| d != de[0]) {
            return Err(HarnessError::Config(format!(
                "slack.delta_e, alarm.delta_e and envelope.delta_e must agree, got {de:?}"
            )));
        }
        let positive = [
            ("e1.seeds", self.e1.seeds),
            ("e2.seeds", self.e2.seeds),
            ("e4.seeds", self.e4.seeds),
            ("e5.pairs", self.e5.pairs),
            ("e10.buffers", self.e10.buffers),
            ("e11.seeds", self.e11.seeds),
            ("e12.null_seeds", self.e12.null_seeds),
            ("e12.drift_seeds", self.e12.drift_seeds),
            ("envelope_study.seeds", self.envelope_study.seeds),
            ("envelope_study.martingale_seeds", self.envelope_study.martingale_seeds),
            ("necessity.seeds", self.necessity.seeds),
            ("end_to_end.seeds", self.end_to_end.seeds),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::Config(format!("{name} must be >= 1")));
        }
        if self.e2.onset == 0 || self.e2.onset > self.e2.horizon {
            return Err(HarnessError::Config("e2.onset must lie in [1, horizon]".into()));
        }
        if self.e2.drifts.is_empty() {
            return Err(HarnessError::Config("e2.drifts is empty".into()));
        }
        if self.e12.alphas.is_empty() && self.e12.delta_es.is_empty() && self.e12.cap_factors.is_empty() {
            return Err(HarnessError::Config("e12 grid is empty".into()));
        }
        Ok(())
    }

    /// Overrides the trajectory count of one experiment.
    pub fn set_seeds(&mut self, id: ExperimentId, n: usize) {
        match id {
            ExperimentId::E1 => self.e1.seeds = n,
            ExperimentId::E2 => self.e2.seeds = n,
            ExperimentId::E4 => self.e4.seeds = n,
            ExperimentId::E5 => self.e5.pairs = n,
            ExperimentId::E10 => self.e10.buffers = n,
            ExperimentId::E11 => self.e11.seeds = n,
            ExperimentId::E12 => {
                self.e12.null_seeds = n;
                self.e12.drift_seeds = n;
            }
            ExperimentId::Envelope => {
                self.envelope_study.seeds = n;
                self.envelope_study.martingale_seeds = n;
            }
            ExperimentId::Necessity => self.necessity.seeds = n,
            ExperimentId::EndToEnd => self.end_to_end.seeds = n,
            ExperimentId::E7 | ExperimentId::E8 => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    None,
    Summary,
    Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub trajectories: Granularity,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 20_240_601,
            workers: 0,
            trajectories: Granularity::Summary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BettorChoice {
    Agrapa,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BettorConfig {
    pub kind: BettorChoice,
    pub eps_var: f64,
    pub lambda: f64,
    /// Largest total slack the cap must allow for: `cap = 1/(alpha + delta_max)`.
    pub delta_max: f64,
    /// Explicit cap, overriding `delta_max`.
    pub cap: Option<f64>,
}

impl Default for BettorConfig {
    fn default() -> Self {
        Self {
            kind: BettorChoice::Agrapa,
            eps_var: 100.0,
            lambda: 0.5,
            delta_max: 0.21,
            cap: None,
        }
    }
}

impl BettorConfig {
    pub fn cap(&self, alpha: f64) -> f64 {
        self.cap.unwrap_or_else(|| BettorSpec::cap_for(alpha, self.delta_max))
    }

    pub fn spec(&self, alpha: f64) -> BettorSpec {
        let cap = self.cap(alpha);
        match self.kind {
            BettorChoice::Agrapa => BettorSpec::agrapa(self.eps_var, cap),
            BettorChoice::Constant => BettorSpec::constant(self.lambda, cap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E1Config {
    pub seeds: usize,
    pub horizon: u64,
    pub b: f64,
    pub interior_gap: f64,
}

impl Default for E1Config {
    fn default() -> Self {
        Self {
            seeds: 2000,
            horizon: 5000,
            b: 0.10,
            interior_gap: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2Config {
    pub seeds: usize,
    pub horizon: u64,
    pub onset: u64,
    pub b: f64,
    /// Margin below `b` before onset.
    pub pre_gap: f64,
    pub drifts: Vec<f64>,
}

impl Default for E2Config {
    fn default() -> Self {
        Self {
            seeds: 500,
            horizon: 8000,
            onset: 2000,
            b: 0.10,
            pre_gap: 0.03,
            drifts: vec![0.02, 0.04, 0.06, 0.08, 0.10, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E4Config {
    pub seeds: usize,
    pub horizon: u64,
    pub onset: u64,
    /// Miscoverage probability before onset.
    pub base: f64,
    pub drift: f64,
    pub n_cal: usize,
    pub delta_fl: f64,
    pub delta_train: f64,
    pub f_max: f64,
    pub k: usize,
    pub bits_low: u32,
    pub bits_high: u32,
    pub warn_factor: f64,
}

impl Default for E4Config {
    fn default() -> Self {
        Self {
            seeds: 200,
            horizon: 5000,
            onset: 2500,
            base: 0.10,
            drift: 0.20,
            n_cal: 199,
            delta_fl: 0.015,
            delta_train: 0.0,
            f_max: 0.5,
            k: 4,
            bits_low: 1,
            bits_high: 4,
            warn_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E5Config {
    pub pairs: usize,
    pub grid: Vec<f64>,
    pub beta_a: f64,
    pub beta_b: f64,
    pub f_max: f64,
}

impl Default for E5Config {
    fn default() -> Self {
        Self {
            pairs: 20,
            grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            beta_a: 2.0,
            beta_b: 2.0,
            f_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E7Config {
    pub k_max_log2: u32,
    pub bits: u32,
    pub f_max: f64,
}

impl Default for E7Config {
    fn default() -> Self {
        Self {
            k_max_log2: 7,
            bits: 6,
            f_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E8Config {
    pub t_max: u64,
    pub points: usize,
}

impl Default for E8Config {
    fn default() -> Self {
        Self {
            t_max: 100_000,
            points: 51,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E10Config {
    pub buffers: usize,
    pub n_cal: usize,
    pub horizons: Vec<u64>,
}

impl Default for E10Config {
    fn default() -> Self {
        Self {
            buffers: 1000,
            n_cal: 100,
            horizons: vec![1, 10, 100, 1000, 10_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E11Config {
    pub seeds: usize,
    pub horizon: u64,
    pub onset: u64,
    pub b: f64,
    pub pre_gap: f64,
    pub small_drift: f64,
    pub large_drift: f64,
    pub lambdas: Vec<f64>,
}

impl Default for E11Config {
    fn default() -> Self {
        Self {
            seeds: 2000,
            horizon: 5000,
            onset: 1000,
            b: 0.10,
            pre_gap: 0.05,
            small_drift: 0.025,
            large_drift: 0.20,
            lambdas: vec![0.32, 1.61, 3.23],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E12Config {
    pub null_seeds: usize,
    pub drift_seeds: usize,
    pub null_horizon: u64,
    pub drift_horizon: u64,
    pub onset: u64,
    pub drift: f64,
    pub pre_gap: f64,
    pub base_alpha: f64,
    pub base_delta_e: f64,
    pub base_cap_factor: f64,
    pub alphas: Vec<f64>,
    pub delta_es: Vec<f64>,
    pub cap_factors: Vec<f64>,
}

impl Default for E12Config {
    fn default() -> Self {
        Self {
            null_seeds: 1000,
            drift_seeds: 500,
            null_horizon: 5000,
            drift_horizon: 8000,
            onset: 2000,
            drift: 0.10,
            pre_gap: 0.03,
            base_alpha: 0.10,
            base_delta_e: 0.05,
            base_cap_factor: 1.0,
            alphas: vec![0.05, 0.10, 0.15, 0.20],
            delta_es: vec![0.01, 0.025, 0.05, 0.10],
            cap_factors: vec![0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeStudyConfig {
    pub seeds: usize,
    pub horizon: u64,
    pub b: f64,
    pub martingale_seeds: usize,
    pub martingale_horizons: Vec<u64>,
}

impl Default for EnvelopeStudyConfig {
    fn default() -> Self {
        Self {
            seeds: 4000,
            horizon: 5000,
            b: 0.10,
            martingale_seeds: 10_000,
            martingale_horizons: vec![10, 100, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NecessityConfig {
    pub seeds: usize,
    pub horizon: u64,
    pub f_max: f64,
    pub k: usize,
    pub bits_low: u32,
    pub bits_high: u32,
}

impl Default for NecessityConfig {
    fn default() -> Self {
        Self {
            seeds: 2000,
            horizon: 8000,
            f_max: 0.5,
            k: 4,
            bits_low: 3,
            bits_high: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndToEndConfig {
    pub seeds: usize,
    pub horizon: u64,
    pub k: usize,
    pub bits_low: u32,
    pub bits_high: u32,
    pub noise_sd: f64,
    pub window: usize,
    pub refresh_period: u64,
    pub n_min: usize,
    pub b_cal_bits: u32,
    /// Pre-deployment calibration scores.
    pub n_init: usize,
    pub drift: f64,
    /// Score shift for the drift-type comparison.
    pub drift_type_magnitude: f64,
    pub ramp_len: u64,
    pub period: u64,
    /// Heterogeneous bandwidth configurations, one list of node bits each.
    pub bandwidth_mixes: Vec<Vec<u32>>,
    pub hetero_drift: f64,
    /// Oracle cal-good bits instead of `g = 1`.
    pub oracle_g: bool,
    pub student_refresh_step: u64,
    pub student_initial: FpldParams,
    pub student_refreshed: FpldParams,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        let student_initial = FpldParams {
            n_r: 100_000,
            m_r: 1_000_000,
            b_r: 2000,
            rho: 1e-4,
            ..FpldParams::default()
        };
        let student_refreshed = FpldParams {
            n_r: 400_000,
            m_r: 4_000_000,
            ..student_initial
        };
        Self {
            seeds: 100,
            horizon: 4000,
            k: 4,
            bits_low: 6,
            bits_high: 10,
            noise_sd: 0.02,
            window: 2000,
            refresh_period: 1000,
            n_min: 10,
            b_cal_bits: 32,
            n_init: 2000,
            drift: 0.40,
            drift_type_magnitude: 0.40,
            ramp_len: 1500,
            period: 500,
            bandwidth_mixes: vec![vec![10, 10, 10, 10], vec![3, 10, 10, 10], vec![3, 3, 10, 10], vec![4, 4, 4, 4]],
            hetero_drift: 0.40,
            oracle_g: true,
            student_refresh_step: 2000,
            student_initial,
            student_refreshed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c, Config::default());
        assert!((c.bettor.cap(0.1) - 3.2258).abs() < 1e-4);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = Config::from_toml_str("[e1]\nseeds = 10\n[run]\nworkers = 2\n").unwrap();
        assert_eq!(c.e1.seeds, 10);
        assert_eq!(c.run.workers, 2);
        assert!(Config::from_toml_str("[e1]\nseedz = 10\n").is_err());
        assert!(Config::from_toml_str("[e1]\nseeds = 0\n").is_err());
        assert!(Config::from_toml_str("[slack]\nalpha = 1.5\n").is_err());
        assert!(Config::from_toml_str("[alarm]\ndelta_e = 0.1\n").is_err());
        let both = "[slack]\ndelta_e = 0.1\n[alarm]\ndelta_e = 0.1\n[envelope]\ndelta_e = 0.1\n";
        assert!(Config::from_toml_str(both).is_ok());
    }

    #[test]
    fn round_trip() {
        let c = Config::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), c);
    }
}
