//! Experiment orchestration: seeded ensembles, summaries, plot data, and
//! the consolidated report.

pub mod config;
pub mod experiments;
pub mod output;
pub mod record;
pub mod runner;
pub mod swarm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::Config;
pub use output::{report, summary_csv, write_outputs, Report};
pub use record::{StepRow, TerminalSummary, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown experiment id {0:?}")]
    UnknownExperiment(String),
    #[error(transparent)]
    Slack(#[from] crate::slack_model::SlackError),
    #[error(transparent)]
    Betting(#[from] crate::betting::BettingError),
    #[error(transparent)]
    Envelope(#[from] crate::envelope::EnvelopeError),
    #[error(transparent)]
    Quantize(#[from] crate::quantize::QuantizeError),
    #[error(transparent)]
    Federation(#[from] crate::federation::FederationError),
    #[error(transparent)]
    Controller(#[from] crate::controller::ControllerError),
    #[error(transparent)]
    Training(#[from] crate::training_model::TrainingError),
    #[error(transparent)]
    Stream(#[from] crate::simgen::StreamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    E1,
    E2,
    E4,
    E5,
    E7,
    E8,
    E10,
    E11,
    E12,
    Envelope,
    Necessity,
    EndToEnd,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 12] = [
        ExperimentId::E1,
        ExperimentId::E2,
        ExperimentId::E4,
        ExperimentId::E5,
        ExperimentId::E7,
        ExperimentId::E8,
        ExperimentId::E10,
        ExperimentId::E11,
        ExperimentId::E12,
        ExperimentId::Envelope,
        ExperimentId::Necessity,
        ExperimentId::EndToEnd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::E1 => "e1",
            ExperimentId::E2 => "e2",
            ExperimentId::E4 => "e4",
            ExperimentId::E5 => "e5",
            ExperimentId::E7 => "e7",
            ExperimentId::E8 => "e8",
            ExperimentId::E10 => "e10",
            ExperimentId::E11 => "e11",
            ExperimentId::E12 => "e12",
            ExperimentId::Envelope => "envelope",
            ExperimentId::Necessity => "necessity",
            ExperimentId::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == key)
            .ok_or_else(|| HarnessError::UnknownExperiment(s.to_string()))
    }
}

/// One summary statistic with optional reference value and acceptance band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub target: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Metric {
    pub fn info(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: None,
            lower: None,
            upper: None,
        }
    }

    pub fn reference(name: impl Into<String>, value: f64, target: f64) -> Self {
        Self {
            target: Some(target),
            ..Self::info(name, value)
        }
    }

    pub fn bounded(name: impl Into<String>, value: f64, target: Option<f64>, lower: Option<f64>, upper: Option<f64>) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            lower,
            upper,
        }
    }

    /// `None` when the metric carries no acceptance band.
    pub fn pass(&self) -> Option<bool> {
        if self.lower.is_none() && self.upper.is_none() {
            return None;
        }
        let lo = self.lower.is_none_or(|l| self.value >= l);
        let hi = self.upper.is_none_or(|u| self.value <= u);
        Some(lo && hi && !self.value.is_nan())
    }
}

/// An (x, y...) series backing one figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotData {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// A trajectory tagged with the sub-experiment it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedTrajectory {
    pub group: String,
    #[serde(flatten)]
    pub record: TrajectoryRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub id: ExperimentId,
    pub headline: String,
    pub metrics: Vec<Metric>,
    pub plots: Vec<PlotData>,
    pub trajectories: Vec<TaggedTrajectory>,
}

impl ExperimentOutput {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.value)
    }

    /// Metrics whose acceptance band failed.
    pub fn failures(&self) -> Vec<&Metric> {
        self.metrics.iter().filter(|m| m.pass() == Some(false)).collect()
    }
}

/// Runs one experiment end to end.
pub fn run_experiment(id: ExperimentId, cfg: &Config) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    match id {
        ExperimentId::E1 => experiments::e1(cfg),
        ExperimentId::E2 => experiments::e2(cfg),
        ExperimentId::E4 => experiments::e4(cfg),
        ExperimentId::E5 => experiments::e5(cfg),
        ExperimentId::E7 => experiments::e7(cfg),
        ExperimentId::E8 => experiments::e8(cfg),
        ExperimentId::E10 => experiments::e10(cfg),
        ExperimentId::E11 => experiments::e11(cfg),
        ExperimentId::E12 => experiments::e12(cfg),
        ExperimentId::Envelope => experiments::envelope(cfg),
        ExperimentId::Necessity => experiments::necessity(cfg),
        ExperimentId::EndToEnd => swarm::end_to_end(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        assert_eq!("End-To-End".parse::<ExperimentId>().unwrap(), ExperimentId::EndToEnd);
        assert!("e3".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn metric_bands() {
        assert_eq!(Metric::info("a", 1.0).pass(), None);
        assert_eq!(Metric::bounded("a", 1.0, None, Some(0.5), Some(1.0)).pass(), Some(true));
        assert_eq!(Metric::bounded("a", 1.1, None, None, Some(1.0)).pass(), Some(false));
        assert_eq!(Metric::bounded("a", f64::NAN, None, None, Some(1.0)).pass(), Some(false));
    }
}
