//! Deterministic differential fuzzing over synthetic cost oracles.
//!
//! A campaign hill-climbs on the cost difference `|cost(x, z1) - cost(x, z2)|`,
//! runs a stopping test as samples arrive, predicts the worst case from the
//! prefix at the stopping point, and keeps fuzzing to the budget so the
//! prediction can be scored against what the rest of the run observed.

mod campaign;
mod target;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineConfig, BaselineError};
use crate::evt::{BootstrapConfig, Prediction, TailAnalysis, ThresholdMethod, DEFAULT_OBS_PER_PERIOD};
use crate::stop::{ExpTestConfig, StopTestError};
use crate::stream::CampaignLog;

pub use campaign::{mutate, predict_training, replay_stop, run_campaign, Triple};
pub use target::{builtin_target, BuiltinTarget, DifferentialTarget, TargetSpec};

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid fuzz config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    StopTest(#[from] StopTestError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Prediction(#[from] crate::evt::EvtError),
    #[error(transparent)]
    Stream(#[from] crate::stream::StreamError),
    #[error("serializing config: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Stopping rule checked while the campaign runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SttKind {
    /// Top-k coefficient-of-variation test, every `check_every` samples.
    Exponentiality,
    /// `j` samples without a new record.
    Laplace,
    /// Jeffreys Bayes-factor monitor with `K` from the baseline config.
    Bayes,
    /// Stop after `baseline.fixed_training` samples.
    Fixed,
    /// Never stop early.
    None,
}

impl fmt::Display for SttKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SttKind::Exponentiality => "exponentiality",
            SttKind::Laplace => "laplace",
            SttKind::Bayes => "bayes",
            SttKind::Fixed => "fixed",
            SttKind::None => "none",
        })
    }
}

impl FromStr for SttKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponentiality" => Ok(SttKind::Exponentiality),
            "laplace" => Ok(SttKind::Laplace),
            "bayes" => Ok(SttKind::Bayes),
            "fixed" => Ok(SttKind::Fixed),
            "none" => Ok(SttKind::None),
            other => Err(format!("unknown stopping test '{other}'")),
        }
    }
}

/// Worst-case predictor run on the training prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    EvtExponential,
    EvtPp,
    Markov,
    Chebyshev,
    Bayes,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 5] = [
        PredictorKind::EvtExponential,
        PredictorKind::EvtPp,
        PredictorKind::Markov,
        PredictorKind::Chebyshev,
        PredictorKind::Bayes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::EvtExponential => "evt_exponential",
            PredictorKind::EvtPp => "evt_pp",
            PredictorKind::Markov => "markov",
            PredictorKind::Chebyshev => "chebyshev",
            PredictorKind::Bayes => "bayes",
        }
    }

    /// Stopping rule each predictor is normally paired with.
    pub fn default_stt(self) -> SttKind {
        match self {
            PredictorKind::EvtExponential | PredictorKind::EvtPp => SttKind::Exponentiality,
            PredictorKind::Markov | PredictorKind::Chebyshev => SttKind::Fixed,
            PredictorKind::Bayes => SttKind::Bayes,
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PredictorKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    /// Iterations to run, stop or no stop.
    pub budget: usize,
    pub seed: u64,
    pub stt: SttKind,
    pub exp_test: ExpTestConfig,
    pub laplace_j: u64,
    pub predictor: PredictorKind,
    pub horizon: u64,
    pub check_every: usize,
    pub threshold: ThresholdMethod,
    /// The bootstrap seed is replaced by the campaign seed.
    pub bootstrap: BootstrapConfig,
    pub threshold_resamples: Option<usize>,
    pub obs_per_period: u64,
    pub baseline: BaselineConfig,
    /// Safety valve; campaigns that hit it are flagged and not reproducible.
    pub max_wall_secs: Option<f64>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            budget: 20_000,
            seed: 0,
            stt: SttKind::Exponentiality,
            exp_test: ExpTestConfig::default(),
            laplace_j: 100,
            predictor: PredictorKind::EvtPp,
            horizon: 20_000,
            check_every: 100,
            threshold: ThresholdMethod::Bootstrap,
            bootstrap: BootstrapConfig::default(),
            threshold_resamples: None,
            obs_per_period: DEFAULT_OBS_PER_PERIOD,
            baseline: BaselineConfig::default(),
            max_wall_secs: None,
        }
    }
}

impl FuzzConfig {
    pub fn validate(&self) -> Result<(), FuzzError> {
        if self.check_every == 0 || self.budget < self.check_every {
            return Err(FuzzError::InvalidConfig(format!(
                "need budget >= check_every >= 1, got budget {} and check_every {}",
                self.budget, self.check_every
            )));
        }
        if self.horizon == 0 {
            return Err(FuzzError::InvalidConfig("horizon must be positive".into()));
        }
        if self.obs_per_period == 0 {
            return Err(FuzzError::InvalidConfig("obs_per_period must be positive".into()));
        }
        self.exp_test.validate()?;
        self.baseline.validate()?;
        if self.laplace_j == 0 {
            return Err(FuzzError::InvalidConfig("laplace_j must be positive".into()));
        }
        self.bootstrap
            .validate()
            .map_err(|e| FuzzError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub log: CampaignLog,
    /// Number of training samples when the stopping test passed.
    pub stop_index: Option<usize>,
    pub prediction: Option<Prediction>,
    /// Threshold and fitted model, for the EVT predictors.
    pub tail: Option<TailAnalysis>,
    pub training_max: Option<u64>,
    /// Largest delta over the whole run, including after the stop.
    pub ground_truth_max: u64,
    pub error_pct: Option<f64>,
    /// Cost units executed after the stop.
    pub perf_gain: u64,
    /// True when the wall-clock cap cut the run short.
    pub truncated: bool,
}

/// Signed relative error in percent; positive means overestimate. With a zero
/// ground truth only an exact zero prediction has a defined error (0).
pub fn error_pct(prediction: f64, ground_truth: u64) -> Option<f64> {
    if ground_truth == 0 {
        return (prediction == 0.0).then_some(0.0);
    }
    let g = ground_truth as f64;
    Some(100.0 * (prediction - g) / g)
}
