//! Comparison predictors: Markov and Chebyshev bounds over a fixed training
//! prefix, and a running-maximum monitor stopped by the Jeffreys Bayes-factor
//! bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evt::Prediction;
use crate::stop::StopDecision;
use crate::stream::SummaryStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("markov bound needs a positive mean, got {0}")]
    ZeroMean(f64),
    #[error("invalid baseline config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Exceedance probability the Markov/Chebyshev levels are set at.
    pub tail_prob: f64,
    pub bayes_b: f64,
    pub bayes_theta: f64,
    /// Training prefix length for Markov/Chebyshev.
    pub fixed_training: usize,
    /// Use Cantelli's one-sided bound instead of the symmetric Chebyshev one.
    pub cantelli: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            tail_prob: 0.05,
            bayes_b: 100.0,
            bayes_theta: 0.95,
            fixed_training: 1200,
            cantelli: false,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.tail_prob > 0.0 && self.tail_prob <= 1.0) {
            return Err(BaselineError::InvalidConfig(format!(
                "tail_prob must lie in (0, 1], got {}",
                self.tail_prob
            )));
        }
        if self.fixed_training == 0 {
            return Err(BaselineError::InvalidConfig("fixed_training must be positive".into()));
        }
        jeffreys_min_runs(self.bayes_b, self.bayes_theta).map(|_| ())
    }
}

/// Level `mean / tail_prob`, exceeded with probability at most `tail_prob`.
pub fn markov_predict(stats: &SummaryStats, cfg: &BaselineConfig) -> Result<Prediction, BaselineError> {
    if !(stats.mean > 0.0) {
        return Err(BaselineError::ZeroMean(stats.mean));
    }
    Ok(Prediction {
        value: stats.mean / cfg.tail_prob,
        ci_low: None,
        ci_high: None,
        horizon: None,
        method: "markov".into(),
        fallback_used: false,
    })
}

/// `mean + k * std` with `k = sqrt(1 / tail_prob)`, or Cantelli's
/// `k = sqrt((1 - tail_prob) / tail_prob)` when enabled.
pub fn chebyshev_predict(stats: &SummaryStats, cfg: &BaselineConfig) -> Prediction {
    let (k, method) = if cfg.cantelli {
        (((1.0 - cfg.tail_prob) / cfg.tail_prob).sqrt(), "chebyshev-cantelli")
    } else {
        ((1.0 / cfg.tail_prob).sqrt(), "chebyshev")
    };
    Prediction {
        value: stats.mean + k * stats.std,
        ci_low: None,
        ci_high: None,
        horizon: None,
        method: method.into(),
        fallback_used: false,
    }
}

/// Smallest `K >= 1` with `theta^K <= 1/B`: `ceil(-log2 B / log2 theta)`.
pub fn jeffreys_min_runs(b: f64, theta: f64) -> Result<usize, BaselineError> {
    if !(b > 1.0) || !b.is_finite() {
        return Err(BaselineError::InvalidConfig(format!("Bayes factor must exceed 1, got {b}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(BaselineError::InvalidConfig(format!(
            "theta must lie in (0, 1), got {theta}"
        )));
    }
    let k = (-b.log2() / theta.log2()).ceil();
    Ok((k as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BayesMonitorState {
    tau: u64,
    consecutive_below: usize,
    required_k: usize,
}

impl BayesMonitorState {
    pub fn new(required_k: usize) -> Result<Self, BaselineError> {
        if required_k == 0 {
            return Err(BaselineError::InvalidConfig("required K must be positive".into()));
        }
        Ok(Self {
            tau: 0,
            consecutive_below: 0,
            required_k,
        })
    }

    pub fn from_config(cfg: &BaselineConfig) -> Result<Self, BaselineError> {
        Self::new(jeffreys_min_runs(cfg.bayes_b, cfg.bayes_theta)?)
    }

    /// Running maximum so far; the prediction on acceptance.
    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn consecutive_below(&self) -> usize {
        self.consecutive_below
    }

    pub fn required_k(&self) -> usize {
        self.required_k
    }

    pub fn prediction(&self) -> Prediction {
        Prediction {
            value: self.tau as f64,
            ci_low: None,
            ci_high: None,
            horizon: None,
            method: "bayes".into(),
            fallback_used: false,
        }
    }
}

/// A new record resets the count; otherwise `K` consecutive non-records
/// accept `P(delta <= tau)`.
pub fn bayes_monitor_step(mut state: BayesMonitorState, delta: u64) -> (BayesMonitorState, StopDecision) {
    if delta > state.tau {
        state.tau = delta;
        state.consecutive_below = 0;
    } else {
        state.consecutive_below += 1;
    }
    let decision = if state.consecutive_below >= state.required_k {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    };
    (state, decision)
}
