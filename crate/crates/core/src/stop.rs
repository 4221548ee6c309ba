//! Stopping tests over the tail of a cost-difference stream.
//!
//! Two tests are provided: the exponentiality test, which checks the
//! coefficient of variation of the top-k values for every k in a range, and
//! the Laplace (rule of succession) test, which stops after `j` consecutive
//! samples fail to beat the running record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::top_k;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StopTestError {
    #[error("invalid exponentiality config: k_min={k_min}, k_max={k_max} (need 2 <= k_min <= k_max)")]
    InvalidConfig { k_min: usize, k_max: usize },
    #[error("top-{k} values all zero; coefficient of variation undefined")]
    DegenerateTail { k: usize },
    #[error("quiet-run length j must be positive")]
    ZeroRunLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpTestConfig {
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ExpTestConfig {
    fn default() -> Self {
        Self {
            k_min: 10,
            k_max: 100,
        }
    }
}

impl ExpTestConfig {
    pub fn validate(&self) -> Result<(), StopTestError> {
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(StopTestError::InvalidConfig {
                k_min: self.k_min,
                k_max: self.k_max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub k: usize,
    pub cv: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailTestResult {
    pub passed: bool,
    pub cv_trace: Vec<CvPoint>,
    pub failing_k: Option<usize>,
    /// Set when the stream was shorter than `k_max` and no k was examined.
    #[serde(default)]
    pub insufficient_samples: bool,
}

/// Bias-corrected acceptance bound for the top-k CV.
pub fn cv_bound(k: usize) -> f64 {
    1.0 + 1.0 / (4.0 * k as f64)
}

/// Exponentiality test over the top-k values for k in `[k_min, k_max]`.
///
/// Fails at the first k whose CV reaches its bound. Streams shorter than
/// `k_max` never pass.
pub fn exponentiality_test(
    deltas: &[u64],
    cfg: &ExpTestConfig,
) -> Result<TailTestResult, StopTestError> {
    cfg.validate()?;
    if deltas.len() < cfg.k_max {
        return Ok(TailTestResult {
            passed: false,
            cv_trace: Vec::new(),
            failing_k: None,
            insufficient_samples: true,
        });
    }
    let top = top_k(deltas, cfg.k_max).expect("k_max checked against length");

    let mut trace = Vec::with_capacity(cfg.k_max - cfg.k_min + 1);
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for (i, &d) in top.iter().enumerate() {
        let k = i + 1;
        let x = d as f64;
        let delta = x - mean;
        mean += delta / k as f64;
        m2 += delta * (x - mean);
        if k < cfg.k_min {
            continue;
        }
        if mean <= 0.0 {
            return Err(StopTestError::DegenerateTail { k });
        }
        let cv = (m2 / k as f64).max(0.0).sqrt() / mean;
        let bound = cv_bound(k);
        trace.push(CvPoint { k, cv, bound });
        if cv >= bound {
            return Ok(TailTestResult {
                passed: false,
                cv_trace: trace,
                failing_k: Some(k),
                insufficient_samples: false,
            });
        }
    }
    Ok(TailTestResult {
        passed: true,
        cv_trace: trace,
        failing_k: None,
        insufficient_samples: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Running state of the Laplace test. The first sample seeds the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaplaceState {
    record_value: Option<u64>,
    runs_since_record: u64,
    j: u64,
}

impl LaplaceState {
    pub fn new(j: u64) -> Result<Self, StopTestError> {
        if j == 0 {
            return Err(StopTestError::ZeroRunLength);
        }
        Ok(Self {
            record_value: None,
            runs_since_record: 0,
            j,
        })
    }

    pub fn record_value(&self) -> Option<u64> {
        self.record_value
    }

    pub fn runs_since_record(&self) -> u64 {
        self.runs_since_record
    }

    pub fn j(&self) -> u64 {
        self.j
    }

    /// Probability mass the rule of succession leaves for a new record after
    /// `j` quiet runs: `1 / (j + 1)`.
    pub fn exceedance_probability(&self) -> f64 {
        1.0 / (self.j as f64 + 1.0)
    }
}

pub fn laplace_step(state: LaplaceState, delta: u64) -> (LaplaceState, StopDecision) {
    let mut next = state;
    match state.record_value {
        Some(record) if delta <= record => {
            next.runs_since_record += 1;
            let decision = if next.runs_since_record == next.j {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            };
            (next, decision)
        }
        _ => {
            next.record_value = Some(delta);
            next.runs_since_record = 0;
            (next, StopDecision::Continue)
        }
    }
}
