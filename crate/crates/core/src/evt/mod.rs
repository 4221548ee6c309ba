//! Peaks-over-threshold tail modelling and worst-case extrapolation.
//!
//! Pipeline: pick a threshold `u` (nearest-rank quantile or bootstrap search
//! over quantiles 0.99..0.75), fit the exceedances (exponential, generalized
//! Pareto or Poisson point process), check the shape is non-positive, then
//! read off the return level for the requested horizon. Bootstrap replicates
//! provide percentile confidence intervals.

mod bootstrap;
mod fit;
mod predict;
mod return_level;
mod threshold;


use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{
    bootstrap_ci, bootstrap_replicates, percentile_interval, resample, BootstrapConfig,
    BootstrapMode,
};
pub use fit::{
    fit_exponential, fit_gpd, fit_pp, gpd_log_likelihood, pp_negative_log_likelihood, pwm_seed,
};
pub use predict::{
    analyze_tail, curve_horizons, fit_at_threshold, predict_wcdiff, return_level_curve, CurvePoint, PredictConfig,
    Prediction, TailAnalysis, TailMethod,
};
pub use return_level::{return_level, shape_is_valid, upper_endpoint};
pub use threshold::{
    candidate_quantiles, select_threshold_bootstrap, select_threshold_quantile, CandidateScore,
    ThresholdChoice, ThresholdKind, ThresholdMethod,
};

/// Fewest exceedances any fit accepts.
pub const MIN_EXCEEDANCES: usize = 10;

/// Fuzzing iterations per return-period unit.
pub const DEFAULT_OBS_PER_PERIOD: u64 = 365;

/// Below this |ξ| the exponential limit of the formulas is used.
pub(crate) const SHAPE_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvtError {
    #[error("no data")]
    Empty,
    #[error("quantile level {0} must lie strictly between 0 and 1")]
    InvalidQuantile(f64),
    #[error("only {found} values strictly above the threshold (need {needed})")]
    TooFewExceedances { found: usize, needed: usize },
    #[error("no candidate threshold had enough exceedances and stable fits")]
    NoValidCandidate,
    #[error("excesses must be finite and strictly positive")]
    InvalidExcesses,
    #[error("no feasible starting point for the likelihood")]
    Infeasible,
    #[error("optimizer did not converge within {evals} evaluations")]
    NonConvergence { evals: usize },
    #[error("return period of {periods} period units must exceed 1")]
    HorizonTooShort { periods: f64 },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailedReplicates { failed: usize, total: usize },
    #[error("invalid bootstrap config: {0}")]
    InvalidBootstrap(String),
    #[error("tail shape {0} is positive; no finite worst case")]
    HeavyTail(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailKind {
    Exponential,
    Gpd,
    Pp,
}

/// A fitted tail model.
///
/// For `Exponential` and `Gpd`, `scale` and `shape` describe the excesses
/// over `threshold` and `location == threshold`. For `Pp`, `(location,
/// scale, shape)` are the point-process (GEV) parameters per period of
/// `obs_per_period` observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModelParams {
    pub kind: TailKind,
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    pub threshold: f64,
    /// Fraction of observations strictly above the threshold.
    pub zeta: f64,
    pub obs_per_period: u64,
}

/// Nearest-rank empirical quantile of an ascending slice: the value at rank
/// `ceil(q * n)` (1-based), clamped to `[1, n]`.
pub fn quantile_nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    // the epsilon keeps 0.95 * 100 at rank 95 despite binary rounding
    let rank = (q * n as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile_nearest_rank(&v, 0.95), 95.0);
        assert_eq!(quantile_nearest_rank(&v, 0.75), 75.0);
        assert_eq!(quantile_nearest_rank(&v, 0.001), 1.0);
        assert_eq!(quantile_nearest_rank(&v, 0.999), 100.0);
        assert_eq!(quantile_nearest_rank(&[4.0], 0.5), 4.0);
        for i in 75..=99 {
            let q = i as f64 / 100.0;
            assert_eq!(quantile_nearest_rank(&v, q), i as f64);
        }
    }
}
