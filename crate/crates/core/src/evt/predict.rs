use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_replicates, percentile_interval, BootstrapConfig};
use super::fit::{fit_exponential, fit_pp};
use super::return_level::{return_level, shape_is_valid};
use super::threshold::{
    select_threshold_bootstrap, select_threshold_quantile, ThresholdChoice, ThresholdMethod,
};
use super::{
    quantile_nearest_rank, sorted_copy, EvtError, TailModelParams, DEFAULT_OBS_PER_PERIOD,
    MIN_EXCEEDANCES,
};

/// Tail model used for extrapolation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailMethod {
    Exponential,
    #[default]
    Pp,
}

impl fmt::Display for TailMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TailMethod::Exponential => "exponential",
            TailMethod::Pp => "pp",
        })
    }
}

impl FromStr for TailMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" | "exp" => Ok(TailMethod::Exponential),
            "pp" => Ok(TailMethod::Pp),
            other => Err(format!("unknown tail method '{other}'")),
        }
    }
}

/// A worst-case prediction, from the tail model or a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// `None` for predictors that do not extrapolate.
    pub horizon: Option<u64>,
    pub method: String,
    pub fallback_used: bool,
}

impl Prediction {
    /// Fallback value: the largest observed delta.
    pub fn observed_max(deltas: &[f64], horizon: Option<u64>, method: String) -> Self {
        let value = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            value,
            ci_low: None,
            ci_high: None,
            horizon,
            method,
            fallback_used: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub horizon: u64,
    pub method: TailMethod,
    pub threshold: ThresholdMethod,
    pub bootstrap: BootstrapConfig,
    /// Resamples per candidate during the threshold search; defaults to
    /// `bootstrap.resamples`.
    pub threshold_resamples: Option<usize>,
    pub obs_per_period: u64,
    pub compute_ci: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            horizon: 20_000,
            method: TailMethod::Pp,
            threshold: ThresholdMethod::Bootstrap,
            bootstrap: BootstrapConfig::default(),
            threshold_resamples: None,
            obs_per_period: DEFAULT_OBS_PER_PERIOD,
            compute_ci: true,
        }
    }
}

impl PredictConfig {
    fn label(&self) -> String {
        format!("evt-{}", self.method)
    }

    fn choose_threshold(&self, deltas: &[f64]) -> Result<ThresholdChoice, EvtError> {
        match self.threshold {
            ThresholdMethod::Quantile(q) => select_threshold_quantile(deltas, q),
            ThresholdMethod::Bootstrap => {
                let cfg = BootstrapConfig {
                    resamples: self.threshold_resamples.unwrap_or(self.bootstrap.resamples),
                    ..self.bootstrap
                };
                select_threshold_bootstrap(deltas, &cfg)
            }
        }
    }
}

/// Everything the predictor decided along the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailAnalysis {
    pub prediction: Prediction,
    pub threshold: Option<ThresholdChoice>,
    pub model: Option<TailModelParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub horizon: u64,
    pub level: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Fits `method` to the values of `deltas` strictly above `u`.
pub fn fit_at_threshold(
    deltas: &[f64],
    u: f64,
    method: TailMethod,
    obs_per_period: u64,
) -> Result<TailModelParams, EvtError> {
    if deltas.is_empty() {
        return Err(EvtError::Empty);
    }
    match method {
        TailMethod::Pp => fit_pp(deltas, u, obs_per_period),
        TailMethod::Exponential => {
            let excesses: Vec<f64> = deltas.iter().filter(|&&x| x > u).map(|x| x - u).collect();
            if excesses.len() < MIN_EXCEEDANCES {
                return Err(EvtError::TooFewExceedances {
                    found: excesses.len(),
                    needed: MIN_EXCEEDANCES,
                });
            }
            let zeta = excesses.len() as f64 / deltas.len() as f64;
            fit_exponential(&excesses, u, zeta, obs_per_period)
        }
    }
}

fn checked_level(model: &TailModelParams, horizon: u64) -> Result<f64, EvtError> {
    if !shape_is_valid(model) {
        return Err(EvtError::HeavyTail(model.shape));
    }
    return_level(model, horizon)
}

/// Refits the tail on bootstrap resamples, keeping the threshold at the same
/// quantile level as the original choice.
fn replicate_models(
    deltas: &[f64],
    quantile: f64,
    cfg: &PredictConfig,
) -> Vec<Result<TailModelParams, EvtError>> {
    bootstrap_replicates(deltas, &cfg.bootstrap, 0, |sample| {
        let sorted = sorted_copy(sample);
        let u = quantile_nearest_rank(&sorted, quantile);
        fit_at_threshold(sample, u, cfg.method, cfg.obs_per_period)
    })
}

fn interval_at(
    models: &[Result<TailModelParams, EvtError>],
    horizon: u64,
    level: f64,
) -> Result<(f64, f64), EvtError> {
    let mut values: Vec<f64> = models
        .iter()
        .filter_map(|m| m.as_ref().ok())
        .filter_map(|m| checked_level(m, horizon).ok())
        .filter(|v| v.is_finite())
        .collect();
    let failed = models.len() - values.len();
    if 2 * failed > models.len() {
        return Err(EvtError::TooManyFailedReplicates {
            failed,
            total: models.len(),
        });
    }
    Ok(percentile_interval(&mut values, level))
}

/// Threshold, fit, shape check and return level, falling back to the observed
/// maximum whenever a step fails. Only empty input is an error.
pub fn analyze_tail(deltas: &[f64], cfg: &PredictConfig) -> Result<TailAnalysis, EvtError> {
    if deltas.is_empty() {
        return Err(EvtError::Empty);
    }
    if cfg.horizon == 0 {
        return Err(EvtError::ZeroHorizon);
    }
    let label = cfg.label();
    let fallback = |threshold, model, err: EvtError| TailAnalysis {
        prediction: Prediction::observed_max(
            deltas,
            Some(cfg.horizon),
            format!("{label} fallback: {err}"),
        ),
        threshold,
        model,
    };

    let choice = match cfg.choose_threshold(deltas) {
        Ok(c) => c,
        Err(e) => return Ok(fallback(None, None, e)),
    };
    let model = match fit_at_threshold(deltas, choice.u, cfg.method, cfg.obs_per_period) {
        Ok(m) => m,
        Err(e) => return Ok(fallback(Some(choice), None, e)),
    };
    let value = match checked_level(&model, cfg.horizon) {
        Ok(v) => v,
        Err(e) => return Ok(fallback(Some(choice), Some(model), e)),
    };

    let mut method = label;
    let (mut ci_low, mut ci_high) = (None, None);
    if cfg.compute_ci {
        let models = replicate_models(deltas, choice.quantile, cfg);
        match interval_at(&models, cfg.horizon, cfg.bootstrap.ci_level) {
            // percentile intervals can miss a skewed point estimate
            Ok((lo, hi)) => {
                ci_low = Some(lo.min(value));
                ci_high = Some(hi.max(value));
            }
            Err(e) => method = format!("{method} (no interval: {e})"),
        }
    }
    Ok(TailAnalysis {
        prediction: Prediction {
            value,
            ci_low,
            ci_high,
            horizon: Some(cfg.horizon),
            method,
            fallback_used: false,
        },
        threshold: Some(choice),
        model: Some(model),
    })
}

pub fn predict_wcdiff(
    deltas: &[f64],
    horizon: u64,
    method: TailMethod,
    threshold: ThresholdMethod,
    bootstrap: &BootstrapConfig,
) -> Result<Prediction, EvtError> {
    let cfg = PredictConfig {
        horizon,
        method,
        threshold,
        bootstrap: *bootstrap,
        ..Default::default()
    };
    analyze_tail(deltas, &cfg).map(|a| a.prediction)
}

/// Horizons on a 1-2-5 grid from 1,000 up to `max`, plus `max` itself.
pub fn curve_horizons(max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut decade = 1000u64;
    'outer: loop {
        for m in [1, 2, 5] {
            let h = decade * m;
            if h >= max {
                break 'outer;
            }
            out.push(h);
        }
        decade *= 10;
    }
    out.push(max);
    out
}

/// Return levels (with bootstrap intervals when `cfg.compute_ci`) at each
/// horizon. Unlike [`analyze_tail`] there is no fallback: a failed threshold
/// or fit, or a heavy tail, is an error.
pub fn return_level_curve(
    deltas: &[f64],
    cfg: &PredictConfig,
    horizons: &[u64],
) -> Result<Vec<CurvePoint>, EvtError> {
    if deltas.is_empty() {
        return Err(EvtError::Empty);
    }
    let choice = cfg.choose_threshold(deltas)?;
    let model = fit_at_threshold(deltas, choice.u, cfg.method, cfg.obs_per_period)?;
    if !shape_is_valid(&model) {
        return Err(EvtError::HeavyTail(model.shape));
    }
    let models = if cfg.compute_ci {
        replicate_models(deltas, choice.quantile, cfg)
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let level = return_level(&model, h)?;
        let (ci_low, ci_high) = if cfg.compute_ci {
            match interval_at(&models, h, cfg.bootstrap.ci_level) {
                Ok((lo, hi)) => (Some(lo.min(level)), Some(hi.max(level))),
                Err(_) => (None, None),
            }
        } else {
            (None, None)
        };
        out.push(CurvePoint {
            horizon: h,
            level,
            ci_low,
            ci_high,
        });
    }
    Ok(out)
}
