use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_replicates, percentile_interval, BootstrapConfig, BootstrapMode};
use super::fit::fit_gpd;
use super::{quantile_nearest_rank, sorted_copy, EvtError, DEFAULT_OBS_PER_PERIOD, MIN_EXCEEDANCES};

/// How a threshold was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Bootstrap,
    Quantile,
}

/// Requested threshold rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    #[default]
    Bootstrap,
    Quantile(f64),
}

impl fmt::Display for ThresholdMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMethod::Bootstrap => f.write_str("bootstrap"),
            ThresholdMethod::Quantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

impl FromStr for ThresholdMethod {
    type Err = String;

    /// Accepts `bootstrap`, `quantile` (0.95) or `quantile:<q>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bootstrap" => Ok(ThresholdMethod::Bootstrap),
            "quantile" => Ok(ThresholdMethod::Quantile(0.95)),
            other => {
                let q = other
                    .strip_prefix("quantile:")
                    .and_then(|q| q.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown threshold method '{other}'"))?;
                if q > 0.0 && q < 1.0 {
                    Ok(ThresholdMethod::Quantile(q))
                } else {
                    Err(format!("quantile level {q} must lie strictly between 0 and 1"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub quantile: f64,
    pub u: f64,
    /// Relative width of the bootstrap shape interval; `+inf` (serialized as
    /// `null`) for skipped candidates.
    #[serde(with = "infinite_as_null")]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub u: f64,
    pub method: ThresholdKind,
    /// Quantile level that produced `u`.
    pub quantile: f64,
    pub exceedance_count: usize,
    pub candidate_scores: Vec<CandidateScore>,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Candidate levels 0.99, 0.98, ..., 0.75.
pub fn candidate_quantiles() -> Vec<f64> {
    (0..25).map(|i| f64::from(99 - i) / 100.0).collect()
}

fn count_above(sorted: &[f64], u: f64) -> usize {
    sorted.len() - sorted.partition_point(|&x| x <= u)
}

pub fn select_threshold_quantile(deltas: &[f64], q: f64) -> Result<ThresholdChoice, EvtError> {
    if deltas.is_empty() {
        return Err(EvtError::Empty);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(EvtError::InvalidQuantile(q));
    }
    let sorted = sorted_copy(deltas);
    let u = quantile_nearest_rank(&sorted, q);
    let count = count_above(&sorted, u);
    if count < 2 {
        return Err(EvtError::TooFewExceedances {
            found: count,
            needed: 2,
        });
    }
    Ok(ThresholdChoice {
        u,
        method: ThresholdKind::Quantile,
        quantile: q,
        exceedance_count: count,
        candidate_scores: Vec::new(),
    })
}

/// Bootstrap search over [`candidate_quantiles`]: each candidate is scored by
/// the width of the percentile interval of the resampled GPD shape, divided
/// by `|xi_hat| + 0.1`. Lowest score wins; ties go to the higher quantile.
pub fn select_threshold_bootstrap(
    deltas: &[f64],
    cfg: &BootstrapConfig,
) -> Result<ThresholdChoice, EvtError> {
    cfg.validate()?;
    if deltas.is_empty() {
        return Err(EvtError::Empty);
    }
    let sorted = sorted_copy(deltas);
    let n = sorted.len() as f64;
    // excesses are unordered, so the resampling is always i.i.d.
    let cfg = BootstrapConfig {
        mode: BootstrapMode::Iid,
        ci_level: 0.95,
        ..*cfg
    };

    // Discrete streams repeat thresholds; identical u means identical score.
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut scores = Vec::with_capacity(25);
    let mut best: Option<(usize, f64)> = None;
    for (idx, q) in candidate_quantiles().into_iter().enumerate() {
        let u = quantile_nearest_rank(&sorted, q);
        let score = *cache.entry(u.to_bits()).or_insert_with(|| {
            let start = sorted.partition_point(|&x| x <= u);
            let excesses: Vec<f64> = sorted[start..].iter().map(|x| x - u).collect();
            score_candidate(&excesses, u, n, idx as u64, &cfg)
        });
        if score.is_finite() && best.map_or(true, |(_, s)| score < s) {
            best = Some((idx, score));
        }
        scores.push(CandidateScore { quantile: q, u, score });
    }

    let (idx, _) = best.ok_or(EvtError::NoValidCandidate)?;
    let chosen = scores[idx];
    Ok(ThresholdChoice {
        u: chosen.u,
        method: ThresholdKind::Bootstrap,
        quantile: chosen.quantile,
        exceedance_count: count_above(&sorted, chosen.u),
        candidate_scores: scores,
    })
}

fn score_candidate(excesses: &[f64], u: f64, n: f64, idx: u64, cfg: &BootstrapConfig) -> f64 {
    if excesses.len() < MIN_EXCEEDANCES {
        return f64::INFINITY;
    }
    let zeta = excesses.len() as f64 / n;
    let xi_hat = match fit_gpd(excesses, u, zeta, DEFAULT_OBS_PER_PERIOD) {
        Ok(p) => p.shape,
        Err(_) => return f64::INFINITY,
    };
    let results = bootstrap_replicates(excesses, cfg, (idx + 1) << 32, |s| {
        fit_gpd(s, u, zeta, DEFAULT_OBS_PER_PERIOD).map(|p| p.shape)
    });
    let mut shapes: Vec<f64> = results.into_iter().filter_map(Result::ok).collect();
    let failed = cfg.resamples - shapes.len();
    if 2 * failed > cfg.resamples {
        return f64::INFINITY;
    }
    let (lo, hi) = percentile_interval(&mut shapes, cfg.ci_level);
    (hi - lo) / (xi_hat.abs() + 0.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_on_permutation() {
        let deltas: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let c = select_threshold_quantile(&deltas, 0.95).unwrap();
        assert_eq!(c.u, 95.0);
        assert_eq!(c.exceedance_count, 5);
        assert_eq!(c.method, ThresholdKind::Quantile);
    }

    #[test]
    fn quantile_constant_stream() {
        let deltas = vec![7.0; 50];
        assert!(matches!(
            select_threshold_quantile(&deltas, 0.95),
            Err(EvtError::TooFewExceedances { found: 0, .. })
        ));
        assert!(matches!(select_threshold_quantile(&deltas, 1.0), Err(EvtError::InvalidQuantile(_))));
    }

    #[test]
    fn bootstrap_constant_stream() {
        let deltas = vec![3.0; 500];
        let cfg = BootstrapConfig { resamples: 20, ..Default::default() };
        assert_eq!(select_threshold_bootstrap(&deltas, &cfg), Err(EvtError::NoValidCandidate));
    }

    #[test]
    fn bootstrap_choice_is_a_candidate() {
        let deltas: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 2003) as f64).collect();
        let cfg = BootstrapConfig { resamples: 50, seed: 3, ..Default::default() };
        let c = select_threshold_bootstrap(&deltas, &cfg).unwrap();
        assert_eq!(c.candidate_scores.len(), 25);
        assert!(c.candidate_scores.iter().any(|s| s.u == c.u && s.quantile == c.quantile));
        assert_eq!(c.exceedance_count, deltas.iter().filter(|&&d| d > c.u).count());
        let again = select_threshold_bootstrap(&deltas, &cfg).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn skipped_scores_survive_json() {
        let c = CandidateScore { quantile: 0.99, u: 3.0, score: f64::INFINITY };
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"quantile":0.99,"u":3.0,"score":null}"#);
        assert_eq!(serde_json::from_str::<CandidateScore>(&json).unwrap(), c);
    }

    #[test]
    fn parse_methods() {
        assert_eq!("bootstrap".parse(), Ok(ThresholdMethod::Bootstrap));
        assert_eq!("quantile".parse(), Ok(ThresholdMethod::Quantile(0.95)));
        assert_eq!("quantile:0.9".parse(), Ok(ThresholdMethod::Quantile(0.9)));
        assert!("quantile:1.5".parse::<ThresholdMethod>().is_err());
        assert!("median".parse::<ThresholdMethod>().is_err());
    }
}
