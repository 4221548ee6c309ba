use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvtError, quantile_nearest_rank};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMode {
    /// Independent resampling of individual points.
    #[default]
    Iid,
    /// Moving-block resampling with block length `ceil(n^(1/3))`.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub ci_level: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: BootstrapMode,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            ci_level: 0.95,
            seed: 0,
            mode: BootstrapMode::Iid,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), EvtError> {
        if self.resamples < 2 {
            return Err(EvtError::InvalidBootstrap(format!(
                "resamples must be at least 2, got {}",
                self.resamples
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(EvtError::InvalidBootstrap(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

/// Replicate generator: one ChaCha stream per `(seed, stream)` pair, so
/// replicates can run in any order and still reproduce.
pub(crate) fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn resample<R: Rng + ?Sized>(data: &[f64], rng: &mut R, mode: BootstrapMode) -> Vec<f64> {
    let n = data.len();
    if n == 0 {
        return Vec::new();
    }
    match mode {
        BootstrapMode::Iid => (0..n).map(|_| data[rng.random_range(0..n)]).collect(),
        BootstrapMode::Block => {
            let len = ((n as f64).cbrt().ceil() as usize).clamp(1, n);
            let mut out = Vec::with_capacity(n + len);
            while out.len() < n {
                let start = rng.random_range(0..=n - len);
                out.extend_from_slice(&data[start..start + len]);
            }
            out.truncate(n);
            out
        }
    }
}

/// Runs `f` on `cfg.resamples` resamples of `data`, in replicate order.
pub fn bootstrap_replicates<T, E, F>(
    data: &[f64],
    cfg: &BootstrapConfig,
    stream_base: u64,
    f: F,
) -> Vec<Result<T, E>>
where
    T: Send,
    E: Send,
    F: Fn(&[f64]) -> Result<T, E> + Sync,
{
    (0..cfg.resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed, stream_base + r);
            let sample = resample(data, &mut rng, cfg.mode);
            f(&sample)
        })
        .collect()
}

/// Nearest-rank `((1-level)/2, (1+level)/2)` quantiles of `values`.
pub fn percentile_interval(values: &mut [f64], level: f64) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    (
        quantile_nearest_rank(values, alpha / 2.0),
        quantile_nearest_rank(values, 1.0 - alpha / 2.0),
    )
}

/// Percentile bootstrap interval of a scalar pipeline. At least half of the
/// replicates must succeed.
pub fn bootstrap_ci<F>(data: &[f64], pipeline: F, cfg: &BootstrapConfig) -> Result<(f64, f64), EvtError>
where
    F: Fn(&[f64]) -> Result<f64, EvtError> + Sync,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(EvtError::Empty);
    }
    let results = bootstrap_replicates(data, cfg, 0, pipeline);
    let mut values: Vec<f64> = results
        .into_iter()
        .filter_map(Result::ok)
        .filter(|v| v.is_finite())
        .collect();
    let failed = cfg.resamples - values.len();
    if 2 * failed > cfg.resamples {
        return Err(EvtError::TooManyFailedReplicates {
            failed,
            total: cfg.resamples,
        });
    }
    Ok(percentile_interval(&mut values, cfg.ci_level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::{fit_exponential, return_level, MIN_EXCEEDANCES};

    #[test]
    fn constant_pipeline_gives_point_interval() {
        let data: Vec<f64> = (0..50).map(f64::from).collect();
        let ci = bootstrap_ci(&data, |_| Ok(4.25), &BootstrapConfig::default()).unwrap();
        assert_eq!(ci, (4.25, 4.25));
    }

    #[test]
    fn failing_pipeline_is_reported() {
        let data: Vec<f64> = (0..50).map(f64::from).collect();
        let cfg = BootstrapConfig {
            resamples: 100,
            ..Default::default()
        };
        let r = bootstrap_ci(&data, |_| Err(EvtError::Empty), &cfg);
        assert!(matches!(r, Err(EvtError::TooManyFailedReplicates { failed: 100, total: 100 })));
        // exactly half failing is still acceptable
        let r = bootstrap_ci(
            &data,
            |s| if s[0] < 25.0 { Ok(1.0) } else { Err(EvtError::Empty) },
            &cfg,
        );
        let _ = r; // outcome depends on the draw; the call must not panic
    }

    #[test]
    fn invalid_configs() {
        let data = [1.0, 2.0];
        for cfg in [
            BootstrapConfig { resamples: 1, ..Default::default() },
            BootstrapConfig { ci_level: 1.0, ..Default::default() },
            BootstrapConfig { ci_level: 0.0, ..Default::default() },
        ] {
            assert!(matches!(bootstrap_ci(&data, |_| Ok(1.0), &cfg), Err(EvtError::InvalidBootstrap(_))));
        }
    }

    #[test]
    fn same_seed_same_interval() {
        let data: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let cfg = BootstrapConfig { resamples: 300, seed: 9, ..Default::default() };
        let mean = |s: &[f64]| Ok(s.iter().sum::<f64>() / s.len() as f64);
        let a = bootstrap_ci(&data, mean, &cfg).unwrap();
        let b = bootstrap_ci(&data, mean, &cfg).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn block_resample_keeps_runs() {
        let data: Vec<f64> = (0..1000).map(f64::from).collect();
        let mut rng = replicate_rng(1, 0);
        let s = resample(&data, &mut rng, BootstrapMode::Block);
        assert_eq!(s.len(), 1000);
        // block length 10: every block is a run of consecutive values
        for chunk in s.chunks(10) {
            for w in chunk.windows(2) {
                assert_eq!(w[1], w[0] + 1.0);
            }
        }
    }

    #[test]
    fn wider_spread_gives_wider_interval() {
        use rand::Rng;
        let mut wins = 0;
        for seed in 0..100u64 {
            let mut rng = replicate_rng(seed, 99);
            let base: Vec<f64> = (0..1000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let pipeline = |s: &[f64]| {
                let mut sorted = s.to_vec();
                sorted.sort_by(f64::total_cmp);
                let u = quantile_nearest_rank(&sorted, 0.9);
                let ex: Vec<f64> = s.iter().filter(|x| **x > u).map(|x| x - u).collect();
                if ex.len() < MIN_EXCEEDANCES {
                    return Err(EvtError::TooFewExceedances { found: ex.len(), needed: MIN_EXCEEDANCES });
                }
                let p = fit_exponential(&ex, u, ex.len() as f64 / s.len() as f64, 365)?;
                return_level(&p, 20_000)
            };
            let cfg = BootstrapConfig { resamples: 200, seed, ..Default::default() };
            let narrow: Vec<f64> = base.iter().map(|e| 5.0 * e).collect();
            let wide: Vec<f64> = base.iter().map(|e| 20.0 * e).collect();
            let (l5, h5) = bootstrap_ci(&narrow, pipeline, &cfg).unwrap();
            let (l20, h20) = bootstrap_ci(&wide, pipeline, &cfg).unwrap();
            if h20 - l20 > h5 - l5 {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }
}
