use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::compare::MeanStd;
use super::{write_file, CampaignRecord, ExperimentError, ResultsFile};
use crate::evt::{
    curve_horizons, return_level_curve, CurvePoint, PredictConfig, Prediction, TailMethod,
    TailModelParams, ThresholdChoice,
};
use crate::fuzz::{predict_training, replay_stop, FuzzConfig, PredictorKind, SttKind};
use crate::stop::{exponentiality_test, TailTestResult};
use crate::stream::{ingest, CampaignLog, LogFormat};

/// `"73.3 [47.7, 98.9]"`, or just the value without an interval.
pub fn format_estimate(value: f64, ci: Option<(f64, f64)>) -> String {
    match ci {
        Some((lo, hi)) => format!("{value:.1} [{lo:.1}, {hi:.1}]"),
        None => format!("{value:.1}"),
    }
}

/// Error percentages are shown with one decimal.
pub fn format_error(error_pct: f64) -> String {
    format!("{error_pct:.1}")
}

fn prediction_ci(p: &Prediction) -> Option<(f64, f64)> {
    p.ci_low.zip(p.ci_high)
}

/// Offline replay settings; the campaign fields that only matter for live
/// fuzzing (budget, seed of the fuzzer) are ignored.
pub type AnalyzeConfig = FuzzConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub samples: usize,
    pub stt: String,
    /// Training size at which the stopping rule passed.
    pub stop_index: Option<usize>,
    /// Exponentiality diagnostics on the training prefix.
    pub tail_test: Option<TailTestResult>,
    /// Samples the predictor saw: the stop prefix, or the whole log when the
    /// rule never passed.
    pub training_size: usize,
    pub training_max: u64,
    pub threshold: Option<ThresholdChoice>,
    pub model: Option<TailModelParams>,
    pub prediction: Prediction,
    pub formatted: String,
}

/// Runs the stopping rule and predictor over a recorded stream as if live.
pub fn analyze_log(log: &CampaignLog, cfg: &AnalyzeConfig) -> Result<AnalyzeReport, ExperimentError> {
    if log.is_empty() {
        return Err(ExperimentError::Analysis("log has no samples".into()));
    }
    let deltas = log.deltas();
    let stop = replay_stop(&deltas, cfg).map_err(|e| ExperimentError::Analysis(e.to_string()))?;
    let training = &deltas[..stop.unwrap_or(deltas.len())];
    let tail_test = if cfg.stt == SttKind::Exponentiality {
        exponentiality_test(training, &cfg.exp_test).ok()
    } else {
        None
    };
    let (prediction, tail) =
        predict_training(training, cfg).map_err(|e| ExperimentError::Analysis(e.to_string()))?;
    Ok(AnalyzeReport {
        samples: deltas.len(),
        stt: cfg.stt.to_string(),
        stop_index: stop,
        tail_test,
        training_size: training.len(),
        training_max: training.iter().copied().max().unwrap_or(0),
        threshold: tail.as_ref().and_then(|t| t.threshold.clone()),
        model: tail.as_ref().and_then(|t| t.model),
        formatted: format_estimate(prediction.value, prediction_ci(&prediction)),
        prediction,
    })
}

/// Return-level curve of the EVT predictor in `cfg` on `deltas`.
pub fn curve_for(deltas: &[u64], cfg: &FuzzConfig) -> Result<Vec<CurvePoint>, ExperimentError> {
    let method = match cfg.predictor {
        PredictorKind::EvtExponential => TailMethod::Exponential,
        PredictorKind::EvtPp => TailMethod::Pp,
        other => {
            return Err(ExperimentError::Analysis(format!(
                "{other} has no return-level curve"
            )))
        }
    };
    let pcfg = PredictConfig {
        horizon: cfg.horizon,
        method,
        threshold: cfg.threshold,
        bootstrap: crate::evt::BootstrapConfig {
            seed: cfg.seed,
            ..cfg.bootstrap
        },
        threshold_resamples: cfg.threshold_resamples,
        obs_per_period: cfg.obs_per_period,
        compute_ci: true,
    };
    let as_f64: Vec<f64> = deltas.iter().map(|&d| d as f64).collect();
    let horizons: Vec<u64> = curve_horizons(cfg.horizon)
        .into_iter()
        .filter(|&h| method != TailMethod::Pp || h > cfg.obs_per_period)
        .collect();
    return_level_curve(&as_f64, &pcfg, &horizons).map_err(|e| ExperimentError::Analysis(e.to_string()))
}

pub const CURVE_HEADER: &str = "horizon,level,ci_low,ci_high";
pub const TEMPORAL_HEADER: &str = "train_size,prediction,ci_low,ci_high,ground_truth_next_window";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.horizon, p.level, opt(p.ci_low), opt(p.ci_high)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRow {
    pub train_size: usize,
    pub prediction: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub ground_truth_next_window: u64,
}

/// Predictions from growing prefixes, each scored against the maximum of
/// the following `window` samples: one row per complete window after
/// `train_size`.
pub fn temporal_series(
    deltas: &[u64],
    train_size: usize,
    window: usize,
    cfg: &FuzzConfig,
) -> Result<Vec<TemporalRow>, ExperimentError> {
    if window == 0 || train_size == 0 {
        return Err(ExperimentError::Analysis("window and training size must be positive".into()));
    }
    let rows = deltas.len().saturating_sub(train_size) / window;
    let cfg = FuzzConfig {
        horizon: window as u64,
        ..cfg.clone()
    };
    let mut out = Vec::with_capacity(rows);
    for w in 0..rows {
        let t = train_size + w * window;
        let (p, _) = predict_training(&deltas[..t], &cfg)
            .map_err(|e| ExperimentError::Analysis(e.to_string()))?;
        out.push(TemporalRow {
            train_size: t,
            prediction: p.value,
            ci_low: p.ci_low,
            ci_high: p.ci_high,
            ground_truth_next_window: deltas[t..t + window].iter().copied().max().unwrap_or(0),
        });
    }
    Ok(out)
}

pub fn temporal_csv(rows: &[TemporalRow]) -> String {
    let mut out = format!("{TEMPORAL_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.train_size,
            r.prediction,
            opt(r.ci_low),
            opt(r.ci_high),
            r.ground_truth_next_window
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Window of the temporal series.
    pub window: usize,
    /// Bootstrap resamples for the temporal series and curves; `None` keeps
    /// the experiment's setting.
    pub resamples: Option<usize>,
    pub threshold_resamples: Option<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            window: 1000,
            resamples: Some(200),
            threshold_resamples: Some(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub benchmark: String,
    pub method: String,
    pub campaigns: usize,
    pub stopped: usize,
    pub perf_gain_total: u64,
    pub perf_gain_mean: f64,
    pub ground_truth_max: Option<MeanStd>,
    pub prediction: Option<MeanStd>,
    pub error_pct: Option<MeanStd>,
    pub best_error_pct: Option<f64>,
    /// Prediction of the first seed, in table form.
    pub example: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub repeats: usize,
    pub protocol: String,
    pub assumptions: Vec<String>,
    pub benchmarks: Vec<BenchmarkSummary>,
    pub perf_gain_total: u64,
}

fn protocol(repeats: usize) -> String {
    match repeats {
        5 => "5-run".into(),
        30 => "30-run".into(),
        n => format!("{n}-run"),
    }
}

fn summarize_group(bench: &str, method: &str, records: &[&CampaignRecord]) -> BenchmarkSummary {
    let collect = |f: &dyn Fn(&CampaignRecord) -> Option<f64>| {
        MeanStd::of(&records.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
    };
    let perf_gain_total: u64 = records.iter().map(|r| r.perf_gain).sum();
    BenchmarkSummary {
        benchmark: bench.to_string(),
        method: method.to_string(),
        campaigns: records.len(),
        stopped: records.iter().filter(|r| r.stopped).count(),
        perf_gain_total,
        perf_gain_mean: perf_gain_total as f64 / records.len().max(1) as f64,
        ground_truth_max: collect(&|r| Some(r.ground_truth_max as f64)),
        prediction: collect(&|r| r.prediction.as_ref().map(|p| p.value)),
        error_pct: collect(&|r| r.error_pct),
        best_error_pct: records
            .iter()
            .filter_map(|r| r.error_pct)
            .min_by(|a, b| a.abs().total_cmp(&b.abs())),
        example: records
            .iter()
            .find_map(|r| r.prediction.as_ref())
            .map(|p| format_estimate(p.value, prediction_ci(p))),
    }
}

/// Writes `summary.json`, `temporal/*.csv` (one per stopped campaign) and
/// `curves/*.csv` (one per EVT campaign with a usable fit) under `out`.
pub fn report(
    results: &ResultsFile,
    results_dir: &Path,
    out: &Path,
    cfg: &ReportConfig,
) -> Result<ReportSummary, ExperimentError> {
    let resolved = results.spec.clone().resolve()?;
    let mut groups: BTreeMap<(&str, &str), Vec<&CampaignRecord>> = BTreeMap::new();
    for c in &results.campaigns {
        groups.entry((&c.benchmark, &c.method)).or_default().push(c);
    }
    let benchmarks: Vec<BenchmarkSummary> = groups
        .iter()
        .map(|((b, m), records)| summarize_group(b, m, records))
        .collect();
    let summary = ReportSummary {
        repeats: results.repeats,
        protocol: protocol(results.repeats),
        assumptions: results.assumptions.clone(),
        perf_gain_total: benchmarks.iter().map(|b| b.perf_gain_total).sum(),
        benchmarks,
    };

    for c in &results.campaigns {
        let method: PredictorKind = c
            .method
            .parse()
            .map_err(|e: String| ExperimentError::Analysis(e))?;
        let mut fcfg = resolved.fuzz_config(method, 0);
        fcfg.seed = c.seed;
        fcfg.stt = c
            .stt
            .parse()
            .map_err(|e: String| ExperimentError::Analysis(e))?;
        if let Some(r) = cfg.resamples {
            fcfg.bootstrap.resamples = r;
        }
        if cfg.threshold_resamples.is_some() {
            fcfg.threshold_resamples = cfg.threshold_resamples;
        }
        let stem = Path::new(&c.log_file)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("campaign")
            .to_string();
        let needs_log = c.stopped || c.model.is_some();
        if !needs_log {
            continue;
        }
        let log_path = results_dir.join(&c.log_file);
        let log = ingest(&log_path, LogFormat::from_path(&log_path))?;
        let deltas = log.deltas();
        if c.stopped {
            let rows = temporal_series(&deltas, c.n_training, cfg.window, &fcfg)?;
            write_file(&out.join("temporal").join(format!("{stem}.csv")), temporal_csv(&rows).as_bytes())?;
        }
        if c.model.is_some() {
            if let Ok(curve) = curve_for(&deltas[..c.n_training], &fcfg) {
                write_file(&out.join("curves").join(format!("{stem}.csv")), curve_csv(&curve).as_bytes())?;
            }
        }
    }

    let json = serde_json::to_vec_pretty(&summary).map_err(|source| ExperimentError::Json {
        path: out.join("summary.json"),
        source,
    })?;
    write_file(&out.join("summary.json"), &json)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzz::{run_campaign, TargetSpec};
    use crate::stream::DiffSample;

    #[test]
    fn formatting() {
        assert_eq!(format_estimate(73.3, Some((47.7, 98.9))), "73.3 [47.7, 98.9]");
        assert_eq!(format_estimate(73.25, None), "73.2");
        let e = crate::fuzz::error_pct(134.1, 101).unwrap();
        assert_eq!(format_error(e), "32.8");
        assert_eq!(format_error(crate::fuzz::error_pct(90.0, 100).unwrap()), "-10.0");
    }

    #[test]
    fn temporal_row_count() {
        let deltas: Vec<u64> = (0..5500).map(|i| (i * 37 % 101) as u64).collect();
        let cfg = FuzzConfig { predictor: PredictorKind::Chebyshev, ..Default::default() };
        for train in [100usize, 1200, 4500, 5000] {
            let rows = temporal_series(&deltas, train, 1000, &cfg).unwrap();
            assert_eq!(rows.len(), (5500 - train) / 1000);
            for (w, r) in rows.iter().enumerate() {
                assert_eq!(r.train_size, train + 1000 * w);
                let window = &deltas[r.train_size..r.train_size + 1000];
                assert_eq!(r.ground_truth_next_window, *window.iter().max().unwrap());
            }
        }
    }

    #[test]
    fn analyze_replays_live_campaign() {
        let cfg = FuzzConfig {
            budget: 2000,
            seed: 8,
            stt: SttKind::Bayes,
            predictor: PredictorKind::Bayes,
            ..Default::default()
        };
        let target = TargetSpec::LeakSet { width: 12, unit_cost: 100 };
        let live = run_campaign(&target, &cfg).unwrap();
        let offline = analyze_log(&live.log, &cfg).unwrap();
        assert_eq!(offline.stop_index, live.stop_index);
        assert_eq!(Some(&offline.prediction), live.prediction.as_ref());
    }

    fn run_and_report(spec: &str, dir: &Path) -> ReportSummary {
        let mut spec = crate::experiment::ExperimentSpec::from_json(spec, Path::new("s.json")).unwrap();
        spec.output_dir = dir.join("run");
        let results = crate::experiment::run_experiment(&spec.resolve().unwrap()).unwrap();
        let cfg = ReportConfig { window: 1000, resamples: Some(30), threshold_resamples: Some(20) };
        report(&results, &dir.join("run"), &dir.join("report"), &cfg).unwrap()
    }

    #[test]
    fn no_stop_means_no_gain() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_and_report(
            r#"{"targets":[{"target":{"kind":"leak_set","width":12,"unit_cost":100}}],
                "methods":["markov","bayes"],"stt":"none","budget":1500,"repeats":2}"#,
            dir.path(),
        );
        assert_eq!(s.perf_gain_total, 0);
        assert!(s.benchmarks.iter().all(|b| b.stopped == 0 && b.perf_gain_total == 0));
        // nothing stopped, so no temporal series
        assert!(!dir.path().join("report/temporal").exists());
    }

    /// Set `UPDATE_GOLDEN=1` to rewrite the expected file.
    #[test]
    fn summary_matches_golden_file() {
        let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_summary.json");
        let dir = tempfile::tempdir().unwrap();
        run_and_report(
            r#"{"targets":[{"name":"leak","target":{"kind":"leak_set","width":12,"unit_cost":100}},
                           {"name":"pin","target":{"kind":"string_equals","len":6,"base":5,"per_char":10}}],
                "methods":["evt_exponential","markov","bayes"],"threshold":"quantile:0.9",
                "budget":2500,"repeats":2,"seed":3,"resamples":30}"#,
            dir.path(),
        );
        let got = std::fs::read_to_string(dir.path().join("report/summary.json")).unwrap();
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
            std::fs::write(&golden, &got).unwrap();
        }
        let want = std::fs::read_to_string(&golden).expect("golden file exists");
        assert_eq!(got, want);
    }

    #[test]
    fn exponential_curve_is_monotone() {
        let samples: Vec<DiffSample> = (0..3000u64)
            .map(|i| DiffSample::new(i, (i * 7919 % 1009) / 10, 0))
            .collect();
        let log = CampaignLog::from_samples(samples).unwrap();
        let cfg = FuzzConfig {
            predictor: PredictorKind::EvtExponential,
            threshold: crate::evt::ThresholdMethod::Quantile(0.9),
            bootstrap: crate::evt::BootstrapConfig { resamples: 50, ..Default::default() },
            horizon: 50_000,
            ..Default::default()
        };
        let curve = curve_for(&log.deltas(), &cfg).unwrap();
        assert!(curve.len() >= 5);
        for w in curve.windows(2) {
            assert!(w[1].level >= w[0].level);
        }
        assert!(curve_csv(&curve).starts_with("horizon,level,ci_low,ci_high\n"));
    }
}
