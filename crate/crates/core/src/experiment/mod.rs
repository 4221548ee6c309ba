//! Multi-campaign experiments: spec files, result files, predictor
//! comparison and report data.

mod compare;
mod report;
mod stats;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::BaselineConfig;
use crate::evt::{BootstrapConfig, Prediction, TailModelParams, ThresholdChoice, ThresholdMethod};
use crate::fuzz::{run_campaign, CampaignResult, FuzzConfig, FuzzError, PredictorKind, SttKind, TargetSpec};
use crate::stop::ExpTestConfig;
use crate::stream::{emit, LogFormat, StreamError};

pub use compare::{compare, comparison_csv, ComparisonRow, MeanStd};
pub use report::{
    analyze_log, curve_csv, curve_for, format_error, format_estimate, report, temporal_csv,
    temporal_series, AnalyzeConfig, AnalyzeReport, BenchmarkSummary, ReportConfig, ReportSummary,
    TemporalRow, CURVE_HEADER, TEMPORAL_HEADER,
};
pub use stats::{mann_whitney_exact_p, mann_whitney_normal_p, mann_whitney_u, MannWhitney, EXACT_LIMIT};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid spec: field `{field}`: {message}")]
    Spec { field: String, message: String },
    #[error("parsing {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("campaign {benchmark}/{method}/seed {seed}: {source}")]
    Campaign {
        benchmark: String,
        method: String,
        seed: u64,
        source: FuzzError,
    },
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains NaN")]
    NanSample,
    #[error("benchmarks differ between methods: {0}")]
    MismatchedBenchmarks(String),
    #[error("benchmark {0} needs at least two methods to compare")]
    TooFewMethods(String),
    #[error("{0}")]
    Analysis(String),
}

impl ExperimentError {
    pub(crate) fn spec(field: &str, message: impl Into<String>) -> Self {
        ExperimentError::Spec {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Spec and usage problems, as opposed to failures while running.
    pub fn is_usage(&self) -> bool {
        matches!(self, ExperimentError::Spec { .. } | ExperimentError::Json { .. })
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTarget {
    #[serde(default)]
    pub name: Option<String>,
    pub target: TargetSpec,
}

impl NamedTarget {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.target.to_string())
    }
}

fn default_repeats() -> usize {
    5
}
fn default_budget() -> usize {
    20_000
}
fn default_check_every() -> usize {
    100
}
fn default_resamples() -> usize {
    1000
}
fn default_ci_level() -> f64 {
    0.95
}
fn default_threshold() -> String {
    "bootstrap".into()
}
fn default_laplace_j() -> u64 {
    100
}
fn default_obs() -> u64 {
    crate::evt::DEFAULT_OBS_PER_PERIOD
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// JSON experiment description. Methods, stopping rule and threshold are
/// strings so that mistakes can be reported by field name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub targets: Vec<NamedTarget>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub methods: Vec<String>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Defaults to the budget.
    #[serde(default)]
    pub horizon: Option<u64>,
    /// Campaign `i` uses seed `seed + i`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Overrides each method's usual stopping rule.
    #[serde(default)]
    pub stt: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: String,
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub threshold_resamples: Option<usize>,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default = "default_laplace_j")]
    pub laplace_j: u64,
    #[serde(default)]
    pub exp_test: ExpTestConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default = "default_obs")]
    pub obs_per_period: u64,
    #[serde(default)]
    pub log_format: Option<String>,
}

/// A spec with every string field parsed.
#[derive(Debug, Clone)]
pub struct ResolvedSpec {
    pub spec: ExperimentSpec,
    pub methods: Vec<PredictorKind>,
    pub stt: Option<SttKind>,
    pub threshold: ThresholdMethod,
    pub log_format: LogFormat,
}

impl ExperimentSpec {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|source| ExperimentError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&read_file(path)?, path)
    }

    pub fn resolve(self) -> Result<ResolvedSpec, ExperimentError> {
        if self.targets.is_empty() {
            return Err(ExperimentError::spec("targets", "at least one target is required"));
        }
        for t in &self.targets {
            t.target
                .validate()
                .map_err(|e| ExperimentError::spec("targets", e.to_string()))?;
        }
        let labels: BTreeSet<String> = self.targets.iter().map(NamedTarget::label).collect();
        if labels.len() != self.targets.len() {
            return Err(ExperimentError::spec("targets", "target names must be unique"));
        }
        if self.repeats == 0 {
            return Err(ExperimentError::spec("repeats", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::spec("methods", "at least one method is required"));
        }
        let mut methods = Vec::new();
        for m in &self.methods {
            let kind = m
                .parse::<PredictorKind>()
                .map_err(|e| ExperimentError::spec("methods", e))?;
            if methods.contains(&kind) {
                return Err(ExperimentError::spec("methods", format!("duplicate method '{m}'")));
            }
            methods.push(kind);
        }
        let stt = self
            .stt
            .as_deref()
            .map(str::parse::<SttKind>)
            .transpose()
            .map_err(|e| ExperimentError::spec("stt", e))?;
        let threshold = self
            .threshold
            .parse::<ThresholdMethod>()
            .map_err(|e| ExperimentError::spec("threshold", e))?;
        let log_format = match &self.log_format {
            Some(f) => f
                .parse::<LogFormat>()
                .map_err(|e| ExperimentError::spec("log_format", e.to_string()))?,
            None => LogFormat::Csv,
        };
        let resolved = ResolvedSpec {
            spec: self,
            methods,
            stt,
            threshold,
            log_format,
        };
        // surface config errors before any campaign starts
        for &m in &resolved.methods {
            resolved
                .fuzz_config(m, 0)
                .validate()
                .map_err(|e| ExperimentError::spec("budget", e.to_string()))?;
        }
        Ok(resolved)
    }
}

impl ResolvedSpec {
    pub fn fuzz_config(&self, method: PredictorKind, repeat: usize) -> FuzzConfig {
        let s = &self.spec;
        FuzzConfig {
            budget: s.budget,
            seed: s.seed.wrapping_add(repeat as u64),
            stt: self.stt.unwrap_or_else(|| method.default_stt()),
            exp_test: s.exp_test,
            laplace_j: s.laplace_j,
            predictor: method,
            horizon: s.horizon.unwrap_or(s.budget as u64),
            check_every: s.check_every,
            threshold: self.threshold,
            bootstrap: BootstrapConfig {
                resamples: s.resamples,
                ci_level: s.ci_level,
                seed: 0,
                ..Default::default()
            },
            threshold_resamples: s.threshold_resamples,
            obs_per_period: s.obs_per_period,
            baseline: s.baseline,
            max_wall_secs: None,
        }
    }
}

/// One campaign in a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub benchmark: String,
    pub method: String,
    pub seed: u64,
    pub stt: String,
    pub budget: usize,
    pub horizon: u64,
    pub stopped: bool,
    pub n_training: usize,
    pub max_training: u64,
    pub n_testing: usize,
    pub max_testing: Option<u64>,
    pub ground_truth_max: u64,
    pub prediction: Option<Prediction>,
    pub error_pct: Option<f64>,
    pub perf_gain: u64,
    pub threshold: Option<ThresholdChoice>,
    pub model: Option<TailModelParams>,
    pub config_hash: String,
    /// Relative to the results file.
    pub log_file: String,
}

impl CampaignRecord {
    pub fn from_result(benchmark: &str, cfg: &FuzzConfig, r: &CampaignResult, log_file: String) -> Self {
        let deltas = r.log.deltas();
        let n_training = r.stop_index.unwrap_or(deltas.len());
        let max_training = deltas[..n_training].iter().copied().max().unwrap_or(0);
        let max_testing = deltas[n_training..].iter().copied().max();
        Self {
            benchmark: benchmark.to_string(),
            method: cfg.predictor.to_string(),
            seed: cfg.seed,
            stt: cfg.stt.to_string(),
            budget: cfg.budget,
            horizon: cfg.horizon,
            stopped: r.stop_index.is_some(),
            n_training,
            max_training,
            n_testing: deltas.len() - n_training,
            max_testing,
            ground_truth_max: r.ground_truth_max,
            prediction: r.prediction.clone(),
            error_pct: r.error_pct,
            perf_gain: r.perf_gain,
            threshold: r.tail.as_ref().and_then(|t| t.threshold.clone()),
            model: r.tail.as_ref().and_then(|t| t.model),
            config_hash: r.log.meta.get("config_hash").cloned().unwrap_or_default(),
            log_file,
        }
    }
}

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub spec: ExperimentSpec,
    /// Repeats per benchmark and method; 5 matches the short protocol, 30
    /// the long one.
    pub repeats: usize,
    pub assumptions: Vec<String>,
    pub campaigns: Vec<CampaignRecord>,
}

impl ResultsFile {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = read_file(path)?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub const RESULTS_FILE: &str = "results.json";

fn assumptions(spec: &ExperimentSpec) -> Vec<String> {
    vec![
        format!(
            "markov and chebyshev levels use tail probability {}",
            spec.baseline.tail_prob
        ),
        format!(
            "laplace stop bounds the exceedance probability by 1/(j+1) with j = {}",
            spec.laplace_j
        ),
        format!(
            "point-process span is samples / {} iterations per period",
            spec.obs_per_period
        ),
        "markov, chebyshev and bayes predictions do not depend on the horizon".into(),
    ]
}

pub fn log_file_name(benchmark: &str, method: PredictorKind, seed: u64, format: LogFormat) -> String {
    let safe: String = benchmark
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("logs/{safe}__{method}__{seed}.{}", format.extension())
}

/// Runs every (target, method, repeat) campaign, writes one log per campaign
/// and `results.json` into the spec's output directory.
pub fn run_experiment(spec: &ResolvedSpec) -> Result<ResultsFile, ExperimentError> {
    let mut jobs = Vec::new();
    for t in &spec.spec.targets {
        for &m in &spec.methods {
            for r in 0..spec.spec.repeats {
                jobs.push((t, m, r));
            }
        }
    }
    let out = &spec.spec.output_dir;
    let mut campaigns: Vec<CampaignRecord> = jobs
        .par_iter()
        .map(|&(t, m, r)| {
            let cfg = spec.fuzz_config(m, r);
            let label = t.label();
            let result = run_campaign(&t.target, &cfg).map_err(|source| ExperimentError::Campaign {
                benchmark: label.clone(),
                method: m.to_string(),
                seed: cfg.seed,
                source,
            })?;
            let log_file = log_file_name(&label, m, cfg.seed, spec.log_format);
            let path = out.join(&log_file);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
            emit(&result.log, &path, spec.log_format)?;
            Ok(CampaignRecord::from_result(&label, &cfg, &result, log_file))
        })
        .collect::<Result<_, ExperimentError>>()?;
    campaigns.sort_by(|a, b| {
        (&a.benchmark, &a.method, a.seed).cmp(&(&b.benchmark, &b.method, b.seed))
    });

    let results = ResultsFile {
        spec: spec.spec.clone(),
        repeats: spec.spec.repeats,
        assumptions: assumptions(&spec.spec),
        campaigns,
    };
    let json = serde_json::to_vec_pretty(&results).map_err(|source| ExperimentError::Json {
        path: out.join(RESULTS_FILE),
        source,
    })?;
    write_file(&out.join(RESULTS_FILE), &json)?;
    Ok(results)
}
