use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tailstop_core::experiment::{
    analyze_log, compare, comparison_csv, curve_csv, curve_for, format_error, format_estimate,
    report, run_experiment, AnalyzeReport, CampaignRecord, ExperimentError, ExperimentSpec,
    ReportConfig, ResultsFile, RESULTS_FILE,
};
use tailstop_core::stream::ingest;
use tailstop_core::{
    BootstrapConfig, FuzzConfig, LogFormat, PredictorKind, SttKind, ThresholdMethod,
};

#[derive(Parser)]
#[command(name = "tailstop", version, about = "Stop differential fuzzing early and extrapolate the worst case")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run every campaign of an experiment spec.
    Run {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        horizon: Option<u64>,
        /// Replaces the spec's method list; repeatable.
        #[arg(long)]
        method: Vec<String>,
        #[arg(long)]
        stt: Option<String>,
        #[arg(long)]
        threshold: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        resamples: Option<usize>,
        /// Output directory; defaults to the spec's `output_dir`.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Replay a recorded stream through a stopping rule and predictor.
    Analyze {
        log: PathBuf,
        #[arg(long, default_value = "evt_pp")]
        method: String,
        /// Defaults to the log length.
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        stt: Option<String>,
        #[arg(long, default_value = "bootstrap")]
        threshold: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long)]
        threshold_resamples: Option<usize>,
        #[arg(long, default_value_t = 100)]
        check_every: usize,
        /// Also emit the return-level curve.
        #[arg(long)]
        curve: bool,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Compare methods across one or more results files.
    Compare {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Write summary JSON and plot data for a results file.
    Report {
        results: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        window: usize,
        /// Resamples for the temporal series and curves.
        #[arg(long, default_value_t = 200)]
        resamples: usize,
        #[arg(long, default_value_t = 100)]
        threshold_resamples: usize,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn usage<E: std::fmt::Display>(field: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Usage(format!("--{field}: {e}"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn campaign_table(records: &[CampaignRecord]) -> String {
    let mut out = String::from("benchmark,method,seed,stt,stopped,n_training,max_training,ground_truth_max,prediction,error_pct,perf_gain,log_file\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.benchmark,
            r.method,
            r.seed,
            r.stt,
            r.stopped,
            r.n_training,
            r.max_training,
            r.ground_truth_max,
            r.prediction
                .as_ref()
                .map(|p| format_estimate(p.value, p.ci_low.zip(p.ci_high)))
                .map(|s| format!("\"{s}\""))
                .unwrap_or_default(),
            r.error_pct.map(format_error).unwrap_or_default(),
            r.perf_gain,
            r.log_file
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    spec_path: &Path,
    seed: Option<u64>,
    budget: Option<usize>,
    horizon: Option<u64>,
    method: Vec<String>,
    stt: Option<String>,
    threshold: Option<String>,
    repeats: Option<usize>,
    resamples: Option<usize>,
    out: Option<PathBuf>,
    format: Format,
) -> Result<(), CliError> {
    let mut spec = ExperimentSpec::load(spec_path)?;
    if let Some(v) = seed {
        spec.seed = v;
    }
    if let Some(v) = budget {
        spec.budget = v;
    }
    if horizon.is_some() {
        spec.horizon = horizon;
    }
    if !method.is_empty() {
        spec.methods = method;
    }
    if stt.is_some() {
        spec.stt = stt;
    }
    if let Some(v) = threshold {
        spec.threshold = v;
    }
    if let Some(v) = repeats {
        spec.repeats = v;
    }
    if let Some(v) = resamples {
        spec.resamples = v;
    }
    if let Some(v) = out {
        spec.output_dir = v;
    }
    let resolved = spec.resolve()?;
    let results = run_experiment(&resolved)?;
    match format {
        Format::Csv => print!("{}", campaign_table(&results.campaigns)),
        Format::Json => print!("{}", to_json(&results.campaigns)),
    }
    eprintln!(
        "{} campaigns, results in {}",
        results.campaigns.len(),
        resolved.spec.output_dir.join(RESULTS_FILE).display()
    );
    Ok(())
}

fn analyze_csv(r: &AnalyzeReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("samples".into(), r.samples.to_string()),
        ("stt".into(), r.stt.clone()),
        ("stop_index".into(), r.stop_index.map(|s| s.to_string()).unwrap_or_default()),
        ("training_size".into(), r.training_size.to_string()),
        ("training_max".into(), r.training_max.to_string()),
    ];
    if let Some(t) = &r.tail_test {
        rows.push(("tail_test_passed".into(), t.passed.to_string()));
        rows.push(("tail_test_failing_k".into(), t.failing_k.map(|k| k.to_string()).unwrap_or_default()));
    }
    if let Some(t) = &r.threshold {
        rows.push(("threshold_u".into(), t.u.to_string()));
        rows.push(("threshold_quantile".into(), t.quantile.to_string()));
        rows.push(("exceedances".into(), t.exceedance_count.to_string()));
    }
    if let Some(m) = &r.model {
        rows.push(("model".into(), format!("{:?}", m.kind).to_lowercase()));
        rows.push(("scale".into(), m.scale.to_string()));
        rows.push(("shape".into(), m.shape.to_string()));
        rows.push(("location".into(), m.location.to_string()));
    }
    let p = &r.prediction;
    rows.push(("prediction".into(), p.value.to_string()));
    rows.push(("ci_low".into(), p.ci_low.map(|v| v.to_string()).unwrap_or_default()));
    rows.push(("ci_high".into(), p.ci_high.map(|v| v.to_string()).unwrap_or_default()));
    rows.push(("horizon".into(), p.horizon.map(|v| v.to_string()).unwrap_or_default()));
    rows.push(("method".into(), p.method.clone()));
    rows.push(("fallback_used".into(), p.fallback_used.to_string()));
    rows.push(("formatted".into(), r.formatted.clone()));

    let mut out = String::from("field,value\n");
    for (k, v) in rows {
        if v.contains([',', '"']) {
            let _ = writeln!(out, "{k},\"{}\"", v.replace('"', "\"\""));
        } else {
            let _ = writeln!(out, "{k},{v}");
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    log_path: &Path,
    method: &str,
    horizon: Option<u64>,
    stt: Option<String>,
    threshold: &str,
    seed: u64,
    resamples: usize,
    threshold_resamples: Option<usize>,
    check_every: usize,
    curve: bool,
    format: Format,
) -> Result<(), CliError> {
    let predictor: PredictorKind = method.parse().map_err(usage("method"))?;
    let stt = match stt {
        Some(s) => s.parse::<SttKind>().map_err(usage("stt"))?,
        None => predictor.default_stt(),
    };
    let threshold: ThresholdMethod = threshold.parse().map_err(usage("threshold"))?;
    let log = ingest(log_path, LogFormat::from_path(log_path))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", log_path.display())))?;
    let cfg = FuzzConfig {
        budget: log.len().max(check_every),
        seed,
        stt,
        predictor,
        horizon: horizon.unwrap_or(log.len() as u64).max(1),
        check_every,
        threshold,
        bootstrap: BootstrapConfig {
            resamples,
            seed,
            ..Default::default()
        },
        threshold_resamples,
        ..Default::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let rep = analyze_log(&log, &cfg)?;
    let curve = if curve {
        let deltas = log.deltas();
        Some(curve_for(&deltas[..rep.training_size], &cfg)?)
    } else {
        None
    };
    match format {
        Format::Csv => {
            print!("{}", analyze_csv(&rep));
            if let Some(c) = &curve {
                print!("\n{}", curve_csv(c));
            }
        }
        Format::Json => print!("{}", to_json(&json!({ "analysis": rep, "curve": curve }))),
    }
    Ok(())
}

fn cmd_compare(paths: &[PathBuf], out: Option<&Path>, format: Format) -> Result<(), CliError> {
    let files = paths
        .iter()
        .map(|p| ResultsFile::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = compare(&files).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = match format {
        Format::Csv => comparison_csv(&rows),
        Format::Json => to_json(&rows),
    };
    emit(out, &text)
}

fn cmd_report(
    path: &Path,
    out: &Path,
    window: usize,
    resamples: usize,
    threshold_resamples: usize,
) -> Result<(), CliError> {
    let results = ResultsFile::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let cfg = ReportConfig {
        window,
        resamples: Some(resamples),
        threshold_resamples: Some(threshold_resamples),
    };
    let summary = report(&results, dir, out, &cfg)?;
    for b in &summary.benchmarks {
        println!(
            "{} {}: {} campaigns, {} stopped, perf_gain {}, error {}",
            b.benchmark,
            b.method,
            b.campaigns,
            b.stopped,
            b.perf_gain_total,
            b.error_pct
                .map(|e| format!("{} ± {}", format_error(e.mean), format_error(e.std)))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            spec,
            seed,
            budget,
            horizon,
            method,
            stt,
            threshold,
            repeats,
            resamples,
            out,
            format,
        } => cmd_run(
            &spec, seed, budget, horizon, method, stt, threshold, repeats, resamples, out, format,
        ),
        Command::Analyze {
            log,
            method,
            horizon,
            stt,
            threshold,
            seed,
            resamples,
            threshold_resamples,
            check_every,
            curve,
            format,
        } => cmd_analyze(
            &log,
            &method,
            horizon,
            stt,
            &threshold,
            seed,
            resamples,
            threshold_resamples,
            check_every,
            curve,
            format,
        ),
        Command::Compare {
            results,
            out,
            format,
        } => cmd_compare(&results, out.as_deref(), format),
        Command::Report {
            results,
            out,
            window,
            resamples,
            threshold_resamples,
        } => cmd_report(&results, &out, window, resamples, threshold_resamples),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
