use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::stats::mann_whitney_u;
use super::{CampaignRecord, ExperimentError, ResultsFile};

/// Significance level for winner marking.
pub const ALPHA: f64 = 0.05;

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub benchmark: String,
    pub method: String,
    pub campaigns: usize,
    pub n_training: Option<MeanStd>,
    pub max_training: Option<MeanStd>,
    pub n_testing: Option<MeanStd>,
    pub max_testing: Option<MeanStd>,
    pub prediction: Option<MeanStd>,
    pub error_pct: Option<MeanStd>,
    /// Error of the repeat with the smallest absolute error.
    pub best_error_pct: Option<f64>,
    /// Not beaten by any competitor: no other method has significantly
    /// smaller absolute errors (Mann–Whitney, two-sided p < 0.05).
    pub significant_winner: bool,
}

fn abs_errors(records: &[&CampaignRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.error_pct).map(f64::abs).collect()
}

/// True when `a` is significantly smaller than `b`.
fn beats(a: &[f64], b: &[f64]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    match mann_whitney_u(a, b) {
        Ok(t) => t.p < ALPHA && t.u_a < t.u_b,
        Err(_) => false,
    }
}

/// Groups campaigns by benchmark and method and marks winners.
pub fn compare(results: &[ResultsFile]) -> Result<Vec<ComparisonRow>, ExperimentError> {
    let mut groups: BTreeMap<(String, String), Vec<&CampaignRecord>> = BTreeMap::new();
    for file in results {
        for c in &file.campaigns {
            groups
                .entry((c.benchmark.clone(), c.method.clone()))
                .or_default()
                .push(c);
        }
    }

    let mut by_method: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut by_benchmark: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (bench, method) in groups.keys() {
        by_method.entry(method).or_default().insert(bench);
        by_benchmark.entry(bench).or_default().push(method);
    }
    if let Some((first_method, first)) = by_method.iter().next() {
        for (method, benches) in &by_method {
            if benches != first {
                return Err(ExperimentError::MismatchedBenchmarks(format!(
                    "{first_method} covers {:?} but {method} covers {:?}",
                    first, benches
                )));
            }
        }
    }
    for (bench, methods) in &by_benchmark {
        if methods.len() < 2 {
            return Err(ExperimentError::TooFewMethods(bench.to_string()));
        }
    }

    let mut rows = Vec::with_capacity(groups.len());
    for ((bench, method), records) in &groups {
        let errors = abs_errors(records);
        let beaten = by_benchmark[bench.as_str()]
            .iter()
            .filter(|m| **m != method.as_str())
            .any(|other| beats(&abs_errors(&groups[&(bench.clone(), other.to_string())]), &errors));
        let field = |f: &dyn Fn(&CampaignRecord) -> Option<f64>| {
            MeanStd::of(&records.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        let best_error_pct = records
            .iter()
            .filter_map(|r| r.error_pct)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()));
        rows.push(ComparisonRow {
            benchmark: bench.clone(),
            method: method.clone(),
            campaigns: records.len(),
            n_training: field(&|r| Some(r.n_training as f64)),
            max_training: field(&|r| Some(r.max_training as f64)),
            n_testing: field(&|r| Some(r.n_testing as f64)),
            max_testing: field(&|r| r.max_testing.map(|m| m as f64)),
            prediction: field(&|r| r.prediction.as_ref().map(|p| p.value)),
            error_pct: field(&|r| r.error_pct),
            best_error_pct,
            significant_winner: !errors.is_empty() && !beaten,
        });
    }
    Ok(rows)
}

pub const COMPARISON_HEADER: &str = "benchmark,method,campaigns,n_training_mean,n_training_std,\
max_training_mean,max_training_std,n_testing_mean,n_testing_std,max_testing_mean,max_testing_std,\
prediction_mean,prediction_std,error_pct_mean,error_pct_std,best_error_pct,significant_winner";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in rows {
        let mut cells = vec![r.benchmark.clone(), r.method.clone(), r.campaigns.to_string()];
        for ms in [r.n_training, r.max_training, r.n_testing, r.max_testing, r.prediction, r.error_pct] {
            cells.push(opt(ms.map(|m| m.mean)));
            cells.push(opt(ms.map(|m| m.std)));
        }
        cells.push(opt(r.best_error_pct));
        cells.push(r.significant_winner.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::Prediction;
    use crate::experiment::ExperimentSpec;
    use std::path::{Path, PathBuf};

    fn record(bench: &str, method: &str, seed: u64, error: f64) -> CampaignRecord {
        CampaignRecord {
            benchmark: bench.into(),
            method: method.into(),
            seed,
            stt: "fixed".into(),
            budget: 100,
            horizon: 100,
            stopped: true,
            n_training: 50,
            max_training: 10,
            n_testing: 50,
            max_testing: Some(12),
            ground_truth_max: 12,
            prediction: Some(Prediction {
                value: 12.0 * (1.0 + error / 100.0),
                ci_low: None,
                ci_high: None,
                horizon: None,
                method: method.into(),
                fallback_used: false,
            }),
            error_pct: Some(error),
            perf_gain: 0,
            threshold: None,
            model: None,
            config_hash: String::new(),
            log_file: String::new(),
        }
    }

    fn file(campaigns: Vec<CampaignRecord>) -> ResultsFile {
        let spec = ExperimentSpec::from_json(r#"{"targets":[],"methods":[]}"#, Path::new("x")).unwrap();
        ResultsFile {
            spec: ExperimentSpec { output_dir: PathBuf::from("x"), ..spec },
            repeats: 5,
            assumptions: vec![],
            campaigns,
        }
    }

    #[test]
    fn identical_errors_tie() {
        let mut c = Vec::new();
        for s in 0..5 {
            c.push(record("b", "markov", s, 10.0 + s as f64));
            c.push(record("b", "chebyshev", s, 10.0 + s as f64));
        }
        let rows = compare(&[file(c)]).unwrap();
        assert!(rows.iter().all(|r| r.significant_winner));
    }

    #[test]
    fn zero_errors_win() {
        let mut c = Vec::new();
        for s in 0..5 {
            c.push(record("b", "evt_pp", s, 0.0));
            c.push(record("b", "markov", s, 500.0 + s as f64));
        }
        let rows = compare(&[file(c)]).unwrap();
        let winners: Vec<_> = rows.iter().filter(|r| r.significant_winner).map(|r| r.method.as_str()).collect();
        assert_eq!(winners, vec!["evt_pp"]);
        let evt = rows.iter().find(|r| r.method == "evt_pp").unwrap();
        assert_eq!(evt.best_error_pct, Some(0.0));
        assert_eq!(evt.error_pct.unwrap().std, 0.0);
    }

    #[test]
    fn mismatched_benchmarks() {
        let c = vec![
            record("a", "markov", 0, 1.0),
            record("a", "bayes", 0, 1.0),
            record("b", "markov", 0, 1.0),
        ];
        assert!(matches!(compare(&[file(c)]), Err(ExperimentError::MismatchedBenchmarks(_))));
        let c = vec![record("a", "markov", 0, 1.0)];
        assert!(matches!(compare(&[file(c)]), Err(ExperimentError::TooFewMethods(_))));
    }

    #[test]
    fn csv_shape() {
        let c = vec![record("a", "markov", 0, 1.0), record("a", "bayes", 0, -2.0)];
        let csv = comparison_csv(&compare(&[file(c)]).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(lines[1].starts_with("a,bayes,1,50,0,"));
    }
}
