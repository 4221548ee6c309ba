//! Cost-difference streams: samples, logs, summaries and train/test splits.
//!
//! Logs are stored as CSV (`index,cost_a,cost_b,delta,input_id`) or as JSONL
//! with the same keys. Costs are nonnegative integers; `delta` and `input_id`
//! are optional on input and always written on output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: delta column says {stated} but |cost_a - cost_b| = {computed}")]
    DeltaMismatch { line: u64, stated: u64, computed: u64 },
    #[error("line {line}: index {index} does not increase (previous {previous})")]
    NonIncreasingIndex { line: u64, index: u64, previous: u64 },
    #[error("index {index} does not increase (previous {previous})")]
    OutOfOrder { index: u64, previous: u64 },
    #[error("log file contains no samples")]
    EmptyFile,
    #[error("operation needs a non-empty log")]
    EmptyLog,
    #[error("split index {at} out of range for a log of {len} samples")]
    SplitOutOfRange { at: usize, len: usize },
    #[error("k = {k} is invalid for {len} values")]
    InvalidK { k: usize, len: usize },
    #[error("unknown log format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One fuzzing iteration: two costs that share the public input, and their
/// absolute difference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffSample {
    index: u64,
    cost_a: u64,
    cost_b: u64,
    delta: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_id: Option<String>,
}

impl DiffSample {
    pub fn new(index: u64, cost_a: u64, cost_b: u64) -> Self {
        Self {
            index,
            cost_a,
            cost_b,
            delta: cost_a.abs_diff(cost_b),
            input_id: None,
        }
    }

    pub fn with_input_id(mut self, id: impl Into<String>) -> Self {
        let id = id.into();
        self.input_id = if id.is_empty() { None } else { Some(id) };
        self
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn cost_a(&self) -> u64 {
        self.cost_a
    }

    pub fn cost_b(&self) -> u64 {
        self.cost_b
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn input_id(&self) -> Option<&str> {
        self.input_id.as_deref()
    }
}

/// An ordered stream of samples plus free-form metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CampaignLog {
    samples: Vec<DiffSample>,
    pub meta: BTreeMap<String, String>,
}

impl CampaignLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<DiffSample>) -> Result<Self, StreamError> {
        let mut log = Self::new();
        for s in samples {
            log.push(s)?;
        }
        Ok(log)
    }

    /// Appends a sample; its index must exceed the last one.
    pub fn push(&mut self, sample: DiffSample) -> Result<(), StreamError> {
        if let Some(last) = self.samples.last() {
            if sample.index <= last.index {
                return Err(StreamError::OutOfOrder {
                    index: sample.index,
                    previous: last.index,
                });
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[DiffSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn deltas(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.delta).collect()
    }

    pub fn max_delta(&self) -> Option<u64> {
        self.samples.iter().map(|s| s.delta).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: u64,
    pub min: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitLog {
    pub training: CampaignLog,
    pub testing: CampaignLog,
    pub split_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// Guesses the format from a file extension (`.jsonl`/`.ndjson` vs anything else).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => LogFormat::Jsonl,
            _ => LogFormat::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::Jsonl => "jsonl",
        }
    }
}

impl FromStr for LogFormat {
    type Err = StreamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(StreamError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

pub const CSV_HEADER: [&str; 5] = ["index", "cost_a", "cost_b", "delta", "input_id"];

pub fn ingest(path: &Path, format: LogFormat) -> Result<CampaignLog, StreamError> {
    let file = File::open(path)?;
    read_log(BufReader::new(file), format)
}

pub fn read_log<R: Read>(reader: R, format: LogFormat) -> Result<CampaignLog, StreamError> {
    let log = match format {
        LogFormat::Csv => read_csv(reader)?,
        LogFormat::Jsonl => read_jsonl(BufReader::new(reader))?,
    };
    if log.is_empty() {
        return Err(StreamError::EmptyFile);
    }
    Ok(log)
}

struct RawRow {
    line: u64,
    index: u64,
    cost_a: u64,
    cost_b: u64,
    delta: Option<u64>,
    input_id: Option<String>,
}

fn accept_row(log: &mut CampaignLog, row: RawRow) -> Result<(), StreamError> {
    let mut sample = DiffSample::new(row.index, row.cost_a, row.cost_b);
    if let Some(stated) = row.delta {
        if stated != sample.delta {
            return Err(StreamError::DeltaMismatch {
                line: row.line,
                stated,
                computed: sample.delta,
            });
        }
    }
    if let Some(id) = row.input_id {
        sample = sample.with_input_id(id);
    }
    if let Some(last) = log.samples.last() {
        if sample.index <= last.index {
            return Err(StreamError::NonIncreasingIndex {
                line: row.line,
                index: sample.index,
                previous: last.index,
            });
        }
    }
    log.samples.push(sample);
    Ok(())
}

fn parse_u64(field: &str, name: &str, line: u64) -> Result<u64, StreamError> {
    field.trim().parse::<u64>().map_err(|_| StreamError::Parse {
        line,
        message: format!("`{name}` must be a nonnegative integer, got `{field}`"),
    })
}

fn read_csv<R: Read>(reader: R) -> Result<CampaignLog, StreamError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(StreamError::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(StreamError::EmptyFile);
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| StreamError::Parse {
        line: 1,
        message: format!("header is missing required column `{name}`"),
    };
    let i_index = col("index").ok_or_else(|| missing("index"))?;
    let i_a = col("cost_a").ok_or_else(|| missing("cost_a"))?;
    let i_b = col("cost_b").ok_or_else(|| missing("cost_b"))?;
    let i_delta = col("delta");
    let i_id = col("input_id");

    let mut log = CampaignLog::new();
    for record in rdr.records() {
        let record = record.map_err(|e| StreamError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize, name: &str| {
            record.get(i).ok_or_else(|| StreamError::Parse {
                line,
                message: format!("missing `{name}` field"),
            })
        };
        let delta = match i_delta.and_then(|i| record.get(i)) {
            Some(s) if !s.is_empty() => Some(parse_u64(s, "delta", line)?),
            _ => None,
        };
        let input_id = i_id
            .and_then(|i| record.get(i))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        accept_row(
            &mut log,
            RawRow {
                line,
                index: parse_u64(get(i_index, "index")?, "index", line)?,
                cost_a: parse_u64(get(i_a, "cost_a")?, "cost_a", line)?,
                cost_b: parse_u64(get(i_b, "cost_b")?, "cost_b", line)?,
                delta,
                input_id,
            },
        )?;
    }
    Ok(log)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    index: u64,
    cost_a: u64,
    cost_b: u64,
    #[serde(default)]
    delta: Option<u64>,
    #[serde(default)]
    input_id: Option<String>,
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<CampaignLog, StreamError> {
    let mut log = CampaignLog::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line).map_err(|e| StreamError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        accept_row(
            &mut log,
            RawRow {
                line: line_no,
                index: row.index,
                cost_a: row.cost_a,
                cost_b: row.cost_b,
                delta: row.delta,
                input_id: row.input_id,
            },
        )?;
    }
    Ok(log)
}

pub fn emit(log: &CampaignLog, path: &Path, format: LogFormat) -> Result<(), StreamError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_log(log, &mut out, format)?;
    out.flush()?;
    Ok(())
}

pub fn write_log<W: Write>(log: &CampaignLog, out: W, format: LogFormat) -> Result<(), StreamError> {
    match format {
        LogFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_HEADER).map_err(csv_io)?;
            for s in &log.samples {
                w.write_record([
                    s.index.to_string(),
                    s.cost_a.to_string(),
                    s.cost_b.to_string(),
                    s.delta.to_string(),
                    s.input_id.clone().unwrap_or_default(),
                ])
                .map_err(csv_io)?;
            }
            w.flush()?;
        }
        LogFormat::Jsonl => {
            let mut out = out;
            for s in &log.samples {
                serde_json::to_writer(&mut out, s).map_err(io::Error::from)?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> StreamError {
    StreamError::Io(io::Error::other(e))
}

pub fn summarize(log: &CampaignLog) -> Result<SummaryStats, StreamError> {
    summarize_deltas(&log.deltas())
}

/// Single-pass (Welford) summary of a delta sequence.
pub fn summarize_deltas(deltas: &[u64]) -> Result<SummaryStats, StreamError> {
    if deltas.is_empty() {
        return Err(StreamError::EmptyLog);
    }
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let mut min = u64::MAX;
    let mut max = 0u64;
    for (i, &d) in deltas.iter().enumerate() {
        let x = d as f64;
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
        min = min.min(d);
        max = max.max(d);
    }
    let n = deltas.len();
    Ok(SummaryStats {
        count: n,
        mean,
        std: (m2 / n as f64).max(0.0).sqrt(),
        max,
        min,
    })
}

pub fn split(log: &CampaignLog, at: usize) -> Result<SplitLog, StreamError> {
    if at > log.len() {
        return Err(StreamError::SplitOutOfRange { at, len: log.len() });
    }
    let (head, tail) = log.samples.split_at(at);
    Ok(SplitLog {
        training: CampaignLog {
            samples: head.to_vec(),
            meta: log.meta.clone(),
        },
        testing: CampaignLog {
            samples: tail.to_vec(),
            meta: log.meta.clone(),
        },
        split_index: at,
    })
}

/// The `k` largest values in descending order.
///
/// Equal values are taken later-index first; the returned values do not
/// depend on that rule, only which positions were picked.
pub fn top_k(deltas: &[u64], k: usize) -> Result<Vec<u64>, StreamError> {
    if k == 0 || k > deltas.len() {
        return Err(StreamError::InvalidK {
            k,
            len: deltas.len(),
        });
    }
    let mut idx: Vec<usize> = (0..deltas.len()).collect();
    let order = |&a: &usize, &b: &usize| deltas[b].cmp(&deltas[a]).then(b.cmp(&a));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    Ok(idx.into_iter().map(|i| deltas[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_of(rows: &[(u64, u64, u64)]) -> CampaignLog {
        CampaignLog::from_samples(rows.iter().map(|&(i, a, b)| DiffSample::new(i, a, b)).collect())
            .unwrap()
    }

    #[test]
    fn ingest_csv_rows() {
        let text = "index,cost_a,cost_b,delta,input_id\n0,10,7,3,\n1,4,4,0,abc\n";
        let log = read_log(text.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.deltas(), vec![3, 0]);
        assert_eq!(log.samples()[1].input_id(), Some("abc"));
    }

    #[test]
    fn ingest_csv_without_optional_columns() {
        let text = "index,cost_a,cost_b\n0,10,7\n1,4,4\n";
        let log = read_log(text.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.deltas(), vec![3, 0]);
    }

    #[test]
    fn ingest_empty_file() {
        assert!(matches!(
            read_log("".as_bytes(), LogFormat::Csv),
            Err(StreamError::EmptyFile)
        ));
        assert!(matches!(
            read_log("index,cost_a,cost_b,delta,input_id\n".as_bytes(), LogFormat::Csv),
            Err(StreamError::EmptyFile)
        ));
        assert!(matches!(
            read_log("".as_bytes(), LogFormat::Jsonl),
            Err(StreamError::EmptyFile)
        ));
    }

    #[test]
    fn ingest_delta_mismatch_reports_line() {
        let text = "index,cost_a,cost_b,delta\n0,1,1,0\n1,10,7,5\n";
        match read_log(text.as_bytes(), LogFormat::Csv) {
            Err(StreamError::DeltaMismatch { line, stated, computed }) => {
                assert_eq!((line, stated, computed), (3, 5, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let jsonl = "{\"index\":0,\"cost_a\":10,\"cost_b\":7,\"delta\":5}\n";
        assert!(matches!(
            read_log(jsonl.as_bytes(), LogFormat::Jsonl),
            Err(StreamError::DeltaMismatch { line: 1, .. })
        ));
    }

    #[test]
    fn ingest_rejects_real_costs_and_bad_order() {
        let text = "index,cost_a,cost_b\n0,10.5,7\n";
        assert!(matches!(
            read_log(text.as_bytes(), LogFormat::Csv),
            Err(StreamError::Parse { line: 2, .. })
        ));
        let jsonl = "{\"index\":0,\"cost_a\":10.0,\"cost_b\":7}\n";
        assert!(matches!(
            read_log(jsonl.as_bytes(), LogFormat::Jsonl),
            Err(StreamError::Parse { line: 1, .. })
        ));
        let text = "index,cost_a,cost_b\n3,1,1\n3,2,2\n";
        assert!(matches!(
            read_log(text.as_bytes(), LogFormat::Csv),
            Err(StreamError::NonIncreasingIndex { line: 3, .. })
        ));
    }

    #[test]
    fn summarize_small() {
        let s = summarize(&log_of(&[(0, 10, 7), (1, 4, 4)])).unwrap();
        assert_eq!((s.count, s.max, s.min), (2, 3, 0));
        assert_eq!(s.mean, 1.5);
        assert_eq!(s.std, 1.5);
        let s = summarize_deltas(&[7]).unwrap();
        assert_eq!((s.mean, s.std), (7.0, 0.0));
        assert!(matches!(summarize(&CampaignLog::new()), Err(StreamError::EmptyLog)));
    }

    #[test]
    fn summarize_matches_two_pass_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let deltas: Vec<u64> = (0..10_000).map(|_| rng.random_range(0..5_000u64)).collect();
        let n = deltas.len() as f64;
        let mean = deltas.iter().map(|&d| d as f64).sum::<f64>() / n;
        let var = deltas.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
        let s = summarize_deltas(&deltas).unwrap();
        assert!((s.mean - mean).abs() <= 1e-9 * mean);
        assert!((s.std - var.sqrt()).abs() <= 1e-9 * var.sqrt());
        assert_eq!(s.max, *deltas.iter().max().unwrap());
        assert_eq!(s.min, *deltas.iter().min().unwrap());
    }

    #[test]
    fn split_edges() {
        let log = log_of(&[(0, 1, 0), (1, 2, 0), (2, 3, 0), (3, 4, 0), (4, 5, 0)]);
        let s = split(&log, 2).unwrap();
        assert_eq!((s.training.len(), s.testing.len(), s.split_index), (2, 3, 2));
        assert_eq!(split(&log, 0).unwrap().training.len(), 0);
        assert_eq!(split(&log, 5).unwrap().testing.len(), 0);
        assert!(matches!(split(&log, 6), Err(StreamError::SplitOutOfRange { .. })));
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[1, 9, 3, 9, 2], 2).unwrap(), vec![9, 9]);
        assert_eq!(top_k(&[1, 9, 3, 9, 2], 5).unwrap(), vec![9, 9, 3, 2, 1]);
        assert!(top_k(&[1, 2], 3).is_err());
        assert!(top_k(&[1, 2], 0).is_err());
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<u64> = (0..1000).map(|_| rng.random_range(0..300u64)).collect();
        let mut sorted = v.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(top_k(&v, 50).unwrap(), sorted[..50].to_vec());
    }

    proptest! {
        #[test]
        fn emit_ingest_round_trip(
            rows in proptest::collection::vec((0u64..1_000_000, 0u64..1_000_000, proptest::option::of("[a-z0-9]{1,8}")), 1..40),
            jsonl in any::<bool>(),
        ) {
            let samples = rows.iter().enumerate().map(|(i, (a, b, id))| {
                let s = DiffSample::new(i as u64 * 3, *a, *b);
                match id { Some(id) => s.with_input_id(id.clone()), None => s }
            }).collect();
            let log = CampaignLog::from_samples(samples).unwrap();
            let format = if jsonl { LogFormat::Jsonl } else { LogFormat::Csv };
            let mut buf = Vec::new();
            write_log(&log, &mut buf, format).unwrap();
            let back = read_log(buf.as_slice(), format).unwrap();
            prop_assert_eq!(back, log);
        }

        #[test]
        fn top_k_is_sub_multiset_with_max(v in proptest::collection::vec(0u64..50, 1..200), k in 1usize..200) {
            let k = k.min(v.len());
            let top = top_k(&v, k).unwrap();
            prop_assert_eq!(top.len(), k);
            prop_assert_eq!(top[0], *v.iter().max().unwrap());
            let mut pool = v.clone();
            for t in &top {
                let pos = pool.iter().position(|x| x == t);
                prop_assert!(pos.is_some());
                pool.swap_remove(pos.unwrap());
            }
        }

        #[test]
        fn split_is_lossless(n in 0usize..30, at in 0usize..30) {
            let log = CampaignLog::from_samples((0..n as u64).map(|i| DiffSample::new(i, i * 2, i)).collect()).unwrap();
            if at <= n {
                let s = split(&log, at).unwrap();
                let mut joined = s.training.samples().to_vec();
                joined.extend_from_slice(s.testing.samples());
                prop_assert_eq!(joined.as_slice(), log.samples());
                prop_assert_eq!(s.split_index, s.training.len());
            } else {
                prop_assert!(split(&log, at).is_err());
            }
        }
    }
}
