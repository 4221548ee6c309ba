//! Tail-risk estimation for differential fuzzing campaigns.
//!
//! The crate is organised bottom-up:
//!
//! - [`stream`]: cost-difference samples, log ingestion/emission, summaries and splits.
//! - [`stop`]: stopping tests over the tail of a stream (exponentiality and Laplace).
//! - [`evt`]: threshold selection, exponential / generalized Pareto / point-process
//!   fits, return levels, bootstrap intervals and the worst-case predictor.
//! - [`baselines`]: Markov, Chebyshev and the Jeffreys Bayes-factor monitor.
//! - [`fuzz`]: a deterministic differential fuzzer over synthetic cost oracles.
//! - [`experiment`]: multi-campaign runs, predictor comparison and report data.

pub mod baselines;
pub mod evt;
pub mod experiment;
pub mod fuzz;
pub mod optim;
pub mod stop;
pub mod stream;

pub use baselines::{BaselineConfig, BayesMonitorState};
pub use evt::{
    BootstrapConfig, Prediction, TailKind, TailMethod, TailModelParams, ThresholdChoice,
    ThresholdMethod,
};
pub use fuzz::{CampaignResult, FuzzConfig, PredictorKind, SttKind, TargetSpec};
pub use stop::{ExpTestConfig, LaplaceState, TailTestResult};
pub use stream::{CampaignLog, DiffSample, LogFormat, SplitLog, SummaryStats};
