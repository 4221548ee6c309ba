use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{
    error_pct, CampaignResult, DifferentialTarget, FuzzConfig, FuzzError, PredictorKind, SttKind,
    TargetSpec,
};
use crate::baselines::{bayes_monitor_step, chebyshev_predict, markov_predict, BaselineError, BayesMonitorState};
use crate::evt::{analyze_tail, BootstrapConfig, PredictConfig, Prediction, TailMethod};
use crate::stop::{exponentiality_test, laplace_step, LaplaceState, StopDecision, StopTestError};
use crate::stream::{summarize_deltas, CampaignLog, DiffSample};

const EXPLOIT_PROB: f64 = 0.8;
const RESERVOIR_CAP: usize = 16;

/// Public input plus the two secrets it is run against.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub x: Vec<u8>,
    pub z1: Vec<u8>,
    pub z2: Vec<u8>,
}

impl Triple {
    fn random<R: Rng + ?Sized>(public_len: usize, secret_len: usize, rng: &mut R) -> Self {
        let mut bytes = |n: usize| {
            let mut v = vec![0u8; n];
            rng.fill(&mut v[..]);
            v
        };
        let x = bytes(public_len);
        let z1 = bytes(secret_len);
        let z2 = bytes(secret_len);
        Triple { x, z1, z2 }
    }
}

fn flip_bit<R: Rng + ?Sized>(bytes: &mut [u8], rng: &mut R) {
    let bit = rng.random_range(0..bytes.len() * 8);
    bytes[bit / 8] ^= 1 << (bit % 8);
}

/// One mutation, chosen uniformly among: flip a bit of `z1`, flip a bit of
/// `z2`, replace a byte of `z1` or `z2`, swap the secrets, flip a bit of `x`.
/// The last is skipped when `x` is empty. Lengths never change.
pub fn mutate<R: Rng + ?Sized>(triple: &Triple, rng: &mut R) -> Triple {
    let mut t = triple.clone();
    let ops = if t.x.is_empty() { 4 } else { 5 };
    match rng.random_range(0..ops) {
        0 if !t.z1.is_empty() => flip_bit(&mut t.z1, rng),
        1 if !t.z2.is_empty() => flip_bit(&mut t.z2, rng),
        2 => {
            let z = if rng.random_bool(0.5) { &mut t.z1 } else { &mut t.z2 };
            if !z.is_empty() {
                let i = rng.random_range(0..z.len());
                z[i] = rng.random();
            }
        }
        3 => std::mem::swap(&mut t.z1, &mut t.z2),
        4 => flip_bit(&mut t.x, rng),
        _ => {}
    }
    t
}

struct Scored {
    triple: Triple,
    delta: u64,
}

fn evaluate(target: &dyn DifferentialTarget, t: &Triple) -> (u64, u64) {
    (target.cost(&t.x, &t.z1), target.cost(&t.x, &t.z2))
}

/// Running stopping rule.
enum Monitor {
    Exponentiality,
    Laplace(LaplaceState),
    Bayes(BayesMonitorState),
    Fixed(usize),
    Never,
}

impl Monitor {
    fn new(cfg: &FuzzConfig) -> Result<Self, FuzzError> {
        Ok(match cfg.stt {
            SttKind::Exponentiality => Monitor::Exponentiality,
            SttKind::Laplace => Monitor::Laplace(LaplaceState::new(cfg.laplace_j)?),
            SttKind::Bayes => Monitor::Bayes(BayesMonitorState::from_config(&cfg.baseline)?),
            SttKind::Fixed => Monitor::Fixed(cfg.baseline.fixed_training),
            SttKind::None => Monitor::Never,
        })
    }

    /// Feeds the newest delta; `deltas` already contains it.
    fn observe(&mut self, deltas: &[u64], cfg: &FuzzConfig) -> bool {
        let newest = *deltas.last().expect("observe after push");
        match self {
            Monitor::Exponentiality => {
                if deltas.len() % cfg.check_every != 0 {
                    return false;
                }
                match exponentiality_test(deltas, &cfg.exp_test) {
                    Ok(r) => r.passed,
                    // an all-zero top tail carries no information yet
                    Err(StopTestError::DegenerateTail { .. }) => false,
                    Err(_) => false,
                }
            }
            Monitor::Laplace(state) => {
                let (next, decision) = laplace_step(*state, newest);
                *state = next;
                decision == StopDecision::Stop
            }
            Monitor::Bayes(state) => {
                let (next, decision) = bayes_monitor_step(*state, newest);
                *state = next;
                decision == StopDecision::Stop
            }
            Monitor::Fixed(n) => deltas.len() == *n,
            Monitor::Never => false,
        }
    }
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    target: &'a TargetSpec,
    config: &'a FuzzConfig,
}

fn config_hash(target: &TargetSpec, cfg: &FuzzConfig) -> Result<String, FuzzError> {
    let json = serde_json::to_vec(&HashedConfig { target, config: cfg })?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// Replays the stopping rule over a recorded stream; returns the number of
/// training samples at the stop.
pub fn replay_stop(deltas: &[u64], cfg: &FuzzConfig) -> Result<Option<usize>, FuzzError> {
    let mut monitor = Monitor::new(cfg)?;
    for n in 1..=deltas.len() {
        if monitor.observe(&deltas[..n], cfg) {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Runs the configured predictor on a training prefix. Never touches the
/// fuzzing RNG.
pub fn predict_training(
    training: &[u64],
    cfg: &FuzzConfig,
) -> Result<(Prediction, Option<crate::evt::TailAnalysis>), FuzzError> {
    let method = match cfg.predictor {
        PredictorKind::EvtExponential => Some(TailMethod::Exponential),
        PredictorKind::EvtPp => Some(TailMethod::Pp),
        _ => None,
    };
    if let Some(method) = method {
        let pcfg = PredictConfig {
            horizon: cfg.horizon,
            method,
            threshold: cfg.threshold,
            bootstrap: BootstrapConfig {
                seed: cfg.seed,
                ..cfg.bootstrap
            },
            threshold_resamples: cfg.threshold_resamples,
            obs_per_period: cfg.obs_per_period,
            compute_ci: true,
        };
        let as_f64: Vec<f64> = training.iter().map(|&d| d as f64).collect();
        let analysis = analyze_tail(&as_f64, &pcfg).map_err(FuzzError::Prediction)?;
        return Ok((analysis.prediction.clone(), Some(analysis)));
    }
    let stats = summarize_deltas(training)?;
    let prediction = match cfg.predictor {
        PredictorKind::Markov => match markov_predict(&stats, &cfg.baseline) {
            Ok(p) => p,
            Err(BaselineError::ZeroMean(_)) => Prediction {
                value: 0.0,
                ci_low: None,
                ci_high: None,
                horizon: None,
                method: "markov (zero mean)".into(),
                fallback_used: false,
            },
            Err(e) => return Err(e.into()),
        },
        PredictorKind::Chebyshev => chebyshev_predict(&stats, &cfg.baseline),
        // the monitor's running maximum at acceptance is the prefix maximum
        _ => Prediction {
            value: stats.max as f64,
            ci_low: None,
            ci_high: None,
            horizon: None,
            method: "bayes".into(),
            fallback_used: false,
        },
    };
    Ok((prediction, None))
}

/// Runs the fuzzing loop to the full budget, stopping test and predictor
/// included.
pub fn run_campaign(target: &TargetSpec, cfg: &FuzzConfig) -> Result<CampaignResult, FuzzError> {
    cfg.validate()?;
    let oracle = super::builtin_target(target)?;
    let oracle: &dyn DifferentialTarget = &oracle;
    let started = Instant::now();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = CampaignLog::new();
    log.meta.insert("target".into(), target.to_string());
    log.meta.insert("seed".into(), cfg.seed.to_string());
    log.meta.insert("budget".into(), cfg.budget.to_string());
    log.meta.insert("stt".into(), cfg.stt.to_string());
    log.meta.insert("predictor".into(), cfg.predictor.to_string());
    log.meta.insert("config_hash".into(), config_hash(target, cfg)?);

    let mut deltas: Vec<u64> = Vec::with_capacity(cfg.budget);
    let mut monitor = Monitor::new(cfg)?;
    let mut stop_index = None;
    let mut truncated = false;

    let first = Triple::random(oracle.public_len(), oracle.secret_len(), &mut rng);
    let (a, b) = evaluate(oracle, &first);
    let first = Scored { triple: first, delta: a.abs_diff(b) };
    let mut best = Scored { triple: first.triple.clone(), delta: first.delta };
    let mut reservoir = vec![first];
    let mut accepted = 1usize;
    log.push(DiffSample::new(0, a, b)).expect("first index");
    deltas.push(a.abs_diff(b));
    if monitor.observe(&deltas, cfg) {
        stop_index = Some(1);
    }

    for i in 1..cfg.budget {
        if let Some(limit) = cfg.max_wall_secs {
            if started.elapsed().as_secs_f64() > limit {
                truncated = true;
                break;
            }
        }
        let parent = if rng.random_bool(EXPLOIT_PROB) {
            &best
        } else {
            &reservoir[rng.random_range(0..reservoir.len())]
        };
        let child = mutate(&parent.triple, &mut rng);
        let parent_delta = parent.delta;
        let (a, b) = evaluate(oracle, &child);
        let delta = a.abs_diff(b);
        log.push(DiffSample::new(i as u64, a, b)).expect("indices increase");
        deltas.push(delta);

        if delta > parent_delta {
            if delta > best.delta {
                best = Scored { triple: child.clone(), delta };
            }
            accepted += 1;
            if reservoir.len() < RESERVOIR_CAP {
                reservoir.push(Scored { triple: child, delta });
            } else {
                let j = rng.random_range(0..accepted);
                if j < RESERVOIR_CAP {
                    reservoir[j] = Scored { triple: child, delta };
                }
            }
        }

        if stop_index.is_none() && monitor.observe(&deltas, cfg) {
            stop_index = Some(deltas.len());
        }
    }

    let ground_truth_max = deltas.iter().copied().max().unwrap_or(0);
    let (prediction, tail, training_max, perf_gain) = match stop_index {
        Some(stop) => {
            let training = &deltas[..stop];
            let (p, tail) = predict_training(training, cfg)?;
            let gain = log.samples()[stop..]
                .iter()
                .map(|s| s.cost_a() + s.cost_b())
                .sum();
            (Some(p), tail, training.iter().copied().max(), gain)
        }
        None => (None, None, None, 0),
    };
    let error = prediction
        .as_ref()
        .and_then(|p| error_pct(p.value, ground_truth_max));

    Ok(CampaignResult {
        log,
        stop_index,
        prediction,
        tail,
        training_max,
        ground_truth_max,
        error_pct: error,
        perf_gain,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leak() -> TargetSpec {
        TargetSpec::LeakSet { width: 12, unit_cost: 100 }
    }

    fn quick(seed: u64, stt: SttKind, predictor: PredictorKind) -> FuzzConfig {
        FuzzConfig {
            budget: 3000,
            seed,
            stt,
            predictor,
            horizon: 3000,
            bootstrap: BootstrapConfig { resamples: 50, ..Default::default() },
            threshold_resamples: Some(20),
            ..Default::default()
        }
    }

    #[test]
    fn mutation_keeps_lengths_and_is_deterministic() {
        let t = Triple { x: vec![], z1: vec![1, 2], z2: vec![3, 4] };
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let m = mutate(&t, &mut a);
            assert_eq!(m, mutate(&t, &mut b));
            assert!(m.x.is_empty());
            assert_eq!((m.z1.len(), m.z2.len()), (2, 2));
        }
    }

    #[test]
    fn single_mutation_touches_one_component() {
        let t = Triple { x: vec![0; 3], z1: vec![0; 2], z2: vec![0xff; 2] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let m = mutate(&t, &mut rng);
            let swapped = m.z1 == t.z2 && m.z2 == t.z1;
            let changed = [m.x != t.x, m.z1 != t.z1, m.z2 != t.z2].iter().filter(|c| **c).count();
            assert!(swapped || changed <= 1);
        }
    }

    #[test]
    fn straightline_is_degenerate() {
        let target = TargetSpec::Straightline { const_cost: 9 };
        let r = run_campaign(&target, &quick(1, SttKind::Exponentiality, PredictorKind::EvtPp)).unwrap();
        assert!(r.log.deltas().iter().all(|&d| d == 0));
        assert_eq!(r.stop_index, None);
        assert_eq!(r.perf_gain, 0);

        let r = run_campaign(&target, &quick(1, SttKind::Laplace, PredictorKind::Bayes)).unwrap();
        // the first sample sets the record, then j quiet runs
        assert_eq!(r.stop_index, Some(101));
        assert_eq!(r.prediction.as_ref().unwrap().value, 0.0);
        assert_eq!(r.error_pct, Some(0.0));
    }

    #[test]
    fn same_seed_same_campaign() {
        let cfg = quick(11, SttKind::Exponentiality, PredictorKind::EvtPp);
        let a = run_campaign(&leak(), &cfg).unwrap();
        let b = run_campaign(&leak(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_campaign(&leak(), &quick(12, SttKind::Exponentiality, PredictorKind::EvtPp)).unwrap();
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn bounded_by_cap_and_best_nondecreasing() {
        for seed in 0..5 {
            let r = run_campaign(&leak(), &quick(seed, SttKind::None, PredictorKind::Markov)).unwrap();
            assert!(r.ground_truth_max <= 1200);
            assert!(r.prediction.is_none() && r.stop_index.is_none());
            let mut running = 0;
            for d in r.log.deltas() {
                running = running.max(d);
            }
            assert_eq!(running, r.ground_truth_max);
        }
    }

    #[test]
    fn perf_gain_matches_replay() {
        let cfg = quick(3, SttKind::Fixed, PredictorKind::Chebyshev);
        let cfg = FuzzConfig { baseline: crate::BaselineConfig { fixed_training: 700, ..cfg.baseline }, ..cfg };
        let r = run_campaign(&leak(), &cfg).unwrap();
        assert_eq!(r.stop_index, Some(700));
        let replay = run_campaign(&leak(), &FuzzConfig { stt: SttKind::None, ..cfg.clone() }).unwrap();
        assert_eq!(replay.log.samples(), r.log.samples());
        let expected: u64 = replay.log.samples()[700..].iter().map(|s| s.cost_a() + s.cost_b()).sum();
        assert_eq!(r.perf_gain, expected);
    }

    #[test]
    fn replayed_stop_matches_live_stop() {
        for (seed, stt, pred) in [
            (4, SttKind::Exponentiality, PredictorKind::EvtExponential),
            (5, SttKind::Laplace, PredictorKind::Bayes),
            (6, SttKind::Bayes, PredictorKind::Bayes),
            (7, SttKind::Fixed, PredictorKind::Markov),
        ] {
            let cfg = quick(seed, stt, pred);
            let r = run_campaign(&leak(), &cfg).unwrap();
            assert_eq!(replay_stop(&r.log.deltas(), &cfg).unwrap(), r.stop_index);
        }
    }

    #[test]
    fn bayes_predicts_prefix_max() {
        for seed in 0..5 {
            let r = run_campaign(&leak(), &quick(seed, SttKind::Bayes, PredictorKind::Bayes)).unwrap();
            if let Some(stop) = r.stop_index {
                let max = r.log.deltas()[..stop].iter().copied().max().unwrap();
                assert_eq!(r.prediction.unwrap().value, max as f64);
            }
        }
    }

    #[test]
    fn meta_records_provenance() {
        let r = run_campaign(&leak(), &quick(2, SttKind::None, PredictorKind::Markov)).unwrap();
        assert_eq!(r.log.meta["target"], "leak_set(12,100)");
        assert_eq!(r.log.meta["seed"], "2");
        assert_eq!(r.log.meta["config_hash"].len(), 64);
    }
}
