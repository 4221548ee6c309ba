use super::{EvtError, TailKind, TailModelParams, MIN_EXCEEDANCES, SHAPE_EPS};
use crate::optim::NelderMead;

fn check_excesses(excesses: &[f64], needed: usize) -> Result<(), EvtError> {
    if excesses.len() < needed {
        return Err(EvtError::TooFewExceedances {
            found: excesses.len(),
            needed,
        });
    }
    if excesses.iter().any(|y| !y.is_finite() || *y <= 0.0) {
        return Err(EvtError::InvalidExcesses);
    }
    Ok(())
}

/// Exponential tail: the MLE of the scale is the mean excess.
pub fn fit_exponential(
    excesses: &[f64],
    u: f64,
    zeta: f64,
    obs_per_period: u64,
) -> Result<TailModelParams, EvtError> {
    check_excesses(excesses, 2)?;
    let scale = excesses.iter().sum::<f64>() / excesses.len() as f64;
    Ok(TailModelParams {
        kind: TailKind::Exponential,
        location: u,
        scale,
        shape: 0.0,
        threshold: u,
        zeta,
        obs_per_period,
    })
}

/// GPD log-likelihood of the excesses; `-inf` outside the support.
pub fn gpd_log_likelihood(excesses: &[f64], sigma: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) || !xi.is_finite() {
        return f64::NEG_INFINITY;
    }
    let k = excesses.len() as f64;
    let log_sigma = sigma.ln();
    if xi.abs() < SHAPE_EPS {
        return -k * log_sigma - excesses.iter().sum::<f64>() / sigma;
    }
    let mut acc = 0.0;
    for &y in excesses {
        let z = xi * y / sigma;
        if z <= -1.0 {
            return f64::NEG_INFINITY;
        }
        acc += z.ln_1p();
    }
    -k * log_sigma - (1.0 + 1.0 / xi) * acc
}

/// Probability-weighted-moment estimate `(sigma, xi)`, nudged into the
/// feasible region so it can seed the likelihood search.
pub fn pwm_seed(excesses: &[f64]) -> (f64, f64) {
    let mut y = excesses.to_vec();
    y.sort_by(f64::total_cmp);
    let n = y.len() as f64;
    let a0 = y.iter().sum::<f64>() / n;
    let a1 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (1.0 - (i as f64 + 1.0 - 0.35) / n) * v)
        .sum::<f64>()
        / n;
    let denom = a0 - 2.0 * a1;
    let (sigma, xi) = if denom > 0.0 {
        (2.0 * a0 * a1 / denom, 2.0 - a0 / denom)
    } else {
        (a0, 0.0)
    };
    if !(sigma > 0.0) || !sigma.is_finite() || !xi.is_finite() {
        return (a0, 0.0);
    }
    let y_max = *y.last().unwrap_or(&0.0);
    let mut xi = xi.clamp(-0.95, 0.95);
    if xi < 0.0 && y_max > 0.0 {
        xi = xi.max(-0.9 * sigma / y_max);
    }
    (sigma, xi)
}

/// Maximum-likelihood generalized Pareto fit of threshold excesses.
///
/// Searches `(ln sigma, xi)` with Nelder–Mead from the PWM seed. Shapes at
/// or below -1 are rejected: the likelihood is unbounded there.
pub fn fit_gpd(
    excesses: &[f64],
    u: f64,
    zeta: f64,
    obs_per_period: u64,
) -> Result<TailModelParams, EvtError> {
    check_excesses(excesses, MIN_EXCEEDANCES)?;
    let (sigma0, xi0) = pwm_seed(excesses);
    let objective = |p: &[f64]| {
        if p[1] <= -1.0 {
            return f64::INFINITY;
        }
        -gpd_log_likelihood(excesses, p[0].exp(), p[1])
    };
    let start = [sigma0.ln(), xi0];
    if !objective(&start).is_finite() {
        return Err(EvtError::Infeasible);
    }
    let m = NelderMead::new(vec![0.1, 0.1]).minimize(objective, &start);
    if !m.converged {
        return Err(EvtError::NonConvergence { evals: m.evals });
    }
    Ok(TailModelParams {
        kind: TailKind::Gpd,
        location: u,
        scale: m.x[0].exp(),
        shape: m.x[1],
        threshold: u,
        zeta,
        obs_per_period,
    })
}

/// Negative log-likelihood of the peaks-over-threshold point process.
///
/// `span` is the observation window in period units (`n / obs_per_period`).
pub fn pp_negative_log_likelihood(
    exceedances: &[f64],
    u: f64,
    span: f64,
    mu: f64,
    sigma: f64,
    xi: f64,
) -> f64 {
    if !(sigma > 0.0) || !mu.is_finite() || !xi.is_finite() {
        return f64::INFINITY;
    }
    let log_sigma = sigma.ln();
    let k = exceedances.len() as f64;
    if xi.abs() < SHAPE_EPS {
        let rate = span * (-(u - mu) / sigma).exp();
        let sum: f64 = exceedances.iter().map(|x| (x - mu) / sigma).sum();
        return rate + k * log_sigma + sum;
    }
    let zu = xi * (u - mu) / sigma;
    if zu <= -1.0 {
        return f64::INFINITY;
    }
    let rate = span * (-zu.ln_1p() / xi).exp();
    let mut acc = 0.0;
    for &x in exceedances {
        let z = xi * (x - mu) / sigma;
        if z <= -1.0 {
            return f64::INFINITY;
        }
        acc += z.ln_1p();
    }
    rate + k * log_sigma + (1.0 + 1.0 / xi) * acc
}

/// Point-process fit of the values above `u`.
///
/// The search starts from the GPD fit of the same exceedances mapped to
/// point-process parameters with exceedance rate `k / span`.
pub fn fit_pp(deltas: &[f64], u: f64, obs_per_period: u64) -> Result<TailModelParams, EvtError> {
    if deltas.is_empty() {
        return Err(EvtError::Empty);
    }
    let exceedances: Vec<f64> = deltas.iter().copied().filter(|&x| x > u).collect();
    let k = exceedances.len();
    if k < MIN_EXCEEDANCES {
        return Err(EvtError::TooFewExceedances {
            found: k,
            needed: MIN_EXCEEDANCES,
        });
    }
    let n = deltas.len() as f64;
    let span = n / obs_per_period as f64;
    let zeta = k as f64 / n;
    let excesses: Vec<f64> = exceedances.iter().map(|x| x - u).collect();

    let (gpd_scale, xi0) = match fit_gpd(&excesses, u, zeta, obs_per_period) {
        Ok(p) => (p.scale, p.shape),
        Err(_) => (excesses.iter().sum::<f64>() / k as f64, 0.0),
    };
    let rate = k as f64 / span;
    let (mu0, sigma0) = if xi0.abs() < SHAPE_EPS {
        (u + gpd_scale * rate.ln(), gpd_scale)
    } else {
        let sigma = gpd_scale * rate.powf(xi0);
        (u - sigma * (rate.powf(-xi0) - 1.0) / xi0, sigma)
    };

    let objective = |p: &[f64]| {
        if p[2] <= -1.0 {
            return f64::INFINITY;
        }
        pp_negative_log_likelihood(&exceedances, u, span, p[0], p[1].exp(), p[2])
    };
    let start = [mu0, sigma0.ln(), xi0];
    if !objective(&start).is_finite() {
        return Err(EvtError::Infeasible);
    }
    let m = NelderMead::new(vec![0.1 * sigma0, 0.1, 0.1]).minimize(objective, &start);
    if !m.converged {
        return Err(EvtError::NonConvergence { evals: m.evals });
    }
    Ok(TailModelParams {
        kind: TailKind::Pp,
        location: m.x[0],
        scale: m.x[1].exp(),
        shape: m.x[2],
        threshold: u,
        zeta,
        obs_per_period,
    })
}
