use super::{EvtError, TailKind, TailModelParams, SHAPE_EPS};

/// Extrapolation is only trusted for exponential (ξ = 0) or bounded (ξ < 0) tails.
pub fn shape_is_valid(p: &TailModelParams) -> bool {
    p.shape <= 0.0
}

/// Finite upper end of the support when ξ < 0.
pub fn upper_endpoint(p: &TailModelParams) -> Option<f64> {
    if p.shape >= -SHAPE_EPS {
        return None;
    }
    Some(match p.kind {
        TailKind::Exponential | TailKind::Gpd => p.threshold - p.scale / p.shape,
        TailKind::Pp => p.location - p.scale / p.shape,
    })
}

/// Level expected to be exceeded once within `horizon` observations.
///
/// Exponential/GPD levels use `horizon * zeta` expected exceedances and
/// return the threshold when that is at most one. Point-process levels use
/// `horizon / obs_per_period` period units, which must exceed one.
pub fn return_level(p: &TailModelParams, horizon: u64) -> Result<f64, EvtError> {
    if horizon == 0 {
        return Err(EvtError::ZeroHorizon);
    }
    let h = horizon as f64;
    match p.kind {
        TailKind::Exponential | TailKind::Gpd => {
            let expected = h * p.zeta;
            if expected <= 1.0 {
                return Ok(p.threshold);
            }
            if p.kind == TailKind::Exponential || p.shape.abs() < SHAPE_EPS {
                Ok(p.threshold + p.scale * expected.ln())
            } else {
                Ok(p.threshold + p.scale / p.shape * (expected.powf(p.shape) - 1.0))
            }
        }
        TailKind::Pp => {
            let periods = h / p.obs_per_period as f64;
            if periods <= 1.0 {
                return Err(EvtError::HorizonTooShort { periods });
            }
            let y = -(-1.0 / periods).ln_1p();
            if p.shape.abs() < SHAPE_EPS {
                Ok(p.location - p.scale * y.ln())
            } else {
                Ok(p.location - p.scale / p.shape * (1.0 - y.powf(-p.shape)))
            }
        }
    }
}
