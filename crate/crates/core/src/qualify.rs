//! Credibility gating of predicted power allocations.
//!
//! Each link gets a confidence interval centered at its predicted power with
//! half-width `alpha` times the epistemic standard deviation, clipped to
//! `[0, p_max]`. The prediction is credible when the sum rates at the
//! interval's extreme points and at the prediction itself are close relative
//! to the predicted rate:
//!
//! ```text
//! maxdist(R_upper, R_lower, R_hat) / R_hat <= epsilon
//! ```

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsemblePrediction;
use crate::error::{Error, Result};
use crate::netsim::{sum_rate_in, ChannelInstance, LogBase, NoiseModel, PowerVector};

/// Per-link confidence box on the predicted powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub lower: PowerVector,
    pub upper: PowerVector,
}

/// Gate parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    /// Confidence-interval half-width in epistemic standard deviations.
    pub alpha: f64,
    /// Credibility threshold on the relative sum-rate spread.
    pub epsilon: f64,
    pub p_max: f64,
    pub log_base: LogBase,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams { alpha: 1.96, epsilon: 0.2, p_max: 1.0, log_base: LogBase::Natural }
    }
}

/// Outcome of the qualifying criterion for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualifyDecision {
    pub credible: bool,
    /// Sum rate at the predicted power.
    pub r_hat: f64,
    /// Sum rate at the upper extreme of the feasible set.
    pub r_upper: f64,
    /// Sum rate at the lower extreme of the feasible set.
    pub r_lower: f64,
    /// `maxdist(r_upper, r_lower, r_hat) / r_hat`; infinite when `r_hat` is 0.
    pub ratio: f64,
    pub feasible_set: FeasibleSet,
}

/// Per-link interval `[p - alpha s, p + alpha s]` clipped to `[0, p_max]`,
/// with predictions and epistemic deviations rescaled to physical units.
pub fn confidence_intervals(
    pred: &EnsemblePrediction,
    alpha: f64,
    p_max: f64,
) -> Result<FeasibleSet> {
    if alpha < 0.0 {
        return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
    }
    if !(p_max > 0.0) {
        return Err(Error::invalid(format!("p_max must be positive, got {p_max}")));
    }
    let n = pred.mean.len();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for k in 0..n {
        let center = pred.mean[k] * p_max;
        let half = alpha * pred.epistemic_var[k].sqrt() * p_max;
        lower.push((center - half).clamp(0.0, p_max));
        upper.push((center + half).clamp(0.0, p_max));
    }
    Ok(FeasibleSet {
        lower: PowerVector::new(lower, p_max)?,
        upper: PowerVector::new(upper, p_max)?,
    })
}

/// Largest pairwise absolute distance among three values.
pub fn maxdist(a: f64, b: f64, c: f64) -> f64 {
    (a - b).abs().max((a - c).abs()).max((b - c).abs())
}

/// Evaluates the qualifying criterion for one channel instance. A zero
/// predicted sum rate can never be qualified credible.
pub fn qualify(
    h: &ChannelInstance,
    noise: &NoiseModel,
    pred: &EnsemblePrediction,
    gate: &GateParams,
) -> Result<QualifyDecision> {
    if !(gate.epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {}", gate.epsilon)));
    }
    if pred.mean.len() != h.n_links() {
        return Err(Error::invalid("prediction length does not match channel size"));
    }
    let feasible_set = confidence_intervals(pred, gate.alpha, gate.p_max)?;
    let p_hat = pred.power(gate.p_max);
    let r_hat = sum_rate_in(h, &p_hat, noise, gate.log_base);
    let r_upper = sum_rate_in(h, &feasible_set.upper, noise, gate.log_base);
    let r_lower = sum_rate_in(h, &feasible_set.lower, noise, gate.log_base);
    let (ratio, credible) = if r_hat > 0.0 {
        let ratio = maxdist(r_upper, r_lower, r_hat) / r_hat;
        (ratio, ratio <= gate.epsilon)
    } else {
        (f64::INFINITY, false)
    };
    Ok(QualifyDecision { credible, r_hat, r_upper, r_lower, ratio, feasible_set })
}
