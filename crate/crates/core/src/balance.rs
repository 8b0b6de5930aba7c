//! Domain-balanced weighting.
//!
//! Per-domain windowed losses `l` move a weight vector `w` on the simplex by
//! a KL-smoothed multiplicative step,
//!
//! ```text
//! w_i <- w_i * exp(alpha * l_i) / sum_j w_j * exp(alpha * l_j)
//! ```
//!
//! which is the maximizer of `sum_i w_i l_i - KL(w || w_prev) / alpha`.
//! The training loss scales each sample by `N * w_domain`, so uniform
//! weights reproduce the plain mean.

use serde::{Deserialize, Serialize};

use crate::corpus::DomainId;
use crate::error::{Error, Result};
use crate::objective::LossLedger;

/// Smallest weight kept after an update; guards positivity under underflow.
pub const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainWeights {
    pub w: Vec<f64>,
    pub step: u64,
}

impl DomainWeights {
    pub fn uniform(n: usize) -> Self {
        DomainWeights {
            w: vec![1.0 / n as f64; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.w.windows(2).all(|p| p[0] == p[1])
    }

    pub fn on_simplex(&self, tol: f64) -> bool {
        self.w.iter().all(|&x| x > 0.0 && x.is_finite()) && (self.w.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// What the weight update consumes at each period boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSignal {
    /// Windowed mean loss per domain.
    #[default]
    RawMeans,
    /// The same means normalized to sum to one.
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    pub alpha: f64,
    pub update_period: usize,
    pub signal: UpdateSignal,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            alpha: 1.0,
            update_period: 50,
            signal: UpdateSignal::RawMeans,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig("alpha must be finite and non-negative".into()));
        }
        if self.update_period == 0 {
            return Err(Error::InvalidConfig("update_period must be at least 1".into()));
        }
        Ok(())
    }
}

fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::NonFinite("domain importance normalizer"));
    }
    Ok(values.iter().map(|v| v / total).collect())
}

/// Each domain's share of the summed windowed mean losses.
pub fn domain_importance(ledger: &LossLedger) -> Result<Vec<f64>> {
    normalize(&ledger.resolved_means()?)
}

/// `KL(w || w_prev) = sum_i w_i ln(w_i / w_prev_i)`, with `0 ln 0 = 0`.
pub fn kl_divergence(w: &[f64], w_prev: &[f64]) -> f64 {
    w.iter()
        .zip(w_prev)
        .map(|(&a, &b)| if a == 0.0 { 0.0 } else { a * (a / b).ln() })
        .sum()
}

/// `sum_i w_i l_i - KL(w || w_prev) / alpha`.
pub fn kl_objective(w: &[f64], losses: &[f64], w_prev: &[f64], alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Err(Error::InvalidConfig("the smoothed objective is undefined at alpha = 0".into()));
    }
    if w.len() != losses.len() || w.len() != w_prev.len() {
        return Err(Error::DimensionMismatch {
            expected: w_prev.len(),
            actual: w.len(),
        });
    }
    let linear: f64 = w.iter().zip(losses).map(|(a, l)| a * l).sum();
    Ok(linear - kl_divergence(w, w_prev) / alpha)
}

pub fn update_weights(prev: &DomainWeights, losses: &[f64], config: &BalanceConfig) -> Result<DomainWeights> {
    if losses.len() != prev.len() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            actual: losses.len(),
        });
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("domain losses"));
    }
    let signal = match config.signal {
        UpdateSignal::RawMeans => losses.to_vec(),
        UpdateSignal::Normalized => normalize(losses)?,
    };
    let max = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let factors: Vec<f64> = signal.iter().map(|l| (config.alpha * (l - max)).exp()).collect();
    if factors.iter().all(|&f| f == 1.0) {
        return Ok(DomainWeights {
            w: prev.w.clone(),
            step: prev.step + 1,
        });
    }
    let raw: Vec<f64> = prev.w.iter().zip(&factors).map(|(w, f)| w * f).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|r| (r / total).max(WEIGHT_FLOOR)).collect();
    if w.contains(&WEIGHT_FLOOR) {
        let t: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= t);
    }
    Ok(DomainWeights {
        w,
        step: prev.step + 1,
    })
}

/// `(1 / B) * sum_s N * w_{d(s)} * loss_s`. With all weights equal the
/// per-sample factor is exactly 1, so this is the plain mean.
pub fn weighted_batch_loss(samples: &[(DomainId, f64)], weights: &DomainWeights) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(d, loss) in samples {
        total += sample_factor(d, weights)? * loss;
    }
    Ok(total / samples.len() as f64)
}

/// `N * w_d`, or exactly 1 when the weights are uniform.
pub fn sample_factor(domain: DomainId, weights: &DomainWeights) -> Result<f64> {
    let w = weights.w.get(domain.index()).ok_or(Error::UnknownDomain(domain))?;
    if weights.is_uniform() {
        Ok(1.0)
    } else {
        Ok(weights.len() as f64 * w)
    }
}
