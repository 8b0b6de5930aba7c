//! Relevance scoring, in-domain negative sampling and the contrastive loss.

use ndarray::{Array1, ArrayView1};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainId, ItemId};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub fn score(user: ArrayView1<f64>, item: ArrayView1<f64>) -> Result<f64> {
    if user.len() != item.len() {
        return Err(Error::DimensionMismatch {
            expected: user.len(),
            actual: item.len(),
        });
    }
    Ok(user.dot(&item))
}

/// `n` distinct items of `candidates` other than `positive`, uniformly
/// without replacement.
pub fn sample_negatives(
    positive: ItemId,
    candidates: &[ItemId],
    domain_name: &str,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<ItemId>> {
    let pool: Vec<ItemId> = candidates.iter().copied().filter(|&c| c != positive).collect();
    if pool.len() < n {
        return Err(Error::InsufficientCandidates {
            domain: domain_name.to_string(),
            available: pool.len(),
            requested: n,
        });
    }
    Ok(index::sample(rng, pool.len(), n).iter().map(|i| pool[i]).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `-log softmax` of the positive score.
    #[default]
    InfoNce,
    /// The negated softmax probability of the positive, without the log.
    ProbabilityOnly,
}

#[derive(Clone, Debug)]
pub struct ContrastiveGrads {
    pub loss: f64,
    pub user: Array1<f64>,
    pub positive: Array1<f64>,
    pub negatives: Vec<Array1<f64>>,
    /// d loss / d score, positive first.
    pub score_grads: Vec<f64>,
}

/// Loss of one example and its gradient with respect to every representation.
pub fn contrastive_loss(
    user: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negatives: &[ArrayView1<f64>],
    form: LossForm,
) -> Result<ContrastiveGrads> {
    let finite = |v: &ArrayView1<f64>| v.iter().all(|x| x.is_finite());
    if !finite(&user) || !finite(&positive) || !negatives.iter().all(finite) {
        return Err(Error::NonFinite("contrastive loss input"));
    }
    let mut scores = vec![score(user, positive)?];
    for neg in negatives {
        scores.push(score(user, *neg)?);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let (loss, score_grads) = match form {
        LossForm::InfoNce => {
            let loss = total.ln() - (scores[0] - max);
            let mut g = probs.clone();
            g[0] -= 1.0;
            (loss, g)
        }
        LossForm::ProbabilityOnly => {
            let p = probs[0];
            let g = probs
                .iter()
                .enumerate()
                .map(|(j, &pj)| if j == 0 { -p * (1.0 - p) } else { p * pj })
                .collect();
            (-p, g)
        }
    };

    let mut grad_user = positive.to_owned() * score_grads[0];
    for (neg, g) in negatives.iter().zip(&score_grads[1..]) {
        grad_user.scaled_add(*g, neg);
    }
    Ok(ContrastiveGrads {
        loss,
        positive: user.to_owned() * score_grads[0],
        negatives: score_grads[1..].iter().map(|g| user.to_owned() * *g).collect(),
        user: grad_user,
        score_grads,
    })
}

/// One example: user vector, positive item vector, negative item vectors.
pub type Example<'a> = (ArrayView1<'a, f64>, ArrayView1<'a, f64>, Vec<ArrayView1<'a, f64>>);

/// Mean per-example loss over a batch.
pub fn mean_contrastive_loss(
    batch: &[Example<'_>],
    form: LossForm,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (u, p, n) in batch {
        total += contrastive_loss(*u, *p, n, form)?.loss;
    }
    Ok(total / batch.len() as f64)
}

/// Per-domain loss sums and counts for the current window, plus the last
/// resolved per-domain means from earlier windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossLedger {
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
    pub last_means: Vec<Option<f64>>,
}

impl LossLedger {
    pub fn new(n_domains: usize) -> Self {
        LossLedger {
            sums: vec![0.0; n_domains],
            counts: vec![0; n_domains],
            last_means: vec![None; n_domains],
        }
    }

    pub fn n_domains(&self) -> usize {
        self.sums.len()
    }

    pub fn record(&mut self, domain: DomainId, loss: f64) -> Result<()> {
        let i = domain.index();
        if i >= self.sums.len() {
            return Err(Error::UnknownDomain(domain));
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("sample loss"));
        }
        self.sums[i] += loss;
        self.counts[i] += 1;
        Ok(())
    }

    pub fn window_total(&self) -> (f64, u64) {
        (self.sums.iter().sum(), self.counts.iter().sum())
    }

    /// Windowed mean loss per domain. A domain absent from the window keeps
    /// its last known mean; one never observed takes the window's global
    /// mean (or the mean of the known domains when the window is empty).
    pub fn resolved_means(&self) -> Result<Vec<f64>> {
        let (sum, count) = self.window_total();
        let known: Vec<f64> = self.last_means.iter().flatten().copied().collect();
        let fallback = if count > 0 {
            sum / count as f64
        } else if !known.is_empty() {
            known.iter().sum::<f64>() / known.len() as f64
        } else {
            return Err(Error::NoLossObserved);
        };
        Ok((0..self.n_domains())
            .map(|i| {
                if self.counts[i] > 0 {
                    self.sums[i] / self.counts[i] as f64
                } else {
                    self.last_means[i].unwrap_or(fallback)
                }
            })
            .collect())
    }

    /// Closes the window: returns the resolved means, remembers them and
    /// clears the sums and counts.
    pub fn roll_window(&mut self) -> Result<Vec<f64>> {
        let means = self.resolved_means()?;
        for (i, m) in means.iter().enumerate() {
            if self.counts[i] > 0 || self.last_means[i].is_some() {
                self.last_means[i] = Some(*m);
            }
        }
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.counts.iter_mut().for_each(|c| *c = 0);
        Ok(means)
    }
}
