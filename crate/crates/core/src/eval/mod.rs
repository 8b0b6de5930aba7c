//! Full-ranking retrieval, Recall/NDCG, per-domain reports and the
//! experiment harnesses built on them.

mod experiments;
mod report;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DomainId, ItemId, UserSequence};
use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::textio::{build_item_input, build_user_input, InputOptions, Vocabulary};

pub use experiments::{holdout_domain_eval, mask_ratio_sweep, noise_experiment, NoisePoint, SweepPoint};
pub use report::{
    heterogeneity_report, report_from_outcomes, seesaw_diagnostic, BucketReport, DomainDelta, DomainReport,
    EvalReport, GroupReport, Metrics, SeesawReport,
};

pub const KS: [usize; 2] = [5, 10];

/// How domain results are folded into one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean of the per-domain means.
    #[default]
    Macro,
    /// Mean over all sequences.
    Micro,
}

/// Everything besides the parameters that scoring needs.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub corpus: &'a Corpus,
    pub vocab: &'a Vocabulary,
    pub inputs: InputOptions,
}

pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1, "ranks start at 1");
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1, "ranks start at 1");
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Descending score, ties by ascending item id.
fn ranking_order(a: &(ItemId, f64), b: &(ItemId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// 1-based position of `ids[target]` in the ranking induced by `scores`.
pub fn rank_of(target: usize, ids: &[ItemId], scores: &[f64]) -> usize {
    let t = (ids[target], scores[target]);
    1 + ids
        .iter()
        .zip(scores)
        .filter(|&(&id, &s)| ranking_order(&(id, s), &t) == Ordering::Less)
        .count()
}

/// Candidate embeddings for one domain, one row per item.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub ids: Vec<ItemId>,
    pub embeddings: Array2<f64>,
}

impl CandidateSet {
    pub fn build(params: &EncoderParams, ctx: &EvalContext, ids: Vec<ItemId>) -> Result<Self> {
        let rows = ids
            .par_iter()
            .map(|&id| encode(params, &build_item_input(ctx.corpus.item(id), ctx.vocab, &ctx.inputs)?))
            .collect::<Result<Vec<Array1<f64>>>>()?;
        let mut embeddings = Array2::zeros((ids.len(), params.config.d_model));
        for (mut row, r) in embeddings.rows_mut().into_iter().zip(&rows) {
            row.assign(r);
        }
        Ok(CandidateSet { ids, embeddings })
    }

    pub fn scores(&self, user: &Array1<f64>) -> Vec<f64> {
        self.embeddings.dot(user).to_vec()
    }

    fn position(&self, item: ItemId) -> Result<usize> {
        self.ids
            .iter()
            .position(|&c| c == item)
            .ok_or(Error::TargetNotCandidate(item))
    }
}

/// Ranks `candidates` for the sequence's user, best first. The target item
/// must be among the candidates.
pub fn full_rank(
    params: &EncoderParams,
    ctx: &EvalContext,
    seq: &UserSequence,
    candidates: &[ItemId],
) -> Result<Vec<(ItemId, f64)>> {
    if !candidates.contains(&seq.target) {
        return Err(Error::TargetNotCandidate(seq.target));
    }
    let set = CandidateSet::build(params, ctx, candidates.to_vec())?;
    let user = encode(params, &build_user_input(seq, ctx.corpus, ctx.vocab, &ctx.inputs)?)?;
    let mut ranked: Vec<(ItemId, f64)> = set.ids.iter().copied().zip(set.scores(&user)).collect();
    ranked.sort_by(ranking_order);
    Ok(ranked)
}

/// Where one sequence's target landed, with the attributes reports group by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    pub domain: DomainId,
    pub rank: usize,
    pub history_len: usize,
    pub heterogeneous: bool,
}

/// Ranks every sequence's target among all items of its target domain.
/// Candidate embeddings are computed once per domain within the call.
pub fn rank_sequences(params: &EncoderParams, ctx: &EvalContext, sequences: &[UserSequence]) -> Result<Vec<SequenceOutcome>> {
    let mut cache: BTreeMap<DomainId, CandidateSet> = BTreeMap::new();
    for seq in sequences {
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(seq.target_domain) {
            slot.insert(CandidateSet::build(params, ctx, ctx.corpus.domain_items(seq.target_domain))?);
        }
    }
    sequences
        .par_iter()
        .map(|seq| {
            let set = &cache[&seq.target_domain];
            let target = set.position(seq.target)?;
            let user = encode(params, &build_user_input(seq, ctx.corpus, ctx.vocab, &ctx.inputs)?)?;
            Ok(SequenceOutcome {
                domain: seq.target_domain,
                rank: rank_of(target, &set.ids, &set.scores(&user)),
                history_len: seq.history.len(),
                heterogeneous: seq.is_heterogeneous(ctx.corpus),
            })
        })
        .collect()
}

pub fn evaluate_split(params: &EncoderParams, ctx: &EvalContext, sequences: &[UserSequence]) -> Result<EvalReport> {
    let outcomes = rank_sequences(params, ctx, sequences)?;
    Ok(report_from_outcomes(ctx.corpus, &outcomes))
}
