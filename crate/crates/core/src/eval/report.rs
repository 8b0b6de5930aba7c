use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ndcg_at_k, recall_at_k, Averaging, EvalContext, SequenceOutcome};
use crate::corpus::{Corpus, DomainId, UserSequence};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
}

impl Metrics {
    pub fn from_rank(rank: usize) -> Self {
        Metrics {
            recall_at_5: recall_at_k(rank, 5),
            recall_at_10: recall_at_k(rank, 10),
            ndcg_at_5: ndcg_at_k(rank, 5),
            ndcg_at_10: ndcg_at_k(rank, 10),
        }
    }

    fn sum(&self, other: &Metrics) -> Metrics {
        Metrics {
            recall_at_5: self.recall_at_5 + other.recall_at_5,
            recall_at_10: self.recall_at_10 + other.recall_at_10,
            ndcg_at_5: self.ndcg_at_5 + other.ndcg_at_5,
            ndcg_at_10: self.ndcg_at_10 + other.ndcg_at_10,
        }
    }

    fn scale(&self, s: f64) -> Metrics {
        Metrics {
            recall_at_5: self.recall_at_5 * s,
            recall_at_10: self.recall_at_10 * s,
            ndcg_at_5: self.ndcg_at_5 * s,
            ndcg_at_10: self.ndcg_at_10 * s,
        }
    }

    /// Arithmetic mean; zero for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let (total, n) = items
            .into_iter()
            .fold((Metrics::default(), 0usize), |(t, n), m| (t.sum(m), n + 1));
        if n == 0 {
            total
        } else {
            total.scale(1.0 / n as f64)
        }
    }

    pub fn difference(&self, base: &Metrics) -> Metrics {
        self.sum(&base.scale(-1.0))
    }

    pub fn values(&self) -> [f64; 4] {
        [self.recall_at_5, self.recall_at_10, self.ndcg_at_5, self.ndcg_at_10]
    }
}

const METRIC_HEADER: &str = "recall@5,recall@10,ndcg@5,ndcg@10";

fn metric_cells(m: &Metrics) -> String {
    m.values().map(|v| v.to_string()).join(",")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: DomainId,
    pub name: String,
    pub n_sequences: usize,
    pub metrics: Metrics,
}

/// Per-domain metrics over the evaluated sequences, in domain id order.
/// Domains without sequences are left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domains: Vec<DomainReport>,
    pub macro_avg: Metrics,
    pub micro_avg: Metrics,
    pub n_sequences: usize,
}

impl EvalReport {
    pub fn average(&self, averaging: Averaging) -> &Metrics {
        match averaging {
            Averaging::Macro => &self.macro_avg,
            Averaging::Micro => &self.micro_avg,
        }
    }

    pub fn domain(&self, id: DomainId) -> Option<&DomainReport> {
        self.domains.iter().find(|d| d.domain == id)
    }

    /// Lowest per-domain NDCG@10.
    pub fn worst_ndcg_at_10(&self) -> f64 {
        self.domains
            .iter()
            .map(|d| d.metrics.ndcg_at_10)
            .fold(f64::INFINITY, f64::min)
    }

    /// One row per domain followed by the macro and micro rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("domain,name,n_sequences,{METRIC_HEADER}\n");
        for d in &self.domains {
            let _ = writeln!(out, "{},{},{},{}", d.domain.0, d.name, d.n_sequences, metric_cells(&d.metrics));
        }
        let _ = writeln!(out, ",macro,{},{}", self.n_sequences, metric_cells(&self.macro_avg));
        let _ = writeln!(out, ",micro,{},{}", self.n_sequences, metric_cells(&self.micro_avg));
        out
    }
}

pub fn report_from_outcomes(corpus: &Corpus, outcomes: &[SequenceOutcome]) -> EvalReport {
    let mut by_domain: BTreeMap<DomainId, Vec<Metrics>> = BTreeMap::new();
    for o in outcomes {
        by_domain.entry(o.domain).or_default().push(Metrics::from_rank(o.rank));
    }
    let domains: Vec<DomainReport> = by_domain
        .iter()
        .map(|(&d, ms)| DomainReport {
            domain: d,
            name: corpus.domains[d.index()].name.clone(),
            n_sequences: ms.len(),
            metrics: Metrics::mean(ms),
        })
        .collect();
    EvalReport {
        macro_avg: Metrics::mean(domains.iter().map(|d| &d.metrics)),
        micro_avg: Metrics::mean(by_domain.values().flatten()),
        n_sequences: outcomes.len(),
        domains,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDelta {
    pub domain: DomainId,
    pub name: String,
    pub before: Metrics,
    pub after: Metrics,
    pub delta: Metrics,
}

/// How a second report moves each domain relative to a first one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeesawReport {
    pub deltas: Vec<DomainDelta>,
    /// Domains whose NDCG@10 went up.
    pub improved: usize,
    /// Domains whose NDCG@10 went down.
    pub regressed: usize,
    pub worst_before: f64,
    pub worst_after: f64,
}

impl SeesawReport {
    pub fn to_csv(&self) -> String {
        let mut out = "domain,name,before_ndcg@10,after_ndcg@10,delta_ndcg@10,delta_recall@10\n".to_string();
        for d in &self.deltas {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                d.domain.0, d.name, d.before.ndcg_at_10, d.after.ndcg_at_10, d.delta.ndcg_at_10, d.delta.recall_at_10
            );
        }
        out
    }
}

pub fn seesaw_diagnostic(a: &EvalReport, b: &EvalReport) -> Result<SeesawReport> {
    let ids = |r: &EvalReport| r.domains.iter().map(|d| d.domain).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::DomainMismatch);
    }
    let deltas: Vec<DomainDelta> = a
        .domains
        .iter()
        .zip(&b.domains)
        .map(|(x, y)| DomainDelta {
            domain: x.domain,
            name: x.name.clone(),
            before: x.metrics,
            after: y.metrics,
            delta: y.metrics.difference(&x.metrics),
        })
        .collect();
    Ok(SeesawReport {
        improved: deltas.iter().filter(|d| d.delta.ndcg_at_10 > 0.0).count(),
        regressed: deltas.iter().filter(|d| d.delta.ndcg_at_10 < 0.0).count(),
        worst_before: a.worst_ndcg_at_10(),
        worst_after: b.worst_ndcg_at_10(),
        deltas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub n_sequences: usize,
    /// Mean over the group's sequences.
    pub metrics: Metrics,
}

/// Metrics by whether the history leaves the target domain, and by
/// history length. Each grouping partitions the evaluated sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub heterogeneity: Vec<GroupReport>,
    pub length: Vec<GroupReport>,
}

impl BucketReport {
    pub fn from_outcomes(outcomes: &[SequenceOutcome]) -> Self {
        let group = |name: String, pick: &dyn Fn(&SequenceOutcome) -> bool| {
            let ms: Vec<Metrics> = outcomes.iter().filter(|o| pick(o)).map(|o| Metrics::from_rank(o.rank)).collect();
            GroupReport {
                group: name,
                n_sequences: ms.len(),
                metrics: Metrics::mean(&ms),
            }
        };
        let longest = outcomes.iter().map(|o| o.history_len).max().unwrap_or(0).max(7);
        BucketReport {
            heterogeneity: vec![
                group("with-h".into(), &|o| o.heterogeneous),
                group("without-h".into(), &|o| !o.heterogeneous),
            ],
            length: [(1, 3), (4, 6), (7, longest)]
                .iter()
                .map(|&(lo, hi)| group(format!("[{lo},{hi}]"), &|o| (lo..=hi).contains(&o.history_len)))
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("grouping,group,n_sequences,{METRIC_HEADER}\n");
        for (kind, groups) in [("heterogeneity", &self.heterogeneity), ("length", &self.length)] {
            for g in groups {
                let _ = writeln!(out, "{kind},{},{},{}", g.group, g.n_sequences, metric_cells(&g.metrics));
            }
        }
        out
    }
}

pub fn heterogeneity_report(params: &EncoderParams, ctx: &EvalContext, sequences: &[UserSequence]) -> Result<BucketReport> {
    Ok(BucketReport::from_outcomes(&super::rank_sequences(params, ctx, sequences)?))
}
