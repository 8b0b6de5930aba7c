//! Multi-domain interaction data: catalog, interactions, chronological
//! splits and the per-target training sequences built from them.

mod jsonl;
mod noise;
mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{export_jsonl, ingest_jsonl, parse_jsonl, write_jsonl, IngestOutcome, Record};
pub use noise::{inject_noise, NoiseSpec};
pub use synthetic::{affinity_correlation, generate_latents, generate_synthetic, GenConfig, Latents};

pub type Timestamp = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainId(pub u16);

impl DomainId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub id: DomainId,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    /// External identifier, as found in the source data.
    pub key: String,
    pub domain: DomainId,
    pub title: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: Timestamp,
}

/// Users, items, domains and interactions. Dense ids index directly into
/// `users`, `items` and `domains`; the position of an interaction in
/// `interactions` is its ingestion index and breaks timestamp ties.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub domains: Vec<Domain>,
    pub items: Vec<Item>,
    pub users: Vec<String>,
    pub interactions: Vec<Interaction>,
}

impl Corpus {
    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn item(&self, id: ItemId) -> &Item {
        &self.items[id.index()]
    }

    pub fn domain_of(&self, id: ItemId) -> DomainId {
        self.items[id.index()].domain
    }

    /// Catalog items of `domain`, in id order.
    pub fn domain_items(&self, domain: DomainId) -> Vec<ItemId> {
        self.items
            .iter()
            .filter(|it| it.domain == domain)
            .map(|it| it.id)
            .collect()
    }

    pub fn domain_by_name(&self, name: &str) -> Option<DomainId> {
        self.domains.iter().find(|d| d.name == name).map(|d| d.id)
    }

    /// Interaction indices of every user, ordered by (timestamp, ingestion index).
    pub fn timelines(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.users.len()];
        for (idx, it) in self.interactions.iter().enumerate() {
            out[it.user.index()].push(idx);
        }
        for line in &mut out {
            // stable: equal timestamps keep ingestion order
            line.sort_by_key(|&i| self.interactions[i].timestamp);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.domains.iter().enumerate() {
            if d.id.index() != i {
                return Err(Error::InvalidConfig(format!("domain {} out of order", d.name)));
            }
        }
        let mut names: Vec<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.domains.len() {
            return Err(Error::InvalidConfig("duplicate domain names".into()));
        }
        for (i, it) in self.items.iter().enumerate() {
            if it.id.index() != i || it.domain.index() >= self.domains.len() {
                return Err(Error::InvalidConfig(format!("item {} inconsistent", it.key)));
            }
            if it.title.split_whitespace().next().is_none() {
                return Err(Error::InvalidConfig(format!("item {} has an empty title", it.key)));
            }
        }
        for it in &self.interactions {
            if it.user.index() >= self.users.len() || it.item.index() >= self.items.len() {
                return Err(Error::InvalidConfig("interaction references unknown id".into()));
            }
        }
        Ok(())
    }

    /// Drops users and items with fewer than `k` interactions until every
    /// survivor has at least `k`. Ids are re-densified; domains are kept.
    pub fn k_core(&self, k: usize) -> Corpus {
        let mut keep: Vec<bool> = vec![true; self.interactions.len()];
        loop {
            let mut user_deg = vec![0usize; self.users.len()];
            let mut item_deg = vec![0usize; self.items.len()];
            for (it, _) in self.interactions.iter().zip(&keep).filter(|(_, &k)| k) {
                user_deg[it.user.index()] += 1;
                item_deg[it.item.index()] += 1;
            }
            let mut changed = false;
            for (it, kept) in self.interactions.iter().zip(keep.iter_mut()) {
                if *kept && (user_deg[it.user.index()] < k || item_deg[it.item.index()] < k) {
                    *kept = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut user_map: HashMap<UserId, UserId> = HashMap::new();
        let mut item_map: HashMap<ItemId, ItemId> = HashMap::new();
        let mut out = Corpus {
            domains: self.domains.clone(),
            ..Default::default()
        };
        for (it, _) in self.interactions.iter().zip(&keep).filter(|(_, &k)| k) {
            let user = *user_map.entry(it.user).or_insert_with(|| {
                out.users.push(self.users[it.user.index()].clone());
                UserId(out.users.len() as u32 - 1)
            });
            let item = *item_map.entry(it.item).or_insert_with(|| {
                let src = &self.items[it.item.index()];
                let id = ItemId(out.items.len() as u32);
                out.items.push(Item { id, ..src.clone() });
                id
            });
            out.interactions.push(Interaction {
                user,
                item,
                timestamp: it.timestamp,
            });
        }
        out
    }

    /// Timestamp at quantile `q` of all interactions (nearest rank).
    pub fn timestamp_quantile(&self, q: f64) -> Option<Timestamp> {
        let mut ts: Vec<Timestamp> = self.interactions.iter().map(|i| i.timestamp).collect();
        if ts.is_empty() {
            return None;
        }
        ts.sort_unstable();
        let pos = ((ts.len() as f64) * q.clamp(0.0, 1.0)).floor() as usize;
        Some(ts[pos.min(ts.len() - 1)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Valid,
    Test,
}

/// Interactions partitioned by two absolute timestamps. The three lists hold
/// indices into `corpus.interactions`, in ingestion order.
#[derive(Clone, Debug)]
pub struct SplitCorpus {
    pub corpus: Corpus,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub boundary_valid: Timestamp,
    pub boundary_test: Timestamp,
}

impl SplitCorpus {
    pub fn phase(&self, phase: Phase) -> &[usize] {
        match phase {
            Phase::Train => &self.train,
            Phase::Valid => &self.valid,
            Phase::Test => &self.test,
        }
    }

    pub fn phase_of(&self, ts: Timestamp) -> Phase {
        if ts < self.boundary_valid {
            Phase::Train
        } else if ts < self.boundary_test {
            Phase::Valid
        } else {
            Phase::Test
        }
    }

    /// Items that appear in training interactions of `domain`, in id order.
    pub fn train_domain_items(&self, domain: DomainId) -> Vec<ItemId> {
        let mut seen = vec![false; self.corpus.items.len()];
        for &i in &self.train {
            let item = self.corpus.interactions[i].item;
            if self.corpus.domain_of(item) == domain {
                seen[item.index()] = true;
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| ItemId(i as u32))
            .collect()
    }
}

pub fn chronological_split(
    corpus: &Corpus,
    boundary_valid: Timestamp,
    boundary_test: Timestamp,
) -> Result<SplitCorpus> {
    if boundary_valid >= boundary_test {
        return Err(Error::InvalidConfig(format!(
            "split boundaries out of order: {boundary_valid} >= {boundary_test}"
        )));
    }
    let mut split = SplitCorpus {
        corpus: corpus.clone(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        boundary_valid,
        boundary_test,
    };
    for (idx, it) in corpus.interactions.iter().enumerate() {
        match split.phase_of(it.timestamp) {
            Phase::Train => split.train.push(idx),
            Phase::Valid => split.valid.push(idx),
            Phase::Test => split.test.push(idx),
        }
    }
    if split.valid.is_empty() && split.test.is_empty() {
        log::warn!("all interactions fall before boundary {boundary_valid}; valid and test are empty");
    }
    Ok(split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub item: ItemId,
    pub timestamp: Timestamp,
}

/// A prediction target together with the user's most recent prior items.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: UserId,
    /// Oldest first.
    pub history: Vec<HistoryEntry>,
    pub target: ItemId,
    pub target_domain: DomainId,
    pub target_timestamp: Timestamp,
}

impl UserSequence {
    pub fn history_items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.history.iter().map(|h| h.item)
    }

    /// True when the history contains an item outside the target domain.
    pub fn is_heterogeneous(&self, corpus: &Corpus) -> bool {
        self.history_items()
            .any(|it| corpus.domain_of(it) != self.target_domain)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SequenceSet {
    pub sequences: Vec<UserSequence>,
    /// Targets dropped because no earlier interaction was available.
    pub skipped: usize,
}

pub const DEFAULT_MAX_HISTORY: usize = 10;

/// One sequence per interaction of `phase`, ordered by user and then time.
/// Training histories draw from training interactions only; validation and
/// test histories may use every strictly earlier interaction.
pub fn build_sequences(split: &SplitCorpus, phase: Phase, max_history: usize) -> Result<SequenceSet> {
    if max_history == 0 {
        return Err(Error::InvalidConfig("max history length must be at least 1".into()));
    }
    let corpus = &split.corpus;
    let mut out = SequenceSet::default();
    for line in corpus.timelines() {
        for (pos, &idx) in line.iter().enumerate() {
            let target = corpus.interactions[idx];
            if split.phase_of(target.timestamp) != phase {
                continue;
            }
            let mut history: Vec<HistoryEntry> = line[..pos]
                .iter()
                .map(|&j| corpus.interactions[j])
                .filter(|p| p.timestamp < target.timestamp)
                .filter(|p| phase != Phase::Train || split.phase_of(p.timestamp) == Phase::Train)
                .map(|p| HistoryEntry {
                    item: p.item,
                    timestamp: p.timestamp,
                })
                .collect();
            if history.is_empty() {
                out.skipped += 1;
                continue;
            }
            if history.len() > max_history {
                history.drain(..history.len() - max_history);
            }
            out.sequences.push(UserSequence {
                user: target.user,
                history,
                target: target.item,
                target_domain: corpus.domain_of(target.item),
                target_timestamp: target.timestamp,
            });
        }
    }
    Ok(out)
}
