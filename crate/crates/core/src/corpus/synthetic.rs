//! Synthetic multi-domain corpora with planted cross-domain preferences.
//!
//! Each user carries a shared latent `z` and one offset per domain; the
//! preference vector used in domain `d` is
//! `sqrt(s) * z + sqrt(1 - s) * offset_d` with `s = cross_domain_strength`,
//! so `s` is the correlation between a user's preferences in two domains.
//! Topic prototypes are shared across domains and item `j` of every domain
//! belongs to topic `j % topics`, which makes topic tokens in titles carry
//! the same meaning everywhere.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, Domain, DomainId, Interaction, Item, ItemId, UserId};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_domains: usize,
    pub users_per_domain: usize,
    pub items_per_domain: usize,
    pub interactions_per_user: usize,
    pub latent_dim: usize,
    pub cross_domain_strength: f64,
    pub topic_count_per_domain: usize,
    pub vocab_words_per_topic: usize,
    pub seed: u64,
    /// Relative share of interactions per domain; uniform when absent.
    pub domain_weights: Option<Vec<f64>>,
    pub words_per_title: usize,
    /// Inverse temperature of the item-choice softmax.
    pub affinity_scale: f64,
    pub item_noise: f64,
    pub time_horizon: i64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_domains: 3,
            users_per_domain: 100,
            items_per_domain: 200,
            interactions_per_user: 20,
            latent_dim: 8,
            cross_domain_strength: 0.8,
            topic_count_per_domain: 10,
            vocab_words_per_topic: 6,
            seed: 7,
            domain_weights: None,
            words_per_title: 2,
            affinity_scale: 4.0,
            item_noise: 0.3,
            time_horizon: 1_000_000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_domains", self.n_domains),
            ("users_per_domain", self.users_per_domain),
            ("items_per_domain", self.items_per_domain),
            ("interactions_per_user", self.interactions_per_user),
            ("topic_count_per_domain", self.topic_count_per_domain),
            ("vocab_words_per_topic", self.vocab_words_per_topic),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.latent_dim < 2 {
            return Err(Error::InvalidConfig("latent_dim must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.cross_domain_strength) {
            return Err(Error::InvalidConfig("cross_domain_strength must lie in [0, 1]".into()));
        }
        if self.words_per_title > self.vocab_words_per_topic {
            return Err(Error::InvalidConfig("words_per_title exceeds vocab_words_per_topic".into()));
        }
        if self.n_domains > u16::MAX as usize {
            return Err(Error::InvalidConfig("too many domains".into()));
        }
        let total_items = self.n_domains * self.items_per_domain;
        if self.interactions_per_user > total_items {
            return Err(Error::InvalidConfig(
                "interactions_per_user exceeds the number of items".into(),
            ));
        }
        if (self.time_horizon as u64) < self.interactions_per_user as u64 || self.time_horizon <= 0 {
            return Err(Error::InvalidConfig("time_horizon too small".into()));
        }
        if let Some(w) = &self.domain_weights {
            if w.len() != self.n_domains || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidConfig("domain_weights must be n_domains non-negative values".into()));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidConfig("domain_weights sum to zero".into()));
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.n_domains * self.users_per_domain
    }

    fn domain_shares(&self) -> Vec<f64> {
        let raw = self
            .domain_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.n_domains]);
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }
}

/// Generator state before any interaction is sampled.
#[derive(Clone, Debug)]
pub struct Latents {
    /// `[item]` latent vectors, items ordered domain-major.
    pub items: Vec<Vec<f64>>,
    pub item_topics: Vec<usize>,
    /// `[user][domain]` preference vectors.
    pub users: Vec<Vec<Vec<f64>>>,
}

fn normal_vec(rng: &mut rng::Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x * scale
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate_latents(config: &GenConfig) -> Result<Latents> {
    config.validate()?;
    let k = config.latent_dim;
    let unit = 1.0 / (k as f64).sqrt();
    let mut rng = rng::stream(config.seed, "latents", &[]);

    let protos: Vec<Vec<f64>> = (0..config.topic_count_per_domain)
        .map(|_| normal_vec(&mut rng, k, unit))
        .collect();
    let mut items = Vec::with_capacity(config.n_domains * config.items_per_domain);
    let mut item_topics = Vec::with_capacity(items.capacity());
    for _d in 0..config.n_domains {
        for j in 0..config.items_per_domain {
            let topic = j % config.topic_count_per_domain;
            let noise = normal_vec(&mut rng, k, unit * config.item_noise);
            items.push(protos[topic].iter().zip(&noise).map(|(p, n)| p + n).collect());
            item_topics.push(topic);
        }
    }

    let s = config.cross_domain_strength;
    let (shared_w, own_w) = (s.sqrt(), (1.0 - s).sqrt());
    let users = (0..config.n_users())
        .map(|_| {
            let shared = normal_vec(&mut rng, k, unit);
            (0..config.n_domains)
                .map(|_| {
                    let own = normal_vec(&mut rng, k, unit);
                    shared
                        .iter()
                        .zip(&own)
                        .map(|(a, b)| shared_w * a + own_w * b)
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(Latents {
        items,
        item_topics,
        users,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Mean over users of the Pearson correlation between the user's affinities
/// to the items of domain `a` and to the index-aligned items of domain `b`.
pub fn affinity_correlation(config: &GenConfig, latents: &Latents, a: DomainId, b: DomainId) -> f64 {
    let per = config.items_per_domain;
    let items_a = &latents.items[a.index() * per..(a.index() + 1) * per];
    let items_b = &latents.items[b.index() * per..(b.index() + 1) * per];
    let total: f64 = latents
        .users
        .iter()
        .map(|prefs| {
            let va: Vec<f64> = items_a.iter().map(|x| dot(&prefs[a.index()], x)).collect();
            let vb: Vec<f64> = items_b.iter().map(|x| dot(&prefs[b.index()], x)).collect();
            pearson(&va, &vb)
        })
        .sum();
    total / latents.users.len() as f64
}

fn sample_categorical(rng: &mut rng::Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

pub fn generate_synthetic(config: &GenConfig) -> Result<Corpus> {
    let latents = generate_latents(config)?;
    let per = config.items_per_domain;
    let mut corpus = Corpus::default();

    let mut title_rng = rng::stream(config.seed, "titles", &[]);
    for d in 0..config.n_domains {
        corpus.domains.push(Domain {
            id: DomainId(d as u16),
            name: format!("domain{d}"),
        });
        for j in 0..per {
            let idx = d * per + j;
            let topic = latents.item_topics[idx];
            let mut title = format!("d{d} t{topic} i{idx}");
            let words = index::sample(&mut title_rng, config.vocab_words_per_topic, config.words_per_title);
            for w in words.iter() {
                title.push_str(&format!(" w{topic}_{w}"));
            }
            corpus.items.push(Item {
                id: ItemId(idx as u32),
                key: format!("d{d}_i{j}"),
                domain: DomainId(d as u16),
                title,
            });
        }
    }

    let shares = config.domain_shares();
    let mut rng = rng::stream(config.seed, "interactions", &[]);
    for (u, prefs) in latents.users.iter().enumerate() {
        corpus.users.push(format!("u{u}"));
        let n = config.interactions_per_user;
        let mut times: Vec<i64> = index::sample(&mut rng, config.time_horizon as usize, n)
            .into_iter()
            .map(|t| t as i64)
            .collect();
        times.sort_unstable();

        let mut taken = vec![false; latents.items.len()];
        let mut remaining = vec![per; config.n_domains];
        for ts in times {
            let avail: Vec<f64> = shares
                .iter()
                .zip(&remaining)
                .map(|(s, r)| if *r > 0 { *s } else { 0.0 })
                .collect();
            let d = if avail.iter().sum::<f64>() > 0.0 {
                sample_categorical(&mut rng, &avail)
            } else {
                // only zero-share domains have items left
                remaining.iter().position(|r| *r > 0).unwrap()
            };
            let range = d * per..(d + 1) * per;
            let logits: Vec<f64> = range
                .clone()
                .map(|i| config.affinity_scale * dot(&prefs[d], &latents.items[i]))
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits
                .iter()
                .zip(range.clone())
                .map(|(l, i)| if taken[i] { 0.0 } else { (l - max).exp() })
                .collect();
            let pick = range.start + sample_categorical(&mut rng, &weights);
            taken[pick] = true;
            remaining[d] -= 1;
            corpus.interactions.push(Interaction {
                user: UserId(u as u32),
                item: ItemId(pick as u32),
                timestamp: ts,
            });
        }
    }
    Ok(corpus)
}
