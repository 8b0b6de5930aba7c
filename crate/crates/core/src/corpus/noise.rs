use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{Corpus, ItemId, Timestamp};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub user_fraction: f64,
    pub items_per_user: usize,
    pub seed: u64,
    /// Interactions at or after this timestamp are never replaced, which
    /// keeps evaluation targets intact while their histories get noisy.
    pub protect_from: Option<Timestamp>,
}

/// Replaces interactions of a random subset of users with items those users
/// never interacted with. Timestamps, users and the interaction count are
/// left as they were.
pub fn inject_noise(corpus: &Corpus, spec: &NoiseSpec) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&spec.user_fraction) {
        return Err(Error::InvalidConfig("user_fraction must lie in [0, 1]".into()));
    }
    let mut out = corpus.clone();
    let n_users = corpus.users.len();
    let chosen = (spec.user_fraction * n_users as f64).floor() as usize;
    if chosen == 0 || spec.items_per_user == 0 {
        return Ok(out);
    }
    let mut rng = rng::stream(spec.seed, "noise", &[]);
    let mut users = index::sample(&mut rng, n_users, chosen).into_vec();
    users.sort_unstable();

    let timelines = corpus.timelines();
    for u in users {
        let eligible: Vec<usize> = timelines[u]
            .iter()
            .copied()
            .filter(|&i| spec.protect_from.is_none_or(|b| corpus.interactions[i].timestamp < b))
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let mut interacted = vec![false; corpus.items.len()];
        for &i in &timelines[u] {
            interacted[corpus.interactions[i].item.index()] = true;
        }
        let pool: Vec<ItemId> = corpus
            .items
            .iter()
            .filter(|it| !interacted[it.id.index()])
            .map(|it| it.id)
            .collect();
        let k = spec.items_per_user.min(eligible.len()).min(pool.len());
        let slots = index::sample(&mut rng, eligible.len(), k);
        let picks = index::sample(&mut rng, pool.len(), k);
        for (slot, pick) in slots.iter().zip(picks.iter()) {
            out.interactions[eligible[slot]].item = pool[pick];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GenConfig};

    fn corpus() -> Corpus {
        generate_synthetic(&GenConfig {
            users_per_domain: 10,
            items_per_domain: 20,
            interactions_per_user: 6,
            ..Default::default()
        })
        .unwrap()
    }

    fn spec(frac: f64, k: usize) -> NoiseSpec {
        NoiseSpec {
            user_fraction: frac,
            items_per_user: k,
            seed: 3,
            protect_from: None,
        }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let c = corpus();
        assert_eq!(inject_noise(&c, &spec(0.0, 3)).unwrap(), c);
    }

    #[test]
    fn full_fraction_replaces_one_per_user() {
        let c = corpus();
        let n = inject_noise(&c, &spec(1.0, 1)).unwrap();
        let mut changed = vec![0usize; c.users.len()];
        for (a, b) in c.interactions.iter().zip(&n.interactions) {
            assert_eq!(a.user, b.user);
            assert_eq!(a.timestamp, b.timestamp);
            if a.item != b.item {
                changed[a.user.index()] += 1;
            }
        }
        assert!(changed.iter().all(|&c| c == 1));
    }

    #[test]
    fn oversized_request_replaces_whole_history() {
        let c = corpus();
        let n = inject_noise(&c, &spec(1.0, 100)).unwrap();
        assert!(c.interactions.iter().zip(&n.interactions).all(|(a, b)| a.item != b.item));
    }

    /// Exhaustive scan: no replacement is an item its user already had.
    #[test]
    fn replacements_are_new_to_the_user() {
        let c = corpus();
        let n = inject_noise(&c, &spec(0.6, 3)).unwrap();
        for (idx, (a, b)) in c.interactions.iter().zip(&n.interactions).enumerate() {
            if a.item == b.item {
                continue;
            }
            for (j, orig) in c.interactions.iter().enumerate() {
                if orig.user == a.user {
                    assert_ne!(orig.item, b.item, "interaction {idx} reuses item of {j}");
                }
            }
        }
        assert_eq!(n, inject_noise(&c, &spec(0.6, 3)).unwrap());
    }

    #[test]
    fn protected_interactions_stay() {
        let c = corpus();
        let cut = c.timestamp_quantile(0.5).unwrap();
        let n = inject_noise(
            &c,
            &NoiseSpec {
                protect_from: Some(cut),
                ..spec(1.0, 100)
            },
        )
        .unwrap();
        for (a, b) in c.interactions.iter().zip(&n.interactions) {
            if a.timestamp >= cut {
                assert_eq!(a, b);
            }
        }
    }
}
