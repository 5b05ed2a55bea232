//! Construction and budgeted sampling of cross-domain sample pairs.
//!
//! Positive pairs share a class label across domains, negative pairs do
//! not. Adaptation pairs every target sample against source samples;
//! generalization draws a fixed partner budget per sample for every
//! unordered pair of source domains. All sampling is without replacement
//! and deterministic in the seed.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A cross-domain index pair, flagged positive when the endpoint labels
/// match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub index_a: usize,
    pub index_b: usize,
    pub positive: bool,
}

/// Pairs between two domains. `index_a` points into domain `domain_a`,
/// `index_b` into `domain_b`. Entries are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub domain_a: String,
    pub domain_b: String,
}

impl PairSet {
    pub fn positives(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(|p| p.positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(|p| !p.positive)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn seeded_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&salt.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Picks `count` entries from `pool` uniformly without replacement,
/// keeping the pool's order stable between calls.
fn sample_without_replacement(
    pool: &[usize],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if count >= pool.len() {
        return pool.to_vec();
    }
    let mut scratch = pool.to_vec();
    scratch.partial_shuffle(rng, count);
    scratch.truncate(count);
    scratch
}

/// Pairs every target sample with source samples: all of them when
/// `budget_per_target` is `None`, otherwise up to that many positives and
/// that many negatives per target sample, sampled without replacement.
pub fn build_sda_pairs(
    source: &Dataset,
    target: &Dataset,
    seed: u64,
    budget_per_target: Option<usize>,
) -> Result<PairSet> {
    if source.is_empty() {
        return Err(Error::EmptyDataset(source.domain.clone()));
    }
    if target.is_empty() {
        return Err(Error::EmptyDataset(target.domain.clone()));
    }
    if let Some(0) = budget_per_target {
        return Err(Error::InvalidArgument(
            "pair budget must be positive".into(),
        ));
    }
    let mut rng = seeded_rng(seed, 0x5da0);
    let classes = source.class_count.max(target.class_count);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in source.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut pairs = Vec::new();
    for (j, t) in target.samples.iter().enumerate() {
        let same: &[usize] = &by_class[t.label];
        let diff: Vec<usize> = (0..source.len())
            .filter(|&i| source.samples[i].label != t.label)
            .collect();
        match budget_per_target {
            None => {
                pairs.extend(same.iter().map(|&i| Pair {
                    index_a: i,
                    index_b: j,
                    positive: true,
                }));
                pairs.extend(diff.iter().map(|&i| Pair {
                    index_a: i,
                    index_b: j,
                    positive: false,
                }));
            }
            Some(k) => {
                for &i in &sample_without_replacement(same, k, &mut rng) {
                    pairs.push(Pair {
                        index_a: i,
                        index_b: j,
                        positive: true,
                    });
                }
                for &i in &sample_without_replacement(&diff, k, &mut rng) {
                    pairs.push(Pair {
                        index_a: i,
                        index_b: j,
                        positive: false,
                    });
                }
            }
        }
    }
    Ok(PairSet {
        pairs,
        domain_a: source.domain.clone(),
        domain_b: target.domain.clone(),
    })
}

/// For every unordered pair of domains, every sample of each side draws
/// `per_domain_budget` partners from the other side, uniformly at random
/// without repeating a pair already emitted from the opposite direction.
/// Polarity is flagged by label equality. Keys are `(u, v)` with `u < v`.
pub fn build_dg_pairs(
    domains: &[Dataset],
    per_domain_budget: usize,
    seed: u64,
) -> Result<BTreeMap<(usize, usize), PairSet>> {
    if domains.len() < 2 {
        return Err(Error::TooFewDomains(domains.len()));
    }
    if per_domain_budget == 0 {
        return Err(Error::InvalidArgument(
            "per-domain budget must be at least 1".into(),
        ));
    }
    for d in domains {
        if d.is_empty() {
            return Err(Error::EmptyDataset(d.domain.clone()));
        }
    }
    let mut result = BTreeMap::new();
    for u in 0..domains.len() {
        for v in u + 1..domains.len() {
            let mut rng = seeded_rng(seed, 0x00d6_0000 ^ ((u as u64) << 16) ^ v as u64);
            let (du, dv) = (&domains[u], &domains[v]);
            let mut emitted: HashSet<(usize, usize)> = HashSet::new();
            let mut pairs = Vec::new();
            let mut push = |i: usize, j: usize, emitted: &mut HashSet<(usize, usize)>| {
                if emitted.insert((i, j)) {
                    pairs.push(Pair {
                        index_a: i,
                        index_b: j,
                        positive: du.samples[i].label == dv.samples[j].label,
                    });
                }
            };
            // Each u-sample draws partners from v.
            let all_v: Vec<usize> = (0..dv.len()).collect();
            for i in 0..du.len() {
                for &j in &sample_without_replacement(&all_v, per_domain_budget, &mut rng) {
                    push(i, j, &mut emitted);
                }
            }
            // Each v-sample draws partners from u, skipping pairs the first
            // direction already produced.
            for j in 0..dv.len() {
                let available: Vec<usize> = (0..du.len())
                    .filter(|&i| !emitted.contains(&(i, j)))
                    .collect();
                for &i in &sample_without_replacement(&available, per_domain_budget, &mut rng) {
                    push(i, j, &mut emitted);
                }
            }
            result.insert(
                (u, v),
                PairSet {
                    pairs,
                    domain_a: du.domain.clone(),
                    domain_b: dv.domain.clone(),
                },
            );
        }
    }
    Ok(result)
}

/// Deterministic permutation of the pairs keyed by `(seed, epoch)`; the
/// multiset of pairs is unchanged.
pub fn reshuffle_epoch(pair_set: &PairSet, seed: u64, epoch: u64) -> Vec<Pair> {
    let mut rng = seeded_rng(seed, 0xe90c_0000 ^ epoch);
    let mut pairs = pair_set.pairs.clone();
    pairs.shuffle(&mut rng);
    pairs
}
