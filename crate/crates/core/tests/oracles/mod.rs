//! Reference implementations the library is checked against. They favour
//! obviousness over speed and share no code with the crate.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use cotloop_core::model::{Origin, QaDataset, Question, QuestionMeta, Subject};
use cotloop_core::partition::{Partition, Strategy, StratumKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::mcq;

/// 10000·c/n rounded half to even, in integers.
pub fn half_even_hundredths(c: u64, n: u64) -> i64 {
    let num = 10_000u128 * u128::from(c);
    let den = u128::from(n);
    let (q, r) = (num / den, num % den);
    let up = match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => q % 2 == 1,
        std::cmp::Ordering::Less => false,
    };
    (q + u128::from(up)) as i64
}

/// Character trigrams of the lowercased alphanumerics, sorted so equal
/// windows sit together.
pub fn trigrams(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
    let mut w: Vec<String> = chars.windows(3).map(|w| w.iter().collect()).collect();
    w.sort();
    w
}

/// Multiset Jaccard of two sorted trigram lists.
pub fn sorted_jaccard(x: &[String], y: &[String]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = x.len() + y.len() - inter;
    inter as f64 / union as f64
}

/// Survivor ids: one per connected component of the "similar" graph,
/// found by depth-first search over all pairs.
pub fn dedup_survivors(items: &[Question], threshold: f64) -> BTreeSet<String> {
    let n = items.len();
    let profiles: Vec<Vec<String>> = items.iter().map(|q| trigrams(&q.stem)).collect();
    let mut component = vec![usize::MAX; n];
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = start;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if component[j] == usize::MAX && sorted_jaccard(&profiles[i], &profiles[j]) >= threshold {
                    component[j] = start;
                    stack.push(j);
                }
            }
        }
    }
    let mut best: HashMap<usize, &Question> = HashMap::new();
    for (i, q) in items.iter().enumerate() {
        let slot = best.entry(component[i]).or_insert(q);
        if (q.origin.dedup_priority(), &q.id) < (slot.origin.dedup_priority(), &slot.id) {
            *slot = q;
        }
    }
    best.values().map(|q| q.id.clone()).collect()
}

fn random_stem(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(30..120);
    (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

fn mutate(rng: &mut ChaCha8Rng, stem: &str, edits: usize) -> String {
    let mut chars: Vec<char> = stem.chars().collect();
    for _ in 0..edits {
        let at = rng.random_range(0..chars.len());
        chars[at] = (b'a' + rng.random_range(0..26u8)) as char;
    }
    chars.into_iter().collect()
}

/// Random stems, some of them planted near-copies (and copies of copies,
/// which make transitive chains), with mixed origins.
pub fn dedup_fixture(seed: u64, n: usize) -> Vec<Question> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origins = [Origin::RealExam, Origin::HandCrafted, Origin::MockExam, Origin::TextbookQa];
    let mut stems: Vec<String> = Vec::new();
    let mut items = Vec::new();
    while items.len() < n {
        let stem = if !stems.is_empty() && rng.random_bool(0.45) {
            let parent = stems[rng.random_range(0..stems.len())].clone();
            let edits = rng.random_range(0..4);
            mutate(&mut rng, &parent, edits)
        } else {
            random_stem(&mut rng)
        };
        let origin = origins[rng.random_range(0..origins.len())];
        let q = mcq(&stem, origin, Subject::Other, QuestionMeta::default());
        if items.iter().any(|o: &Question| o.id == q.id) {
            continue;
        }
        stems.push(stem);
        items.push(q);
    }
    items
}

pub fn stratum_of(q: &Question, strategy: Strategy) -> String {
    match strategy {
        Strategy::RoundRobin => String::new(),
        Strategy::StratifiedBy(StratumKey::Subject) => format!("{:?}", q.subject),
        Strategy::StratifiedBy(StratumKey::Year) => format!("{:?}", q.year),
        Strategy::StratifiedBy(StratumKey::Unit) => format!("{:?}", q.unit),
    }
}

/// The first partition law a result breaks: K subsets, pairwise disjoint,
/// covering the dataset, and within ±1 per stratum.
pub fn partition_violation(dataset: &QaDataset, p: &Partition) -> Option<String> {
    let k = p.plan.k_count;
    if p.subsets.len() != k {
        return Some(format!("{} subsets for K={k}", p.subsets.len()));
    }
    let mut seen = HashSet::new();
    for id in p.subsets.iter().flatten() {
        if !seen.insert(id.clone()) {
            return Some(format!("{id} appears twice"));
        }
    }
    let all: HashSet<String> = dataset.items.iter().map(|q| q.id.clone()).collect();
    if seen != all {
        return Some("subsets do not cover the dataset".into());
    }
    let index = dataset.index();
    let mut per_stratum: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in p.subsets.iter().enumerate() {
        for id in s {
            per_stratum.entry(stratum_of(index[id.as_str()], p.plan.strategy)).or_insert_with(|| vec![0; k])[i] += 1;
        }
    }
    per_stratum.into_iter().find_map(|(stratum, counts)| {
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        (hi - lo > 1).then(|| format!("stratum {stratum:?} unbalanced: {counts:?}"))
    })
}
