//! Near-duplicate removal by stem similarity.
//!
//! Similarity is the multiset Jaccard index of character 3-grams over a
//! normalized stem. Items linked by a chain of similar pairs form one
//! group, and each group keeps a single survivor.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::model::Question;

pub const DEFAULT_THRESHOLD: f64 = 0.90;

type Gram = [char; 3];

/// NFKC, lowercase, letters and digits only. Punctuation and whitespace
/// differences vanish.
pub fn stem_key(stem: &str) -> Vec<char> {
    stem.nfkc().flat_map(char::to_lowercase).filter(|c| c.is_alphanumeric()).collect()
}

/// Multiset of character 3-grams. Keys shorter than three characters
/// count as a single padded gram so they still compare.
fn grams(key: &[char]) -> HashMap<Gram, u32> {
    let mut out = HashMap::new();
    if key.len() < 3 {
        let mut g = ['\0'; 3];
        g[..key.len()].copy_from_slice(key);
        out.insert(g, 1);
        return out;
    }
    for w in key.windows(3) {
        *out.entry([w[0], w[1], w[2]]).or_insert(0) += 1;
    }
    out
}

fn jaccard(a: &HashMap<Gram, u32>, b: &HashMap<Gram, u32>) -> f64 {
    let total_a: u32 = a.values().sum();
    let total_b: u32 = b.values().sum();
    let inter: u32 = a.iter().map(|(g, n)| (*n).min(b.get(g).copied().unwrap_or(0))).sum();
    let union = total_a + total_b - inter;
    if union == 0 {
        1.0
    } else {
        f64::from(inter) / f64::from(union)
    }
}

/// Stem similarity of two questions.
pub fn similarity(a: &str, b: &str) -> f64 {
    jaccard(&grams(&stem_key(a)), &grams(&stem_key(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub dropped_id: String,
    pub kept_id: String,
    /// Similarity to the survivor. Below the threshold when the item was
    /// linked to the survivor only through intermediate items.
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupOutcome {
    pub kept: Vec<Question>,
    pub dropped: Vec<Dropped>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Removes near-duplicate stems. `threshold` is clamped to [0, 1].
///
/// Survivors prefer real exam items, then hand-crafted, mock exam and
/// textbook items, then the smaller id. Kept items stay in input order.
pub fn dedup(items: Vec<Question>, threshold: f64) -> DedupOutcome {
    let threshold = threshold.clamp(0.0, 1.0);
    let n = items.len();
    let profiles: Vec<HashMap<Gram, u32>> = items.iter().map(|q| grams(&stem_key(&q.stem))).collect();
    let mut uf = UnionFind((0..n).collect());

    if threshold <= 0.0 {
        // every pair qualifies, including ones sharing no gram
        for i in 1..n {
            uf.union(0, i);
        }
    } else {
        let mut postings: HashMap<Gram, Vec<usize>> = HashMap::new();
        for (i, p) in profiles.iter().enumerate() {
            for g in p.keys() {
                postings.entry(*g).or_default().push(i);
            }
        }
        let sizes: Vec<u32> = profiles.iter().map(|p| p.values().sum()).collect();
        let mut stamp = vec![usize::MAX; n];
        for i in 0..n {
            for g in profiles[i].keys() {
                for &j in &postings[g] {
                    if j <= i || stamp[j] == i {
                        continue;
                    }
                    stamp[j] = i;
                    // Jaccard cannot exceed the ratio of multiset sizes.
                    let (lo, hi) = (sizes[i].min(sizes[j]), sizes[i].max(sizes[j]));
                    if f64::from(lo) < threshold * f64::from(hi) - 1e-9 {
                        continue;
                    }
                    if jaccard(&profiles[i], &profiles[j]) >= threshold {
                        uf.union(i, j);
                    }
                }
            }
        }
    }

    let mut survivor: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let root = uf.find(i);
        let best = survivor.entry(root).or_insert(i);
        if rank(&items[i]) < rank(&items[*best]) {
            *best = i;
        }
    }
    let mut out = DedupOutcome::default();
    let mut dropped_idx = Vec::new();
    for i in 0..n {
        let s = survivor[&uf.find(i)];
        if s != i {
            dropped_idx.push((i, s));
        }
    }
    for &(i, s) in &dropped_idx {
        out.dropped.push(Dropped {
            dropped_id: items[i].id.clone(),
            kept_id: items[s].id.clone(),
            similarity: jaccard(&profiles[i], &profiles[s]),
        });
    }
    let keep: Vec<bool> = (0..n).map(|i| survivor[&uf.find(i)] == i).collect();
    out.kept = items.into_iter().zip(keep).filter_map(|(q, k)| k.then_some(q)).collect();
    out
}

fn rank(q: &Question) -> (u8, &str) {
    (q.origin.dedup_priority(), q.id.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Format, Origin, QuestionMeta, QuestionOption, Subject};

    fn q(stem: &str, origin: Origin) -> Question {
        let options = (0..4).map(|i| QuestionOption { label: (b'A' + i) as char, text: format!("o{i}") }).collect();
        Question::new(stem.into(), options, "A", Format::McqSingle, Subject::Other, origin, QuestionMeta::default()).unwrap()
    }

    #[test]
    fn identical_stems() {
        let out = dedup(vec![q("Which herb tonifies qi?", Origin::MockExam), q("Which herb tonifies qi?", Origin::RealExam)], 0.9);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].origin, Origin::RealExam);
        assert_eq!(out.dropped[0].similarity, 1.0);
    }

    #[test]
    fn punctuation_and_whitespace_only() {
        let a = q("患者，男，45岁。主诉：头痛。", Origin::MockExam);
        let b = q("患者 男 45岁 主诉 头痛", Origin::MockExam);
        assert_eq!(similarity(&a.stem, &b.stem), 1.0);
        let out = dedup(vec![a, b], 0.9);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.dropped[0].similarity, 1.0);
    }

    #[test]
    fn multiset_counts_repeats() {
        // "aaaa" has grams {aaa:2}; "aaa" has {aaa:1}
        assert_eq!(similarity("aaaa", "aaa"), 0.5);
        assert_eq!(similarity("ab", "ab"), 1.0);
        assert_eq!(similarity("ab", "abc"), 0.0);
        assert_eq!(similarity("!!", "??"), 1.0);
    }

    #[test]
    fn distinct_items_survive_in_input_order() {
        let items = vec![q("alpha beta gamma", Origin::MockExam), q("delta epsilon", Origin::MockExam), q("zeta eta theta", Origin::TextbookQa)];
        let ids: Vec<_> = items.iter().map(|q| q.id.clone()).collect();
        let out = dedup(items, 0.9);
        assert_eq!(out.kept.iter().map(|q| q.id.clone()).collect::<Vec<_>>(), ids);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn threshold_extremes() {
        let items = vec![q("first stem here", Origin::MockExam), q("xyz", Origin::MockExam), q("ab", Origin::MockExam)];
        assert_eq!(dedup(items.clone(), 0.0).kept.len(), 1);
        assert_eq!(dedup(items, 1.0).kept.len(), 3);
    }

    #[test]
    fn chains_collapse_to_one_survivor() {
        let base = "the patient presents with fever aversion to cold and a floating pulse";
        let a = q(base, Origin::MockExam);
        let b = q(&format!("{base} x"), Origin::TextbookQa);
        let c = q(&format!("{base} xy"), Origin::RealExam);
        let out = dedup(vec![a, b, c.clone()], 0.95);
        assert_eq!(out.kept, vec![c]);
        assert_eq!(out.dropped.len(), 2);
    }
}
