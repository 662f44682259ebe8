//! Deterministic split of a dataset into K disjoint subsets.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::model::{QaDataset, Question};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumKey {
    Subject,
    Year,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RoundRobin,
    StratifiedBy(StratumKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub k_count: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for PartitionPlan {
    fn default() -> Self {
        PartitionPlan { k_count: DEFAULT_K, strategy: Strategy::StratifiedBy(StratumKey::Subject), seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("K={k} exceeds the dataset size {n}")]
    KExceedsDatasetSize { k: usize, n: usize },
    #[error("invalid partition: {0}")]
    InvalidPlan(String),
    #[error("partition was built from dataset {expected}, not {actual}")]
    DatasetMismatch { expected: String, actual: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub plan: PartitionPlan,
    pub subsets: Vec<Vec<String>>,
    pub dataset_hash: String,
}

fn stratum(q: &Question, key: StratumKey) -> String {
    match key {
        StratumKey::Subject => serde_json::to_string(&q.subject).expect("enum serializes"),
        StratumKey::Year => q.year.map_or_else(|| "none".to_string(), |y| format!("{y:05}")),
        StratumKey::Unit => q.unit.map_or_else(|| "none".to_string(), |u| u.to_string()),
    }
}

/// Shuffles ids with a seeded generator and deals them round-robin. The
/// stratified strategy shuffles within each stratum (strata in key order)
/// and keeps dealing across strata, so every subset gets its share of each
/// stratum to within one item.
pub fn partition(dataset: &QaDataset, plan: &PartitionPlan) -> Result<Partition, PartitionError> {
    let n = dataset.len();
    if plan.k_count == 0 {
        return Err(PartitionError::InvalidPlan("k_count must be at least 1".into()));
    }
    if plan.k_count > n {
        return Err(PartitionError::KExceedsDatasetSize { k: plan.k_count, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let groups: Vec<Vec<String>> = match plan.strategy {
        Strategy::RoundRobin => vec![dataset.items.iter().map(|q| q.id.clone()).collect()],
        Strategy::StratifiedBy(key) => {
            let mut strata: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for q in &dataset.items {
                strata.entry(stratum(q, key)).or_default().push(q.id.clone());
            }
            strata.into_values().collect()
        }
    };
    let mut subsets = vec![Vec::new(); plan.k_count];
    let mut slot = 0;
    for mut ids in groups {
        ids.sort();
        ids.shuffle(&mut rng);
        for id in ids {
            subsets[slot % plan.k_count].push(id);
            slot += 1;
        }
    }
    Ok(Partition { plan: *plan, subsets, dataset_hash: dataset.manifest_hash.clone() })
}

impl Partition {
    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    /// Questions of subset `k` (1-based), in partition order.
    pub fn subset<'a>(&self, dataset: &'a QaDataset, k: usize) -> Result<Vec<&'a Question>, PartitionError> {
        let ids = self
            .subsets
            .get(k.wrapping_sub(1))
            .ok_or_else(|| PartitionError::InvalidPlan(format!("no subset {k}; K={}", self.k())))?;
        let index = dataset.index();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| PartitionError::InvalidPlan(format!("id {id} is not in the dataset")))
            })
            .collect()
    }

    /// Disjointness, coverage and plan consistency against a dataset.
    pub fn check(&self, dataset: &QaDataset) -> Result<(), PartitionError> {
        if self.dataset_hash != dataset.manifest_hash {
            return Err(PartitionError::DatasetMismatch {
                expected: self.dataset_hash.clone(),
                actual: dataset.manifest_hash.clone(),
            });
        }
        if self.subsets.len() != self.plan.k_count {
            return Err(PartitionError::InvalidPlan("subset count differs from k_count".into()));
        }
        let mut seen = HashSet::new();
        for id in self.subsets.iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(PartitionError::InvalidPlan(format!("id {id} appears twice")));
            }
            if dataset.get(id).is_none() {
                return Err(PartitionError::InvalidPlan(format!("id {id} is not in the dataset")));
            }
        }
        if seen.len() != dataset.len() {
            return Err(PartitionError::InvalidPlan(format!("covers {} of {} items", seen.len(), dataset.len())));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        io::write_json_file(path, self)
    }

    pub fn load(path: &Path) -> Result<Partition, IoError> {
        io::read_json_file(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn ds(n: usize) -> QaDataset {
        QaDataset::new("t", synthetic::exam(n, 3)).unwrap()
    }

    #[test]
    fn k_one_is_everything() {
        let d = ds(9);
        let p = partition(&d, &PartitionPlan { k_count: 1, ..PartitionPlan::default() }).unwrap();
        let mut all = p.subsets[0].clone();
        all.sort();
        let mut ids: Vec<_> = d.items.iter().map(|q| q.id.clone()).collect();
        ids.sort();
        assert_eq!(all, ids);
    }

    #[test]
    fn seven_into_three() {
        let d = ds(7);
        let plan = PartitionPlan { k_count: 3, strategy: Strategy::RoundRobin, seed: 11 };
        let p = partition(&d, &plan).unwrap();
        let mut sizes: Vec<_> = p.subsets.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
        p.check(&d).unwrap();
    }

    #[test]
    fn replay_and_seed_sensitivity() {
        let d = ds(40);
        let plan = PartitionPlan::default();
        assert_eq!(partition(&d, &plan).unwrap(), partition(&d, &plan).unwrap());
        let other = PartitionPlan { seed: 1, ..plan };
        assert_ne!(partition(&d, &plan).unwrap().subsets, partition(&d, &other).unwrap().subsets);
    }

    #[test]
    fn errors() {
        let d = ds(3);
        assert!(matches!(
            partition(&d, &PartitionPlan { k_count: 4, ..PartitionPlan::default() }),
            Err(PartitionError::KExceedsDatasetSize { k: 4, n: 3 })
        ));
        assert!(matches!(
            partition(&d, &PartitionPlan { k_count: 0, ..PartitionPlan::default() }),
            Err(PartitionError::InvalidPlan(_))
        ));
    }

    #[test]
    fn subset_lookup_is_one_based() {
        let d = ds(10);
        let p = partition(&d, &PartitionPlan { k_count: 2, ..PartitionPlan::default() }).unwrap();
        assert_eq!(p.subset(&d, 1).unwrap().len() + p.subset(&d, 2).unwrap().len(), 10);
        assert!(p.subset(&d, 0).is_err());
        assert!(p.subset(&d, 3).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let plan = PartitionPlan { k_count: 4, strategy: Strategy::StratifiedBy(StratumKey::Unit), seed: 9 };
        let json = serde_json::to_value(plan).unwrap();
        assert_eq!(json["strategy"], serde_json::json!({"stratified_by": "unit"}));
        let rr = serde_json::to_value(Strategy::RoundRobin).unwrap();
        assert_eq!(rr, serde_json::json!("round_robin"));
    }
}
