//! Embedded transactional storage for released versions and submissions.
//!
//! Values are JSON. Writes go through redb write transactions, which are
//! serialized; reads use snapshot read transactions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use redb::{Database, ReadableTable, TableDefinition};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cotloop_core::io;
use cotloop_core::model::QaDataset;

use crate::scoring::SubmissionReport;

const VERSIONS: TableDefinition<&str, &[u8]> = TableDefinition::new("versions");
const ITEMS: TableDefinition<&str, &[u8]> = TableDefinition::new("items");
/// Keyed by `version \0 submission id`.
const SUBMISSIONS: TableDefinition<&str, &[u8]> = TableDefinition::new("submissions");
/// Keyed by `version \0 model name`, holding the submission id.
const BY_MODEL: TableDefinition<&str, &str> = TableDefinition::new("submissions_by_model");
const COUNTERS: TableDefinition<&str, u64> = TableDefinition::new("counters");

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("database: {0}")]
    Db(#[from] redb::Error),
    #[error("corrupt record: {0}")]
    Corrupt(String),
    #[error("version {0} is already released with different content")]
    VersionExists(String),
    #[error("unknown version {0}")]
    UnknownVersion(String),
    #[error("version {version} drops {missing} item(s) of {supersedes}")]
    DropsItems { version: String, supersedes: String, missing: usize },
    #[error("{model_name} already has a submission for {version}")]
    DuplicateSubmission { model_name: String, version: String },
}

fn dberr<E: Into<redb::Error>>(e: E) -> StoreError {
    StoreError::Db(e.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionMeta {
    pub version: String,
    pub manifest_hash: String,
    pub count: usize,
    pub released_at: DateTime<Utc>,
    pub supersedes: Option<String>,
}

#[derive(Debug)]
pub struct StoredVersion {
    pub meta: VersionMeta,
    pub dataset: QaDataset,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Release {
    Created(VersionMeta),
    /// Identical content was already released under this tag.
    Unchanged(VersionMeta),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    pub model_name: String,
    pub dataset_version: String,
    /// Question id to normalized answer.
    pub answers: BTreeMap<String, String>,
    pub submitted_at: DateTime<Utc>,
    pub report: SubmissionReport,
}

pub struct NewSubmission {
    pub model_name: String,
    pub dataset_version: String,
    pub answers: BTreeMap<String, String>,
    pub report: SubmissionReport,
}

pub struct Store {
    db: Database,
    cache: Mutex<HashMap<String, Arc<StoredVersion>>>,
}

fn key(a: &str, b: &str) -> String {
    format!("{a}\u{0}{b}")
}

fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, StoreError> {
    serde_json::from_slice(bytes).map_err(|e| StoreError::Corrupt(e.to_string()))
}

fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("store values serialize")
}

impl Store {
    pub fn open(dir: &Path) -> Result<Store, StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::Corrupt(format!("{}: {e}", dir.display())))?;
        let db = Database::create(dir.join("service.redb")).map_err(dberr)?;
        let tx = db.begin_write().map_err(dberr)?;
        {
            tx.open_table(VERSIONS).map_err(dberr)?;
            tx.open_table(ITEMS).map_err(dberr)?;
            tx.open_table(SUBMISSIONS).map_err(dberr)?;
            tx.open_table(BY_MODEL).map_err(dberr)?;
            tx.open_table(COUNTERS).map_err(dberr)?;
        }
        tx.commit().map_err(dberr)?;
        Ok(Store { db, cache: Mutex::new(HashMap::new()) })
    }

    /// Releases a dataset version. Tags are immutable: re-releasing the
    /// same content is a no-op, different content is refused. A version
    /// that supersedes another must keep every item of it.
    pub fn release(&self, dataset: &QaDataset, supersedes: Option<&str>, now: DateTime<Utc>) -> Result<Release, StoreError> {
        let tx = self.db.begin_write().map_err(dberr)?;
        let meta = {
            let mut versions = tx.open_table(VERSIONS).map_err(dberr)?;
            if let Some(existing) = versions.get(dataset.version.as_str()).map_err(dberr)? {
                let meta: VersionMeta = decode(existing.value())?;
                return if meta.manifest_hash == dataset.manifest_hash && meta.supersedes.as_deref() == supersedes {
                    Ok(Release::Unchanged(meta))
                } else {
                    Err(StoreError::VersionExists(dataset.version.clone()))
                };
            }
            let mut items = tx.open_table(ITEMS).map_err(dberr)?;
            if let Some(prior) = supersedes {
                let bytes = items.get(prior).map_err(dberr)?.ok_or_else(|| StoreError::UnknownVersion(prior.to_string()))?;
                let old = parse_items(prior, bytes.value())?;
                let ids: HashSet<&str> = dataset.items.iter().map(|q| q.id.as_str()).collect();
                let missing = old.items.iter().filter(|q| !ids.contains(q.id.as_str())).count();
                if missing > 0 {
                    return Err(StoreError::DropsItems {
                        version: dataset.version.clone(),
                        supersedes: prior.to_string(),
                        missing,
                    });
                }
            }
            let meta = VersionMeta {
                version: dataset.version.clone(),
                manifest_hash: dataset.manifest_hash.clone(),
                count: dataset.len(),
                released_at: now,
                supersedes: supersedes.map(String::from),
            };
            versions.insert(meta.version.as_str(), encode(&meta).as_slice()).map_err(dberr)?;
            items.insert(meta.version.as_str(), io::to_jsonl_bytes(&dataset.items).as_slice()).map_err(dberr)?;
            meta
        };
        tx.commit().map_err(dberr)?;
        Ok(Release::Created(meta))
    }

    pub fn version(&self, version: &str) -> Result<Option<Arc<StoredVersion>>, StoreError> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(version) {
            return Ok(Some(v.clone()));
        }
        let tx = self.db.begin_read().map_err(dberr)?;
        let Some(meta) = tx.open_table(VERSIONS).map_err(dberr)?.get(version).map_err(dberr)? else {
            return Ok(None);
        };
        let meta: VersionMeta = decode(meta.value())?;
        let items = tx.open_table(ITEMS).map_err(dberr)?;
        let bytes = items.get(version).map_err(dberr)?.ok_or_else(|| StoreError::Corrupt(format!("no items for {version}")))?;
        let dataset = parse_items(version, bytes.value())?;
        if dataset.manifest_hash != meta.manifest_hash {
            return Err(StoreError::Corrupt(format!("items of {version} do not match their hash")));
        }
        let stored = Arc::new(StoredVersion { meta, dataset });
        self.cache.lock().expect("cache lock").insert(version.to_string(), stored.clone());
        Ok(Some(stored))
    }

    /// Oldest release first.
    pub fn versions(&self) -> Result<Vec<VersionMeta>, StoreError> {
        let tx = self.db.begin_read().map_err(dberr)?;
        let table = tx.open_table(VERSIONS).map_err(dberr)?;
        let mut out = Vec::new();
        for row in table.iter().map_err(dberr)? {
            let (_, v) = row.map_err(dberr)?;
            out.push(decode::<VersionMeta>(v.value())?);
        }
        out.sort_by(|a, b| (a.released_at, &a.version).cmp(&(b.released_at, &b.version)));
        Ok(out)
    }

    /// Stores a scored submission. A model gets one submission per
    /// version; `resubmit` replaces the earlier one.
    pub fn insert_submission(&self, new: NewSubmission, resubmit: bool, now: DateTime<Utc>) -> Result<Submission, StoreError> {
        let tx = self.db.begin_write().map_err(dberr)?;
        let submission = {
            let model_key = key(&new.dataset_version, &new.model_name);
            let mut by_model = tx.open_table(BY_MODEL).map_err(dberr)?;
            let mut subs = tx.open_table(SUBMISSIONS).map_err(dberr)?;
            let previous = by_model.get(model_key.as_str()).map_err(dberr)?.map(|v| v.value().to_string());
            if let Some(prev) = previous {
                if !resubmit {
                    return Err(StoreError::DuplicateSubmission { model_name: new.model_name, version: new.dataset_version });
                }
                subs.remove(key(&new.dataset_version, &prev).as_str()).map_err(dberr)?;
            }
            let mut counters = tx.open_table(COUNTERS).map_err(dberr)?;
            let n = counters.get("submission").map_err(dberr)?.map_or(0, |v| v.value()) + 1;
            counters.insert("submission", n).map_err(dberr)?;
            let submission = Submission {
                id: format!("s-{n:08}"),
                model_name: new.model_name,
                dataset_version: new.dataset_version,
                answers: new.answers,
                submitted_at: now,
                report: new.report,
            };
            subs.insert(key(&submission.dataset_version, &submission.id).as_str(), encode(&submission).as_slice())
                .map_err(dberr)?;
            by_model.insert(model_key.as_str(), submission.id.as_str()).map_err(dberr)?;
            submission
        };
        tx.commit().map_err(dberr)?;
        Ok(submission)
    }

    pub fn submissions(&self, version: &str) -> Result<Vec<Submission>, StoreError> {
        let tx = self.db.begin_read().map_err(dberr)?;
        let table = tx.open_table(SUBMISSIONS).map_err(dberr)?;
        let (lo, hi) = (format!("{version}\u{0}"), format!("{version}\u{1}"));
        let mut out = Vec::new();
        for row in table.range(lo.as_str()..hi.as_str()).map_err(dberr)? {
            let (_, v) = row.map_err(dberr)?;
            out.push(decode::<Submission>(v.value())?);
        }
        Ok(out)
    }
}

fn parse_items(version: &str, bytes: &[u8]) -> Result<QaDataset, StoreError> {
    QaDataset::read_jsonl(version, bytes).map_err(|e| StoreError::Corrupt(e.to_string()))
}
