//! Exact nearest-neighbour store over tool documents.
//!
//! Queries are a brute-force scan under squared L2 distance. Results are
//! ordered by `(distance, id)`, so rankings are fully deterministic.
//!
//! On disk a store is a single JSON document followed by a checksum line:
//!
//! ```text
//! {"version":1,"dimension":256,"entries":[...]}
//! crc32:1a2b3c4d
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::par::{self, Execution};

pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_PREFIX: &str = "crc32:";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("id `{0}` is already in the store")]
    DuplicateId(String),
    #[error("dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("top_k must be positive")]
    InvalidTopK,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store {path}: {reason}")]
    CorruptStore { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub id: String,
    pub document: String,
    pub embedding: EmbeddingVector,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub id: String,
    pub distance: f64,
    pub document: String,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    dimension: usize,
    entries: Vec<StoreEntry>,
}

/// Σ (a_i − b_i)², accumulated left to right.
pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Many readers or one writer; `update` swaps an entry under the write
/// lock so concurrent queries see either the old or the new entry.
#[derive(Debug)]
pub struct VectorStore {
    dimension: usize,
    entries: RwLock<BTreeMap<String, StoreEntry>>,
    execution: Execution,
}

impl VectorStore {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "store dimension must be positive");
        Self {
            dimension,
            entries: RwLock::new(BTreeMap::new()),
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.execution = execution;
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn count(&self) -> usize {
        self.read().len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.read().contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<StoreEntry> {
        self.read().get(id).cloned()
    }

    /// Sorted ids.
    pub fn ids(&self) -> Vec<String> {
        self.read().keys().cloned().collect()
    }

    pub fn entries(&self) -> Vec<StoreEntry> {
        self.read().values().cloned().collect()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, BTreeMap<String, StoreEntry>> {
        self.entries.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, BTreeMap<String, StoreEntry>> {
        self.entries.write().unwrap_or_else(|e| e.into_inner())
    }

    fn check_dimension(&self, got: usize) -> Result<(), StoreError> {
        if got != self.dimension {
            return Err(StoreError::DimensionMismatch {
                expected: self.dimension,
                got,
            });
        }
        Ok(())
    }

    pub fn add(&self, entry: StoreEntry) -> Result<(), StoreError> {
        self.check_dimension(entry.embedding.dimension())?;
        let mut map = self.write();
        if map.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId(entry.id));
        }
        map.insert(entry.id.clone(), entry);
        Ok(())
    }

    pub fn delete(&self, id: &str) -> Result<StoreEntry, StoreError> {
        self.write()
            .remove(id)
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    /// Replaces an existing entry in one step.
    pub fn update(&self, entry: StoreEntry) -> Result<StoreEntry, StoreError> {
        self.check_dimension(entry.embedding.dimension())?;
        let mut map = self.write();
        match map.get_mut(&entry.id) {
            Some(slot) => Ok(std::mem::replace(slot, entry)),
            None => Err(StoreError::UnknownId(entry.id)),
        }
    }

    /// Top-k entries by ascending squared L2 distance, ties by id.
    pub fn query(&self, q: &EmbeddingVector, top_k: usize, max_distance: Option<f64>) -> Result<Vec<QueryResult>, StoreError> {
        self.query_with(self.execution, q, top_k, max_distance)
    }

    pub fn query_with(
        &self,
        execution: Execution,
        q: &EmbeddingVector,
        top_k: usize,
        max_distance: Option<f64>,
    ) -> Result<Vec<QueryResult>, StoreError> {
        if top_k == 0 {
            return Err(StoreError::InvalidTopK);
        }
        self.check_dimension(q.dimension())?;
        let map = self.read();
        let entries: Vec<&StoreEntry> = map.values().collect();
        let query = q.values();
        let mut scored: Vec<(f64, &StoreEntry)> = par::map(execution, &entries, |e| {
            (squared_l2(query, e.embedding.values()), *e)
        });
        if let Some(ceiling) = max_distance {
            scored.retain(|(d, _)| *d <= ceiling);
        }
        let order = |a: &(f64, &StoreEntry), b: &(f64, &StoreEntry)| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id));
        if scored.len() > top_k {
            scored.select_nth_unstable_by(top_k - 1, order);
            scored.truncate(top_k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(distance, e)| QueryResult {
                id: e.id.clone(),
                distance,
                document: e.document.clone(),
            })
            .collect())
    }

    /// Writes the store via a temp file and atomic rename.
    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        let snapshot = StoreFile {
            version: FORMAT_VERSION,
            dimension: self.dimension,
            entries: self.entries(),
        };
        let json = serde_json::to_string(&snapshot).map_err(|e| StoreError::CorruptStore {
            path: path.to_path_buf(),
            reason: format!("serialisation failed: {e}"),
        })?;
        let checksum = crc32fast::hash(json.as_bytes());
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io)?;
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("store");
        let tmp = dir.join(format!(".{file_name}.{}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(json.as_bytes()).map_err(io)?;
            writeln!(f).map_err(io)?;
            writeln!(f, "{CHECKSUM_PREFIX}{checksum:08x}").map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<VectorStore, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let corrupt = |reason: String| StoreError::CorruptStore {
            path: path.to_path_buf(),
            reason,
        };
        let body = text.strip_suffix('\n').unwrap_or(&text);
        let (json, trailer) = body
            .rsplit_once('\n')
            .ok_or_else(|| corrupt("missing checksum line".into()))?;
        let stored = trailer
            .strip_prefix(CHECKSUM_PREFIX)
            .and_then(|h| u32::from_str_radix(h.trim(), 16).ok())
            .ok_or_else(|| corrupt("malformed checksum line".into()))?;
        let actual = crc32fast::hash(json.as_bytes());
        if stored != actual {
            return Err(corrupt(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let file: StoreFile = serde_json::from_str(json).map_err(|e| corrupt(format!("schema error: {e}")))?;
        if file.version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported version {}", file.version)));
        }
        if file.dimension == 0 {
            return Err(corrupt("dimension must be positive".into()));
        }
        let store = VectorStore::new(file.dimension);
        for entry in file.entries {
            store.add(entry).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn entry(id: &str, values: &[f64]) -> StoreEntry {
        StoreEntry {
            id: id.into(),
            document: format!("doc {id}"),
            embedding: vector(values),
            metadata: BTreeMap::from([("module".to_string(), "m".to_string())]),
        }
    }

    fn two_axis_store() -> VectorStore {
        let store = VectorStore::new(2);
        store.add(entry("e1", &[1.0, 0.0])).unwrap();
        store.add(entry("e2", &[0.0, 1.0])).unwrap();
        store
    }

    fn ranking(results: &[QueryResult]) -> Vec<(&str, f64)> {
        results.iter().map(|r| (r.id.as_str(), r.distance)).collect()
    }

    #[test]
    fn add_then_get() {
        let store = two_axis_store();
        assert_eq!(store.get("e1").unwrap().document, "doc e1");
        assert_eq!(store.count(), 2);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let store = two_axis_store();
        assert!(matches!(
            store.add(entry("e3", &[1.0, 0.0, 0.0])),
            Err(StoreError::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(matches!(
            store.query(&vector(&[1.0]), 1, None),
            Err(StoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_rejected() {
        let store = two_axis_store();
        assert!(matches!(store.add(entry("e1", &[0.5, 0.5])), Err(StoreError::DuplicateId(_))));
    }

    #[test]
    fn exact_match_first() {
        let store = two_axis_store();
        let r = store.query(&vector(&[1.0, 0.0]), 1, None).unwrap();
        assert_eq!(ranking(&r), [("e1", 0.0)]);
    }

    #[test]
    fn hand_computed_distances() {
        let store = two_axis_store();
        let q = vector(&[0.6, 0.8]);
        let e2 = (0.6f64 - 0.0) * (0.6 - 0.0) + (0.8f64 - 1.0) * (0.8 - 1.0);
        let e1 = (0.6f64 - 1.0) * (0.6 - 1.0) + (0.8f64 - 0.0) * (0.8 - 0.0);
        assert!((e2 - 0.4).abs() < 1e-12 && (e1 - 0.8).abs() < 1e-12);
        let r = store.query(&q, 2, None).unwrap();
        assert_eq!(ranking(&r), [("e2", e2), ("e1", e1)]);
        let r = store.query(&q, 2, Some(0.5)).unwrap();
        assert_eq!(ranking(&r), [("e2", e2)]);
    }

    #[test]
    fn update_changes_ranking_with_tie_break() {
        let store = two_axis_store();
        store.update(entry("e1", &[0.0, 1.0])).unwrap();
        let r = store.query(&vector(&[1.0, 0.0]), 2, None).unwrap();
        assert_eq!(ranking(&r), [("e1", 2.0), ("e2", 2.0)]);
    }

    #[test]
    fn delete_removes_from_queries() {
        let store = two_axis_store();
        store.delete("e1").unwrap();
        let r = store.query(&vector(&[1.0, 0.0]), 5, None).unwrap();
        assert_eq!(ranking(&r), [("e2", 2.0)]);
        assert!(matches!(store.delete("e1"), Err(StoreError::UnknownId(_))));
        assert!(matches!(store.update(entry("zz", &[0.0, 0.0])), Err(StoreError::UnknownId(_))));
    }

    #[test]
    fn zero_top_k_rejected() {
        assert!(matches!(
            two_axis_store().query(&vector(&[1.0, 0.0]), 0, None),
            Err(StoreError::InvalidTopK)
        ));
    }

    #[test]
    fn persist_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tools.tulipdb");
        let store = VectorStore::new(3);
        for i in 0..100 {
            let x = i as f64;
            store
                .add(entry(&format!("t{i:03}"), &[x.sin(), x.cos() / 3.0, 1.0 / (x + 1.0)]))
                .unwrap();
        }
        store.persist(&path).unwrap();
        let loaded = VectorStore::load(&path).unwrap();
        assert_eq!(loaded.dimension(), 3);
        assert_eq!(loaded.entries(), store.entries());
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().last().unwrap().starts_with("crc32:"));
    }

    #[test]
    fn corrupt_store_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tulipdb");
        two_axis_store().persist(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("doc e1", "doc e9")).unwrap();
        assert!(matches!(VectorStore::load(&path), Err(StoreError::CorruptStore { .. })));
        fs::write(&path, "{}").unwrap();
        assert!(matches!(VectorStore::load(&path), Err(StoreError::CorruptStore { .. })));
        assert!(matches!(
            VectorStore::load(&dir.path().join("missing")),
            Err(StoreError::Io { .. })
        ));
    }
}
