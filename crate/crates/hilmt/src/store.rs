//! Append-only JSON Lines store of revision demonstrations.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use hilmt_core::generate_feedback;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Feedback derived from a reference translation.
    Simulated,
    /// Feedback derived from a human post-edit.
    Human,
}

/// One in-context demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationRecord {
    pub id: String,
    pub domain: String,
    pub source: String,
    pub hypothesis: String,
    pub reference: String,
    pub feedback: Vec<String>,
    pub provenance: Provenance,
    pub created_at: DateTime<Utc>,
}

impl DemonstrationRecord {
    /// Builds a record whose feedback is derived from `hypothesis` and
    /// `reference`. The id is left blank; [`DemoStore::append`] assigns it.
    pub fn derive(
        domain: &str,
        source: &str,
        hypothesis: &str,
        reference: &str,
        provenance: Provenance,
        created_at: DateTime<Utc>,
    ) -> Self {
        Self {
            id: String::new(),
            domain: domain.to_owned(),
            source: source.to_owned(),
            hypothesis: hypothesis.to_owned(),
            reference: reference.to_owned(),
            feedback: generate_feedback(hypothesis, reference).instructions,
            provenance,
            created_at,
        }
    }

    pub fn content_id(&self) -> String {
        content_id(
            &self.domain,
            &self.source,
            &self.hypothesis,
            &self.reference,
        )
    }
}

/// First 16 hex digits of SHA-256 over the NUL-separated fields.
pub fn content_id(domain: &str, source: &str, hypothesis: &str, reference: &str) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in [domain, source, hypothesis, reference].iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store file {0} does not exist")]
    NotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Invalid {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate demonstration id {0}")]
    DuplicateId(String),
    #[error("demonstration has an empty domain")]
    EmptyDomain,
}

/// The loaded demonstrations plus the file they are appended to.
///
/// Appends go through `&mut self`, so a store has exactly one writer; readers
/// clone the records they need.
#[derive(Debug)]
pub struct DemoStore {
    path: PathBuf,
    records: Vec<DemonstrationRecord>,
    ids: HashSet<String>,
    revision: u64,
}

impl DemoStore {
    /// Loads an existing store file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(path))
            }
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let mut store = Self {
            path: path.clone(),
            records: Vec::new(),
            ids: HashSet::new(),
            revision: 0,
        };
        for (index, line) in BufReader::new(file).lines().enumerate() {
            let line_no = index + 1;
            let line = line.map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DemonstrationRecord =
                serde_json::from_str(&line).map_err(|source| StoreError::Parse {
                    path: path.clone(),
                    line: line_no,
                    source,
                })?;
            let invalid = |reason: &str| StoreError::Invalid {
                path: path.clone(),
                line: line_no,
                reason: reason.to_owned(),
            };
            if record.domain.is_empty() {
                return Err(invalid("empty domain"));
            }
            if !store.ids.insert(record.id.clone()) {
                return Err(invalid(&format!("duplicate id {}", record.id)));
            }
            store.records.push(record);
        }
        Ok(store)
    }

    /// Loads `path`, creating an empty store file if it does not exist yet.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        match Self::load(path) {
            Err(StoreError::NotFound(_)) => {
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| StoreError::Io {
                        path: path.to_path_buf(),
                        source,
                    })?;
                Self::load(path)
            }
            other => other,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[DemonstrationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn get(&self, id: &str) -> Option<&DemonstrationRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Bumped on every append; retrieval indexes built at an older revision
    /// are stale.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Records of one domain, in file order.
    pub fn filter(&self, domain: &str) -> Vec<&DemonstrationRecord> {
        self.records.iter().filter(|r| r.domain == domain).collect()
    }

    /// Durably appends `record`, assigning the content id when its id is
    /// blank. Returns the id.
    pub fn append(&mut self, mut record: DemonstrationRecord) -> Result<String, StoreError> {
        if record.domain.is_empty() {
            return Err(StoreError::EmptyDomain);
        }
        if record.id.trim().is_empty() {
            record.id = record.content_id();
        }
        if self.ids.contains(&record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err)?;
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;

        self.ids.insert(record.id.clone());
        let id = record.id.clone();
        self.records.push(record);
        self.revision += 1;
        Ok(id)
    }
}
