//! Append-only, hash-chained decision log.
//!
//! Each record stores its payload as canonical JSON text and
//! `hash = SHA-256(prev_hash ‖ payload)`. Record 0 chains from 32 zero bytes.
//! Verification walks the chain and reports the first record whose linkage
//! or digest does not hold. Truncating the tail is only detectable against
//! an exported head hash.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::Stage;

pub const SYSTEM_ACTOR: &str = "SYSTEM";
pub const GENESIS_HASH: [u8; 32] = [0u8; 32];

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("failed to serialize audit payload: {0}")]
    SerializationFailure(#[from] serde_json::Error),
    #[error("audit log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed audit line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditAction {
    Graded,
    Overridden,
    AppealOpened,
    AppealResolved,
    Unresolved,
    MapUnsealed,
}

/// What a record attests to. Serialized in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPayload {
    pub response_id: String,
    pub stage: Option<Stage>,
    pub request_hash: Option<String>,
    pub score: Option<f64>,
    pub evidence_citations: Vec<String>,
    /// `SYSTEM` or a reviewer id.
    pub actor: String,
    pub action: AuditAction,
    pub note: Option<String>,
}

impl AuditPayload {
    pub fn system(response_id: impl Into<String>, action: AuditAction) -> Self {
        Self {
            response_id: response_id.into(),
            stage: None,
            request_hash: None,
            score: None,
            evidence_citations: Vec::new(),
            actor: SYSTEM_ACTOR.to_string(),
            action,
            note: None,
        }
    }

    pub fn canonical_json(&self) -> Result<String, AuditError> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub sequence_no: u64,
    pub prev_hash: [u8; 32],
    /// Canonical JSON of an [`AuditPayload`].
    pub payload: String,
    pub hash: [u8; 32],
}

pub fn chain_hash(prev_hash: &[u8; 32], payload: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev_hash);
    h.update(payload.as_bytes());
    h.finalize().into()
}

impl AuditRecord {
    pub fn payload(&self) -> Result<AuditPayload, serde_json::Error> {
        serde_json::from_str(&self.payload)
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash)
    }

    pub fn to_line(&self) -> Result<String, AuditError> {
        #[derive(Serialize)]
        struct Line<'a> {
            sequence_no: u64,
            prev_hash: String,
            hash: String,
            payload: &'a RawValue,
        }
        let payload: &RawValue = serde_json::from_str(&self.payload)?;
        Ok(serde_json::to_string(&Line {
            sequence_no: self.sequence_no,
            prev_hash: hex::encode(self.prev_hash),
            hash: hex::encode(self.hash),
            payload,
        })?)
    }

    pub fn from_line(line: &str, line_no: usize) -> Result<Self, AuditError> {
        #[derive(Deserialize)]
        struct Line {
            sequence_no: u64,
            prev_hash: String,
            hash: String,
            payload: Box<RawValue>,
        }
        let malformed = |reason: String| AuditError::Malformed { line: line_no, reason };
        let parsed: Line = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let digest = |s: &str| -> Result<[u8; 32], AuditError> {
            let bytes = hex::decode(s).map_err(|e| malformed(e.to_string()))?;
            bytes.try_into().map_err(|_| malformed("digest is not 32 bytes".into()))
        };
        Ok(Self {
            sequence_no: parsed.sequence_no,
            prev_hash: digest(&parsed.prev_hash)?,
            hash: digest(&parsed.hash)?,
            payload: parsed.payload.get().to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerifyOutcome {
    Ok,
    Tampered { first_bad_sequence_no: u64 },
}

/// Walks the chain and returns the index of the first broken record.
pub fn verify_records(records: &[AuditRecord]) -> VerifyOutcome {
    let mut prev = GENESIS_HASH;
    for (i, r) in records.iter().enumerate() {
        let ok = r.sequence_no == i as u64 && r.prev_hash == prev && r.hash == chain_hash(&prev, &r.payload);
        if !ok {
            return VerifyOutcome::Tampered {
                first_bad_sequence_no: i as u64,
            };
        }
        prev = r.hash;
    }
    VerifyOutcome::Ok
}

pub fn read_log(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(AuditRecord::from_line(&line, i + 1)?);
    }
    Ok(out)
}

#[derive(Default)]
struct Inner {
    records: Vec<AuditRecord>,
    sink: Option<BufWriter<File>>,
}

/// Thread-safe append point. Appends are serialized through one lock, so
/// the chain order is the order in which `append` calls acquired it.
#[derive(Default)]
pub struct AuditLog {
    inner: Mutex<Inner>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Log that also appends every record to `path` as it is written.
    pub fn with_file(path: &Path) -> Result<Self, AuditError> {
        let file = OpenOptions::new().create(true).truncate(true).write(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                sink: Some(BufWriter::new(file)),
            }),
        })
    }

    pub fn append(&self, payload: &AuditPayload) -> Result<AuditRecord, AuditError> {
        let payload = payload.canonical_json()?;
        let mut inner = self.inner.lock().expect("audit lock poisoned");
        let prev_hash = inner.records.last().map_or(GENESIS_HASH, |r| r.hash);
        let record = AuditRecord {
            sequence_no: inner.records.len() as u64,
            prev_hash,
            hash: chain_hash(&prev_hash, &payload),
            payload,
        };
        if let Some(sink) = inner.sink.as_mut() {
            writeln!(sink, "{}", record.to_line()?)?;
            sink.flush()?;
        }
        inner.records.push(record.clone());
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("audit lock poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.inner.lock().expect("audit lock poisoned").records.clone()
    }

    pub fn head_hash(&self) -> [u8; 32] {
        self.inner
            .lock()
            .expect("audit lock poisoned")
            .records
            .last()
            .map_or(GENESIS_HASH, |r| r.hash)
    }

    pub fn verify(&self) -> VerifyOutcome {
        verify_records(&self.inner.lock().expect("audit lock poisoned").records)
    }

    /// Writes every record as newline-delimited JSON.
    pub fn export(&self, path: &Path) -> Result<(), AuditError> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in self.records() {
            writeln!(w, "{}", r.to_line()?)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the hex head digest to a sidecar file.
    pub fn export_head(&self, path: &Path) -> Result<(), AuditError> {
        std::fs::write(path, format!("{}\n", hex::encode(self.head_hash())))?;
        Ok(())
    }
}
