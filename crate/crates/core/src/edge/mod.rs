//! Quota-bounded latent storage on the edge node.

mod log;

use std::collections::HashSet;

use thiserror::Error;
use uuid::Uuid;

use crate::audio::AudioClip;
use crate::codec::{Codec, CodecError};
use crate::transport::{BatchRecord, TransferBatch, TransportError};

pub use log::{persist, restore, RestoreReport, LOG_MAGIC};

pub const DEFAULT_FILL_THRESHOLD: f64 = 0.8;
pub const DEFAULT_FLUSH_INTERVAL_SECONDS: i64 = 3600;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("invalid storage policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("record of {size} bytes exceeds capacity of {capacity} bytes")]
    RecordTooLarge { size: u64, capacity: u64 },
    #[error("batch limit {limit} is smaller than a stored record of {largest} bytes")]
    BatchLimitTooSmall { limit: u64, largest: u64 },
    #[error("record log: {0}")]
    Log(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoragePolicy {
    pub capacity_bytes: u64,
    pub fill_threshold: f64,
    pub flush_interval_seconds: i64,
}

impl StoragePolicy {
    pub fn new(capacity_bytes: u64, fill_threshold: f64, flush_interval_seconds: i64) -> Result<Self, EdgeError> {
        let p = Self {
            capacity_bytes,
            fill_threshold,
            flush_interval_seconds,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default threshold and interval.
    pub fn with_capacity(capacity_bytes: u64) -> Result<Self, EdgeError> {
        Self::new(capacity_bytes, DEFAULT_FILL_THRESHOLD, DEFAULT_FLUSH_INTERVAL_SECONDS)
    }

    pub fn validate(&self) -> Result<(), EdgeError> {
        if self.capacity_bytes == 0 {
            return Err(EdgeError::InvalidPolicy("capacity_bytes must be positive"));
        }
        if !(self.fill_threshold > 0.0 && self.fill_threshold <= 1.0) {
            return Err(EdgeError::InvalidPolicy("fill_threshold must be in (0, 1]"));
        }
        if self.flush_interval_seconds < 0 {
            return Err(EdgeError::InvalidPolicy("flush_interval_seconds must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub uuid: Uuid,
    pub post_id: String,
    pub captured_at: i64,
    /// Serialized latent code.
    pub payload: Vec<u8>,
    /// Handed to transport and not yet acknowledged.
    pub in_flight: bool,
}

impl StoredRecord {
    pub fn byte_len(&self) -> u64 {
        self.payload.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub uuid: Uuid,
    pub stored_bytes: u64,
    pub evicted: Vec<Uuid>,
}

/// Records ordered by capture time (ties keep arrival order). Mutated by a
/// single owner; transport only ever sees [`TransferBatch`] snapshots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageState {
    /// Identity of this edge; stamped on batches and on clips without one.
    pub post_id: String,
    records: Vec<StoredRecord>,
    used_bytes: u64,
    pub last_flush_at: i64,
    pub dropped_count: u64,
    pub next_batch_id: u64,
}

impl StorageState {
    pub fn new(post_id: impl Into<String>, now: i64) -> Self {
        Self {
            post_id: post_id.into(),
            records: Vec::new(),
            used_bytes: 0,
            last_flush_at: now,
            dropped_count: 0,
            next_batch_id: 1,
        }
    }

    pub fn records(&self) -> &[StoredRecord] {
        &self.records
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn in_flight(&self) -> usize {
        self.records.iter().filter(|r| r.in_flight).count()
    }

    /// Encodes `clip` and stores it under a fresh random UUID.
    pub fn ingest(
        &mut self,
        policy: &StoragePolicy,
        codec: &Codec,
        clip: &AudioClip,
        now: i64,
    ) -> Result<IngestReport, EdgeError> {
        self.ingest_with_uuid(policy, codec, clip, now, uuid::Builder::from_random_bytes(rand::random()).into_uuid())
    }

    /// As [`ingest`](Self::ingest) with a caller-chosen UUID.
    pub fn ingest_with_uuid(
        &mut self,
        policy: &StoragePolicy,
        codec: &Codec,
        clip: &AudioClip,
        now: i64,
        uuid: Uuid,
    ) -> Result<IngestReport, EdgeError> {
        let mut clip = clip.clone();
        if clip.post_id.is_none() {
            clip.post_id = Some(self.post_id.clone());
        }
        let captured_at = *clip.captured_at.get_or_insert(now);
        let payload = codec.encode(&clip)?.serialize();
        let record = StoredRecord {
            uuid,
            post_id: clip.post_id.unwrap_or_default(),
            captured_at,
            payload,
            in_flight: false,
        };
        let evicted = self.insert(policy, record)?;
        Ok(IngestReport {
            uuid,
            stored_bytes: self.records.iter().find(|r| r.uuid == uuid).map_or(0, |r| r.byte_len()),
            evicted,
        })
    }

    /// Stores an already-encoded record, evicting the oldest records until
    /// it fits.
    pub fn insert(&mut self, policy: &StoragePolicy, record: StoredRecord) -> Result<Vec<Uuid>, EdgeError> {
        let size = record.byte_len();
        if size > policy.capacity_bytes {
            return Err(EdgeError::RecordTooLarge {
                size,
                capacity: policy.capacity_bytes,
            });
        }
        let mut evicted = Vec::new();
        while self.used_bytes + size > policy.capacity_bytes {
            let old = self.records.remove(0);
            self.used_bytes -= old.byte_len();
            self.dropped_count += 1;
            evicted.push(old.uuid);
        }
        let at = self.records.partition_point(|r| r.captured_at <= record.captured_at);
        self.used_bytes += size;
        self.records.insert(at, record);
        Ok(evicted)
    }

    pub fn should_flush(&self, policy: &StoragePolicy, now: i64) -> bool {
        now.saturating_sub(self.last_flush_at) >= policy.flush_interval_seconds
            || self.used_bytes as f64 >= policy.fill_threshold * policy.capacity_bytes as f64
    }

    /// Snapshots the oldest records not already in flight, in order, until
    /// the next one would push the payload total past `max_batch_bytes`.
    /// They stay stored until [`acknowledge`](Self::acknowledge).
    pub fn take_flush_batch(&mut self, max_batch_bytes: u64) -> Result<TransferBatch, EdgeError> {
        if let Some(largest) = self.records.iter().map(|r| r.byte_len()).max() {
            if largest > max_batch_bytes {
                return Err(EdgeError::BatchLimitTooSmall {
                    limit: max_batch_bytes,
                    largest,
                });
            }
        }
        let mut total = 0;
        let mut records = Vec::new();
        for r in self.records.iter_mut().filter(|r| !r.in_flight) {
            if total + r.byte_len() > max_batch_bytes {
                break;
            }
            total += r.byte_len();
            r.in_flight = true;
            records.push(BatchRecord {
                uuid: r.uuid,
                payload: r.payload.clone(),
            });
        }
        let batch_id = self.next_batch_id;
        self.next_batch_id += 1;
        Ok(TransferBatch {
            batch_id,
            post_id: self.post_id.clone(),
            records,
        })
    }

    /// Discards the batch's records; returns how many were still stored.
    pub fn acknowledge(&mut self, batch: &TransferBatch, now: i64) -> usize {
        let acked: HashSet<Uuid> = batch.records.iter().map(|b| b.uuid).collect();
        let before = self.records.len();
        self.records.retain(|r| !(r.in_flight && acked.contains(&r.uuid)));
        self.used_bytes = self.records.iter().map(|r| r.byte_len()).sum();
        self.last_flush_at = now;
        before - self.records.len()
    }

    /// Returns the batch's records to the queue in their original positions.
    pub fn requeue(&mut self, batch: &TransferBatch) {
        let ids: HashSet<Uuid> = batch.records.iter().map(|b| b.uuid).collect();
        for r in self.records.iter_mut().filter(|r| ids.contains(&r.uuid)) {
            r.in_flight = false;
        }
    }

    /// Clears every in-flight mark, as after a restart.
    pub fn requeue_all(&mut self) {
        self.records.iter_mut().for_each(|r| r.in_flight = false);
    }

    pub(crate) fn from_parts(
        post_id: String,
        records: Vec<StoredRecord>,
        last_flush_at: i64,
        dropped_count: u64,
        next_batch_id: u64,
    ) -> Self {
        let used_bytes = records.iter().map(|r| r.byte_len()).sum();
        Self {
            post_id,
            records,
            used_bytes,
            last_flush_at,
            dropped_count,
            next_batch_id,
        }
    }
}
