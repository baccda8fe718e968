//! Framed, checksummed batch transfer between edge and central server.
//!
//! ```text
//! frame: "ZSDT" | type u8 | length u32 | body[length] | crc32(type | length | body) u32
//!        type 1 = BATCH, 2 = ACK, 3 = NACK
//!
//! BATCH body: batch_id u64 | post_id_len u8 | post_id | n_records u32 |
//!             n_records x (uuid [16] | payload_len u32 | payload)
//! ACK body:   batch_id u64
//! NACK body:  batch_id u64 | reason (UTF-8, rest of body)
//! ```
//!
//! All integers little-endian.

mod link;

use std::collections::HashSet;
use std::io::Read;

use thiserror::Error;
use uuid::Uuid;

use crate::audio::wav_file_size;

pub use link::{
    default_port, deliver, send_batch, send_with_retry, FrameHandler, Link, LossyLink, RetryPolicy, TcpLink,
    DEFAULT_PORT, MAX_CONSECUTIVE_FAILURES, PORT_ENV,
};

pub const FRAME_MAGIC: &[u8; 4] = b"ZSDT";
/// Magic, type, length and checksum.
pub const FRAME_OVERHEAD: usize = 13;
/// Upper bound on a frame body; larger length fields are rejected before
/// anything is allocated.
pub const MAX_FRAME_BODY: usize = 256 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad frame magic")]
    BadMagic,
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("frame body of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("frame checksum mismatch")]
    Checksum,
    #[error("malformed {0} body")]
    Malformed(&'static str),
    #[error("duplicate uuid {0} in batch")]
    DuplicateUuid(Uuid),
    #[error("unexpected {0:?} frame")]
    Unexpected(FrameType),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out waiting for acknowledgment")]
    Timeout,
    #[error("batch rejected: {0}")]
    Nack(String),
    #[error("connection closed")]
    ConnectionClosed,
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<TransportError> },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TransportError {
    /// Whether sending the same batch again may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            TransportError::Timeout | TransportError::Nack(_) | TransportError::ConnectionClosed | TransportError::Io(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameType {
    Batch = 1,
    Ack = 2,
    Nack = 3,
}

impl FrameType {
    fn from_u8(v: u8) -> Result<Self, ProtocolError> {
        match v {
            1 => Ok(FrameType::Batch),
            2 => Ok(FrameType::Ack),
            3 => Ok(FrameType::Nack),
            other => Err(ProtocolError::UnknownType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub frame_type: FrameType,
    pub body: Vec<u8>,
}

fn frame_crc(frame_type: u8, len: [u8; 4], body: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&[frame_type]);
    h.update(&len);
    h.update(body);
    h.finalize()
}

impl WireFrame {
    pub fn new(frame_type: FrameType, body: Vec<u8>) -> Self {
        Self { frame_type, body }
    }

    pub fn ack(batch_id: u64) -> Self {
        Self::new(FrameType::Ack, batch_id.to_le_bytes().to_vec())
    }

    pub fn nack(batch_id: u64, reason: &str) -> Self {
        let mut body = batch_id.to_le_bytes().to_vec();
        body.extend_from_slice(reason.as_bytes());
        Self::new(FrameType::Nack, body)
    }

    pub fn batch(batch: &TransferBatch) -> Self {
        Self::new(FrameType::Batch, batch.encode_body())
    }

    /// Encoded size in bytes.
    pub fn wire_len(&self) -> usize {
        FRAME_OVERHEAD + self.body.len()
    }

    pub fn emit(&self) -> Vec<u8> {
        let len = (self.body.len() as u32).to_le_bytes();
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(FRAME_MAGIC);
        out.push(self.frame_type as u8);
        out.extend_from_slice(&len);
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&frame_crc(self.frame_type as u8, len, &self.body).to_le_bytes());
        out
    }

    /// Parses one frame from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize), ProtocolError> {
        if bytes.len() < 9 {
            return Err(if bytes.len() >= 4 && &bytes[..4] != FRAME_MAGIC {
                ProtocolError::BadMagic
            } else {
                ProtocolError::Truncated
            });
        }
        if &bytes[..4] != FRAME_MAGIC {
            return Err(ProtocolError::BadMagic);
        }
        let type_byte = bytes[4];
        let len_bytes: [u8; 4] = bytes[5..9].try_into().unwrap();
        let len = u32::from_le_bytes(len_bytes) as usize;
        if len > MAX_FRAME_BODY {
            return Err(ProtocolError::TooLarge(len));
        }
        let total = FRAME_OVERHEAD + len;
        if bytes.len() < total {
            return Err(ProtocolError::Truncated);
        }
        let body = &bytes[9..9 + len];
        let crc = u32::from_le_bytes(bytes[9 + len..total].try_into().unwrap());
        if crc != frame_crc(type_byte, len_bytes, body) {
            return Err(ProtocolError::Checksum);
        }
        let frame_type = FrameType::from_u8(type_byte)?;
        Ok((Self::new(frame_type, body.to_vec()), total))
    }

    /// Reads exactly one frame from a byte stream.
    pub fn read_from(r: &mut impl Read) -> Result<Self, TransportError> {
        let mut head = [0u8; 9];
        read_exact_or_closed(r, &mut head)?;
        if &head[..4] != FRAME_MAGIC {
            return Err(ProtocolError::BadMagic.into());
        }
        let len = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
        if len > MAX_FRAME_BODY {
            return Err(ProtocolError::TooLarge(len).into());
        }
        let mut buf = head.to_vec();
        buf.resize(FRAME_OVERHEAD + len, 0);
        read_exact_or_closed(r, &mut buf[9..])?;
        Ok(Self::parse(&buf)?.0)
    }

    /// Batch id carried by an ACK or NACK.
    pub fn reply_batch_id(&self) -> Result<u64, ProtocolError> {
        match self.frame_type {
            FrameType::Ack if self.body.len() == 8 => Ok(u64::from_le_bytes(self.body[..8].try_into().unwrap())),
            FrameType::Nack if self.body.len() >= 8 => Ok(u64::from_le_bytes(self.body[..8].try_into().unwrap())),
            FrameType::Batch => Err(ProtocolError::Unexpected(FrameType::Batch)),
            _ => Err(ProtocolError::Malformed("reply")),
        }
    }

    pub fn nack_reason(&self) -> String {
        String::from_utf8_lossy(self.body.get(8..).unwrap_or_default()).into_owned()
    }
}

fn read_exact_or_closed(r: &mut impl Read, buf: &mut [u8]) -> Result<(), TransportError> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(TransportError::ConnectionClosed),
        Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
            Err(TransportError::Timeout)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRecord {
    pub uuid: Uuid,
    /// Serialized latent code.
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferBatch {
    pub batch_id: u64,
    pub post_id: String,
    pub records: Vec<BatchRecord>,
}

impl TransferBatch {
    pub fn payload_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.payload.len() as u64).sum()
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let post = &self.post_id.as_bytes()[..self.post_id.len().min(255)];
        let mut out = Vec::with_capacity(13 + post.len() + self.records.iter().map(|r| 20 + r.payload.len()).sum::<usize>());
        out.extend_from_slice(&self.batch_id.to_le_bytes());
        out.push(post.len() as u8);
        out.extend_from_slice(post);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(r.uuid.as_bytes());
            out.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&r.payload);
        }
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, ProtocolError> {
        let bad = ProtocolError::Malformed("batch");
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], ProtocolError> {
            let s = body.get(pos..pos.checked_add(n).ok_or(bad.clone())?).ok_or(bad.clone())?;
            pos += n;
            Ok(s)
        };
        let batch_id = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let plen = take(1)?[0] as usize;
        let post_id = String::from_utf8(take(plen)?.to_vec()).map_err(|_| bad.clone())?;
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        // Every record needs at least 20 bytes, which bounds n before allocating.
        if n > body.len() / 20 {
            return Err(bad);
        }
        let mut seen = HashSet::with_capacity(n);
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let uuid = Uuid::from_slice(take(16)?).map_err(|_| bad.clone())?;
            if !seen.insert(uuid) {
                return Err(ProtocolError::DuplicateUuid(uuid));
            }
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            records.push(BatchRecord {
                uuid,
                payload: take(len)?.to_vec(),
            });
        }
        drop(take);
        if pos != body.len() {
            return Err(bad);
        }
        Ok(Self {
            batch_id,
            post_id,
            records,
        })
    }
}

/// Bytes put on the wire by the edge, next to what the same audio would
/// cost as float-32 WAV files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostCounter {
    pub bytes_sent: u64,
    pub frames_sent: u64,
    pub raw_equivalent_bytes: u64,
}

impl CostCounter {
    /// Accounts for one original clip of `n_samples` samples.
    pub fn add_raw_clip(&mut self, n_samples: usize) {
        self.raw_equivalent_bytes += wav_file_size(n_samples);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub bytes_sent: u64,
    pub raw_equivalent_bytes: u64,
    /// `bytes_sent / raw_equivalent_bytes`; absent when nothing was sent.
    pub ratio: Option<f64>,
}

pub fn cost_report(counter: &CostCounter) -> CostReport {
    let ratio = (counter.bytes_sent > 0 && counter.raw_equivalent_bytes > 0)
        .then(|| counter.bytes_sent as f64 / counter.raw_equivalent_bytes as f64);
    CostReport {
        bytes_sent: counter.bytes_sent,
        raw_equivalent_bytes: counter.raw_equivalent_bytes,
        ratio,
    }
}
