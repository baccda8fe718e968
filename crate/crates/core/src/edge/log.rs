//! On-disk record log.
//!
//! ```text
//! "ZSDL" | version u8
//! entry*: len u32 | kind u8 | body[len] | crc32(kind | body) u32
//!
//! kind 1 (meta):   last_flush_at i64 | dropped_count u64 | next_batch_id u64 |
//!                  post_id_len u8 | post_id
//! kind 2 (record): uuid [16] | captured_at i64 | post_id_len u8 | post_id |
//!                  payload_len u32 | payload
//! ```
//!
//! All integers little-endian. Reading stops at the first entry that is
//! truncated or fails its checksum.

use std::fs;
use std::io::Write;
use std::path::Path;

use uuid::Uuid;

use super::{EdgeError, StorageState, StoredRecord};

pub const LOG_MAGIC: &[u8; 4] = b"ZSDL";
const LOG_VERSION: u8 = 1;
const KIND_META: u8 = 1;
const KIND_RECORD: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoreReport {
    pub records: usize,
    /// Bytes after the last valid entry that were ignored.
    pub discarded_bytes: usize,
    /// 1 if reading stopped at a damaged entry, else 0.
    pub corrupt_entries: usize,
}

fn push_str(out: &mut Vec<u8>, s: &str) -> Result<(), EdgeError> {
    let len = u8::try_from(s.len()).map_err(|_| EdgeError::Log("post id longer than 255 bytes".into()))?;
    out.push(len);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn entry(out: &mut Vec<u8>, kind: u8, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.push(kind);
    out.extend_from_slice(body);
    let mut h = crc32fast::Hasher::new();
    h.update(&[kind]);
    h.update(body);
    out.extend_from_slice(&h.finalize().to_le_bytes());
}

pub(crate) fn encode_log(state: &StorageState) -> Result<Vec<u8>, EdgeError> {
    let mut out = Vec::new();
    out.extend_from_slice(LOG_MAGIC);
    out.push(LOG_VERSION);
    let mut meta = Vec::new();
    meta.extend_from_slice(&state.last_flush_at.to_le_bytes());
    meta.extend_from_slice(&state.dropped_count.to_le_bytes());
    meta.extend_from_slice(&state.next_batch_id.to_le_bytes());
    push_str(&mut meta, &state.post_id)?;
    entry(&mut out, KIND_META, &meta);
    for r in state.records() {
        let mut body = Vec::with_capacity(33 + r.post_id.len() + r.payload.len());
        body.extend_from_slice(r.uuid.as_bytes());
        body.extend_from_slice(&r.captured_at.to_le_bytes());
        push_str(&mut body, &r.post_id)?;
        body.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
        body.extend_from_slice(&r.payload);
        entry(&mut out, KIND_RECORD, &body);
    }
    Ok(out)
}

/// Writes a full snapshot, replacing `path` atomically.
pub fn persist(state: &StorageState, path: impl AsRef<Path>) -> Result<(), EdgeError> {
    let path = path.as_ref();
    let bytes = encode_log(state)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| EdgeError::Io(e.error))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u8()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

struct Meta {
    last_flush_at: i64,
    dropped_count: u64,
    next_batch_id: u64,
    post_id: String,
}

fn parse_meta(body: &[u8]) -> Option<Meta> {
    let mut c = Cursor { buf: body, pos: 0 };
    let m = Meta {
        last_flush_at: c.u64()? as i64,
        dropped_count: c.u64()?,
        next_batch_id: c.u64()?,
        post_id: c.string()?,
    };
    c.done().then_some(m)
}

fn parse_record(body: &[u8]) -> Option<StoredRecord> {
    let mut c = Cursor { buf: body, pos: 0 };
    let uuid = Uuid::from_slice(c.take(16)?).ok()?;
    let captured_at = c.u64()? as i64;
    let post_id = c.string()?;
    let n = c.u32()? as usize;
    let payload = c.take(n)?.to_vec();
    c.done().then_some(StoredRecord {
        uuid,
        post_id,
        captured_at,
        payload,
        in_flight: false,
    })
}

pub(crate) fn decode_log(bytes: &[u8]) -> Result<(StorageState, RestoreReport), EdgeError> {
    let empty = |report| Ok((StorageState::from_parts(String::new(), Vec::new(), 0, 0, 1), report));
    if bytes.is_empty() {
        return empty(RestoreReport {
            records: 0,
            discarded_bytes: 0,
            corrupt_entries: 0,
        });
    }
    if bytes.len() < 5 || &bytes[..4] != LOG_MAGIC {
        return Err(EdgeError::Log("missing ZSDL header".into()));
    }
    if bytes[4] != LOG_VERSION {
        return Err(EdgeError::Log(format!("unsupported log version {}", bytes[4])));
    }
    let mut c = Cursor { buf: bytes, pos: 5 };
    let mut meta = None;
    let mut records = Vec::new();
    let mut valid_end = c.pos;
    let mut corrupt = 0;
    while !c.done() {
        let parsed = (|| {
            let len = c.u32()? as usize;
            let kind = c.u8()?;
            let body = c.take(len)?;
            let crc = c.u32()?;
            let mut h = crc32fast::Hasher::new();
            h.update(&[kind]);
            h.update(body);
            (h.finalize() == crc).then_some((kind, body))
        })();
        let ok = match parsed {
            Some((KIND_META, body)) => parse_meta(body).map(|m| meta = Some(m)).is_some(),
            Some((KIND_RECORD, body)) => parse_record(body).map(|r| records.push(r)).is_some(),
            _ => false,
        };
        if !ok {
            corrupt = 1;
            break;
        }
        valid_end = c.pos;
    }
    let report = RestoreReport {
        records: records.len(),
        discarded_bytes: bytes.len() - valid_end,
        corrupt_entries: corrupt,
    };
    let meta = meta.unwrap_or(Meta {
        last_flush_at: 0,
        dropped_count: 0,
        next_batch_id: 1,
        post_id: String::new(),
    });
    let state = StorageState::from_parts(meta.post_id, records, meta.last_flush_at, meta.dropped_count, meta.next_batch_id);
    Ok((state, report))
}

/// Rebuilds the state from a log written by [`persist`]. In-flight marks are
/// not stored, so every record comes back queued. A missing or empty file
/// gives an empty state.
pub fn restore(path: impl AsRef<Path>) -> Result<(StorageState, RestoreReport), EdgeError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    decode_log(&bytes)
}
