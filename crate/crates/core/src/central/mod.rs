//! Central server: receives latent batches, decodes them to 44.1 kHz audio
//! and keeps an on-disk archive.
//!
//! ```text
//! archive/
//!   manifest.log
//!   {post_id}/{captured_at}_{uuid}.wav
//!   _rejects/{uuid}.zsdc        latents that failed to decode
//! ```

mod manifest;
mod server;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;
use uuid::Uuid;

use crate::audio::{load_wav, write_wav, AudioClip, AudioError};
use crate::codec::{Codec, CodecError, LatentCode};
use crate::transport::{FrameHandler, FrameType, TransferBatch, WireFrame};

pub use manifest::{ArchiveManifest, ManifestEntry};
pub use server::{serve, ServerHandle};

pub const MANIFEST_FILE: &str = "manifest.log";
pub const REJECT_DIR: &str = "_rejects";

#[derive(Debug, Error)]
pub enum CentralError {
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: &'static str },
    #[error("archive is missing the audio for {0}")]
    CorpusIntegrity(Uuid),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchOutcome {
    pub archived: Vec<Uuid>,
    pub duplicates: Vec<Uuid>,
    pub quarantined: Vec<Uuid>,
}

/// Archive directory plus the manifest it owns. Only one value should own a
/// given directory at a time.
#[derive(Debug)]
pub struct Archive {
    root: PathBuf,
    codec: Codec,
    manifest: ArchiveManifest,
    log: File,
}

/// Path-safe form of a post id.
fn path_component(post_id: &str) -> String {
    let s: String = post_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "unknown".into()
    } else {
        s
    }
}

/// Writes through a temporary file so a crash never leaves a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl Archive {
    /// Opens or creates an archive, reloading any existing manifest.
    pub fn open(root: impl Into<PathBuf>, codec: Codec) -> Result<Self, CentralError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let path = root.join(MANIFEST_FILE);
        let text = match fs::read(&path) {
            Ok(b) => String::from_utf8(b).map_err(|_| CentralError::Manifest {
                line: 0,
                reason: "not UTF-8",
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let manifest = ArchiveManifest::parse(&text)?;
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        // Drop an interrupted final line so new appends start clean.
        let complete = text.rfind('\n').map_or(0, |i| i + 1) as u64;
        if complete < text.len() as u64 {
            log.set_len(complete)?;
        }
        Ok(Self {
            root,
            codec,
            manifest,
            log,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &ArchiveManifest {
        &self.manifest
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    /// Archives every record not seen before. Records that fail to decode
    /// are copied to the reject directory; the batch still succeeds.
    pub fn handle_batch(&mut self, batch: &TransferBatch) -> Result<BatchOutcome, CentralError> {
        let mut out = BatchOutcome::default();
        for rec in &batch.records {
            if self.manifest.contains(&rec.uuid) {
                out.duplicates.push(rec.uuid);
                continue;
            }
            let decoded = LatentCode::deserialize(&rec.payload)
                .map_err(CodecError::from)
                .and_then(|z| self.codec.decode(&z).map(|clip| (z, clip)));
            let (z, clip) = match decoded {
                Ok(v) => v,
                Err(e) => {
                    log::error!("quarantining {}: {e}", rec.uuid);
                    write_atomic(
                        &self.root.join(REJECT_DIR).join(format!("{}.zsdc", rec.uuid)),
                        &rec.payload,
                    )?;
                    out.quarantined.push(rec.uuid);
                    continue;
                }
            };
            let post_id = if z.header.post_id.is_empty() {
                batch.post_id.clone()
            } else {
                z.header.post_id.clone()
            };
            let wav_path = PathBuf::from(path_component(&post_id))
                .join(format!("{}_{}.wav", z.header.captured_at, rec.uuid));
            write_atomic(&self.root.join(&wav_path), &write_wav(&clip))?;
            let entry = ManifestEntry {
                uuid: rec.uuid,
                post_id,
                captured_at: z.header.captured_at,
                source_rate: z.header.source_rate,
                latent_bytes: rec.payload.len() as u64,
                wav_path,
            };
            self.log.write_all(entry.to_line().as_bytes())?;
            self.log.flush()?;
            self.manifest.push(entry);
            out.archived.push(rec.uuid);
        }
        Ok(out)
    }

    /// Reply for one request frame.
    pub fn reply_to(&mut self, frame: &WireFrame) -> WireFrame {
        if frame.frame_type != FrameType::Batch {
            return WireFrame::nack(0, "expected a BATCH frame");
        }
        let batch = match TransferBatch::decode_body(&frame.body) {
            Ok(b) => b,
            Err(e) => {
                let id = frame.body.get(..8).map_or(0, |b| u64::from_le_bytes(b.try_into().unwrap()));
                return WireFrame::nack(id, &e.to_string());
            }
        };
        match self.handle_batch(&batch) {
            Ok(o) => {
                log::info!(
                    "batch {} from {}: {} archived, {} duplicate, {} quarantined",
                    batch.batch_id,
                    batch.post_id,
                    o.archived.len(),
                    o.duplicates.len(),
                    o.quarantined.len()
                );
                WireFrame::ack(batch.batch_id)
            }
            Err(e) => {
                log::error!("batch {} failed: {e}", batch.batch_id);
                WireFrame::nack(batch.batch_id, &e.to_string())
            }
        }
    }

    /// Archived clips matching `filter`, ordered by capture time.
    pub fn build_corpus(&self, filter: &CorpusFilter) -> Result<Vec<AudioClip>, CentralError> {
        build_corpus(&self.manifest, &self.root, filter)
    }
}

impl FrameHandler for Archive {
    /// Frames that fail their checksum get a NACK for batch 0, which the
    /// sender treats as stale and answers by retrying after its timeout.
    fn handle_frame(&mut self, frame: &[u8]) -> Option<Vec<u8>> {
        let reply = match WireFrame::parse(frame) {
            Ok((f, _)) => self.reply_to(&f),
            Err(e) => WireFrame::nack(0, &e.to_string()),
        };
        Some(reply.emit())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusFilter {
    /// Empty matches every post.
    pub post_ids: Vec<String>,
    /// Half-open `[start, end)` in UTC seconds.
    pub time_range: Option<(i64, i64)>,
}

impl CorpusFilter {
    pub fn matches(&self, e: &ManifestEntry) -> bool {
        (self.post_ids.is_empty() || self.post_ids.iter().any(|p| *p == e.post_id))
            && self.time_range.is_none_or(|(a, b)| e.captured_at >= a && e.captured_at < b)
    }
}

/// Loads the WAVs of matching entries, stably sorted by `captured_at`.
pub fn build_corpus(
    manifest: &ArchiveManifest,
    root: &Path,
    filter: &CorpusFilter,
) -> Result<Vec<AudioClip>, CentralError> {
    let mut picked: Vec<&ManifestEntry> = manifest.entries().iter().filter(|e| filter.matches(e)).collect();
    picked.sort_by_key(|e| e.captured_at);
    picked
        .into_iter()
        .map(|e| {
            let clip = load_wav(root.join(&e.wav_path)).map_err(|err| match err {
                AudioError::Io(_) => CentralError::CorpusIntegrity(e.uuid),
                other => other.into(),
            })?;
            Ok(clip.with_post_id(e.post_id.clone()).with_captured_at(e.captured_at))
        })
        .collect()
}

#[cfg(test)]
mod tests;
