//! Line-delimited archive manifest.
//!
//! One entry per line, tab-separated, fixed field order:
//! `uuid  post_id  captured_at  source_rate  latent_bytes  wav_path`.
//! Backslash, tab, newline and carriage return inside text fields are
//! escaped as `\\`, `\t`, `\n`, `\r`.

use std::collections::HashSet;
use std::path::PathBuf;

use uuid::Uuid;

use super::CentralError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub uuid: Uuid,
    pub post_id: String,
    pub captured_at: i64,
    pub source_rate: u32,
    pub latent_bytes: u64,
    /// Relative to the archive root.
    pub wav_path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArchiveManifest {
    entries: Vec<ManifestEntry>,
    seen: HashSet<Uuid>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            self.uuid,
            escape(&self.post_id),
            self.captured_at,
            self.source_rate,
            self.latent_bytes,
            escape(&self.wav_path.to_string_lossy())
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return None;
        }
        Some(Self {
            uuid: Uuid::parse_str(f[0]).ok()?,
            post_id: unescape(f[1])?,
            captured_at: f[2].parse().ok()?,
            source_rate: f[3].parse().ok()?,
            latent_bytes: f[4].parse().ok()?,
            wav_path: PathBuf::from(unescape(f[5])?),
        })
    }
}

impl ArchiveManifest {
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, uuid: &Uuid) -> bool {
        self.seen.contains(uuid)
    }

    /// Adds an entry; false if its uuid is already present.
    pub fn push(&mut self, entry: ManifestEntry) -> bool {
        if !self.seen.insert(entry.uuid) {
            return false;
        }
        self.entries.push(entry);
        true
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(ManifestEntry::to_line).collect()
    }

    /// Parses the on-disk form. A final line without its newline is an
    /// interrupted append and is ignored; any other bad line is an error.
    pub fn parse(text: &str) -> Result<Self, CentralError> {
        let mut m = Self::default();
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() < text.len() {
            log::warn!("ignoring incomplete last manifest line");
        }
        for (i, line) in complete.lines().enumerate() {
            let entry = ManifestEntry::parse_line(line).ok_or(CentralError::Manifest {
                line: i + 1,
                reason: "malformed entry",
            })?;
            if !m.push(entry) {
                return Err(CentralError::Manifest {
                    line: i + 1,
                    reason: "duplicate uuid",
                });
            }
        }
        Ok(m)
    }
}
