//! The `ZSDC` latent bitstream.
//!
//! ```text
//! offset size  field
//!      0    4  magic "ZSDC"
//!      4    1  format version (1)
//!      5    2  codec version (u16 LE)
//!      7    1  index bits per codebook index
//!      8    1  RVQ stages
//!      9    1  subvectors per frame
//!     10    8  captured_at, UTC seconds (i64 LE)
//!     18    4  source sample rate (u32 LE)
//!     22    4  sample count at 44.1 kHz (u32 LE)
//!     26    4  frame count (u32 LE)
//!     30    1  post id length L (<= 32)
//!     31    L  post id, UTF-8
//!   31+L  2*F  per-frame log-gain (u16 LE)
//!          ..  indices, LSB-first bit packed, frame-major, then subvector, then stage
//! ```

use thiserror::Error;

use super::bits::{packed_len, BitReader, BitWriter};

pub const LATENT_MAGIC: &[u8; 4] = b"ZSDC";
pub const LATENT_FORMAT_VERSION: u8 = 1;
pub const MAX_POST_ID_BYTES: usize = 32;
const FIXED_HEADER_BYTES: usize = 31;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatentParseError {
    #[error("bad magic, expected \"ZSDC\"")]
    BadMagic,
    #[error("unsupported latent format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated latent: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after latent payload")]
    TrailingBytes(usize),
    #[error("invalid header field: {0}")]
    InvalidField(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentHeader {
    pub codec_version: u16,
    pub index_bits: u8,
    pub n_stages: u8,
    pub n_subvectors: u8,
    pub post_id: String,
    pub captured_at: i64,
    pub source_rate: u32,
    pub n_samples: u32,
    pub n_frames: u32,
}

impl LatentHeader {
    pub fn indices_per_frame(&self) -> usize {
        self.n_subvectors as usize * self.n_stages as usize
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_BYTES + self.post_id.len()
    }
}

/// Compact code for one clip: one gain per frame plus RVQ indices laid out
/// `[frame][subvector][stage]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentCode {
    pub header: LatentHeader,
    pub gains: Vec<u16>,
    pub indices: Vec<u16>,
}

impl LatentCode {
    /// Checks the structural invariants `serialize` relies on.
    pub fn validate(&self) -> Result<(), LatentParseError> {
        let h = &self.header;
        if h.post_id.len() > MAX_POST_ID_BYTES {
            return Err(LatentParseError::InvalidField("post id longer than 32 bytes"));
        }
        if !(1..=16).contains(&h.index_bits) {
            return Err(LatentParseError::InvalidField("index bits"));
        }
        if h.n_stages == 0 || h.n_subvectors == 0 {
            return Err(LatentParseError::InvalidField("layout"));
        }
        if h.source_rate == 0 {
            return Err(LatentParseError::InvalidField("source rate"));
        }
        if self.gains.len() != h.n_frames as usize
            || self.indices.len() != h.n_frames as usize * h.indices_per_frame()
        {
            return Err(LatentParseError::InvalidField("payload length"));
        }
        let limit = 1u32 << h.index_bits;
        if self.indices.iter().any(|&i| i as u32 >= limit) {
            return Err(LatentParseError::InvalidField("index out of range"));
        }
        Ok(())
    }

    pub fn serialized_len(&self) -> usize {
        self.header.encoded_len()
            + 2 * self.gains.len()
            + packed_len(self.indices.len(), self.header.index_bits as u32)
    }

    /// Panics if the latent violates [`LatentCode::validate`].
    pub fn serialize(&self) -> Vec<u8> {
        self.validate().expect("serializing an invalid latent");
        let h = &self.header;
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(LATENT_MAGIC);
        out.push(LATENT_FORMAT_VERSION);
        out.extend_from_slice(&h.codec_version.to_le_bytes());
        out.push(h.index_bits);
        out.push(h.n_stages);
        out.push(h.n_subvectors);
        out.extend_from_slice(&h.captured_at.to_le_bytes());
        out.extend_from_slice(&h.source_rate.to_le_bytes());
        out.extend_from_slice(&h.n_samples.to_le_bytes());
        out.extend_from_slice(&h.n_frames.to_le_bytes());
        out.push(h.post_id.len() as u8);
        out.extend_from_slice(h.post_id.as_bytes());
        for g in &self.gains {
            out.extend_from_slice(&g.to_le_bytes());
        }
        let bits = h.index_bits as u32;
        let mut w = BitWriter::with_capacity(packed_len(self.indices.len(), bits));
        for &i in &self.indices {
            w.write(i as u32, bits);
        }
        out.extend_from_slice(&w.finish());
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, LatentParseError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(LatentParseError::Truncated {
                    needed: n,
                    have: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        if bytes.len() < 4 || &bytes[..4] != LATENT_MAGIC {
            // A short prefix of the magic is still a truncation.
            if bytes.len() < 4 && LATENT_MAGIC.starts_with(bytes) {
                need(FIXED_HEADER_BYTES)?;
            }
            return Err(LatentParseError::BadMagic);
        }
        need(5)?;
        if bytes[4] != LATENT_FORMAT_VERSION {
            return Err(LatentParseError::UnsupportedVersion(bytes[4]));
        }
        need(FIXED_HEADER_BYTES)?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let index_bits = bytes[7];
        let n_stages = bytes[8];
        let n_subvectors = bytes[9];
        if !(1..=16).contains(&index_bits) {
            return Err(LatentParseError::InvalidField("index bits"));
        }
        if n_stages == 0 || n_subvectors == 0 {
            return Err(LatentParseError::InvalidField("layout"));
        }
        let post_len = bytes[30] as usize;
        if post_len > MAX_POST_ID_BYTES {
            return Err(LatentParseError::InvalidField("post id longer than 32 bytes"));
        }
        need(FIXED_HEADER_BYTES + post_len)?;
        let post_id = std::str::from_utf8(&bytes[31..31 + post_len])
            .map_err(|_| LatentParseError::InvalidField("post id is not UTF-8"))?
            .to_string();
        let header = LatentHeader {
            codec_version: u16::from_le_bytes([bytes[5], bytes[6]]),
            index_bits,
            n_stages,
            n_subvectors,
            post_id,
            captured_at: i64::from_le_bytes(bytes[10..18].try_into().unwrap()),
            source_rate: u32_at(18),
            n_samples: u32_at(22),
            n_frames: u32_at(26),
        };
        if header.source_rate == 0 {
            return Err(LatentParseError::InvalidField("source rate"));
        }
        // Sizes are checked before allocating so corrupt counts cannot blow up memory.
        let n_frames = header.n_frames as usize;
        let n_indices = n_frames
            .checked_mul(header.indices_per_frame())
            .ok_or(LatentParseError::InvalidField("frame count"))?;
        let gains_start = header.encoded_len();
        let indices_start = gains_start + 2 * n_frames;
        let total = indices_start + packed_len(n_indices, index_bits as u32);
        need(total)?;
        if bytes.len() > total {
            return Err(LatentParseError::TrailingBytes(bytes.len() - total));
        }
        let gains = bytes[gains_start..indices_start]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        let mut r = BitReader::new(&bytes[indices_start..total]);
        let indices = (0..n_indices)
            .map(|_| r.read(index_bits as u32).map(|v| v as u16))
            .collect::<Option<Vec<u16>>>()
            .ok_or(LatentParseError::Truncated {
                needed: total,
                have: bytes.len(),
            })?;
        Ok(Self {
            header,
            gains,
            indices,
        })
    }
}
