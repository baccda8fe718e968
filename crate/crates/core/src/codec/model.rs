//! The `ZSDM` codec model file.
//!
//! ```text
//! offset size  field
//!      0    4  magic "ZSDM"
//!      4    1  format version (1)
//!      5    2  codec version (u16 LE)
//!      7   24  frame_size, hop, n_subvectors, n_stages, codebook_size,
//!              byte_budget_per_second (u32 LE each)
//!     31    ..  centroids as f32 LE, ordered [subvector][stage][entry][dim]
//! ```

use super::{Codebook, Codec, CodecError, CodecSpec};

pub const MODEL_MAGIC: &[u8; 4] = b"ZSDM";
pub const MODEL_FORMAT_VERSION: u8 = 1;
const HEADER_BYTES: usize = 31;

pub(super) fn spec_bytes(spec: &CodecSpec) -> Vec<u8> {
    [
        spec.frame_size,
        spec.hop,
        spec.n_subvectors,
        spec.n_stages,
        spec.codebook_size,
        spec.byte_budget_per_second,
    ]
    .iter()
    .flat_map(|&v| (v as u32).to_le_bytes())
    .collect()
}

impl Codec {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let n_floats = spec.n_subvectors * spec.n_stages * spec.codebook_size * spec.subvector_dim();
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * n_floats);
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_FORMAT_VERSION);
        out.extend_from_slice(&self.version().to_le_bytes());
        out.extend_from_slice(&spec_bytes(spec));
        for cb in self.codebooks() {
            for v in cb.entries() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let fail = |m: &str| CodecError::Model(m.to_string());
        if bytes.len() < HEADER_BYTES || &bytes[..4] != MODEL_MAGIC {
            return Err(fail("missing ZSDM header"));
        }
        if bytes[4] != MODEL_FORMAT_VERSION {
            return Err(fail("unsupported model format version"));
        }
        let stored_version = u16::from_le_bytes([bytes[5], bytes[6]]);
        let field = |i: usize| {
            u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap()) as usize
        };
        let spec = CodecSpec {
            frame_size: field(0),
            hop: field(1),
            n_subvectors: field(2),
            n_stages: field(3),
            codebook_size: field(4),
            byte_budget_per_second: field(5),
        };
        spec.validate()?;
        let dim = spec.subvector_dim();
        let per_book = spec.codebook_size * dim;
        let n_books = spec.n_subvectors * spec.n_stages;
        if bytes.len() != HEADER_BYTES + 4 * per_book * n_books {
            return Err(fail("codebook payload size does not match spec"));
        }
        let floats: Vec<f32> = bytes[HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let codebooks = floats
            .chunks_exact(per_book)
            .map(|c| Codebook::new(dim, c.to_vec()))
            .collect();
        let codec = Codec::from_parts(spec, codebooks)?;
        if codec.version() != stored_version {
            return Err(fail("version does not match codebook contents"));
        }
        Ok(codec)
    }
}
