use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AudioClip, AudioError};

/// RIFF + fmt + data chunk headers with no extra chunks.
pub const WAV_HEADER_BYTES: u64 = 44;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Exact size of the file [`save_wav`] produces for `n_samples` samples.
pub fn wav_file_size(n_samples: usize) -> u64 {
    WAV_HEADER_BYTES + 4 * n_samples as u64
}

/// Writes `clip` as mono IEEE float-32 with the minimal 44-byte header and
/// returns the total number of bytes written.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<u64, AudioError> {
    let bytes = write_wav(clip);
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = 4 * clip.len() as u32;
    let mut out = Vec::with_capacity(WAV_HEADER_BYTES as usize + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_IEEE_FLOAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 4).to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in clip.samples() {
        out.write_all(&s.to_le_bytes()).expect("vec write");
    }
    out
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let bytes = fs::read(path)?;
    read_wav(&bytes)
}

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Parses a RIFF/WAVE byte buffer. Unknown chunks are skipped.
pub fn read_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let bad = |msg: &str| AudioError::Format(msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("chunk extends past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let le16 = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
                let mut format = le16(0);
                if format == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(bad("extensible fmt chunk too short"));
                    }
                    // First two bytes of the sub-format GUID carry the real tag.
                    format = le16(24);
                }
                fmt = Some(Fmt {
                    format,
                    channels: le16(2),
                    sample_rate: u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    bits: le16(14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (len & 1);
    }
    let fmt = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    if fmt.channels != 1 {
        return Err(AudioError::UnsupportedLayout(format!(
            "{} channels, only mono is supported",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(AudioError::InvalidRate);
    }
    let samples: Vec<f32> = match (fmt.format, fmt.bits) {
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (format, bits) => {
            return Err(AudioError::UnsupportedLayout(format!(
                "format tag {format} with {bits} bits per sample"
            )))
        }
    };
    AudioClip::new(samples, fmt.sample_rate)
}
