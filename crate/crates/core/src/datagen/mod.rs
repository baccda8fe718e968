//! Seeded synthetic road audio and a road-free generic corpus.

mod generic;
mod profiles;
mod shaping;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::audio::AudioClip;

pub use generic::{spectral_flatness, synth_generic_corpus, GENERIC_CLIP_SECONDS};
pub use profiles::{Condition, Modulation, Post, ReflectionTap, SiteProfile, WeatherProfile};
pub use synth::{synth_event, EVENT_SECONDS};

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("scale must be in (0, 1], got {0}")]
    InvalidScale(f64),
    #[error("n_clips must be positive")]
    NoClips,
}

/// A 10-second driving event with its site and weather label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvent {
    pub uuid: Uuid,
    pub clip: AudioClip,
    pub post: Post,
    pub condition: Condition,
}

impl LabeledEvent {
    pub fn is_anomalous(&self) -> bool {
        self.condition.is_anomalous()
    }
}

/// One 10-minute source recording that events were cut from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recording {
    pub id: String,
    pub post: Post,
    pub condition: Condition,
    pub started_at: i64,
    pub n_events: usize,
}

pub const RECORDING_SECONDS: i64 = 600;

/// Site × weather cell counts as (recordings, driving events).
pub const DATASET_TABLE: [(Post, Condition, usize, usize); 10] = [
    (Post::Tunnel, Condition::Dry, 10, 384),
    (Post::Tunnel, Condition::Wet, 10, 21),
    (Post::Tunnel, Condition::Slush, 4, 7),
    (Post::City, Condition::Dry, 10, 804),
    (Post::City, Condition::Wet, 10, 529),
    (Post::City, Condition::Slush, 2, 11),
    (Post::Outer, Condition::Dry, 10, 1153),
    (Post::Outer, Condition::Wet, 9, 1032),
    (Post::Outer, Condition::Slush, 10, 76),
    (Post::Outer, Condition::Snow, 3, 5),
];

/// 2023-01-01T00:00:00Z.
const EPOCH_BASE: i64 = 1_672_531_200;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub events: Vec<LabeledEvent>,
    pub recordings: Vec<Recording>,
}

impl Dataset {
    pub fn count(&self, post: Post, condition: Condition) -> usize {
        self.events
            .iter()
            .filter(|e| e.post == post && e.condition == condition)
            .count()
    }
}

/// `ceil(scale * count)`, tolerant of representation error in `scale`.
pub fn scaled_count(scale: f64, count: usize) -> usize {
    let x = scale * count as f64;
    (x - 1e-9).ceil().max(0.0) as usize
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th event of a dataset.
pub fn event_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index)
}

/// Counts per cell without synthesizing audio.
pub fn dataset_plan(scale: f64) -> Result<Vec<(Post, Condition, usize, usize)>, DatagenError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(DatagenError::InvalidScale(scale));
    }
    Ok(DATASET_TABLE
        .iter()
        .map(|&(p, c, recs, events)| (p, c, scaled_count(scale, recs), scaled_count(scale, events)))
        .collect())
}

pub fn synth_dataset(scale: f64, seed: u64) -> Result<Dataset, DatagenError> {
    build_dataset(scale, seed, |_| true)
}

/// Number of events `synth_dataset(scale, _)` produces.
pub fn dataset_len(scale: f64) -> Result<usize, DatagenError> {
    Ok(dataset_plan(scale)?.iter().map(|c| c.3).sum())
}

/// The events of `synth_dataset(scale, seed)` at `indices`, in dataset
/// order, without synthesizing the rest.
pub fn synth_dataset_events(scale: f64, seed: u64, indices: &[usize]) -> Result<Vec<LabeledEvent>, DatagenError> {
    let keep: std::collections::HashSet<usize> = indices.iter().copied().collect();
    Ok(build_dataset(scale, seed, |i| keep.contains(&i))?.events)
}

fn build_dataset(scale: f64, seed: u64, keep: impl Fn(usize) -> bool) -> Result<Dataset, DatagenError> {
    let plan = dataset_plan(scale)?;
    let mut events = Vec::new();
    let mut recordings = Vec::new();
    let mut index = 0u64;
    for (cell, &(post, condition, n_recs, n_events)) in plan.iter().enumerate() {
        let site = SiteProfile::for_post(post);
        let weather = WeatherProfile::for_condition(condition);
        let n_recs = n_recs.max(1);
        for r in 0..n_recs {
            // Events are dealt round-robin across the cell's recordings.
            let in_rec = (n_events + n_recs - 1 - r) / n_recs;
            let started_at = EPOCH_BASE + ((cell * 100 + r) as i64) * 86_400;
            let id = format!("{}-{}-{:02}", post, condition, r);
            let spacing = (RECORDING_SECONDS - EVENT_SECONDS as i64) as f64 / in_rec.max(1) as f64;
            for k in 0..in_rec {
                let i = index;
                index += 1;
                if !keep(i as usize) {
                    continue;
                }
                let mut ev = synth_event(&site, &weather, event_seed(seed, i));
                let at = started_at + (k as f64 * spacing).floor() as i64;
                ev.clip = ev.clip.with_post_id(post.as_str()).with_captured_at(at);
                events.push(ev);
            }
            recordings.push(Recording {
                id,
                post,
                condition,
                started_at,
                n_events: in_rec,
            });
        }
    }
    Ok(Dataset { events, recordings })
}
