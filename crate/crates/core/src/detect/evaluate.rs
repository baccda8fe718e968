use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{auroc, features, fit_features, score_features, DetectError, LabeledEvent};
use crate::audio::{resample, AudioClip, MelFrames, CANONICAL_RATE};
use crate::codec::Codec;
use crate::datagen::Post;

/// How an event reaches the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Original 44.1 kHz audio.
    Hifi,
    /// Downsampled to 22.05 kHz.
    Lofi22,
    /// Downsampled to 11.025 kHz.
    Lofi11,
    /// Encoded and decoded by the codec from the 44.1 kHz original.
    Asr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Hifi, Variant::Lofi22, Variant::Lofi11, Variant::Asr];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Hifi => "hifi_f44",
            Variant::Lofi22 => "lofi_f22",
            Variant::Lofi11 => "lofi_f11",
            Variant::Asr => "asr_f44",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The clip as the detector sees it for `variant`. Lo-Fi variants are
/// brought back to 44.1 kHz so every variant has the same mel layout.
pub fn variant_clip(variant: Variant, clip: &AudioClip, codec: &Codec) -> Result<AudioClip, DetectError> {
    let lofi = |rate| -> Result<AudioClip, DetectError> {
        Ok(resample(&resample(clip, rate)?, CANONICAL_RATE)?)
    };
    match variant {
        Variant::Hifi => Ok(clip.canonical()),
        Variant::Lofi22 => lofi(22_050),
        Variant::Lofi11 => lofi(11_025),
        Variant::Asr => Ok(codec.decode(&codec.encode(clip)?)?),
    }
}

/// AUROC per post, pooled over posts (`merge`), the mean of those rows
/// (`average`) and each column's average relative to Hi-Fi (`ratio`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocTable {
    pub variants: Vec<Variant>,
    pub per_post: Vec<(Post, Vec<f64>)>,
    pub merge: Vec<f64>,
    pub average: Vec<f64>,
    pub ratio: Vec<f64>,
}

impl AurocTable {
    fn column(&self, v: Variant) -> usize {
        self.variants.iter().position(|&x| x == v).expect("variant present in table")
    }

    pub fn average_of(&self, v: Variant) -> f64 {
        self.average[self.column(v)]
    }

    pub fn ratio_of(&self, v: Variant) -> f64 {
        self.ratio[self.column(v)]
    }

    pub fn merge_of(&self, v: Variant) -> f64 {
        self.merge[self.column(v)]
    }

    fn rows(&self) -> Vec<(String, &[f64])> {
        let mut rows: Vec<(String, &[f64])> = self
            .per_post
            .iter()
            .map(|(p, v)| (p.to_string(), v.as_slice()))
            .collect();
        rows.push(("merge".into(), &self.merge));
        rows.push(("average".into(), &self.average));
        rows.push(("ratio_auroc".into(), &self.ratio));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for v in &self.variants {
            out.push(',');
            out.push_str(v.label());
        }
        out.push('\n');
        for (name, values) in self.rows() {
            out.push_str(&name);
            for x in values {
                let _ = write!(out, ",{x:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12}", "");
        for v in &self.variants {
            let _ = write!(out, " {:>9}", v.label());
        }
        out.push('\n');
        for (name, values) in self.rows() {
            let _ = write!(out, "{name:<12}");
            for x in values {
                let _ = write!(out, " {x:>9.3}");
            }
            out.push('\n');
        }
        out
    }
}

/// Fits one detector per variant on that variant's Dry events, scores every
/// event and tabulates AUROC.
pub fn evaluate_conditions(events: &[LabeledEvent], codec: &Codec) -> Result<AurocTable, DetectError> {
    evaluate_with(events, |variant, _, e| variant_clip(variant, &e.clip, codec))
}

/// As [`evaluate_conditions`], with the audio for each (variant, event
/// index) supplied by `clip_for`; lets the codec column come from an archive.
pub fn evaluate_with(
    events: &[LabeledEvent],
    mut clip_for: impl FnMut(Variant, usize, &LabeledEvent) -> Result<AudioClip, DetectError>,
) -> Result<AurocTable, DetectError> {
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let posts: Vec<Post> = Post::ALL.into_iter().filter(|p| events.iter().any(|e| e.post == *p)).collect();
    for &variant in &Variant::ALL {
        let feats: Vec<MelFrames> = events
            .iter()
            .enumerate()
            .map(|(i, e)| Ok(features(&clip_for(variant, i, e)?)?))
            .collect::<Result<_, DetectError>>()?;
        let normal: Vec<MelFrames> = events
            .iter()
            .zip(&feats)
            .filter(|(e, _)| !e.is_anomalous())
            .map(|(_, f)| f.clone())
            .collect();
        let model = fit_features(&normal)?;
        let scores = feats
            .iter()
            .map(|f| score_features(&model, f))
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<bool> = events.iter().map(|e| e.is_anomalous()).collect();
        let mut col = Vec::with_capacity(posts.len() + 1);
        for &post in &posts {
            let (s, l): (Vec<f64>, Vec<bool>) = events
                .iter()
                .zip(scores.iter().zip(&labels))
                .filter(|(e, _)| e.post == post)
                .map(|(_, (&s, &l))| (s, l))
                .unzip();
            col.push(auroc(&s, &l)?);
        }
        col.push(auroc(&scores, &labels)?);
        columns.push(col);
    }
    let n_rows = posts.len() + 1;
    let per_post = posts
        .iter()
        .enumerate()
        .map(|(r, &p)| (p, columns.iter().map(|c| c[r]).collect()))
        .collect();
    let merge: Vec<f64> = columns.iter().map(|c| c[n_rows - 1]).collect();
    let average: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n_rows as f64).collect();
    let ratio = average.iter().map(|a| a / average[0]).collect();
    Ok(AurocTable {
        variants: Variant::ALL.to_vec(),
        per_post,
        merge,
        average,
        ratio,
    })
}
