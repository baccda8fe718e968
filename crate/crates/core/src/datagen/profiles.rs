use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Post {
    Tunnel,
    City,
    Outer,
}

impl Post {
    pub const ALL: [Post; 3] = [Post::Tunnel, Post::City, Post::Outer];

    pub fn as_str(self) -> &'static str {
        match self {
            Post::Tunnel => "tunnel",
            Post::City => "city",
            Post::Outer => "outer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Dry,
    Wet,
    Slush,
    Snow,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Dry, Condition::Wet, Condition::Slush, Condition::Snow];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Dry => "dry",
            Condition::Wet => "wet",
            Condition::Slush => "slush",
            Condition::Snow => "snow",
        }
    }

    /// Dry road is the only normal condition.
    pub fn is_anomalous(self) -> bool {
        self != Condition::Dry
    }
}

impl fmt::Display for Post {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Post {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Post::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown post {s:?}"))
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown condition {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionTap {
    pub delay_ms: f64,
    pub gain: f64,
}

/// Acoustic character of a recording site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteProfile {
    pub post: Post,
    pub reflection_taps: Vec<ReflectionTap>,
    /// RMS of the background noise floor.
    pub ambient_level: f64,
}

impl SiteProfile {
    pub fn for_post(post: Post) -> Self {
        let reflection_taps = match post {
            // Dense, geometrically decaying reverberation.
            Post::Tunnel => (1..=16)
                .map(|k| ReflectionTap {
                    delay_ms: 3.0 + 4.0 * k as f64,
                    gain: 0.55 * 0.82f64.powi(k),
                })
                .collect(),
            // A few irregular reflections off buildings and barriers.
            Post::City => vec![
                ReflectionTap { delay_ms: 11.0, gain: 0.35 },
                ReflectionTap { delay_ms: 29.0, gain: 0.22 },
                ReflectionTap { delay_ms: 47.0, gain: 0.12 },
            ],
            Post::Outer => Vec::new(),
        };
        let ambient_level = match post {
            Post::Tunnel => 0.008,
            Post::City => 0.012,
            Post::Outer => 0.004,
        };
        Self {
            post,
            reflection_taps,
            ambient_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    None,
    SplashBursts,
    LowpassMuffle,
}

/// Spectral and temporal changes a road-surface condition makes to tire noise,
/// relative to dry asphalt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherProfile {
    pub condition: Condition,
    /// Extra slope above 1 kHz, dB per octave.
    pub spectral_tilt_db_per_octave: f64,
    pub hiss_boost_2to8khz_db: f64,
    pub modulation: Modulation,
}

impl WeatherProfile {
    pub fn for_condition(condition: Condition) -> Self {
        let (tilt, hiss, modulation) = match condition {
            Condition::Dry => (0.0, 0.0, Modulation::None),
            Condition::Wet => (0.0, 6.0, Modulation::None),
            Condition::Slush => (0.0, 6.0, Modulation::SplashBursts),
            Condition::Snow => (-12.0, 0.0, Modulation::LowpassMuffle),
        };
        Self {
            condition,
            spectral_tilt_db_per_octave: tilt,
            hiss_boost_2to8khz_db: hiss,
            modulation,
        }
    }
}
