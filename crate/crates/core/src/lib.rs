//! Edge storage management for road-noise audio.
//!
//! Clips captured at any sample rate are canonicalized to 44.1 kHz and
//! compressed into compact latent codes on the edge node, stored under a
//! byte quota, shipped to a central server in checksummed batches and decoded
//! back to audio there. The anomaly detector and the synthetic dataset make it
//! possible to check that compression keeps the audio useful for detection.

pub mod audio;
pub mod codec;
pub mod datagen;
pub mod detect;
pub mod central;
pub mod edge;
pub mod experiment;
pub mod transport;
