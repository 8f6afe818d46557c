//! Room-acoustics core: scene graphs, image-source simulation, first-order
//! Ambisonics encoding, perceptual-parameter SRIR synthesis, and the metric
//! suite used to compare impulse responses.

pub mod ambisonic;
pub mod bands;
pub mod ga;
pub mod geom;
pub mod metrics;
pub mod rngutil;
pub mod scene;
pub mod synth;
pub mod wavio;

/// Default sample rate for every impulse response in the workspace.
pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;

/// Speed of sound in air at ~20 °C, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
