//! Audio persistence: 4-channel 32-bit-float WAV plus a JSON sidecar that
//! preserves what the WAV container cannot — Ambisonic format tag, capsule
//! orientations, and the simulation provenance (source/listener positions,
//! reflection order).

use crate::ambisonic::{AmbisonicIR, Format, CAPSULES};
use crate::geom::Vec3;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("audio i/o on {path}: {source}")]
    Hound {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("sidecar i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sidecar parse on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected 4 channels, found {found}")]
    ChannelCount { path: String, found: u16 },
    #[error("{path}: expected 32-bit float samples, found {found:?}")]
    SampleFormat { path: String, found: String },
}

/// Metadata carried alongside the WAV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_tag: Format,
    pub capsule_orientations: Option<[Vec3; 4]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<Vec3>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub listener: Option<Vec3>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reflection_order: Option<usize>,
}

impl Sidecar {
    pub fn for_ir(ir: &AmbisonicIR) -> Sidecar {
        Sidecar {
            format_tag: ir.format,
            capsule_orientations: ir.capsule_orientations,
            source: None,
            listener: None,
            reflection_order: None,
        }
    }

    pub fn with_provenance(mut self, source: Vec3, listener: Vec3, order: usize) -> Sidecar {
        self.source = Some(source);
        self.listener = Some(listener);
        self.reflection_order = Some(order);
        self
    }
}

/// Sidecar path convention: `foo.wav` → `foo.json`.
pub fn sidecar_path(wav_path: &Path) -> std::path::PathBuf {
    wav_path.with_extension("json")
}

/// Write a 4-channel float WAV and its JSON sidecar.
pub fn save_ir(ir: &AmbisonicIR, wav_path: &Path, sidecar: &Sidecar) -> Result<(), WavError> {
    let spec = hound::WavSpec {
        channels: 4,
        sample_rate: ir.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wrap = |source: hound::Error| WavError::Hound {
        path: wav_path.display().to_string(),
        source,
    };
    let mut writer = hound::WavWriter::create(wav_path, spec).map_err(wrap)?;
    for i in 0..ir.len() {
        for c in 0..4 {
            writer.write_sample(ir.channels[c][i] as f32).map_err(wrap)?;
        }
    }
    writer.finalize().map_err(wrap)?;

    let side = sidecar_path(wav_path);
    let json = serde_json::to_string_pretty(sidecar).map_err(|source| WavError::Json {
        path: side.display().to_string(),
        source,
    })?;
    std::fs::write(&side, json).map_err(|source| WavError::Io {
        path: side.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Read a 4-channel float WAV and its JSON sidecar back into an
/// [`AmbisonicIR`]. A missing sidecar falls back to A-format with the
/// canonical capsule orientations.
pub fn load_ir(wav_path: &Path) -> Result<(AmbisonicIR, Sidecar), WavError> {
    let wrap = |source: hound::Error| WavError::Hound {
        path: wav_path.display().to_string(),
        source,
    };
    let mut reader = hound::WavReader::open(wav_path).map_err(wrap)?;
    let spec = reader.spec();
    if spec.channels != 4 {
        return Err(WavError::ChannelCount {
            path: wav_path.display().to_string(),
            found: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
        return Err(WavError::SampleFormat {
            path: wav_path.display().to_string(),
            found: format!("{:?}/{} bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    let frames = reader.len() as usize / 4;
    let mut channels: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(frames));
    for (i, s) in reader.samples::<f32>().enumerate() {
        channels[i % 4].push(s.map_err(wrap)? as f64);
    }

    let side = sidecar_path(wav_path);
    let sidecar = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|source| WavError::Io {
            path: side.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| WavError::Json {
            path: side.display().to_string(),
            source,
        })?
    } else {
        Sidecar {
            format_tag: Format::AFormat,
            capsule_orientations: Some(CAPSULES),
            source: None,
            listener: None,
            reflection_order: None,
        }
    };

    let ir = AmbisonicIR {
        channels,
        sample_rate: spec.sample_rate,
        format: sidecar.format_tag,
        capsule_orientations: sidecar.capsule_orientations,
    };
    Ok((ir, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DEFAULT_SAMPLE_RATE;

    #[test]
    fn wav_round_trip_preserves_audio_to_f32_and_metadata_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ir.wav");
        let mut ir = AmbisonicIR::new_a_format(257, DEFAULT_SAMPLE_RATE);
        for c in 0..4 {
            for (i, v) in ir.channels[c].iter_mut().enumerate() {
                *v = ((i * (c + 3)) as f64 * 0.01).sin() * 0.5;
            }
        }
        let sidecar = Sidecar::for_ir(&ir).with_provenance(
            Vec3::new(1.0, 2.0, 0.5),
            Vec3::new(3.0, 1.0, 1.5),
            2,
        );
        save_ir(&ir, &path, &sidecar).unwrap();
        let (back, side) = load_ir(&path).unwrap();
        assert_eq!(back.len(), ir.len());
        assert_eq!(back.sample_rate, ir.sample_rate);
        assert_eq!(back.format, Format::AFormat);
        assert_eq!(back.capsule_orientations, ir.capsule_orientations);
        assert_eq!(side.source, Some(Vec3::new(1.0, 2.0, 0.5)));
        assert_eq!(side.reflection_order, Some(2));
        for c in 0..4 {
            for i in 0..ir.len() {
                // Samples quantize to f32 on disk, nothing more.
                assert_eq!(back.channels[c][i], ir.channels[c][i] as f32 as f64);
            }
        }
    }

    #[test]
    fn loading_without_a_sidecar_assumes_the_canonical_a_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.wav");
        let ir = AmbisonicIR::new_a_format(16, DEFAULT_SAMPLE_RATE);
        save_ir(&ir, &path, &Sidecar::for_ir(&ir)).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        let (back, side) = load_ir(&path).unwrap();
        assert_eq!(back.format, Format::AFormat);
        assert_eq!(side.capsule_orientations, Some(CAPSULES));
    }

    #[test]
    fn errors_carry_the_offending_path() {
        let err = load_ir(Path::new("/nonexistent/really.wav")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("really.wav"), "message was: {msg}");
    }
}
