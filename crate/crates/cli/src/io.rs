//! Argument parsing and file I/O helpers shared by the subcommands.

use std::path::Path;

use aurasim_core::geom::Vec3;
use aurasim_core::scene::{make_shoebox, SceneGraph};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::CliError;

/// Parse `"x,y,z"` into a position.
pub fn parse_vec3(text: &str) -> Result<Vec3, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "expected three comma-separated numbers, got {text:?}"
        )));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("not a number: {part:?} in {text:?}")))?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

/// Parse `"lo,hi"` into an inclusive coefficient range.
pub fn parse_range(text: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!(
            "expected two comma-separated numbers, got {text:?}"
        )));
    }
    let lo = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("not a number: {:?}", parts[0])))?;
    let hi = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("not a number: {:?}", parts[1])))?;
    Ok((lo, hi))
}

/// Load a scene graph from its JSON serialization.
pub fn load_scene(path: &Path) -> Result<SceneGraph, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::file(path, e))
}

/// Build a uniform-material shoebox from `"Lx,Ly,Lz"` dimensions.
pub fn box_scene(dims: &str, refl: f64, scat: f64) -> Result<SceneGraph, CliError> {
    let d = parse_vec3(dims)?;
    make_shoebox(d.to_array(), [refl; 8], [scat; 8]).map_err(|e| CliError::Usage(e.to_string()))
}

/// Read a mono WAV as f64 samples, normalizing integer formats to [-1, 1].
pub fn load_mono_wav(path: &Path) -> Result<(Vec<f64>, u32), CliError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| CliError::file(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CliError::file(
            path,
            format!("expected a mono file, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::file(path, e))?,
        hound::SampleFormat::Int => {
            let full_scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / full_scale))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::file(path, e))?
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Write interleaved channels as a 32-bit float WAV.
pub fn write_wav(path: &Path, channels: &[Vec<f64>], sample_rate: u32) -> Result<(), CliError> {
    let len = channels.first().map_or(0, Vec::len);
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| CliError::file(path, e))?;
    for i in 0..len {
        for ch in channels {
            writer
                .write_sample(ch[i] as f32)
                .map_err(|e| CliError::file(path, e))?;
        }
    }
    writer.finalize().map_err(|e| CliError::file(path, e))
}

/// Full linear convolution via one zero-padded FFT round trip.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);

    let lift = |x: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (slot, &v) in buf.iter_mut().zip(x) {
            slot.re = v;
        }
        buf
    };
    let mut fa = lift(a);
    let mut fb = lift(b);
    forward.process(&mut fa);
    forward.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inverse.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec3_parsing() {
        let v = parse_vec3("1.5, -2, 3e-1").unwrap();
        assert_eq!(v.to_array(), [1.5, -2.0, 0.3]);
        assert!(parse_vec3("1,2").is_err());
        assert!(parse_vec3("a,b,c").is_err());
    }

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("0.3,0.95").unwrap(), (0.3, 0.95));
        assert!(parse_range("0.3").is_err());
    }

    #[test]
    fn convolution_matches_direct_form() {
        let a: Vec<f64> = (0..37).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let b: Vec<f64> = (0..23).map(|i| ((i * 5 + 1) % 9) as f64 / 4.0).collect();
        let direct = {
            let mut out = vec![0.0; a.len() + b.len() - 1];
            for (i, &x) in a.iter().enumerate() {
                for (j, &y) in b.iter().enumerate() {
                    out[i + j] += x * y;
                }
            }
            out
        };
        let fast = convolve(&a, &b);
        assert_eq!(fast.len(), direct.len());
        for (f, d) in fast.iter().zip(&direct) {
            assert!((f - d).abs() < 1e-9, "{f} vs {d}");
        }
    }

    #[test]
    fn convolution_with_unit_impulse_is_identity() {
        let a = vec![0.25, -0.5, 1.0, 0.125];
        let out = convolve(&a, &[1.0]);
        for (x, y) in out.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let chans = vec![vec![0.5, -0.25, 0.0], vec![0.1, 0.2, 0.3]];
        write_wav(&path, &chans, 24_000).unwrap();
        let mut reader = hound::WavReader::open(&path).unwrap();
        assert_eq!(reader.spec().channels, 2);
        assert_eq!(reader.spec().sample_rate, 24_000);
        let flat: Vec<f32> = reader.samples::<f32>().map(Result::unwrap).collect();
        assert_eq!(flat, vec![0.5, 0.1, -0.25, 0.2, 0.0, 0.3]);
    }

    #[test]
    fn mono_reader_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        write_wav(&path, &[vec![0.0; 4], vec![0.0; 4]], 8000).unwrap();
        assert!(matches!(load_mono_wav(&path), Err(CliError::File { .. })));
    }
}
