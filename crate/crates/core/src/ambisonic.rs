//! First-order Ambisonics A-format impulse responses: the 4-capsule
//! tetrahedral container, cardioid panning of discrete arrivals with
//! sub-sample delays, and the A↔B format transform.

use crate::geom::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Channel layout of an [`AmbisonicIR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    /// Raw tetrahedral capsule signals (channels follow `CAPSULES` order).
    AFormat,
    /// W/X/Y/Z spherical-harmonic channels.
    BFormat,
}

/// Canonical tetrahedral capsule orientations (unit vectors), in channel
/// order: (1,1,1), (1,−1,−1), (−1,1,−1), (−1,−1,1), each scaled by 1/√3.
pub const CAPSULES: [Vec3; 4] = {
    const S: f64 = 0.5773502691896258; // 1/√3
    [
        Vec3 { x: S, y: S, z: S },
        Vec3 { x: S, y: -S, z: -S },
        Vec3 { x: -S, y: S, z: -S },
        Vec3 { x: -S, y: -S, z: S },
    ]
};

/// Half-width of the windowed-sinc fractional-delay kernel (16 taps total).
pub const SINC_HALF_WIDTH: usize = 8;

#[derive(Debug, Error)]
pub enum AmbisonicError {
    #[error("delay {delay} samples outside impulse response of length {len}")]
    DelayOutOfRange { delay: f64, len: usize },
    #[error("expected {expected:?} input, got {got:?}")]
    WrongFormat { expected: Format, got: Format },
    #[error("A-format IR does not use the canonical tetrahedral capsule orientations")]
    NonCanonicalOrientations,
    #[error("channel lengths differ: {0:?}")]
    RaggedChannels([usize; 4]),
    #[error("non-finite sample in channel {channel} at {index}")]
    NonFinite { channel: usize, index: usize },
}

/// Four-channel sampled impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbisonicIR {
    pub channels: [Vec<f64>; 4],
    pub sample_rate: u32,
    pub format: Format,
    /// Capsule orientations; present for A-format, `None` for B-format.
    pub capsule_orientations: Option<[Vec3; 4]>,
}

impl AmbisonicIR {
    /// Zeroed A-format IR with the canonical capsule layout.
    pub fn new_a_format(len: usize, sample_rate: u32) -> Self {
        AmbisonicIR {
            channels: std::array::from_fn(|_| vec![0.0; len]),
            sample_rate,
            format: Format::AFormat,
            capsule_orientations: Some(CAPSULES),
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Omnidirectional proxy signal: per-sample mean of the 4 channels.
    pub fn omni_proxy(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for ch in &self.channels {
            for (o, &v) in out.iter_mut().zip(ch) {
                *o += v;
            }
        }
        for o in &mut out {
            *o *= 0.25;
        }
        out
    }

    /// Sum of squared samples over all channels.
    pub fn total_energy(&self) -> f64 {
        self.channels.iter().flat_map(|c| c.iter()).map(|v| v * v).sum()
    }

    /// Check the structural invariants: equal channel lengths, finite samples.
    pub fn validate(&self) -> Result<(), AmbisonicError> {
        let lens = std::array::from_fn(|i| self.channels[i].len());
        if lens.iter().any(|&l| l != lens[0]) {
            return Err(AmbisonicError::RaggedChannels(lens));
        }
        for (ci, ch) in self.channels.iter().enumerate() {
            if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
                return Err(AmbisonicError::NonFinite { channel: ci, index: i });
            }
        }
        Ok(())
    }

    /// Zero-pad (or keep) every channel so the IR has at least `len` samples.
    pub fn pad_to(&self, len: usize) -> AmbisonicIR {
        let mut out = self.clone();
        for ch in &mut out.channels {
            if ch.len() < len {
                ch.resize(len, 0.0);
            }
        }
        out
    }
}

/// Cardioid gain of a capsule pointed along `capsule` for a plane wave
/// arriving from direction `direction` (both unit vectors):
/// g = 0.5 · (1 + cos θ).
pub fn cardioid_gain(direction: Vec3, capsule: Vec3) -> f64 {
    0.5 * (1.0 + direction.dot(capsule))
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        let p = std::f64::consts::PI * t;
        p.sin() / p
    }
}

/// Add one discrete arrival to an A-format IR.
///
/// `direction` is the unit vector from the listener toward the arrival,
/// `amplitude` the broadband pressure gain, `delay_samples` the (possibly
/// fractional) arrival time. Each channel receives `amplitude · g_c` panned
/// through a 16-tap Hann-windowed sinc centered at the exact delay; taps
/// falling outside the buffer are clipped.
pub fn encode_contribution(
    ir: &mut AmbisonicIR,
    direction: Vec3,
    amplitude: f64,
    delay_samples: f64,
) -> Result<(), AmbisonicError> {
    let len = ir.len();
    if !(0.0..len as f64).contains(&delay_samples) {
        return Err(AmbisonicError::DelayOutOfRange { delay: delay_samples, len });
    }
    let gains: [f64; 4] = std::array::from_fn(|c| cardioid_gain(direction, CAPSULES[c]));
    let base = delay_samples.floor() as isize;
    let half = SINC_HALF_WIDTH as isize;
    for k in (base - half + 1)..=(base + half) {
        if k < 0 || k as usize >= len {
            continue;
        }
        let t = k as f64 - delay_samples;
        if t.abs() >= SINC_HALF_WIDTH as f64 {
            continue;
        }
        let w = 0.5 * (1.0 + (std::f64::consts::PI * t / SINC_HALF_WIDTH as f64).cos());
        let tap = sinc(t) * w * amplitude;
        for c in 0..4 {
            ir.channels[c][k as usize] += tap * gains[c];
        }
    }
    Ok(())
}

/// Convert canonical A-format to B-format (W/X/Y/Z).
///
/// For the canonical tetrahedron the transform matrix is 0.5 times a
/// symmetric sign matrix and is its own inverse.
pub fn a_to_b_format(ir: &AmbisonicIR) -> Result<AmbisonicIR, AmbisonicError> {
    if ir.format != Format::AFormat {
        return Err(AmbisonicError::WrongFormat { expected: Format::AFormat, got: ir.format });
    }
    match ir.capsule_orientations {
        Some(caps) if caps == CAPSULES => {}
        _ => return Err(AmbisonicError::NonCanonicalOrientations),
    }
    let mut out = AmbisonicIR {
        channels: std::array::from_fn(|_| vec![0.0; ir.len()]),
        sample_rate: ir.sample_rate,
        format: Format::BFormat,
        capsule_orientations: None,
    };
    let [a, b, c, d] = &ir.channels;
    for i in 0..ir.len() {
        out.channels[0][i] = 0.5 * (a[i] + b[i] + c[i] + d[i]); // W
        out.channels[1][i] = 0.5 * (a[i] + b[i] - c[i] - d[i]); // X
        out.channels[2][i] = 0.5 * (a[i] - b[i] + c[i] - d[i]); // Y
        out.channels[3][i] = 0.5 * (a[i] - b[i] - c[i] + d[i]); // Z
    }
    Ok(out)
}

/// Convert B-format back to canonical A-format (inverse of
/// [`a_to_b_format`]; the matrix is an involution).
pub fn b_to_a_format(ir: &AmbisonicIR) -> Result<AmbisonicIR, AmbisonicError> {
    if ir.format != Format::BFormat {
        return Err(AmbisonicError::WrongFormat { expected: Format::BFormat, got: ir.format });
    }
    let mut out = AmbisonicIR {
        channels: std::array::from_fn(|_| vec![0.0; ir.len()]),
        sample_rate: ir.sample_rate,
        format: Format::AFormat,
        capsule_orientations: Some(CAPSULES),
    };
    let [w, x, y, z] = &ir.channels;
    for i in 0..ir.len() {
        out.channels[0][i] = 0.5 * (w[i] + x[i] + y[i] + z[i]);
        out.channels[1][i] = 0.5 * (w[i] + x[i] - y[i] - z[i]);
        out.channels[2][i] = 0.5 * (w[i] - x[i] + y[i] - z[i]);
        out.channels[3][i] = 0.5 * (w[i] - x[i] - y[i] + z[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm_sq() > 1e-3 && v.norm_sq() < 1.0 {
                return v.normalized().unwrap();
            }
        }
    }

    #[test]
    fn capsules_are_unit_and_tetrahedral() {
        for c in CAPSULES {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
        // Pairwise angle of a regular tetrahedron: cos θ = −1/3.
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert!((CAPSULES[i].dot(CAPSULES[j]) + 1.0 / 3.0).abs() < 1e-12);
            }
        }
        // Orientations sum to zero, so cardioid gains always sum to 2.
        let s = CAPSULES.iter().fold(Vec3::ZERO, |a, &b| a + b);
        assert!(s.norm() < 1e-12);
    }

    #[test]
    fn cardioid_on_axis_and_null() {
        assert!((cardioid_gain(CAPSULES[1], CAPSULES[1]) - 1.0).abs() < 1e-12);
        assert!(cardioid_gain(-CAPSULES[1], CAPSULES[1]).abs() < 1e-12);
    }

    #[test]
    fn cardioid_gains_sum_to_two_for_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let d = random_unit(&mut rng);
            let sum: f64 = CAPSULES.iter().map(|&c| cardioid_gain(d, c)).sum();
            assert!((sum - 2.0).abs() < 1e-9, "sum {sum}");
        }
    }

    #[test]
    fn integer_delay_encodes_a_single_tap() {
        let mut ir = AmbisonicIR::new_a_format(64, 48_000);
        let dir = Vec3::new(1.0, 0.0, 0.0);
        encode_contribution(&mut ir, dir, 0.5, 10.0).unwrap();
        for c in 0..4 {
            let g = cardioid_gain(dir, CAPSULES[c]);
            assert!((ir.channels[c][10] - 0.5 * g).abs() < 1e-12);
            // Everything else is (numerically) zero.
            for (i, &v) in ir.channels[c].iter().enumerate() {
                if i != 10 {
                    assert!(v.abs() < 1e-12, "channel {c} sample {i} = {v}");
                }
            }
        }
    }

    #[test]
    fn fractional_delay_preserves_pulse_sum() {
        // The DC gain of the windowed-sinc kernel stays within 0.1% of 1
        // regardless of the fractional offset.
        for frac in [0.0, 0.13, 0.5, 0.77, 0.997] {
            let mut ir = AmbisonicIR::new_a_format(256, 48_000);
            encode_contribution(&mut ir, Vec3::new(0.0, 0.0, 1.0), 1.0, 100.0 + frac).unwrap();
            let sum: f64 = ir.omni_proxy().iter().sum();
            // Channel-mean of an arrival is amplitude * (Σ g_c)/4 = 0.5.
            assert!((sum - 0.5).abs() < 5e-4, "frac {frac}: sum {sum}");
        }
    }

    #[test]
    fn delay_out_of_range_is_an_error() {
        let mut ir = AmbisonicIR::new_a_format(32, 48_000);
        let d = Vec3::new(1.0, 0.0, 0.0);
        assert!(matches!(
            encode_contribution(&mut ir, d, 1.0, 32.0),
            Err(AmbisonicError::DelayOutOfRange { .. })
        ));
        assert!(matches!(
            encode_contribution(&mut ir, d, 1.0, -0.5),
            Err(AmbisonicError::DelayOutOfRange { .. })
        ));
        assert!(encode_contribution(&mut ir, d, 1.0, 31.5).is_ok());
    }

    #[test]
    fn equal_capsule_impulses_map_to_w_only() {
        let mut ir = AmbisonicIR::new_a_format(8, 48_000);
        for c in &mut ir.channels {
            c[3] = 1.0;
        }
        let b = a_to_b_format(&ir).unwrap();
        assert!((b.channels[0][3] - 2.0).abs() < 1e-12);
        for ch in 1..4 {
            assert!(b.channels[ch][3].abs() < 1e-12);
        }
    }

    #[test]
    fn a_to_b_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ir = AmbisonicIR::new_a_format(100, 48_000);
        for c in &mut ir.channels {
            for v in c.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let back = b_to_a_format(&a_to_b_format(&ir).unwrap()).unwrap();
        for c in 0..4 {
            for i in 0..100 {
                assert!((back.channels[c][i] - ir.channels[c][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn on_axis_plus_x_arrival_maps_to_positive_x() {
        let mut ir = AmbisonicIR::new_a_format(16, 48_000);
        encode_contribution(&mut ir, Vec3::new(1.0, 0.0, 0.0), 1.0, 4.0).unwrap();
        let b = a_to_b_format(&ir).unwrap();
        assert!(b.channels[1][4] > 0.1, "X positive");
        assert!(b.channels[2][4].abs() < 1e-6, "Y zero");
        assert!(b.channels[3][4].abs() < 1e-6, "Z zero");
    }

    #[test]
    fn b_format_input_rejected_by_a_to_b() {
        let ir = AmbisonicIR {
            channels: std::array::from_fn(|_| vec![0.0; 4]),
            sample_rate: 48_000,
            format: Format::BFormat,
            capsule_orientations: None,
        };
        assert!(matches!(a_to_b_format(&ir), Err(AmbisonicError::WrongFormat { .. })));
    }

    #[test]
    fn validate_catches_ragged_and_non_finite() {
        let mut ir = AmbisonicIR::new_a_format(8, 48_000);
        ir.channels[2][5] = f64::NAN;
        assert!(matches!(ir.validate(), Err(AmbisonicError::NonFinite { channel: 2, index: 5 })));
        let mut ir = AmbisonicIR::new_a_format(8, 48_000);
        ir.channels[1].push(0.0);
        assert!(matches!(ir.validate(), Err(AmbisonicError::RaggedChannels(_))));
    }
}
