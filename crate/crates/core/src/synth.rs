//! Perceptual-parameter reverb synthesis: rebuild a 4-channel impulse
//! response from a compact description — decay time, early/late energies,
//! normalized early waveform, and coarse subband envelopes — plus the
//! deterministic low-order-reflection part, and the inverse extraction used
//! for round-trip baselines.
//!
//! The synthesized response is `g_er·h_er_norm + h_lor + g_lr·h_lr_unit`
//! where the unit late reverb is a sum over octave bands of interpolated
//! envelopes times band-limited noise, jointly energy-normalized across all
//! channels. The low-order part passes through unmodified.

use crate::ambisonic::AmbisonicIR;
use crate::bands::{filtfilt, octave_sections, BandError, N_BANDS};
use crate::metrics::{t60_schroeder_signal, MetricsError};
use crate::rngutil::rng_from;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of control points per subband envelope.
pub const ENVELOPE_POINTS: usize = 32;

/// Default early/late split: this long after the direct arrival, the
/// residual is treated as late reverberation.
pub const ER_BOUNDARY_MS: f64 = 80.0;

/// Shortest late-reverb span; degenerate decay times clamp to this.
pub const MIN_LATE_SECONDS: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Band(#[from] BandError),
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("sample-rate mismatch: {0} vs {1}")]
    RateMismatch(u32, u32),
    #[error("low-order part ({h_lor} samples) longer than the full response ({h_s})")]
    Alignment { h_s: usize, h_lor: usize },
    #[error("noise length must be positive")]
    EmptyNoise,
    #[error("envelope needs at least 2 control points, got {0}")]
    ShortEnvelope(usize),
    #[error("interpolation target must be at least 1 sample")]
    EmptyTarget,
}

/// Compact perceptual description of a 4-channel room response.
#[derive(Debug, Clone)]
pub struct PerceptualParams {
    /// Reverberation time in seconds; also sets the late-reverb span.
    pub t60: f64,
    /// Early-reflection energy gain (amplitude applied to `h_er_norm`).
    pub g_er: f64,
    /// Late-reverberation energy gain; the synthesized late part has total
    /// energy `g_lr²`.
    pub g_lr: f64,
    /// Unit-energy (or all-zero) early-reflection waveform. Its length also
    /// encodes the early/late boundary: the late part starts where it ends.
    pub h_er_norm: AmbisonicIR,
    /// Per-octave-band late envelopes, `N_BANDS` rows of equal length ≥ 2.
    pub e_lr: [Vec<f64>; N_BANDS],
}

/// JSON face of [`PerceptualParams`]: scalars and the envelope matrix; the
/// early waveform travels separately as audio.
#[derive(Debug, Serialize, Deserialize)]
pub struct PerceptualParamsHeader {
    pub t60: f64,
    pub g_er: f64,
    pub g_lr: f64,
    pub sample_rate: u32,
    pub er_length: usize,
    pub e_lr: Vec<Vec<f64>>,
}

impl PerceptualParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.t60 > 0.0) {
            return Err(SynthError::BadParams(format!("t60 must be positive, got {}", self.t60)));
        }
        if self.g_er < 0.0 || self.g_lr < 0.0 {
            return Err(SynthError::BadParams("gains must be non-negative".into()));
        }
        let e = self.h_er_norm.total_energy();
        if e != 0.0 && (e - 1.0).abs() > 1e-6 {
            return Err(SynthError::BadParams(format!(
                "h_er_norm energy {e} is neither 0 nor 1"
            )));
        }
        let pts = self.e_lr[0].len();
        if pts < 2 {
            return Err(SynthError::ShortEnvelope(pts));
        }
        for row in &self.e_lr {
            if row.len() != pts {
                return Err(SynthError::BadParams("ragged envelope matrix".into()));
            }
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(SynthError::BadParams("envelope entries must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> PerceptualParamsHeader {
        PerceptualParamsHeader {
            t60: self.t60,
            g_er: self.g_er,
            g_lr: self.g_lr,
            sample_rate: self.h_er_norm.sample_rate,
            er_length: self.h_er_norm.len(),
            e_lr: self.e_lr.iter().cloned().collect(),
        }
    }

    pub fn from_header(
        header: PerceptualParamsHeader,
        h_er_norm: AmbisonicIR,
    ) -> Result<PerceptualParams, SynthError> {
        if header.e_lr.len() != N_BANDS {
            return Err(SynthError::BadParams(format!(
                "envelope matrix has {} rows, expected {N_BANDS}",
                header.e_lr.len()
            )));
        }
        if h_er_norm.sample_rate != header.sample_rate || h_er_norm.len() != header.er_length {
            return Err(SynthError::BadParams(
                "early waveform does not match the header's rate/length".into(),
            ));
        }
        let mut rows = header.e_lr.into_iter();
        let e_lr = std::array::from_fn(|_| rows.next().unwrap());
        let params = PerceptualParams {
            t60: header.t60,
            g_er: header.g_er,
            g_lr: header.g_lr,
            h_er_norm,
            e_lr,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Unit-energy zero-mean noise band-passed to one octave band with a
/// zero-phase (forward-backward) 4th-order filter pair. Deterministic in
/// `(band_index, length, seed)`; the band index is folded into the seed so
/// different bands draw independent noise from one seed.
pub fn bandlimited_noise(
    band_index: usize,
    length: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    if length == 0 {
        return Err(SynthError::EmptyNoise);
    }
    let sections = octave_sections(band_index, sample_rate as f64)?;
    let mut rng = rng_from(seed, &[0x6e6f_6973, band_index as u64]);
    let white: Vec<f64> = (0..length).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut shaped = filtfilt(&white, &sections);
    let energy: f64 = shaped.iter().map(|v| v * v).sum();
    if energy > 0.0 {
        let s = 1.0 / energy.sqrt();
        for v in &mut shaped {
            *v *= s;
        }
    }
    Ok(shaped)
}

/// Resample `envelope` control points onto `target_length` uniform samples
/// by linear interpolation; endpoints are preserved exactly.
pub fn interp_envelope(envelope: &[f64], target_length: usize) -> Result<Vec<f64>, SynthError> {
    let e = envelope.len();
    if e < 2 {
        return Err(SynthError::ShortEnvelope(e));
    }
    if target_length == 0 {
        return Err(SynthError::EmptyTarget);
    }
    if target_length == 1 {
        return Ok(vec![envelope[0]]);
    }
    let mut out = Vec::with_capacity(target_length);
    let scale = (e - 1) as f64 / (target_length - 1) as f64;
    for i in 0..target_length {
        if i == target_length - 1 {
            out.push(envelope[e - 1]);
            continue;
        }
        let x = i as f64 * scale;
        let j = (x.floor() as usize).min(e - 2);
        let frac = x - j as f64;
        out.push(envelope[j] + frac * (envelope[j + 1] - envelope[j]));
    }
    Ok(out)
}

/// Late-reverb sample span for a given decay time.
fn late_span(t60: f64, sample_rate: u32) -> usize {
    let fs = sample_rate as f64;
    ((t60 * fs).ceil() as usize).max((MIN_LATE_SECONDS * fs).ceil() as usize)
}

/// Synthesize a 4-channel response from perceptual parameters, the
/// low-order part, and a noise seed.
///
/// Output length is `max(⌈t60·fs⌉, len(h_lor), len(h_er_norm))`. The late
/// part starts at `len(h_er_norm)` (the early/late boundary), runs for the
/// decay span, is truncated to the output length, and is then energy-
/// normalized jointly across channels so its total energy is exactly
/// `g_lr²`. Each channel draws independent noise (`seed ⊕ channel`). Terms
/// with zero gain are skipped outright, so the degenerate cases are
/// bit-exact.
pub fn synthesize(
    params: &PerceptualParams,
    h_lor: &AmbisonicIR,
    seed: u64,
) -> Result<AmbisonicIR, SynthError> {
    params.validate()?;
    let fs = h_lor.sample_rate;
    if params.h_er_norm.len() > 0 && params.h_er_norm.sample_rate != fs {
        return Err(SynthError::RateMismatch(params.h_er_norm.sample_rate, fs));
    }
    let boundary = params.h_er_norm.len();
    let out_len = late_span(params.t60, fs)
        .max(h_lor.len())
        .max(boundary);
    let mut out = AmbisonicIR::new_a_format(out_len, fs);

    if params.g_er > 0.0 {
        for c in 0..4 {
            for (i, &v) in params.h_er_norm.channels[c].iter().enumerate() {
                out.channels[c][i] += params.g_er * v;
            }
        }
    }
    for c in 0..4 {
        for (i, &v) in h_lor.channels[c].iter().enumerate() {
            out.channels[c][i] += v;
        }
    }
    if params.g_lr > 0.0 {
        let span = late_span(params.t60, fs);
        let mut envelopes = Vec::with_capacity(N_BANDS);
        for row in &params.e_lr {
            envelopes.push(interp_envelope(row, span)?);
        }
        // Build per channel, truncated at the output end, into a separate
        // buffer so the joint normalization sees exactly what is kept.
        let usable = out_len - boundary.min(out_len);
        let mut late: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; usable.min(span)]);
        for (c, late_c) in late.iter_mut().enumerate() {
            for (f, env) in envelopes.iter().enumerate() {
                let noise = bandlimited_noise(f, span, fs, seed ^ c as u64)?;
                for (t, l) in late_c.iter_mut().enumerate() {
                    *l += env[t] * noise[t];
                }
            }
        }
        let energy: f64 = late.iter().flat_map(|ch| ch.iter()).map(|v| v * v).sum();
        if energy > 0.0 {
            let s = params.g_lr / energy.sqrt();
            for (c, late_c) in late.iter().enumerate() {
                for (t, &v) in late_c.iter().enumerate() {
                    out.channels[c][boundary + t] += s * v;
                }
            }
        }
    }
    Ok(out)
}

/// Robust decay-time estimate for extraction: the strict estimator first,
/// then a relaxed fit over whatever decay range exists, then the signal
/// duration as a floor.
fn t60_for_extraction(proxy: &[f64], sample_rate: u32) -> f64 {
    if let Ok(t) = t60_schroeder_signal(proxy, sample_rate) {
        return t;
    }
    if let Some(t) = relaxed_decay_fit(proxy, sample_rate) {
        return t;
    }
    (proxy.len() as f64 / sample_rate as f64).max(MIN_LATE_SECONDS)
}

/// Least-squares decay slope over the −5 dB point to 90% of the energetic
/// support, for signals whose decay never reaches −35 dB.
fn relaxed_decay_fit(signal: &[f64], sample_rate: u32) -> Option<f64> {
    let mut edc = vec![0.0; signal.len()];
    let mut acc = 0.0;
    for i in (0..signal.len()).rev() {
        acc += signal[i] * signal[i];
        edc[i] = acc;
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let last_pos = edc.iter().rposition(|&e| e > 0.0)?;
    let db: Vec<f64> = edc[..=last_pos].iter().map(|&e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0)?;
    let end = last_pos * 9 / 10;
    if end < start + 8 {
        return None;
    }
    let n = (end - start + 1) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in db[start..=end].iter().enumerate() {
        let x = (start + i) as f64;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if slope < 0.0 {
        Some(-60.0 / (slope * sample_rate as f64))
    } else {
        None
    }
}

/// Invert [`synthesize`]: split the residual `h_s − h_lor` at the early/late
/// boundary (`er_boundary_ms` after the direct arrival) and measure decay
/// time, early/late energies, the normalized early waveform, and subband
/// envelopes.
///
/// The envelope windows span the decay range `⌈t60·fs⌉` (zero-padded if the
/// recording is shorter), matching the synthesis span so extraction and
/// synthesis use the same time axis. Envelopes are scaled to the canonical
/// norm `Σ env² = ENVELOPE_POINTS`; the synthesis-side joint normalization
/// makes any fixed scale equivalent.
pub fn extract_params(
    h_s: &AmbisonicIR,
    h_lor: &AmbisonicIR,
    er_boundary_ms: f64,
) -> Result<PerceptualParams, SynthError> {
    if h_s.sample_rate != h_lor.sample_rate {
        return Err(SynthError::RateMismatch(h_s.sample_rate, h_lor.sample_rate));
    }
    if h_lor.len() > h_s.len() {
        return Err(SynthError::Alignment { h_s: h_s.len(), h_lor: h_lor.len() });
    }
    let fs = h_s.sample_rate;
    let n = h_s.len();
    let lor_padded = h_lor.pad_to(n);
    let residual: [Vec<f64>; 4] = std::array::from_fn(|c| {
        h_s.channels[c]
            .iter()
            .zip(&lor_padded.channels[c])
            .map(|(a, b)| a - b)
            .collect()
    });

    // Early/late boundary: er_boundary_ms after the direct arrival.
    let lor_proxy = h_lor.omni_proxy();
    let peak = lor_proxy
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let boundary = (peak + (er_boundary_ms * 1e-3 * fs as f64).round() as usize).min(n);

    let mut h_er_norm = AmbisonicIR::new_a_format(boundary, fs);
    let mut er_energy = 0.0;
    for c in 0..4 {
        for i in 0..boundary {
            er_energy += residual[c][i] * residual[c][i];
        }
    }
    let g_er = er_energy.sqrt();
    if g_er >= 1e-12 {
        for c in 0..4 {
            for i in 0..boundary {
                h_er_norm.channels[c][i] = residual[c][i] / g_er;
            }
        }
    }

    // Late part and its total energy.
    let late: [&[f64]; 4] = std::array::from_fn(|c| &residual[c][boundary..]);
    let g_lr = late
        .iter()
        .flat_map(|ch| ch.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();

    let t60 = t60_for_extraction(&h_s.omni_proxy(), fs);

    // Subband RMS envelopes over ENVELOPE_POINTS windows spanning the decay
    // range; windows beyond the recording read zeros.
    let span = late_span(t60, fs);
    let mut e_lr: [Vec<f64>; N_BANDS] = std::array::from_fn(|_| vec![0.0; ENVELOPE_POINTS]);
    if g_lr >= 1e-12 {
        for (f, row) in e_lr.iter_mut().enumerate() {
            let sections = octave_sections(f, fs as f64)?;
            let banded: Vec<Vec<f64>> = late
                .iter()
                .map(|ch| if ch.is_empty() { Vec::new() } else { filtfilt(ch, &sections) })
                .collect();
            for (w, point) in row.iter_mut().enumerate() {
                let start = w * span / ENVELOPE_POINTS;
                let end = (w + 1) * span / ENVELOPE_POINTS;
                let mut acc = 0.0;
                for ch in &banded {
                    for i in start..end.min(ch.len()) {
                        acc += ch[i] * ch[i];
                    }
                }
                *point = (acc / (4 * (end - start)) as f64).sqrt();
            }
        }
        let sq: f64 = e_lr.iter().flat_map(|r| r.iter()).map(|v| v * v).sum();
        if sq > 0.0 {
            let k = (ENVELOPE_POINTS as f64 / sq).sqrt();
            for row in &mut e_lr {
                for v in row {
                    *v *= k;
                }
            }
        }
    }

    let params = PerceptualParams { t60, g_er, g_lr, h_er_norm, e_lr };
    params.validate()?;
    Ok(params)
}

/// Strict decay-time estimate re-exported for callers that want the error.
pub fn t60_strict(ir: &AmbisonicIR) -> Result<f64, MetricsError> {
    crate::metrics::t60_schroeder(ir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::band_energies;
    use crate::DEFAULT_SAMPLE_RATE;

    const FS: u32 = DEFAULT_SAMPLE_RATE;

    fn flat_envelopes(value: f64) -> [Vec<f64>; N_BANDS] {
        std::array::from_fn(|_| vec![value; ENVELOPE_POINTS])
    }

    fn unit_burst_er(len: usize, seed: u64) -> AmbisonicIR {
        let mut ir = AmbisonicIR::new_a_format(len, FS);
        let mut rng = rng_from(seed, &[11]);
        for c in 0..4 {
            for v in &mut ir.channels[c] {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let e = ir.total_energy().sqrt();
        for c in 0..4 {
            for v in &mut ir.channels[c] {
                *v /= e;
            }
        }
        ir
    }

    #[test]
    fn noise_is_deterministic_unit_energy_and_in_band() {
        let a = bandlimited_noise(3, 48_000, FS, 77).unwrap();
        let b = bandlimited_noise(3, 48_000, FS, 77).unwrap();
        assert_eq!(a, b, "same seed must be bit-identical");
        let c = bandlimited_noise(3, 48_000, FS, 78).unwrap();
        assert_ne!(a, c);
        let d = bandlimited_noise(4, 48_000, FS, 77).unwrap();
        assert_ne!(a, d, "band index must decorrelate draws");

        let energy: f64 = a.iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-9);

        // ≥ 90% of the energy inside the nominal octave around 500 Hz.
        let be = band_energies(&a, FS as f64);
        assert!(be[3] / energy >= 0.9, "in-band fraction {}", be[3]);

        assert!(matches!(
            bandlimited_noise(7, 1024, 8000, 1),
            Err(SynthError::Band(BandError::EdgeAboveNyquist { .. }))
        ));
        assert!(matches!(bandlimited_noise(0, 0, FS, 1), Err(SynthError::EmptyNoise)));
    }

    #[test]
    fn envelope_interpolation_matches_hand_values() {
        assert_eq!(interp_envelope(&[1.0, 1.0], 100).unwrap(), vec![1.0; 100]);
        let ramp = interp_envelope(&[1.0, 0.0], 5).unwrap();
        for (got, want) in ramp.iter().zip([1.0, 0.75, 0.5, 0.25, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let idty = vec![0.3, 0.1, 0.9, 0.5];
        assert_eq!(interp_envelope(&idty, 4).unwrap(), idty);
        assert!(matches!(interp_envelope(&[1.0], 5), Err(SynthError::ShortEnvelope(1))));
        assert!(matches!(interp_envelope(&[1.0, 2.0], 0), Err(SynthError::EmptyTarget)));
        assert_eq!(interp_envelope(&[4.0, 2.0], 1).unwrap(), vec![4.0]);
    }

    fn impulse_lor(len: usize, at: usize, amp: f64) -> AmbisonicIR {
        let mut ir = AmbisonicIR::new_a_format(len, FS);
        for c in 0..4 {
            ir.channels[c][at] = amp;
        }
        ir
    }

    #[test]
    fn zero_gains_pass_the_lor_through_zero_padded() {
        let h_lor = impulse_lor(300, 100, 0.7);
        let params = PerceptualParams {
            t60: 0.05,
            g_er: 0.0,
            g_lr: 0.0,
            h_er_norm: AmbisonicIR::new_a_format(0, FS),
            e_lr: flat_envelopes(1.0),
        };
        let out = synthesize(&params, &h_lor, 5).unwrap();
        assert_eq!(out.len(), late_span(0.05, FS));
        for c in 0..4 {
            for i in 0..out.len() {
                let expect = if i < 300 { h_lor.channels[c][i] } else { 0.0 };
                assert_eq!(out.channels[c][i], expect, "bit-exact pass-through");
            }
        }
    }

    #[test]
    fn late_energy_is_exactly_the_squared_gain() {
        let params = PerceptualParams {
            t60: 0.2,
            g_er: 0.0,
            g_lr: 2.0,
            h_er_norm: AmbisonicIR::new_a_format(0, FS),
            e_lr: flat_envelopes(0.37),
        };
        let silent_lor = AmbisonicIR::new_a_format(64, FS);
        let out = synthesize(&params, &silent_lor, 123).unwrap();
        assert!((out.total_energy() - 4.0).abs() < 1e-6);

        // Arbitrary envelope shapes keep the invariant.
        let mut shaped = params.clone();
        for (f, row) in shaped.e_lr.iter_mut().enumerate() {
            for (w, v) in row.iter_mut().enumerate() {
                *v = ((w + 1) as f64 * 0.11 + f as f64).sin().abs();
            }
        }
        let out2 = synthesize(&shaped, &silent_lor, 124).unwrap();
        assert!((out2.total_energy() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn synthesis_is_deterministic_and_linear_in_the_early_gain() {
        let h_lor = impulse_lor(500, 120, 0.5);
        let er = unit_burst_er(400, 9);
        let mk = |g_er: f64| PerceptualParams {
            t60: 0.1,
            g_er,
            g_lr: 0.8,
            h_er_norm: er.clone(),
            e_lr: flat_envelopes(1.0),
        };
        let a1 = synthesize(&mk(0.6), &h_lor, 42).unwrap();
        let a2 = synthesize(&mk(0.6), &h_lor, 42).unwrap();
        for c in 0..4 {
            assert_eq!(a1.channels[c], a2.channels[c], "determinism");
        }
        let b = synthesize(&mk(1.2), &h_lor, 42).unwrap();
        // b − a = 0.6·h_er_norm zero-padded (same seed ⇒ identical noise).
        for c in 0..4 {
            for i in 0..a1.len() {
                let er_v = if i < er.len() { er.channels[c][i] } else { 0.0 };
                let diff = b.channels[c][i] - a1.channels[c][i];
                assert!(
                    (diff - 0.6 * er_v).abs() < 1e-12,
                    "channel {c} sample {i}: {diff} vs {}",
                    0.6 * er_v
                );
            }
        }
    }

    #[test]
    fn extraction_of_identical_inputs_gives_zero_gains() {
        let h_lor = impulse_lor(2000, 50, 1.0);
        let params = extract_params(&h_lor, &h_lor, ER_BOUNDARY_MS).unwrap();
        assert_eq!(params.g_er, 0.0);
        assert_eq!(params.g_lr, 0.0);
        assert_eq!(params.h_er_norm.total_energy(), 0.0);
    }

    #[test]
    fn extraction_scales_homogeneously_with_the_residual() {
        // Against an empty low-order part the residual IS the signal, so
        // scaling the signal scales the residual exactly and the decay
        // estimate (amplitude-invariant) stays fixed.
        let fs = FS as f64;
        let mut rng = rng_from(60, &[4]);
        let n = (0.4 * fs) as usize;
        let mut h_s = AmbisonicIR::new_a_format(n, FS);
        for c in 0..4 {
            for (i, v) in h_s.channels[c].iter_mut().enumerate() {
                let t = i as f64 / fs;
                *v = rng.sample::<f64, _>(StandardNormal) * (-t * 3.0 * 10f64.ln() / 0.25).exp();
            }
        }
        let empty_lor = AmbisonicIR::new_a_format(0, FS);
        let p1 = extract_params(&h_s, &empty_lor, ER_BOUNDARY_MS).unwrap();

        let mut h_s3 = h_s.clone();
        for c in 0..4 {
            for v in &mut h_s3.channels[c] {
                *v *= 3.0;
            }
        }
        let p3 = extract_params(&h_s3, &empty_lor, ER_BOUNDARY_MS).unwrap();
        assert!((p3.g_er / p1.g_er - 3.0).abs() < 1e-9);
        assert!((p3.g_lr / p1.g_lr - 3.0).abs() < 1e-9);
        for c in 0..4 {
            for i in 0..p1.h_er_norm.len() {
                assert!(
                    (p1.h_er_norm.channels[c][i] - p3.h_er_norm.channels[c][i]).abs() < 1e-6
                );
            }
        }
        for f in 0..N_BANDS {
            for w in 0..ENVELOPE_POINTS {
                assert!((p1.e_lr[f][w] - p3.e_lr[f][w]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn round_trip_recovers_gains_and_decay_time() {
        // Exponential-decay fixture: envelope points fall 60 dB across the
        // decay span, so the synthesized response has a known T60.
        let t60 = 0.3;
        let peak_at = 100;
        let er_len = peak_at + (ER_BOUNDARY_MS * 1e-3 * FS as f64).round() as usize;
        let h_lor = impulse_lor(er_len, peak_at, 1.0);
        let mut e_lr = flat_envelopes(0.0);
        for row in &mut e_lr {
            for (w, v) in row.iter_mut().enumerate() {
                *v = 10f64.powf(-3.0 * w as f64 / (ENVELOPE_POINTS - 1) as f64);
            }
        }
        // The early waveform must itself decay at the fixture's rate — a
        // flat burst would put a plateau into the decay curve and bias the
        // T60 fit, which no physical early part does.
        let mut er = unit_burst_er(er_len, 33);
        for c in 0..4 {
            for (i, v) in er.channels[c].iter_mut().enumerate() {
                let t = i as f64 / FS as f64;
                *v *= (-t * 3.0 * 10f64.ln() / t60).exp();
            }
        }
        let e = er.total_energy().sqrt();
        for c in 0..4 {
            for v in &mut er.channels[c] {
                *v /= e;
            }
        }
        // Pick g_lr so the late part's initial power continues the early
        // part's end power — a continuous decay, like a real room. A hotter
        // late part would put a shelf into the decay curve.
        let g_er = 0.5f64;
        let k2 = 2.0 * 3.0 * 10f64.ln() / t60;
        let b_s = er_len as f64 / FS as f64;
        let tau_early = (1.0 - (-k2 * b_s).exp()) / k2;
        let tau_late = (1.0 - (-k2 * t60).exp()) / k2;
        let g_lr = (g_er * g_er * (-k2 * b_s).exp() * tau_late / tau_early).sqrt();
        let truth = PerceptualParams { t60, g_er, g_lr, h_er_norm: er, e_lr };
        let h_s = synthesize(&truth, &h_lor, 99).unwrap();
        let got = extract_params(&h_s, &h_lor, ER_BOUNDARY_MS).unwrap();

        assert!(
            (got.g_er / truth.g_er - 1.0).abs() < 0.02,
            "g_er {} vs {}",
            got.g_er,
            truth.g_er
        );
        assert!(
            (got.g_lr / truth.g_lr - 1.0).abs() < 0.02,
            "g_lr {} vs {}",
            got.g_lr,
            truth.g_lr
        );
        assert!((got.t60 / truth.t60 - 1.0).abs() < 0.10, "t60 {} vs {}", got.t60, truth.t60);
    }

    #[test]
    fn extraction_rejects_misaligned_inputs() {
        let short = impulse_lor(100, 10, 1.0);
        let long = impulse_lor(200, 10, 1.0);
        assert!(matches!(
            extract_params(&short, &long, ER_BOUNDARY_MS),
            Err(SynthError::Alignment { h_s: 100, h_lor: 200 })
        ));
        let mut other_rate = impulse_lor(100, 10, 1.0);
        other_rate.sample_rate = 44_100;
        assert!(matches!(
            extract_params(&long, &other_rate, ER_BOUNDARY_MS),
            Err(SynthError::RateMismatch(_, _))
        ));
    }

    #[test]
    fn header_round_trip_preserves_parameters() {
        let er = unit_burst_er(256, 3);
        let params = PerceptualParams {
            t60: 0.25,
            g_er: 0.4,
            g_lr: 1.1,
            h_er_norm: er.clone(),
            e_lr: flat_envelopes(0.5),
        };
        let header = params.header();
        let json = serde_json::to_string(&header).unwrap();
        let back: PerceptualParamsHeader = serde_json::from_str(&json).unwrap();
        let rebuilt = PerceptualParams::from_header(back, er).unwrap();
        assert_eq!(rebuilt.t60, params.t60);
        assert_eq!(rebuilt.g_er, params.g_er);
        assert_eq!(rebuilt.g_lr, params.g_lr);
        assert_eq!(rebuilt.e_lr, params.e_lr);
    }
}
