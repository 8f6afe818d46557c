//! Objective metrics and training losses for 4-channel impulse responses:
//! waveform MAE/MSE, Schroeder T60, total energy, direct-to-reverberant
//! ratio, dual-resolution log-mel distances, and the cyclic inter-channel
//! waveform loss, plus the aggregate weighted loss.

use crate::ambisonic::AmbisonicIR;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("signal length {len} shorter than the analysis window {n_fft}")]
    TooShort { len: usize, n_fft: usize },
    #[error("energy decay never reaches -35 dB; zero-pad the tail and retry")]
    InsufficientDecay,
    #[error("signal has no energy")]
    ZeroSignal,
    #[error("bad configuration: {0}")]
    BadConfig(String),
}

/// Mel-spectrogram analysis configuration.
///
/// Two stock resolutions are provided: [`MelConfig::spectral`] favors
/// frequency detail, [`MelConfig::temporal`] favors time detail; the two
/// differ by 4× in each axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

/// Weights of the aggregate loss: `total = alpha·(mel + mel_t) + beta·mse
/// + gamma·ic`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(MetricsError::BadConfig("loss weights must be non-negative".into()));
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(MetricsError::BadConfig("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

impl MelConfig {
    pub fn new(
        n_fft: usize,
        hop: usize,
        n_mels: usize,
        sample_rate: u32,
        log_floor: f64,
    ) -> Result<MelConfig, MetricsError> {
        let cfg = MelConfig { n_fft, hop, n_mels, sample_rate, log_floor };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Frequency-detailed resolution: 1024-point FFT, hop 256, 80 mels.
    pub fn spectral(sample_rate: u32) -> MelConfig {
        MelConfig::new(1024, 256, 80, sample_rate, 1e-5).unwrap()
    }

    /// Time-detailed resolution: 256-point FFT, hop 64, 32 mels.
    pub fn temporal(sample_rate: u32) -> MelConfig {
        MelConfig::new(256, 64, 32, sample_rate, 1e-5).unwrap()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.n_fft == 0 || self.hop == 0 || self.hop > self.n_fft {
            return Err(MetricsError::BadConfig(format!(
                "need 0 < hop <= n_fft, got hop {} n_fft {}",
                self.hop, self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(MetricsError::BadConfig("n_mels must be >= 1".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(MetricsError::BadConfig("log_floor must be positive".into()));
        }
        for (m, row) in self.filterbank().iter().enumerate() {
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(MetricsError::BadConfig(format!(
                    "mel filter row {m} sums to {s}; increase n_fft or decrease n_mels"
                )));
            }
        }
        Ok(())
    }

    /// Triangular mel filterbank, `n_mels × (n_fft/2 + 1)`.
    ///
    /// Each weight is the *average* of the triangle over the FFT bin's
    /// frequency interval rather than a point sample at the bin center;
    /// point sampling leaves narrow low-frequency triangles without any
    /// support at coarse FFT resolutions, violating the positive-row-sum
    /// invariant.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        let n_bins = self.n_fft / 2 + 1;
        let fs = self.sample_rate as f64;
        let bin_width = fs / self.n_fft as f64;
        let mel_max = hz_to_mel(fs / 2.0);
        // n_mels + 2 equally spaced mel knots from 0 to Nyquist.
        let knots: Vec<f64> =
            (0..self.n_mels + 2).map(|i| mel_to_hz(mel_max * i as f64 / (self.n_mels + 1) as f64)).collect();
        let mut bank = vec![vec![0.0; n_bins]; self.n_mels];
        for (m, row) in bank.iter_mut().enumerate() {
            let (lo, c, hi) = (knots[m], knots[m + 1], knots[m + 2]);
            for (k, w) in row.iter_mut().enumerate() {
                let a = (k as f64 - 0.5) * bin_width;
                let b = (k as f64 + 0.5) * bin_width;
                *w = triangle_average(lo, c, hi, a.max(0.0), b.min(fs / 2.0), bin_width);
            }
        }
        bank
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Exact integral of the unit triangle with knots (lo, c, hi) over [a, b],
/// divided by `width`.
fn triangle_average(lo: f64, c: f64, hi: f64, a: f64, b: f64, width: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let tri = |f: f64| -> f64 {
        if f <= lo || f >= hi {
            0.0
        } else if f <= c {
            (f - lo) / (c - lo).max(f64::MIN_POSITIVE)
        } else {
            (hi - f) / (hi - c).max(f64::MIN_POSITIVE)
        }
    };
    // Piecewise linear: integrate trapezoidally between consecutive knots.
    let mut pts = vec![a, b];
    for k in [lo, c, hi] {
        if k > a && k < b {
            pts.push(k);
        }
    }
    pts.sort_by(f64::total_cmp);
    let mut integral = 0.0;
    for w in pts.windows(2) {
        integral += 0.5 * (tri(w[0]) + tri(w[1])) * (w[1] - w[0]);
    }
    integral / width
}

fn check_same_shape(pred: &AmbisonicIR, target: &AmbisonicIR) -> Result<(), MetricsError> {
    if pred.len() != target.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.sample_rate != target.sample_rate {
        return Err(MetricsError::ShapeMismatch(format!(
            "sample rates differ: {} vs {}",
            pred.sample_rate, target.sample_rate
        )));
    }
    Ok(())
}

/// Mean absolute waveform difference over all channels and samples.
pub fn mae_waveform(pred: &AmbisonicIR, target: &AmbisonicIR) -> Result<f64, MetricsError> {
    check_same_shape(pred, target)?;
    let n = 4 * pred.len();
    if n == 0 {
        return Err(MetricsError::ZeroSignal);
    }
    let mut acc = 0.0;
    for c in 0..4 {
        for (p, t) in pred.channels[c].iter().zip(&target.channels[c]) {
            acc += (p - t).abs();
        }
    }
    Ok(acc / n as f64)
}

/// Mean squared waveform difference over all channels and samples.
pub fn mse_waveform(pred: &AmbisonicIR, target: &AmbisonicIR) -> Result<f64, MetricsError> {
    check_same_shape(pred, target)?;
    let n = 4 * pred.len();
    if n == 0 {
        return Err(MetricsError::ZeroSignal);
    }
    let mut acc = 0.0;
    for c in 0..4 {
        for (p, t) in pred.channels[c].iter().zip(&target.channels[c]) {
            acc += (p - t) * (p - t);
        }
    }
    Ok(acc / n as f64)
}

/// Reverberation time from the Schroeder backward-integrated decay of the
/// omnidirectional proxy (channel mean).
///
/// A least-squares line is fit to the −5…−35 dB segment of the decay curve
/// and extrapolated to a 60 dB span. Real decay curves often bend where the
/// reverberant tail meets the truncation/noise floor, so the fit window is
/// shortened at the first sample falling 2 dB below the line fit to the
/// clean −5…−15 dB head ("knee"); without this the floor drags the slope
/// and T60 overshoots.
pub fn t60_schroeder(ir: &AmbisonicIR) -> Result<f64, MetricsError> {
    let proxy = ir.omni_proxy();
    t60_schroeder_signal(&proxy, ir.sample_rate)
}

/// [`t60_schroeder`] on a bare mono signal.
pub fn t60_schroeder_signal(signal: &[f64], sample_rate: u32) -> Result<f64, MetricsError> {
    // Backward energy integration.
    let mut edc = vec![0.0; signal.len()];
    let mut acc = 0.0;
    for i in (0..signal.len()).rev() {
        acc += signal[i] * signal[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return Err(MetricsError::ZeroSignal);
    }
    let last_pos = edc.iter().rposition(|&e| e > 0.0).unwrap();
    let db: Vec<f64> = edc[..=last_pos].iter().map(|&e| 10.0 * (e / total).log10()).collect();

    let cross = |level: f64| db.iter().position(|&d| d <= level);
    let t5 = cross(-5.0).ok_or(MetricsError::InsufficientDecay)?;
    let t15 = cross(-15.0).ok_or(MetricsError::InsufficientDecay)?;
    let t35 = cross(-35.0).ok_or(MetricsError::InsufficientDecay)?;
    if t15 <= t5 + 4 {
        return Err(MetricsError::InsufficientDecay);
    }

    let fit = |a: usize, b: usize| -> (f64, f64) {
        // Least-squares slope/intercept of db over samples [a, b].
        let n = (b - a + 1) as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (i, &y) in db[a..=b].iter().enumerate() {
            let x = (a + i) as f64;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        (slope, intercept)
    };

    let (m1, b1) = fit(t5, t15);
    let mut end = t35;
    for (off, &d) in db[t15 + 1..=t35].iter().enumerate() {
        let i = t15 + 1 + off;
        if d < m1 * i as f64 + b1 - 2.0 {
            end = i;
            break;
        }
    }
    let (slope, _) = fit(t5, end);
    if !(slope < 0.0) {
        return Err(MetricsError::InsufficientDecay);
    }
    Ok(-60.0 / (slope * sample_rate as f64))
}

/// Total energy in dB: `10·log10(Σ samples²)` over all channels.
pub fn energy_db(ir: &AmbisonicIR) -> Result<f64, MetricsError> {
    let e = ir.total_energy();
    if e <= 0.0 {
        return Err(MetricsError::ZeroSignal);
    }
    Ok(10.0 * e.log10())
}

/// Direct-to-reverberant ratio in dB.
///
/// The direct window spans ±`direct_window_ms`/2 around the global peak of
/// the omnidirectional proxy; the remainder is reverberant. Energies sum
/// over all four channels. Zero reverberant energy yields `f64::INFINITY`
/// as the distinguished "no reverb" value.
pub fn drr_db(ir: &AmbisonicIR, direct_window_ms: f64) -> Result<f64, MetricsError> {
    let proxy = ir.omni_proxy();
    if ir.total_energy() <= 0.0 {
        return Err(MetricsError::ZeroSignal);
    }
    let peak = proxy
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    let half = (direct_window_ms / 2.0 * 1e-3 * ir.sample_rate as f64).round() as usize;
    let lo = peak.saturating_sub(half);
    let hi = (peak + half + 1).min(ir.len());
    let mut direct = 0.0;
    let mut rest = 0.0;
    for c in 0..4 {
        for (i, &v) in ir.channels[c].iter().enumerate() {
            if i >= lo && i < hi {
                direct += v * v;
            } else {
                rest += v * v;
            }
        }
    }
    if direct <= 0.0 {
        return Err(MetricsError::ZeroSignal);
    }
    if rest <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (direct / rest).log10())
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of STFT frames for a signal of `len` samples.
pub fn stft_frames(len: usize, cfg: &MelConfig) -> Result<usize, MetricsError> {
    if len < cfg.n_fft {
        return Err(MetricsError::TooShort { len, n_fft: cfg.n_fft });
    }
    Ok(1 + (len - cfg.n_fft) / cfg.hop)
}

/// Magnitude STFT of a mono signal: `frames × (n_fft/2 + 1)`.
pub fn magnitude_stft(signal: &[f64], cfg: &MelConfig) -> Result<Vec<Vec<f64>>, MetricsError> {
    let k = stft_frames(signal.len(), cfg)?;
    let window = hann_window(cfg.n_fft);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;
    let mut out = vec![vec![0.0; n_bins]; k];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for (frame, row) in out.iter_mut().enumerate() {
        let start = frame * cfg.hop;
        for i in 0..cfg.n_fft {
            buf[i] = Complex::new(signal[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (b, w) in row.iter_mut().enumerate() {
            *w = buf[b].norm();
        }
    }
    Ok(out)
}

/// Log-mel spectrogram of a 4-channel impulse response: magnitude STFT →
/// triangular mel filterbank → `ln(x + log_floor)`, computed per channel
/// and averaged across channels. Shape `frames × n_mels`.
pub fn mel_spectrogram(ir: &AmbisonicIR, cfg: &MelConfig) -> Result<Vec<Vec<f64>>, MetricsError> {
    if ir.sample_rate != cfg.sample_rate {
        return Err(MetricsError::ShapeMismatch(format!(
            "IR sample rate {} vs mel config {}",
            ir.sample_rate, cfg.sample_rate
        )));
    }
    let k = stft_frames(ir.len(), cfg)?;
    let bank = cfg.filterbank();
    let mut acc = vec![vec![0.0; cfg.n_mels]; k];
    for c in 0..4 {
        let stft = magnitude_stft(&ir.channels[c], cfg)?;
        for (frame, mags) in stft.iter().enumerate() {
            for (m, row) in bank.iter().enumerate() {
                let mel: f64 = row.iter().zip(mags).map(|(w, x)| w * x).sum();
                acc[frame][m] += (mel + cfg.log_floor).ln();
            }
        }
    }
    for row in &mut acc {
        for v in row {
            *v *= 0.25;
        }
    }
    Ok(acc)
}

/// Mean squared difference between the log-mel matrices of two responses.
pub fn mel_distance(
    pred: &AmbisonicIR,
    target: &AmbisonicIR,
    cfg: &MelConfig,
) -> Result<f64, MetricsError> {
    check_same_shape(pred, target)?;
    let a = mel_spectrogram(pred, cfg)?;
    let b = mel_spectrogram(target, cfg)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            acc += (x - y) * (x - y);
            n += 1;
        }
    }
    Ok(acc / n as f64)
}

/// Cyclic inter-channel waveform loss over arbitrary channel stacks:
/// `(1/(C·T)) Σ_c Σ_t ((p_c − p_{c+1}) − (t_c − t_{c+1}))²` with c+1 taken
/// modulo C.
pub fn loss_ic_channels(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let c = pred.len();
    if c == 0 || c != target.len() {
        return Err(MetricsError::ShapeMismatch("channel counts differ".into()));
    }
    let t = pred[0].len();
    if t == 0 || pred.iter().chain(target).any(|ch| ch.len() != t) {
        return Err(MetricsError::ShapeMismatch("channel lengths differ".into()));
    }
    let mut acc = 0.0;
    for i in 0..c {
        let j = (i + 1) % c;
        for s in 0..t {
            let d = (pred[i][s] - pred[j][s]) - (target[i][s] - target[j][s]);
            acc += d * d;
        }
    }
    Ok(acc / (c * t) as f64)
}

/// Cyclic inter-channel loss of two 4-channel responses. Common-mode
/// content (identical on every channel) cancels exactly.
pub fn loss_ic(pred: &AmbisonicIR, target: &AmbisonicIR) -> Result<f64, MetricsError> {
    check_same_shape(pred, target)?;
    loss_ic_channels(&pred.channels, &target.channels)
}

/// Per-term decomposition of the aggregate loss.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossBreakdown {
    pub mel_spectral: f64,
    pub mel_temporal: f64,
    pub mse: f64,
    pub ic: f64,
    pub total: f64,
}

/// Aggregate loss `alpha·(mel_spectral + mel_temporal) + beta·mse +
/// gamma·ic`.
pub fn loss_total(
    pred: &AmbisonicIR,
    target: &AmbisonicIR,
    weights: LossWeights,
    cfg_spectral: &MelConfig,
    cfg_temporal: &MelConfig,
) -> Result<LossBreakdown, MetricsError> {
    weights.validate()?;
    let mel_spectral = mel_distance(pred, target, cfg_spectral)?;
    let mel_temporal = mel_distance(pred, target, cfg_temporal)?;
    let mse = mse_waveform(pred, target)?;
    let ic = loss_ic(pred, target)?;
    Ok(LossBreakdown {
        mel_spectral,
        mel_temporal,
        mse,
        ic,
        total: weights.alpha * (mel_spectral + mel_temporal) + weights.beta * mse + weights.gamma * ic,
    })
}

/// Side-by-side metric report between an estimate and a reference.
///
/// `mae`, `mel`, and `mel_t` are distances; `t60`, `energy`, and `drr` are
/// absolute differences of the per-response values. Serialized field names
/// match the conventional report columns.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricReport {
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "T60")]
    pub t60: f64,
    #[serde(rename = "En.")]
    pub energy: f64,
    #[serde(rename = "DRR")]
    pub drr: f64,
    #[serde(rename = "Mel")]
    pub mel: f64,
    #[serde(rename = "Mel-T")]
    pub mel_t: f64,
}

impl MetricReport {
    pub fn compare(pred: &AmbisonicIR, target: &AmbisonicIR) -> Result<MetricReport, MetricsError> {
        let rate = target.sample_rate;
        Ok(MetricReport {
            mae: mae_waveform(pred, target)?,
            t60: (t60_schroeder(pred)? - t60_schroeder(target)?).abs(),
            energy: (energy_db(pred)? - energy_db(target)?).abs(),
            drr: (drr_db(pred, 2.5)? - drr_db(target, 2.5)?).abs(),
            mel: mel_distance(pred, target, &MelConfig::spectral(rate))?,
            mel_t: mel_distance(pred, target, &MelConfig::temporal(rate))?,
        })
    }
}
