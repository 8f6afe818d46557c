//! Differentiable log-mel analysis. Mirrors the reference metrics pipeline
//! (periodic Hann STFT → triangular filterbank → `ln(x + floor)` → channel
//! average) with a direct DFT expressed as two matrix products, so the same
//! numbers come out but gradients flow back to the waveform.

use crate::shape_err;
use crate::tape::{Tape, Var};
use crate::NeuralError;
use aurasim_core::metrics::{hann_window, MelConfig};
use std::rc::Rc;

/// Guard added to the squared spectrum before the square root. Keeps the
/// magnitude gradient finite on silent frames while staying far below one
/// ulp of any practical log floor, so silence still maps to exactly
/// `ln(floor)`.
const MAG_EPS: f64 = 1e-60;

/// Precomputed constants for one mel configuration: window, DFT bases, and
/// the transposed filterbank.
pub struct MelGraph {
    n_fft: usize,
    hop: usize,
    n_mels: usize,
    n_bins: usize,
    log_floor: f64,
    window: Vec<f64>,
    cos_basis: Vec<f64>,
    neg_sin_basis: Vec<f64>,
    bank_t: Vec<f64>,
}

impl MelGraph {
    pub fn new(cfg: &MelConfig) -> Result<Self, NeuralError> {
        cfg.validate()?;
        let n_fft = cfg.n_fft;
        let n_bins = n_fft / 2 + 1;
        let mut cos_basis = vec![0.0; n_fft * n_bins];
        let mut neg_sin_basis = vec![0.0; n_fft * n_bins];
        for i in 0..n_fft {
            for b in 0..n_bins {
                let phase = 2.0 * std::f64::consts::PI * (i * b) as f64 / n_fft as f64;
                cos_basis[i * n_bins + b] = phase.cos();
                neg_sin_basis[i * n_bins + b] = -phase.sin();
            }
        }
        let bank = cfg.filterbank();
        let mut bank_t = vec![0.0; n_bins * cfg.n_mels];
        for (m, row) in bank.iter().enumerate() {
            for (b, &w) in row.iter().enumerate() {
                bank_t[b * cfg.n_mels + m] = w;
            }
        }
        Ok(Self {
            n_fft,
            hop: cfg.hop,
            n_mels: cfg.n_mels,
            n_bins,
            log_floor: cfg.log_floor,
            window: hann_window(n_fft),
            cos_basis,
            neg_sin_basis,
            bank_t,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    /// Frame count for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> Result<usize, NeuralError> {
        if len < self.n_fft {
            return Err(shape_err(
                "mel frames",
                format!("signal length {len} shorter than window {}", self.n_fft),
            ));
        }
        Ok(1 + (len - self.n_fft) / self.hop)
    }

    /// `ln(x + log_floor)` shift that makes a silent signal map to zero.
    pub fn silence_level(&self) -> f64 {
        self.log_floor.ln()
    }

    /// Log-mel of one channel: `frames × n_mels`.
    fn channel_log_mel(&self, tape: &mut Tape, signal: Var) -> Result<Var, NeuralError> {
        let (rows, len) = tape.shape(signal);
        if rows != 1 {
            return Err(shape_err("mel channel", format!("expected a 1×L signal, got {rows} rows")));
        }
        let k = self.frames(len)?;
        let mut map = Vec::with_capacity(k * self.n_fft);
        for frame in 0..k {
            let start = frame * self.hop;
            map.extend(start..start + self.n_fft);
        }
        let frames = tape.gather(signal, Rc::new(map), k, self.n_fft);
        let window = tape.leaf(1, self.n_fft, self.window.clone());
        let windowed = tape.mul_row(frames, window);
        let cos_b = tape.leaf(self.n_fft, self.n_bins, self.cos_basis.clone());
        let sin_b = tape.leaf(self.n_fft, self.n_bins, self.neg_sin_basis.clone());
        let re = tape.matmul(windowed, cos_b);
        let im = tape.matmul(windowed, sin_b);
        let re2 = tape.pow_const(re, 2.0);
        let im2 = tape.pow_const(im, 2.0);
        let power = tape.add(re2, im2);
        let guarded = tape.add_const(power, MAG_EPS);
        let mags = tape.pow_const(guarded, 0.5);
        let bank = tape.leaf(self.n_bins, self.n_mels, self.bank_t.clone());
        let mel = tape.matmul(mags, bank);
        let floored = tape.add_const(mel, self.log_floor);
        Ok(tape.ln(floored))
    }

    /// Channel-averaged log-mel of a 4-channel response, `frames × n_mels`.
    /// Matches the reference `mel_spectrogram` on the same samples.
    pub fn log_mel(&self, tape: &mut Tape, channels: &[Var]) -> Result<Var, NeuralError> {
        if channels.len() != 4 {
            return Err(shape_err("log_mel", format!("expected 4 channels, got {}", channels.len())));
        }
        let mut acc = self.channel_log_mel(tape, channels[0])?;
        for &ch in &channels[1..] {
            let next = self.channel_log_mel(tape, ch)?;
            acc = tape.add(acc, next);
        }
        Ok(tape.scale(acc, 0.25))
    }

    /// Log-mel shifted by `−ln(log_floor)`: non-negative, and exactly zero
    /// for a silent input. Used as the spectral-branch feature map.
    pub fn log_mel_shifted(&self, tape: &mut Tape, channels: &[Var]) -> Result<Var, NeuralError> {
        let mel = self.log_mel(tape, channels)?;
        Ok(tape.add_const(mel, -self.silence_level()))
    }

    /// Shifted log-mel of a single channel, `frames × n_mels`; zero for
    /// silence, like [`MelGraph::log_mel_shifted`] but without averaging.
    pub fn channel_log_mel_shifted(&self, tape: &mut Tape, channel: Var) -> Result<Var, NeuralError> {
        let mel = self.channel_log_mel(tape, channel)?;
        Ok(tape.add_const(mel, -self.silence_level()))
    }

    /// Mean squared difference between a differentiable log-mel and a
    /// constant target matrix (already in log-mel form).
    pub fn distance_to(
        &self,
        tape: &mut Tape,
        channels: &[Var],
        target: &[Vec<f64>],
    ) -> Result<Var, NeuralError> {
        let mel = self.log_mel(tape, channels)?;
        let (k, m) = tape.shape(mel);
        if target.len() != k || target.iter().any(|row| row.len() != m) {
            return Err(shape_err(
                "mel distance",
                format!("target shape vs predicted {k}×{m}"),
            ));
        }
        let flat: Vec<f64> = target.iter().flatten().copied().collect();
        let t = tape.leaf(k, m, flat);
        let diff = tape.sub(mel, t);
        let sq = tape.pow_const(diff, 2.0);
        Ok(tape.mean_all(sq))
    }
}
