//! Model hyperparameters and the derived shape plan.
//!
//! Sizes target desk scale: gradient checks and toy training must run in
//! seconds, so the defaults are orders of magnitude below production
//! estimator sizes on purpose.

use crate::NeuralError;
use aurasim_core::bands::N_BANDS;
use aurasim_core::metrics::MelConfig;
use aurasim_core::synth::ENVELOPE_POINTS;
use serde::{Deserialize, Serialize};

/// Number of scalar features per scene face: centroid (3), unit normal
/// (3), area (1), per-band reflectivity (8), per-band scattering (8).
pub const FACE_FEATURES: usize = 7 + 2 * N_BANDS;

/// Query tokens produced from a position pair: one for the source, one for
/// the listener.
pub const N_QUERY_TOKENS: usize = 2;

/// Lowest sinusoidal encoding frequency (rad/m). Its period exceeds 24 m,
/// so a sin/cos pair at this frequency alone is injective across any scene
/// that fits in a ±10 m box.
pub const BASE_OMEGA: f64 = 0.25;

/// Ratio between successive sinusoidal encoding frequencies.
pub const OMEGA_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output width of each graph-convolution block; the last width must
    /// equal `d_model` because pooled vertices become transformer tokens.
    pub gcn_widths: Vec<usize>,
    /// Top-k pooling ratio after each block, each in (0, 1].
    pub pool_ratios: Vec<f64>,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ffn_width: usize,
    /// Sinusoidal frequencies per coordinate (encoding dim = 6·n_freqs per
    /// position token).
    pub n_freqs: usize,
    /// Waveform-branch 1-D conv output channels per layer.
    pub wave_channels: Vec<usize>,
    pub wave_kernel: usize,
    pub wave_stride: usize,
    /// Spectral-branch 2-D conv output channels per layer (square kernels).
    pub spec_channels: Vec<usize>,
    pub spec_kernel: usize,
    pub spec_stride: usize,
    /// Hidden width of both branch GRUs; the reflection embedding is their
    /// concatenation (2·rnn_width).
    pub rnn_width: usize,
    /// Hidden width of each decoder head's single ReLU layer.
    pub head_hidden: usize,
    /// Early-reflection head output length (samples, per channel).
    pub er_length: usize,
    /// Octave bands F in the late-reverb head.
    pub n_bands: usize,
    /// Envelope points E per band in the late-reverb head.
    pub n_env_points: usize,
    /// Input reflections are cropped or zero-padded to this many samples.
    pub lor_samples: usize,
    /// Spectral-branch mel settings.
    pub mel_n_fft: usize,
    pub mel_hop: usize,
    pub mel_n_mels: usize,
    pub sample_rate: u32,
}

impl ModelConfig {
    /// Default toy size: trains on a laptop in seconds.
    pub fn toy(sample_rate: u32) -> ModelConfig {
        ModelConfig {
            gcn_widths: vec![32, 32, 32, 32],
            pool_ratios: vec![1.0, 0.75, 0.75, 0.5],
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_width: 64,
            n_freqs: 8,
            wave_channels: vec![8, 16, 16],
            wave_kernel: 9,
            wave_stride: 4,
            spec_channels: vec![8, 16],
            spec_kernel: 3,
            spec_stride: 2,
            rnn_width: 32,
            head_hidden: 64,
            er_length: 1024,
            n_bands: N_BANDS,
            n_env_points: ENVELOPE_POINTS,
            lor_samples: 4096,
            mel_n_fft: 256,
            mel_hop: 64,
            mel_n_mels: 32,
            sample_rate,
        }
    }

    /// Smallest config that still exercises every layer; used for
    /// end-to-end finite-difference verification, where every parameter is
    /// perturbed twice.
    pub fn minimal(sample_rate: u32) -> ModelConfig {
        ModelConfig {
            gcn_widths: vec![4],
            pool_ratios: vec![1.0],
            d_model: 4,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_width: 8,
            n_freqs: 2,
            wave_channels: vec![2, 2],
            wave_kernel: 8,
            wave_stride: 8,
            spec_channels: vec![2],
            spec_kernel: 3,
            spec_stride: 2,
            rnn_width: 2,
            head_hidden: 4,
            er_length: 32,
            n_bands: N_BANDS,
            n_env_points: 4,
            lor_samples: 4096,
            mel_n_fft: 256,
            mel_hop: 128,
            mel_n_mels: 4,
            sample_rate,
        }
    }

    /// Wider third configuration for the shape-contract table.
    pub fn wide(sample_rate: u32) -> ModelConfig {
        ModelConfig {
            gcn_widths: vec![24, 48],
            pool_ratios: vec![0.8, 0.5],
            d_model: 48,
            n_heads: 3,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ffn_width: 96,
            n_freqs: 4,
            wave_channels: vec![8, 8, 8, 8],
            wave_kernel: 5,
            wave_stride: 4,
            spec_channels: vec![4, 8],
            spec_kernel: 3,
            spec_stride: 2,
            rnn_width: 24,
            head_hidden: 48,
            er_length: 512,
            n_bands: N_BANDS,
            n_env_points: 16,
            lor_samples: 4096,
            mel_n_fft: 512,
            mel_hop: 128,
            mel_n_mels: 24,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |msg: String| Err(NeuralError::BadConfig(msg));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.gcn_widths.is_empty() || self.gcn_widths.len() != self.pool_ratios.len() {
            return bad("gcn_widths and pool_ratios must be equal-length and non-empty".into());
        }
        if self.gcn_widths.iter().any(|&w| w == 0) {
            return bad("gcn widths must be positive".into());
        }
        if *self.gcn_widths.last().unwrap() != self.d_model {
            return bad(format!(
                "last gcn width {} must equal d_model {} (pooled vertices become tokens)",
                self.gcn_widths.last().unwrap(),
                self.d_model
            ));
        }
        for &r in &self.pool_ratios {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("pool ratio {r} outside (0, 1]"));
            }
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 || self.ffn_width == 0 {
            return bad("transformer needs at least one layer each and a positive ffn width".into());
        }
        if self.n_freqs == 0 {
            return bad("n_freqs must be positive".into());
        }
        if self.rnn_width == 0 || self.head_hidden == 0 {
            return bad("recurrent and head widths must be positive".into());
        }
        if self.er_length < 2 {
            return bad("er_length must be at least 2".into());
        }
        if self.n_bands == 0 || self.n_env_points == 0 {
            return bad("late-reverb head needs positive band and envelope counts".into());
        }
        if self.wave_channels.is_empty() || self.spec_channels.is_empty() {
            return bad("both reflection-encoder branches need at least one conv layer".into());
        }
        if self.wave_stride == 0 || self.spec_stride == 0 {
            return bad("conv strides must be positive".into());
        }
        self.spectral_mel()?;
        self.plan()?;
        Ok(())
    }

    /// Mel settings of the spectral reflection-encoder branch.
    pub fn spectral_mel(&self) -> Result<MelConfig, NeuralError> {
        Ok(MelConfig::new(self.mel_n_fft, self.mel_hop, self.mel_n_mels, self.sample_rate, 1e-5)?)
    }

    /// Derived layer shapes; errors when some stage collapses to nothing.
    pub fn plan(&self) -> Result<ShapePlan, NeuralError> {
        let bad = |msg: String| NeuralError::BadConfig(msg);
        // Waveform branch: valid-mode strided 1-D convs over lor_samples.
        let mut wave_lens = Vec::new();
        let mut len = self.lor_samples;
        for (i, _) in self.wave_channels.iter().enumerate() {
            if len < self.wave_kernel {
                return Err(bad(format!(
                    "waveform conv {i} input length {len} shorter than kernel {}",
                    self.wave_kernel
                )));
            }
            len = (len - self.wave_kernel) / self.wave_stride + 1;
            wave_lens.push(len);
        }
        // Spectral branch: mel image (n_mels × frames), strided square convs.
        if self.lor_samples < self.mel_n_fft {
            return Err(bad(format!(
                "lor_samples {} shorter than mel n_fft {}",
                self.lor_samples, self.mel_n_fft
            )));
        }
        let frames = 1 + (self.lor_samples - self.mel_n_fft) / self.mel_hop;
        let mut spec_dims = Vec::new();
        let (mut h, mut w) = (self.mel_n_mels, frames);
        for (i, _) in self.spec_channels.iter().enumerate() {
            if h < self.spec_kernel || w < self.spec_kernel {
                return Err(bad(format!(
                    "spectral conv {i} input {h}×{w} smaller than kernel {}",
                    self.spec_kernel
                )));
            }
            h = (h - self.spec_kernel) / self.spec_stride + 1;
            w = (w - self.spec_kernel) / self.spec_stride + 1;
            spec_dims.push((h, w));
        }
        Ok(ShapePlan {
            wave_lens,
            mel_frames: frames,
            spec_dims,
            d_lor: 2 * self.rnn_width,
            emb_dim: N_QUERY_TOKENS * self.d_model + 2 * self.rnn_width,
            enc_dim_per_pos: 6 * self.n_freqs,
        })
    }
}

/// Sequence/image sizes derived from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePlan {
    /// Waveform-branch sequence length after each conv layer.
    pub wave_lens: Vec<usize>,
    /// STFT frame count of the spectral branch input.
    pub mel_frames: usize,
    /// (height, width) after each spectral conv layer.
    pub spec_dims: Vec<(usize, usize)>,
    /// Reflection embedding width (both GRU hidden states concatenated).
    pub d_lor: usize,
    /// Decoder-head input width (flattened queries ++ reflection embedding).
    pub emb_dim: usize,
    /// Sinusoidal encoding width per position (3 coordinates × sin/cos ×
    /// n_freqs).
    pub enc_dim_per_pos: usize,
}
