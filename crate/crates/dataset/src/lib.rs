//! Diverse SRIR dataset generation at desk scale: material perturbation,
//! position sampling, oracle-backed entry generation with a JSON manifest,
//! and the diversity analysis (PCA of normalized band-energy spectra plus
//! T60 histograms, as CSV and optional plots).

use std::path::PathBuf;
use thiserror::Error;

pub mod analyze;
pub mod generate;
pub mod perturb;

pub use analyze::{
    analyze_diversity, pca_2d, render_plot, t60_histogram, write_entries_csv,
    write_histogram_csv, DiversityReport, HistogramBin,
};
pub use generate::{
    default_scenes, generate_dataset, load_entry, load_params, reconstruct_variant, save_params,
    DatasetManifest, GenerationConfig, ManifestEntry, SceneSpec,
};
pub use perturb::{perturb_materials, sample_positions};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid coefficient range [{lo}, {hi}]; need 0 <= lo <= hi <= 1")]
    BadRange { lo: f64, hi: f64 },
    #[error("position sampling hit {0} consecutive rejections; scene cannot fit the clearance")]
    InfeasibleScene(usize),
    #[error("manifest needs at least {need} entries, found {have}")]
    TooFewEntries { have: usize, need: usize },
    #[error("histogram needs at least one bin")]
    EmptyHistogram,
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Scene(#[from] aurasim_core::scene::SceneError),
    #[error(transparent)]
    Ga(#[from] aurasim_core::ga::GaError),
    #[error(transparent)]
    Synth(#[from] aurasim_core::synth::SynthError),
    #[error(transparent)]
    Metrics(#[from] aurasim_core::metrics::MetricsError),
    #[error(transparent)]
    Wav(#[from] aurasim_core::wavio::WavError),
}
