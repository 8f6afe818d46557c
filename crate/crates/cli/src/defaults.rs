//! Compiled-in defaults, parsed once from the bundled TOML.

use std::sync::OnceLock;

use aurasim_dataset::{GenerationConfig, SceneSpec};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Defaults {
    pub audio: AudioDefaults,
    pub dataset: DatasetDefaults,
    pub train: TrainDefaults,
    pub bench: BenchDefaults,
}

#[derive(Debug, Deserialize)]
pub struct AudioDefaults {
    pub sample_rate: u32,
    pub lor_order: usize,
    pub er_boundary_ms: f64,
}

#[derive(Debug, Deserialize)]
pub struct DatasetDefaults {
    pub variants_per_scene: usize,
    pub pairs_per_variant: usize,
    pub refl_lo: f64,
    pub refl_hi: f64,
    pub scat_lo: f64,
    pub scat_hi: f64,
    pub min_clearance_m: f64,
    pub max_order: usize,
    pub seed: u64,
    pub histogram_bins: usize,
    pub scenes: Vec<SceneEntry>,
}

#[derive(Debug, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub dims: [f64; 3],
}

#[derive(Debug, Deserialize)]
pub struct TrainDefaults {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub examples: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Deserialize)]
pub struct BenchDefaults {
    pub runs: usize,
    pub warmups: usize,
}

impl DatasetDefaults {
    /// The generation config these defaults describe, before any flag overrides.
    pub fn generation_config(&self, sample_rate: u32) -> GenerationConfig {
        GenerationConfig {
            scenes: self
                .scenes
                .iter()
                .map(|s| SceneSpec { id: s.id.clone(), dims: s.dims })
                .collect(),
            variants_per_scene: self.variants_per_scene,
            pairs_per_variant: self.pairs_per_variant,
            refl_range: (self.refl_lo, self.refl_hi),
            scat_range: (self.scat_lo, self.scat_hi),
            min_clearance_m: self.min_clearance_m,
            sample_rate,
            max_order: self.max_order,
            seed: self.seed,
        }
    }
}

/// The bundled defaults; parsing happens once and cannot fail after a
/// successful build (the TOML is a compile-time asset, checked by a test).
pub fn defaults() -> &'static Defaults {
    static CELL: OnceLock<Defaults> = OnceLock::new();
    CELL.get_or_init(|| {
        toml::from_str(include_str!("../defaults.toml")).expect("bundled defaults.toml is valid")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_defaults_parse() {
        let d = defaults();
        assert_eq!(d.audio.sample_rate, 48_000);
        assert_eq!(d.audio.lor_order, 2);
        assert_eq!(d.bench.runs, 10);
        assert_eq!(d.dataset.scenes.len(), 4);
    }

    #[test]
    fn dataset_defaults_match_library_defaults() {
        let d = defaults();
        let from_toml = d.dataset.generation_config(d.audio.sample_rate);
        assert_eq!(from_toml, GenerationConfig::default());
    }

    #[test]
    fn er_boundary_matches_extraction_default() {
        assert_eq!(defaults().audio.er_boundary_ms, aurasim_core::synth::ER_BOUNDARY_MS);
    }
}
