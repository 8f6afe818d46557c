//! Oracle-backed dataset generation: shoebox variants, simulated SRIR/LoR
//! pairs, extracted perceptual parameters, and a reproducible JSON manifest.

use crate::perturb::{perturb_materials, sample_positions};
use crate::DatasetError;
use aurasim_core::ambisonic::AmbisonicIR;
use aurasim_core::ga::simulate_reference;
use aurasim_core::rngutil::derive_seed;
use aurasim_core::scene::{make_shoebox, PositionPair, SceneGraph};
use aurasim_core::synth::{extract_params, PerceptualParams, PerceptualParamsHeader, ER_BOUNDARY_MS};
use aurasim_core::wavio::{load_ir, save_ir, Sidecar};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

/// Reflection order used for every low-order-reflection render.
pub const LOR_ORDER: usize = 2;

/// Base materials for freshly built shoeboxes. Every coefficient is
/// redrawn by the perturbation pass, so these only need to be valid.
const BASE_REFLECTIVITY: [f64; 8] = [0.7; 8];
const BASE_SCATTERING: [f64; 8] = [0.2; 8];

/// Sub-seed roles under one (scene, variant) path.
const ROLE_MATERIALS: u64 = 0;
const ROLE_POSITIONS: u64 = 1;

/// A base shoebox to spawn material variants from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    /// Interior dimensions in meters.
    pub dims: [f64; 3],
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub scenes: Vec<SceneSpec>,
    pub variants_per_scene: usize,
    pub pairs_per_variant: usize,
    /// Uniform per-(face, band) reflectivity range.
    pub refl_range: (f64, f64),
    /// Uniform per-(face, band) scattering range.
    pub scat_range: (f64, f64),
    pub min_clearance_m: f64,
    pub sample_rate: u32,
    /// Reflection order of the reference SRIR.
    pub max_order: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            scenes: default_scenes(),
            variants_per_scene: 8,
            pairs_per_variant: 8,
            refl_range: (0.3, 0.95),
            scat_range: (0.05, 0.5),
            min_clearance_m: 0.2,
            sample_rate: 48_000,
            max_order: 20,
            seed: 0,
        }
    }
}

/// Four desk-scale base rooms (256 entries with the default config).
pub fn default_scenes() -> Vec<SceneSpec> {
    [
        ("booth", [2.6, 2.2, 2.0]),
        ("office", [4.0, 3.0, 2.5]),
        ("meeting_room", [6.0, 4.0, 3.0]),
        ("studio", [9.0, 6.0, 4.0]),
    ]
    .into_iter()
    .map(|(id, dims)| SceneSpec { id: id.to_string(), dims })
    .collect()
}

/// One generated SRIR/LoR/params triple. Paths are relative to the
/// dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub variant_id: usize,
    pub source: [f64; 3],
    pub listener: [f64; 3],
    pub srir_path: PathBuf,
    pub lor_path: PathBuf,
    pub params_path: PathBuf,
}

/// Dataset index: the generation config plus one entry per rendered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: GenerationConfig,
    pub entries: Vec<ManifestEntry>,
}

/// On-disk form of [`PerceptualParams`]: the scalar/envelope header plus
/// the normalized early-reflection channels at full precision.
#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    header: PerceptualParamsHeader,
    er_channels: Vec<Vec<f64>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Write perceptual parameters as JSON, losslessly (f64 values round-trip
/// bit-exactly through [`load_params`]).
pub fn save_params(params: &PerceptualParams, path: &Path) -> Result<(), DatasetError> {
    let file = ParamsFile {
        header: params.header(),
        er_channels: params.h_er_norm.channels.to_vec(),
    };
    let text = serde_json::to_string(&file).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text).map_err(io_err(path))
}

/// Read perceptual parameters written by [`save_params`].
pub fn load_params(path: &Path) -> Result<PerceptualParams, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: ParamsFile = serde_json::from_str(&text).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if file.er_channels.len() != 4 {
        return Err(DatasetError::Format {
            path: path.to_path_buf(),
            msg: format!("expected 4 early-reflection channels, found {}", file.er_channels.len()),
        });
    }
    let mut h_er = AmbisonicIR::new_a_format(file.header.er_length, file.header.sample_rate);
    for (dst, src) in h_er.channels.iter_mut().zip(&file.er_channels) {
        if src.len() != file.header.er_length {
            return Err(DatasetError::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "channel length {} disagrees with header er_length {}",
                    src.len(),
                    file.header.er_length
                ),
            });
        }
        dst.copy_from_slice(src);
    }
    Ok(PerceptualParams::from_header(file.header, h_er)?)
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    /// Check that every referenced file exists under `base_dir` and that
    /// (scene, variant, source, listener) keys are unique.
    pub fn validate(&self, base_dir: &Path) -> Result<(), DatasetError> {
        let mut keys = HashSet::new();
        for entry in &self.entries {
            let key = (
                entry.scene_id.clone(),
                entry.variant_id,
                entry.source.map(f64::to_bits),
                entry.listener.map(f64::to_bits),
            );
            if !keys.insert(key) {
                return Err(DatasetError::Manifest(format!(
                    "duplicate entry for scene {} variant {} at source {:?}",
                    entry.scene_id, entry.variant_id, entry.source
                )));
            }
            for rel in [&entry.srir_path, &entry.lor_path, &entry.params_path] {
                let path = base_dir.join(rel);
                if !path.is_file() {
                    return Err(DatasetError::Manifest(format!(
                        "missing file {}",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn entry_stem(scene_id: &str, variant: usize, pair: usize) -> String {
    format!("{scene_id}_v{variant:02}_p{pair:02}")
}

struct Job {
    scene_id: String,
    variant_id: usize,
    scene: SceneGraph,
    pair: PositionPair,
    stem: String,
}

fn render_job(job: &Job, cfg: &GenerationConfig, out_dir: &Path) -> Result<ManifestEntry, DatasetError> {
    let srir = simulate_reference(&job.scene, &job.pair, cfg.max_order, cfg.sample_rate)?;
    let lor = simulate_reference(&job.scene, &job.pair, LOR_ORDER, cfg.sample_rate)?;
    let params = extract_params(&srir, &lor, ER_BOUNDARY_MS)?;

    let srir_path = PathBuf::from(format!("{}_srir.wav", job.stem));
    let lor_path = PathBuf::from(format!("{}_lor.wav", job.stem));
    let params_path = PathBuf::from(format!("{}_params.json", job.stem));

    let provenance = |ir: &AmbisonicIR, order: usize| {
        Sidecar::for_ir(ir).with_provenance(job.pair.source, job.pair.listener, order)
    };
    save_ir(&srir, &out_dir.join(&srir_path), &provenance(&srir, cfg.max_order))?;
    save_ir(&lor, &out_dir.join(&lor_path), &provenance(&lor, LOR_ORDER))?;

    save_params(&params, &out_dir.join(&params_path))?;

    Ok(ManifestEntry {
        scene_id: job.scene_id.clone(),
        variant_id: job.variant_id,
        source: job.pair.source.to_array(),
        listener: job.pair.listener.to_array(),
        srir_path,
        lor_path,
        params_path,
    })
}

/// Render every (scene, variant, pair) entry into `out_dir` and write
/// `manifest.json` beside them. Fully deterministic from `cfg.seed`;
/// entries are generated in parallel but listed in a fixed order.
pub fn generate_dataset(cfg: &GenerationConfig, out_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut jobs = Vec::new();
    for (s, spec) in cfg.scenes.iter().enumerate() {
        let base = make_shoebox(spec.dims, BASE_REFLECTIVITY, BASE_SCATTERING)?;
        for v in 0..cfg.variants_per_scene {
            let variant = perturb_materials(
                &base,
                cfg.refl_range,
                cfg.scat_range,
                derive_seed(cfg.seed, &[s as u64, v as u64, ROLE_MATERIALS]),
            )?;
            let pairs = sample_positions(
                &variant,
                cfg.pairs_per_variant,
                cfg.min_clearance_m,
                derive_seed(cfg.seed, &[s as u64, v as u64, ROLE_POSITIONS]),
            )?;
            for (p, pair) in pairs.into_iter().enumerate() {
                jobs.push(Job {
                    scene_id: spec.id.clone(),
                    variant_id: v,
                    scene: variant.clone(),
                    pair,
                    stem: entry_stem(&spec.id, v, p),
                });
            }
        }
    }

    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|job| render_job(job, cfg, out_dir))
        .collect::<Result<_, _>>()?;

    let manifest = DatasetManifest { config: cfg.clone(), entries };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Load one entry's SRIR, LoR, and perceptual parameters from disk.
pub fn load_entry(
    base_dir: &Path,
    entry: &ManifestEntry,
) -> Result<(AmbisonicIR, AmbisonicIR, PerceptualParams), DatasetError> {
    let (srir, _) = load_ir(&base_dir.join(&entry.srir_path))?;
    let (lor, _) = load_ir(&base_dir.join(&entry.lor_path))?;
    let params = load_params(&base_dir.join(&entry.params_path))?;
    Ok((srir, lor, params))
}

/// Rebuild the exact material variant an entry was rendered in, from the
/// manifest's config alone.
pub fn reconstruct_variant(
    manifest: &DatasetManifest,
    scene_id: &str,
    variant_id: usize,
) -> Result<SceneGraph, DatasetError> {
    let cfg = &manifest.config;
    let s = cfg
        .scenes
        .iter()
        .position(|spec| spec.id == scene_id)
        .ok_or_else(|| DatasetError::Manifest(format!("unknown scene id {scene_id:?}")))?;
    if variant_id >= cfg.variants_per_scene {
        return Err(DatasetError::Manifest(format!(
            "variant {variant_id} out of range for scene {scene_id:?}"
        )));
    }
    let base = make_shoebox(cfg.scenes[s].dims, BASE_REFLECTIVITY, BASE_SCATTERING)?;
    perturb_materials(
        &base,
        cfg.refl_range,
        cfg.scat_range,
        derive_seed(cfg.seed, &[s as u64, variant_id as u64, ROLE_MATERIALS]),
    )
}
