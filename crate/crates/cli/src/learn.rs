//! Model subcommands: train and infer.

use std::path::PathBuf;

use aurasim_core::ambisonic::AmbisonicIR;
use aurasim_core::geom::Vec3;
use aurasim_core::metrics::LossWeights;
use aurasim_core::scene::PositionPair;
use aurasim_core::synth::{self, PerceptualParams, PerceptualParamsHeader};
use aurasim_core::wavio::{save_ir, Sidecar};
use aurasim_dataset::{load_entry, reconstruct_variant, DatasetManifest, ManifestEntry};
use aurasim_neural::config::ModelConfig;
use aurasim_neural::model::{Model, ModelInput, ModelOutput};
use aurasim_neural::params::ParamStore;
use aurasim_neural::tape::Tape;
use aurasim_neural::train::{train_toy, TrainExample, TrainOptions};
use clap::Args;
use serde_json::json;

use crate::defaults::defaults;
use crate::{CliError, Global};

/// Smallest dataset slice the training command accepts.
pub const MIN_TRAIN_EXAMPLES: usize = 8;

fn entry_pair(entry: &ManifestEntry) -> PositionPair {
    let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
    PositionPair { source: v(entry.source), listener: v(entry.listener) }
}

/// Load one manifest entry as a training example.
fn build_example(
    manifest: &DatasetManifest,
    base_dir: &std::path::Path,
    entry: &ManifestEntry,
    cfg: &ModelConfig,
) -> Result<TrainExample, CliError> {
    let scene = reconstruct_variant(manifest, &entry.scene_id, entry.variant_id)?;
    let (_, lor, params) = load_entry(base_dir, entry)?;
    TrainExample::new(scene, entry_pair(entry), lor, &params, cfg)
        .map_err(|e| CliError::Run(e.to_string()))
}

#[derive(Args)]
pub struct TrainArgs {
    /// Path to a dataset manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,

    /// Learning rate.
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,

    /// Momentum coefficient (0 disables).
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Number of dataset entries to train on (taken from the front).
    #[arg(long)]
    pub examples: Option<usize>,

    /// Loss weights: spectral, temporal, waveform-group.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Feed zeros in place of the reflection embedding (ablation).
    #[arg(long)]
    pub zero_lor: bool,

    /// Checkpoint path to write after training.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn train(args: &TrainArgs, g: Global) -> Result<(), CliError> {
    let d = defaults();
    let manifest = DatasetManifest::load(&args.manifest)?;
    let base_dir = args.manifest.parent().unwrap_or(std::path::Path::new("."));

    let k = args.examples.unwrap_or(d.train.examples);
    if k < MIN_TRAIN_EXAMPLES {
        return Err(CliError::Usage(format!(
            "--examples {k} is below the minimum of {MIN_TRAIN_EXAMPLES}"
        )));
    }
    if manifest.entries.len() < k {
        return Err(CliError::file(
            &args.manifest,
            format!("has {} entries, need at least {k}", manifest.entries.len()),
        ));
    }

    let cfg = ModelConfig::toy(manifest.config.sample_rate);
    let examples: Vec<TrainExample> = manifest.entries[..k]
        .iter()
        .map(|entry| build_example(&manifest, base_dir, entry, &cfg))
        .collect::<Result<_, _>>()?;

    let weights = LossWeights {
        alpha: args.alpha.unwrap_or(d.train.alpha),
        beta: args.beta.unwrap_or(d.train.beta),
        gamma: args.gamma.unwrap_or(d.train.gamma),
    };
    weights.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let opts = TrainOptions {
        steps: args.steps.unwrap_or(d.train.steps),
        learning_rate: args.learning_rate.unwrap_or(d.train.learning_rate),
        momentum: args.momentum.unwrap_or(d.train.momentum),
        weights,
        zero_lor: args.zero_lor,
    };

    let seed = g.seed.unwrap_or(0);
    let mut model = Model::new(&cfg, seed).map_err(|e| CliError::Run(e.to_string()))?;
    let trace =
        train_toy(&mut model, &examples, &opts).map_err(|e| CliError::Run(e.to_string()))?;

    if let Some(path) = &args.out {
        let meta = serde_json::to_value(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
        model.store.save(path, &meta).map_err(|e| CliError::file(path, e))?;
    }

    let initial = trace.per_step[0];
    let last = *trace.per_step.last().expect("at least one step");
    if g.json {
        let terms: Vec<_> = trace
            .final_terms
            .iter()
            .map(|t| {
                json!({
                    "mel_spectral": t.mel_spectral,
                    "mel_temporal": t.mel_temporal,
                    "mse": t.mse,
                    "ic": t.ic,
                    "mae_aux": t.mae_aux,
                    "mae_lr": t.mae_lr,
                    "total": t.total,
                })
            })
            .collect();
        println!(
            "{}",
            json!({
                "examples": k,
                "steps": opts.steps,
                "initial_loss": initial,
                "final_loss": last,
                "per_step": trace.per_step,
                "final_terms": terms,
                "checkpoint": args.out,
            })
        );
    } else {
        let pct = if initial > 0.0 { (1.0 - last / initial) * 100.0 } else { 0.0 };
        println!(
            "trained on {k} examples for {} steps: loss {initial:.4} -> {last:.4} ({pct:.0}% reduction)",
            opts.steps
        );
        if let Some(path) = &args.out {
            println!("wrote checkpoint {}", path.display());
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct InferArgs {
    /// Checkpoint written by the train subcommand.
    #[arg(long)]
    pub model: PathBuf,

    /// Path to a dataset manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Manifest entry index to run on.
    #[arg(long, default_value_t = 0)]
    pub entry: usize,

    /// Feed zeros in place of the reflection embedding (ablation).
    #[arg(long)]
    pub zero_lor: bool,

    /// Synthesize the predicted response to this WAV path.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Read the predicted perceptual parameters off the tape.
pub fn params_from_output(
    tape: &Tape,
    out: &ModelOutput,
    cfg: &ModelConfig,
) -> Result<PerceptualParams, CliError> {
    let aux = tape.value(out.aux);
    let (t60, g_er, g_lr) = (aux[0], aux[1], aux[2]);

    let er = tape.value(out.er);
    let mut h_er = AmbisonicIR::new_a_format(cfg.er_length, cfg.sample_rate);
    for t in 0..cfg.er_length {
        for (c, ch) in h_er.channels.iter_mut().enumerate() {
            ch[t] = er[t * 4 + c];
        }
    }

    let env = tape.value(out.lr_env);
    let e_lr: Vec<Vec<f64>> = (0..cfg.n_bands)
        .map(|b| env[b * cfg.n_env_points..(b + 1) * cfg.n_env_points].to_vec())
        .collect();

    let header = PerceptualParamsHeader {
        t60,
        g_er,
        g_lr,
        sample_rate: cfg.sample_rate,
        er_length: cfg.er_length,
        e_lr,
    };
    PerceptualParams::from_header(header, h_er).map_err(|e| CliError::Run(e.to_string()))
}

pub fn infer(args: &InferArgs, g: Global) -> Result<(), CliError> {
    let (store, meta) = ParamStore::load(&args.model).map_err(|e| CliError::file(&args.model, e))?;
    let cfg: ModelConfig = serde_json::from_value(meta).map_err(|_| {
        CliError::file(&args.model, "checkpoint metadata is not a model configuration")
    })?;
    let model = Model::from_store(&cfg, store).map_err(|e| CliError::file(&args.model, e))?;

    let manifest = DatasetManifest::load(&args.manifest)?;
    let base_dir = args.manifest.parent().unwrap_or(std::path::Path::new("."));
    let entry = manifest.entries.get(args.entry).ok_or_else(|| {
        CliError::Usage(format!(
            "entry {} out of range ({} entries)",
            args.entry,
            manifest.entries.len()
        ))
    })?;

    let scene = reconstruct_variant(&manifest, &entry.scene_id, entry.variant_id)?;
    let (_, lor, target) = load_entry(base_dir, entry)?;

    let mut tape = Tape::new();
    let params = model.store.attach(&mut tape);
    let input =
        ModelInput { scene: &scene, pair: entry_pair(entry), h_lor: &lor, zero_lor: args.zero_lor };
    let output = model
        .forward(&mut tape, &params, &input)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let predicted = params_from_output(&tape, &output, &cfg)?;

    let mut wrote = None;
    if let Some(path) = &args.out {
        let seed = g.seed.unwrap_or(0);
        let ir = synth::synthesize(&predicted, &lor, seed)
            .map_err(|e| CliError::Run(e.to_string()))?;
        save_ir(&ir, path, &Sidecar::for_ir(&ir)).map_err(|e| CliError::file(path, e))?;
        wrote = Some(path.clone());
    }

    let label = entry
        .srir_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if g.json {
        println!(
            "{}",
            json!({
                "entry": args.entry,
                "label": label,
                "t60": predicted.t60,
                "g_er": predicted.g_er,
                "g_lr": predicted.g_lr,
                "target_t60": target.t60,
                "out": wrote,
            })
        );
    } else {
        println!(
            "entry {} ({label}): predicted t60 {:.3} s (target {:.3}), g_er {:.3}, g_lr {:.3}",
            args.entry, predicted.t60, target.t60, predicted.g_er, predicted.g_lr
        );
        if let Some(path) = wrote {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
