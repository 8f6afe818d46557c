//! Signal-path subcommands: simulate-lor, synthesize, render.

use std::path::PathBuf;

use aurasim_core::ambisonic::AmbisonicIR;
use aurasim_core::ga::{compute_lor, GaError, LorOrder};
use aurasim_core::scene::{PositionPair, SceneGraph};
use aurasim_core::synth;
use aurasim_core::wavio::{load_ir, save_ir, Sidecar};
use clap::Args;
use serde_json::json;

use crate::defaults::defaults;
use crate::io::{box_scene, convolve, load_mono_wav, load_scene, parse_vec3, write_wav};
use crate::{CliError, Global};

#[derive(Args)]
pub struct SimulateLorArgs {
    /// Scene JSON file.
    #[arg(long, required_unless_present = "box_dims", conflicts_with = "box_dims")]
    pub scene: Option<PathBuf>,

    /// Inline shoebox dimensions "Lx,Ly,Lz" instead of --scene.
    #[arg(long = "box", value_name = "LX,LY,LZ")]
    pub box_dims: Option<String>,

    /// Uniform wall reflectivity when --box is used.
    #[arg(long, default_value_t = 0.8)]
    pub refl: f64,

    /// Uniform wall scattering when --box is used.
    #[arg(long, default_value_t = 0.1)]
    pub scat: f64,

    /// Source position "x,y,z" in meters.
    #[arg(long)]
    pub src: String,

    /// Listener position "x,y,z" in meters.
    #[arg(long)]
    pub lis: String,

    /// Maximum reflection order.
    #[arg(long)]
    pub order: Option<usize>,

    /// Sample rate in Hz.
    #[arg(long)]
    pub rate: Option<u32>,

    /// Output length in samples (defaults to fitting the last arrival).
    #[arg(long)]
    pub length: Option<usize>,

    /// Output WAV path.
    #[arg(short, long)]
    pub out: PathBuf,
}

/// Resolve --scene/--box into a scene graph.
pub fn resolve_scene(
    scene: Option<&PathBuf>,
    box_dims: Option<&String>,
    refl: f64,
    scat: f64,
) -> Result<SceneGraph, CliError> {
    match (scene, box_dims) {
        (Some(path), _) => load_scene(path),
        (None, Some(dims)) => box_scene(dims, refl, scat),
        (None, None) => Err(CliError::Usage("either --scene or --box is required".into())),
    }
}

/// Geometry and order problems are invocation errors; encoding faults are not.
pub fn map_ga(e: GaError) -> CliError {
    match e {
        GaError::Encode(_) => CliError::Run(e.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

pub fn simulate_lor(args: &SimulateLorArgs, g: Global) -> Result<(), CliError> {
    let scene = resolve_scene(args.scene.as_ref(), args.box_dims.as_ref(), args.refl, args.scat)?;
    let pair = PositionPair { source: parse_vec3(&args.src)?, listener: parse_vec3(&args.lis)? };

    let order = args.order.unwrap_or(defaults().audio.lor_order);
    let rate = args.rate.unwrap_or(defaults().audio.sample_rate);
    let ir = compute_lor(&scene, &pair, LorOrder(order), rate, args.length).map_err(map_ga)?;

    let sidecar = Sidecar::for_ir(&ir).with_provenance(pair.source, pair.listener, order);
    save_ir(&ir, &args.out, &sidecar).map_err(|e| CliError::file(&args.out, e))?;

    if g.json {
        println!(
            "{}",
            json!({
                "path": args.out,
                "channels": 4,
                "samples": ir.len(),
                "sample_rate": ir.sample_rate,
                "order": order,
            })
        );
    } else {
        println!(
            "wrote {}: 4 channels, {} samples at {} Hz (order {order})",
            args.out.display(),
            ir.len(),
            ir.sample_rate
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct SynthesizeArgs {
    /// Perceptual-parameter JSON file.
    #[arg(long)]
    pub params: PathBuf,

    /// Low-order reflection WAV to embed; omitted means a silent early path.
    #[arg(long)]
    pub lor: Option<PathBuf>,

    /// Output WAV path.
    #[arg(short, long)]
    pub out: PathBuf,
}

pub fn synthesize(args: &SynthesizeArgs, g: Global) -> Result<(), CliError> {
    let params = aurasim_dataset::load_params(&args.params)?;
    let lor = match &args.lor {
        Some(path) => load_ir(path).map_err(|e| CliError::file(path, e))?.0,
        None => AmbisonicIR::new_a_format(params.h_er_norm.len(), params.h_er_norm.sample_rate),
    };
    let seed = g.seed.unwrap_or(0);
    let ir = synth::synthesize(&params, &lor, seed).map_err(|e| CliError::Run(e.to_string()))?;
    save_ir(&ir, &args.out, &Sidecar::for_ir(&ir)).map_err(|e| CliError::file(&args.out, e))?;

    if g.json {
        println!(
            "{}",
            json!({
                "path": args.out,
                "samples": ir.len(),
                "sample_rate": ir.sample_rate,
                "t60": params.t60,
                "g_er": params.g_er,
                "g_lr": params.g_lr,
            })
        );
    } else {
        println!(
            "wrote {}: {} samples at {} Hz (t60 {:.3} s, g_er {:.3}, g_lr {:.3})",
            args.out.display(),
            ir.len(),
            ir.sample_rate,
            params.t60,
            params.g_er,
            params.g_lr
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct RenderArgs {
    /// Impulse-response WAV (4 channels).
    #[arg(long)]
    pub ir: PathBuf,

    /// Mono audio WAV to convolve.
    #[arg(long)]
    pub audio: PathBuf,

    /// Comma-separated IR channel indices to render.
    #[arg(long, default_value = "0,1,2,3")]
    pub channels: String,

    /// Output WAV path.
    #[arg(short, long)]
    pub out: PathBuf,
}

pub fn render(args: &RenderArgs, g: Global) -> Result<(), CliError> {
    let (ir, _) = load_ir(&args.ir).map_err(|e| CliError::file(&args.ir, e))?;
    let (dry, rate) = load_mono_wav(&args.audio)?;
    if rate != ir.sample_rate {
        return Err(CliError::Run(format!(
            "sample rate mismatch: impulse response {} Hz vs audio {rate} Hz",
            ir.sample_rate
        )));
    }

    let mut picks = Vec::new();
    for part in args.channels.split(',') {
        let idx: usize = part
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad channel index {part:?}")))?;
        if idx >= ir.channels.len() {
            return Err(CliError::Usage(format!(
                "channel {idx} out of range (impulse response has {})",
                ir.channels.len()
            )));
        }
        picks.push(idx);
    }
    if picks.is_empty() {
        return Err(CliError::Usage("no channels selected".into()));
    }

    let wet: Vec<Vec<f64>> = picks.iter().map(|&c| convolve(&ir.channels[c], &dry)).collect();
    let peak = wet
        .iter()
        .flat_map(|ch| ch.iter())
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    write_wav(&args.out, &wet, rate)?;

    if g.json {
        println!(
            "{}",
            json!({
                "path": args.out,
                "channels": picks,
                "samples": wet[0].len(),
                "sample_rate": rate,
                "peak": peak,
            })
        );
    } else {
        println!(
            "wrote {}: {} channels, {} samples at {rate} Hz (peak {peak:.4})",
            args.out.display(),
            wet.len(),
            wet[0].len()
        );
    }
    Ok(())
}
