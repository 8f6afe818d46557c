//! Dataset subcommands: generation and diversity analysis.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aurasim_dataset::{
    analyze_diversity, generate_dataset, render_plot, write_entries_csv, write_histogram_csv,
    DatasetError, DatasetManifest, DiversityReport, SceneSpec,
};
use clap::{Args, Subcommand};
use serde_json::json;

use crate::defaults::defaults;
use crate::io::parse_range;
use crate::{CliError, Global};

#[derive(Subcommand)]
pub enum DatasetCmd {
    /// Render a dataset of simulated responses with a manifest.
    Gen(GenArgs),
    /// Principal-component and T60 diversity analysis of a dataset.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Output directory (created if missing).
    #[arg(short, long)]
    pub out: PathBuf,

    /// Material variants per scene.
    #[arg(long)]
    pub variants: Option<usize>,

    /// Source/listener pairs per variant.
    #[arg(long)]
    pub pairs: Option<usize>,

    /// Reference simulation reflection order.
    #[arg(long)]
    pub order: Option<usize>,

    /// Sample rate in Hz.
    #[arg(long)]
    pub rate: Option<u32>,

    /// Reflectivity range "lo,hi".
    #[arg(long)]
    pub refl: Option<String>,

    /// Scattering range "lo,hi".
    #[arg(long)]
    pub scat: Option<String>,

    /// Minimum position clearance from any wall, in meters.
    #[arg(long)]
    pub clearance: Option<f64>,

    /// JSON file with a custom scene list `[{"id": .., "dims": [..]}, ..]`.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
}

fn load_scene_specs(path: &Path) -> Result<Vec<SceneSpec>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    let specs: Vec<SceneSpec> =
        serde_json::from_str(&text).map_err(|e| CliError::file(path, e))?;
    if specs.is_empty() {
        return Err(CliError::file(path, "scene list is empty"));
    }
    Ok(specs)
}

pub fn generate(args: &GenArgs, g: Global) -> Result<(), CliError> {
    let d = defaults();
    let mut cfg = d.dataset.generation_config(args.rate.unwrap_or(d.audio.sample_rate));
    if let Some(v) = args.variants {
        cfg.variants_per_scene = v;
    }
    if let Some(p) = args.pairs {
        cfg.pairs_per_variant = p;
    }
    if let Some(o) = args.order {
        cfg.max_order = o;
    }
    if let Some(r) = &args.refl {
        cfg.refl_range = parse_range(r)?;
    }
    if let Some(s) = &args.scat {
        cfg.scat_range = parse_range(s)?;
    }
    if let Some(c) = args.clearance {
        cfg.min_clearance_m = c;
    }
    if let Some(path) = &args.scenes {
        cfg.scenes = load_scene_specs(path)?;
    }
    cfg.seed = g.seed.unwrap_or(d.dataset.seed);

    let t0 = Instant::now();
    let manifest = generate_dataset(&cfg, &args.out)?;
    let elapsed = t0.elapsed().as_secs_f64();

    if g.json {
        println!(
            "{}",
            json!({
                "dir": args.out,
                "manifest": args.out.join("manifest.json"),
                "entries": manifest.entries.len(),
                "elapsed_s": elapsed,
            })
        );
    } else {
        println!(
            "generated {} entries in {} ({elapsed:.1} s)",
            manifest.entries.len(),
            args.out.display()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Path to a dataset manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Number of T60 histogram bins.
    #[arg(long)]
    pub bins: Option<usize>,

    /// Directory to write entries.csv, histogram.csv, and diversity.png.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn analyze(args: &AnalyzeArgs, g: Global) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let base_dir = args.manifest.parent().unwrap_or(Path::new("."));
    let bins = args.bins.unwrap_or(defaults().dataset.histogram_bins);
    let report = analyze_diversity(&manifest, base_dir, bins)?;

    type Writer = fn(&DiversityReport, &Path) -> Result<(), DatasetError>;
    let mut written = Vec::new();
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
        let outputs: [(&str, Writer); 3] = [
            ("entries.csv", write_entries_csv),
            ("histogram.csv", write_histogram_csv),
            ("diversity.png", render_plot),
        ];
        for (name, write) in outputs {
            let path = dir.join(name);
            write(&report, &path)?;
            written.push(path);
        }
    }

    let (t_min, t_max) = report
        .t60
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));

    if g.json {
        println!(
            "{}",
            json!({
                "entries": report.labels.len(),
                "eigenvalues": report.eigenvalues,
                "t60_min_s": t_min,
                "t60_max_s": t_max,
                "report": report,
                "written": written,
            })
        );
    } else {
        println!("analyzed {} entries", report.labels.len());
        println!(
            "principal-component variances: {:.6e}, {:.6e}",
            report.eigenvalues[0], report.eigenvalues[1]
        );
        println!("t60 range: {t_min:.4} s .. {t_max:.4} s (ratio {:.2})", t_max / t_min);
        println!("histogram ({} bins):", report.histogram.len());
        for bin in &report.histogram {
            println!("  [{:.4}, {:.4})  {}", bin.lo, bin.hi, bin.count);
        }
        for path in &written {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
