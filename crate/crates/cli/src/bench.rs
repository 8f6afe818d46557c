//! The bench subcommand: wall-clock timings for each pipeline stage.

use std::hint::black_box;
use std::path::PathBuf;
use std::time::Instant;

use aurasim_core::ambisonic::AmbisonicIR;
use aurasim_core::ga::{compute_lor, LorOrder};
use aurasim_core::geom::Vec3;
use aurasim_core::scene::{make_shoebox, PositionPair, SceneGraph};
use aurasim_core::synth::{self, PerceptualParams, PerceptualParamsHeader, ENVELOPE_POINTS};
use aurasim_neural::config::ModelConfig;
use aurasim_neural::model::{Model, ModelInput};
use aurasim_neural::tape::Tape;
use clap::Args;
use serde::Serialize;

use crate::audio::{map_ga, resolve_scene};
use crate::defaults::defaults;
use crate::io::parse_vec3;
use crate::learn::params_from_output;
use crate::{CliError, Global};

/// Published single-threaded timings, shown for context next to local
/// numbers. They come from different hardware and are not a pass/fail bar.
pub const REFERENCE_GA_LOR_MS: f64 = 310.09;
pub const REFERENCE_PS_MS: f64 = 86.43;

/// Fewest timed runs that make the p95 column meaningful.
pub const MIN_RUNS: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub stage: String,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceTimings {
    pub ga_lor_ms: f64,
    pub ps_ms: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub machine: MachineInfo,
    pub reference: ReferenceTimings,
}

fn machine_info() -> MachineInfo {
    MachineInfo {
        os: std::env::consts::OS.to_string(),
        arch: std::env::consts::ARCH.to_string(),
        logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// Time one closure: `warmups` untimed calls, then `runs` timed ones.
/// p95 is the ceil-indexed order statistic of the run times.
fn time_stage<T>(
    stage: &str,
    warmups: usize,
    runs: usize,
    mut f: impl FnMut() -> Result<T, CliError>,
) -> Result<BenchRow, CliError> {
    for _ in 0..warmups {
        black_box(f()?);
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        black_box(out);
    }
    samples.sort_by(f64::total_cmp);
    let mean_ms = samples.iter().sum::<f64>() / runs as f64;
    let idx = ((runs as f64 * 0.95).ceil() as usize).max(1) - 1;
    let p95_ms = samples[idx.min(runs - 1)];
    Ok(BenchRow { stage: stage.to_string(), mean_ms, p95_ms, runs })
}

/// Deterministic perceptual parameters so the synthesis stage measures a
/// fixed workload instead of whatever the scene happens to produce.
fn fixed_params(rate: u32) -> Result<PerceptualParams, CliError> {
    let er_length = 1024;
    let mut h_er = AmbisonicIR::new_a_format(er_length, rate);
    h_er.channels[0][0] = 1.0;
    let header = PerceptualParamsHeader {
        t60: 0.5,
        g_er: 0.7,
        g_lr: 0.5,
        sample_rate: rate,
        er_length,
        e_lr: vec![vec![1.0; ENVELOPE_POINTS]; aurasim_core::bands::N_BANDS],
    };
    PerceptualParams::from_header(header, h_er).map_err(|e| CliError::Internal(e.to_string()))
}

pub struct BenchSetup<'a> {
    pub scene: &'a SceneGraph,
    pub pair: PositionPair,
    pub order: usize,
    pub rate: u32,
    pub runs: usize,
    pub warmups: usize,
    pub seed: u64,
}

/// Time the four stages: geometric low-order reflections, the toy model's
/// forward pass, parametric synthesis, and the full chain.
pub fn run_bench(s: &BenchSetup) -> Result<BenchReport, CliError> {
    let order = LorOrder(s.order);
    let mut rows = Vec::new();

    rows.push(time_stage("GA-LoR", s.warmups, s.runs, || {
        compute_lor(s.scene, &s.pair, order, s.rate, None).map_err(map_ga)
    })?);

    let cfg = ModelConfig::toy(s.rate);
    let model = Model::new(&cfg, s.seed).map_err(|e| CliError::Run(e.to_string()))?;
    let lor = compute_lor(s.scene, &s.pair, order, s.rate, None).map_err(map_ga)?;

    rows.push(time_stage("DL-model", s.warmups, s.runs, || {
        let mut tape = Tape::new();
        let params = model.store.attach(&mut tape);
        let input = ModelInput { scene: s.scene, pair: s.pair, h_lor: &lor, zero_lor: false };
        let out = model
            .forward(&mut tape, &params, &input)
            .map_err(|e| CliError::Run(e.to_string()))?;
        Ok(tape.value(out.aux)[0])
    })?);

    let ps_params = fixed_params(s.rate)?;
    rows.push(time_stage("PS", s.warmups, s.runs, || {
        synth::synthesize(&ps_params, &lor, s.seed).map_err(|e| CliError::Run(e.to_string()))
    })?);

    rows.push(time_stage("end-to-end", s.warmups, s.runs, || {
        let lor = compute_lor(s.scene, &s.pair, order, s.rate, None).map_err(map_ga)?;
        let mut tape = Tape::new();
        let params = model.store.attach(&mut tape);
        let input = ModelInput { scene: s.scene, pair: s.pair, h_lor: &lor, zero_lor: false };
        let out = model
            .forward(&mut tape, &params, &input)
            .map_err(|e| CliError::Run(e.to_string()))?;
        let predicted = params_from_output(&tape, &out, &cfg)?;
        synth::synthesize(&predicted, &lor, s.seed).map_err(|e| CliError::Run(e.to_string()))
    })?);

    Ok(BenchReport {
        rows,
        machine: machine_info(),
        reference: ReferenceTimings {
            ga_lor_ms: REFERENCE_GA_LOR_MS,
            ps_ms: REFERENCE_PS_MS,
            note: "published reference values from different hardware; not a pass/fail comparison"
                .to_string(),
        },
    })
}

#[derive(Args)]
pub struct BenchArgs {
    /// Scene JSON file (default: a uniform 4 x 3 x 2.5 m shoebox).
    #[arg(long, conflicts_with = "box_dims")]
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

    /// Source position "x,y,z" (default: a fixed interior point).
    #[arg(long)]
    pub src: Option<String>,

    /// Listener position "x,y,z" (default: a fixed interior point).
    #[arg(long)]
    pub lis: Option<String>,

    /// Reflection order for the geometric stage.
    #[arg(long)]
    pub order: Option<usize>,

    /// Sample rate in Hz.
    #[arg(long)]
    pub rate: Option<u32>,

    /// Timed runs per stage (minimum 10).
    #[arg(long)]
    pub runs: Option<usize>,

    /// Untimed warmup runs per stage.
    #[arg(long)]
    pub warmups: Option<usize>,
}

/// Source/listener a quarter of the room apart along x, at mid-height.
fn default_pair(scene: &SceneGraph) -> PositionPair {
    let bb = scene.bounding_box;
    let center = (bb.min + bb.max) * 0.5;
    let shift = Vec3::new((bb.max.x - bb.min.x) * 0.25, 0.0, 0.0);
    PositionPair { source: center - shift, listener: center + shift }
}

pub fn bench(args: &BenchArgs, g: Global) -> Result<(), CliError> {
    let d = defaults();
    let scene = if args.scene.is_none() && args.box_dims.is_none() {
        make_shoebox([4.0, 3.0, 2.5], [args.refl; 8], [args.scat; 8])
            .map_err(|e| CliError::Internal(e.to_string()))?
    } else {
        resolve_scene(args.scene.as_ref(), args.box_dims.as_ref(), args.refl, args.scat)?
    };

    let pair = match (&args.src, &args.lis) {
        (Some(s), Some(l)) => PositionPair { source: parse_vec3(s)?, listener: parse_vec3(l)? },
        (None, None) => default_pair(&scene),
        _ => return Err(CliError::Usage("--src and --lis must be given together".into())),
    };

    let runs = args.runs.unwrap_or(d.bench.runs);
    if runs < MIN_RUNS {
        return Err(CliError::Usage(format!("--runs {runs} is below the minimum of {MIN_RUNS}")));
    }
    let setup = BenchSetup {
        scene: &scene,
        pair,
        order: args.order.unwrap_or(d.audio.lor_order),
        rate: args.rate.unwrap_or(d.audio.sample_rate),
        runs,
        warmups: args.warmups.unwrap_or(d.bench.warmups),
        seed: g.seed.unwrap_or(0),
    };
    let report = run_bench(&setup)?;

    if g.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?
        );
    } else {
        println!("{:<12} {:>10} {:>10} {:>6}", "stage", "mean_ms", "p95_ms", "runs");
        for row in &report.rows {
            println!(
                "{:<12} {:>10.3} {:>10.3} {:>6}",
                row.stage, row.mean_ms, row.p95_ms, row.runs
            );
        }
        println!();
        println!(
            "published reference values: GA-LoR {REFERENCE_GA_LOR_MS} ms, PS {REFERENCE_PS_MS} ms"
        );
        println!("(measured on different hardware; not a pass/fail comparison)");
        println!(
            "machine: {} {}, {} logical cpus",
            report.machine.os, report.machine.arch, report.machine.logical_cpus
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_report_has_positive_ordered_timings() {
        let scene = make_shoebox([4.0, 3.0, 2.5], [0.8; 8], [0.1; 8]).unwrap();
        let setup = BenchSetup {
            scene: &scene,
            pair: default_pair(&scene),
            order: 2,
            rate: 24_000,
            runs: 10,
            warmups: 1,
            seed: 7,
        };
        let report = run_bench(&setup).unwrap();
        let stages: Vec<&str> = report.rows.iter().map(|r| r.stage.as_str()).collect();
        assert_eq!(stages, ["GA-LoR", "DL-model", "PS", "end-to-end"]);
        for row in &report.rows {
            assert!(row.mean_ms > 0.0 && row.mean_ms.is_finite(), "{row:?}");
            assert!(row.p95_ms > 0.0 && row.p95_ms.is_finite(), "{row:?}");
            assert!(row.mean_ms <= row.p95_ms, "{row:?}");
            assert_eq!(row.runs, 10);
        }
    }

    #[test]
    fn p95_is_the_ceil_order_statistic() {
        // With 10 runs the index is ceil(9.5) - 1 = 9, the maximum.
        let mut calls = 0;
        let row = time_stage("x", 0, 10, || {
            calls += 1;
            std::thread::sleep(std::time::Duration::from_micros(50 * calls));
            Ok::<_, CliError>(())
        })
        .unwrap();
        assert_eq!(row.runs, 10);
        assert!(row.p95_ms >= row.mean_ms);
    }

    #[test]
    fn default_pair_sits_inside_the_box() {
        let scene = make_shoebox([2.0, 2.0, 2.0], [0.5; 8], [0.2; 8]).unwrap();
        let pair = default_pair(&scene);
        assert!(scene.bounding_box.contains_with_margin(pair.source, 0.0));
        assert!(scene.bounding_box.contains_with_margin(pair.listener, 0.0));
        assert!(pair.source.dist(pair.listener) > 0.5);
    }
}
