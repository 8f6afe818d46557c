//! The metrics subcommand: compare two impulse responses.

use std::path::PathBuf;

use aurasim_core::metrics::MetricReport;
use aurasim_core::wavio::load_ir;
use clap::Args;

use crate::{CliError, Global};

#[derive(Args)]
pub struct MetricsArgs {
    /// Predicted / rendered impulse response WAV.
    #[arg(long)]
    pub pred: PathBuf,

    /// Reference impulse response WAV.
    #[arg(long)]
    pub target: PathBuf,
}

pub fn metrics(args: &MetricsArgs, g: Global) -> Result<(), CliError> {
    let (pred, _) = load_ir(&args.pred).map_err(|e| CliError::file(&args.pred, e))?;
    let (target, _) = load_ir(&args.target).map_err(|e| CliError::file(&args.target, e))?;
    let n = pred.len().max(target.len());
    let (pred, target) = (pred.pad_to(n), target.pad_to(n));
    let report =
        MetricReport::compare(&pred, &target).map_err(|e| CliError::Run(e.to_string()))?;

    if g.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Internal(e.to_string()))?
        );
    } else {
        println!("MAE    {:.6}", report.mae);
        println!("T60    {:.6} s", report.t60);
        println!("En.    {:.6} dB", report.energy);
        println!("DRR    {:.6} dB", report.drr);
        println!("Mel    {:.6}", report.mel);
        println!("Mel-T  {:.6}", report.mel_t);
    }
    Ok(())
}
