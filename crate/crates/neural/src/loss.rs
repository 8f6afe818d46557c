//! Differentiable training objective: the early-reflection waveform loss
//! `α·(mel_spectral + mel_temporal) + β·mse + γ·ic` plus mean absolute
//! error on the auxiliary and late-reverberation heads.

use crate::melgraph::MelGraph;
use crate::model::ModelOutput;
use crate::shape_err;
use crate::tape::{Tape, Var};
use crate::NeuralError;
use aurasim_core::ambisonic::AmbisonicIR;
use aurasim_core::metrics::{mel_spectrogram, LossWeights, MelConfig};
use std::rc::Rc;

/// Per-term numeric values of one loss evaluation (read off the tape).
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub mel_spectral: f64,
    pub mel_temporal: f64,
    pub mse: f64,
    pub ic: f64,
    pub mae_aux: f64,
    pub mae_lr: f64,
    pub total: f64,
}

/// Training target for one example.
pub struct TrainTarget {
    /// Unit-energy early-reflection waveform the ER head should match.
    pub er: AmbisonicIR,
    /// `[t60, g_er, g_lr]` for the auxiliary head.
    pub aux: [f64; 3],
    /// Late energy envelopes, `n_bands × n_env_points`.
    pub lr_env: Vec<Vec<f64>>,
}

/// Split an `(len, 4)` waveform matrix into four `1 × len` channel rows.
fn split_channels(tape: &mut Tape, wave: Var) -> Vec<Var> {
    let (len, c) = tape.shape(wave);
    (0..c)
        .map(|ch| {
            let map: Vec<usize> = (0..len).map(|t| t * c + ch).collect();
            tape.gather(wave, Rc::new(map), 1, len)
        })
        .collect()
}

/// Cyclic channel-difference matrix: column `c` becomes `x_c − x_{c+1 mod C}`.
fn cyclic_difference(tape: &mut Tape, wave: Var) -> Var {
    let (len, c) = tape.shape(wave);
    let map: Vec<usize> = (0..len)
        .flat_map(|t| (0..c).map(move |ch| t * c + (ch + 1) % c))
        .collect();
    let rotated = tape.gather(wave, Rc::new(map), len, c);
    tape.sub(wave, rotated)
}

/// Differentiable early-reflection waveform loss against a fixed target,
/// mirroring the reference aggregate on the same samples. `pred` is
/// `(len, 4)` with channels in columns. Returns the scalar and the three
/// sub-scalars `(mel_spectral, mel_temporal, mse, ic)`.
pub fn er_waveform_loss(
    tape: &mut Tape,
    pred: Var,
    target: &AmbisonicIR,
    weights: LossWeights,
    cfg_spectral: &MelConfig,
    cfg_temporal: &MelConfig,
) -> Result<(Var, [Var; 4]), NeuralError> {
    weights.validate()?;
    let (len, c) = tape.shape(pred);
    if c != 4 {
        return Err(shape_err("er loss", format!("expected 4 channels, got {c}")));
    }
    if target.len() != len {
        return Err(shape_err(
            "er loss",
            format!("target length {} vs prediction {len}", target.len()),
        ));
    }
    let channels = split_channels(tape, pred);

    let mel_s_target = mel_spectrogram(target, cfg_spectral)?;
    let mel_t_target = mel_spectrogram(target, cfg_temporal)?;
    let graph_s = MelGraph::new(cfg_spectral)?;
    let graph_t = MelGraph::new(cfg_temporal)?;
    let mel_s = graph_s.distance_to(tape, &channels, &mel_s_target)?;
    let mel_t = graph_t.distance_to(tape, &channels, &mel_t_target)?;

    let target_flat: Vec<f64> = (0..len)
        .flat_map(|t| (0..4).map(move |ch| target.channels[ch][t]))
        .collect();
    let target_var = tape.leaf(len, 4, target_flat);
    let diff = tape.sub(pred, target_var);
    let sq = tape.pow_const(diff, 2.0);
    let mse = tape.mean_all(sq);

    let d_pred = cyclic_difference(tape, pred);
    let d_target = cyclic_difference(tape, target_var);
    let d_diff = tape.sub(d_pred, d_target);
    let d_sq = tape.pow_const(d_diff, 2.0);
    let ic = tape.mean_all(d_sq);

    let mels = tape.add(mel_s, mel_t);
    let mel_part = tape.scale(mels, weights.alpha);
    let mse_part = tape.scale(mse, weights.beta);
    let ic_part = tape.scale(ic, weights.gamma);
    let partial = tape.add(mel_part, mse_part);
    let total = tape.add(partial, ic_part);
    Ok((total, [mel_s, mel_t, mse, ic]))
}

/// Mean absolute error between a prediction and a constant matrix.
fn mae_to(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var, NeuralError> {
    let (r, c) = tape.shape(pred);
    if target.len() != r * c {
        return Err(shape_err("mae", format!("target size {} vs {r}×{c}", target.len())));
    }
    let t = tape.leaf(r, c, target.to_vec());
    let diff = tape.sub(pred, t);
    let a = tape.abs(diff);
    Ok(tape.mean_all(a))
}

/// Full training loss over the three heads. Returns the scalar loss
/// variable plus the numeric breakdown.
pub fn training_loss(
    tape: &mut Tape,
    out: &ModelOutput,
    target: &TrainTarget,
    weights: LossWeights,
    cfg_spectral: &MelConfig,
    cfg_temporal: &MelConfig,
) -> Result<(Var, LossTerms), NeuralError> {
    let (er_total, [mel_s, mel_t, mse, ic]) =
        er_waveform_loss(tape, out.er, &target.er, weights, cfg_spectral, cfg_temporal)?;
    let mae_aux = mae_to(tape, out.aux, &target.aux)?;
    let lr_flat: Vec<f64> = target.lr_env.iter().flatten().copied().collect();
    let mae_lr = mae_to(tape, out.lr_env, &lr_flat)?;
    let with_aux = tape.add(er_total, mae_aux);
    let total = tape.add(with_aux, mae_lr);
    let terms = LossTerms {
        mel_spectral: tape.value(mel_s)[0],
        mel_temporal: tape.value(mel_t)[0],
        mse: tape.value(mse)[0],
        ic: tape.value(ic)[0],
        mae_aux: tape.value(mae_aux)[0],
        mae_lr: tape.value(mae_lr)[0],
        total: tape.value(total)[0],
    };
    Ok((total, terms))
}
