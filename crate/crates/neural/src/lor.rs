//! Reflection encoder: two parallel branches over the low-order reflection
//! response — strided 1-D convolutions on the raw 4-channel waveform and
//! strided 2-D convolutions on the per-channel mel images — each followed
//! by a gated recurrent pass whose final hidden states are concatenated.

use crate::config::ModelConfig;
use crate::melgraph::MelGraph;
use crate::params::{Init, ParamStore, Params};
use crate::shape_err;
use crate::tape::{rows_map, Tape, Var};
use crate::NeuralError;
use aurasim_core::ambisonic::AmbisonicIR;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// Patch-extraction map for a strided 1-D convolution over a `(len, c_in)`
/// sequence: output row `t` collects taps `(tap, channel)` in that order.
pub fn im2col_1d(len: usize, c_in: usize, kernel: usize, stride: usize) -> Vec<usize> {
    let l_out = (len - kernel) / stride + 1;
    let mut map = Vec::with_capacity(l_out * kernel * c_in);
    for t in 0..l_out {
        for tap in 0..kernel {
            let row = t * stride + tap;
            for c in 0..c_in {
                map.push(row * c_in + c);
            }
        }
    }
    map
}

/// Patch-extraction map for a strided square 2-D convolution over an
/// `(h·w, c_in)` feature matrix whose rows are column-major in the image
/// sense (row index `j·h + i` for image position `(i, j)`). Output rows use
/// the same ordering; patch entries are ordered `(di, dj, channel)`.
pub fn im2col_2d(h: usize, w: usize, c_in: usize, kernel: usize, stride: usize) -> Vec<usize> {
    let h_out = (h - kernel) / stride + 1;
    let w_out = (w - kernel) / stride + 1;
    let mut map = Vec::with_capacity(h_out * w_out * kernel * kernel * c_in);
    for j in 0..w_out {
        for i in 0..h_out {
            for di in 0..kernel {
                for dj in 0..kernel {
                    let src_row = (j * stride + dj) * h + (i * stride + di);
                    for c in 0..c_in {
                        map.push(src_row * c_in + c);
                    }
                }
            }
        }
    }
    map
}

/// Linear strided 1-D convolution: `(len, c_in) → (l_out, c_out)` with
/// weight `(kernel·c_in, c_out)` and a broadcast bias row.
pub fn conv1d(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    kernel: usize,
    stride: usize,
) -> Result<Var, NeuralError> {
    let (len, c_in) = tape.shape(x);
    let (wr, _) = tape.shape(w);
    if len < kernel {
        return Err(shape_err("conv1d", format!("input length {len} shorter than kernel {kernel}")));
    }
    if wr != kernel * c_in {
        return Err(shape_err("conv1d", format!("weight rows {wr} vs kernel·c_in {}", kernel * c_in)));
    }
    let l_out = (len - kernel) / stride + 1;
    let map = Rc::new(im2col_1d(len, c_in, kernel, stride));
    let patches = tape.gather(x, map, l_out, kernel * c_in);
    let y = tape.matmul(patches, w);
    Ok(tape.add_row(y, b))
}

/// Linear strided square 2-D convolution over a `(h·w, c_in)` feature
/// matrix (rows ordered `j·h + i`): returns `(h_out·w_out, c_out)` rows in
/// the same ordering, with weight `(kernel²·c_in, c_out)`.
pub fn conv2d(
    tape: &mut Tape,
    x: Var,
    h: usize,
    w_dim: usize,
    weight: Var,
    bias: Var,
    kernel: usize,
    stride: usize,
) -> Result<Var, NeuralError> {
    let (rows, c_in) = tape.shape(x);
    if rows != h * w_dim {
        return Err(shape_err("conv2d", format!("rows {rows} vs image {h}×{w_dim}")));
    }
    if h < kernel || w_dim < kernel {
        return Err(shape_err("conv2d", format!("image {h}×{w_dim} smaller than kernel {kernel}")));
    }
    let (wr, _) = tape.shape(weight);
    if wr != kernel * kernel * c_in {
        return Err(shape_err(
            "conv2d",
            format!("weight rows {wr} vs kernel²·c_in {}", kernel * kernel * c_in),
        ));
    }
    let h_out = (h - kernel) / stride + 1;
    let w_out = (w_dim - kernel) / stride + 1;
    let map = Rc::new(im2col_2d(h, w_dim, c_in, kernel, stride));
    let patches = tape.gather(x, map, h_out * w_out, kernel * kernel * c_in);
    let y = tape.matmul(patches, weight);
    Ok(tape.add_row(y, bias))
}

/// Gated recurrent pass over a `(steps, d_in)` sequence; returns the final
/// hidden state `(1, hidden)`. Weight blocks live under
/// `{prefix}.{wz,uz,bz,wr,ur,br,wn,un,bn}` with the standard update
/// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `n = tanh(xW_n + r∘(hU_n) + b_n)`, `h′ = (1−z)∘n + z∘h`.
pub fn gru_sequence(
    tape: &mut Tape,
    xs: Var,
    params: &Params,
    prefix: &str,
    hidden: usize,
) -> Result<Var, NeuralError> {
    let (steps, _) = tape.shape(xs);
    if steps == 0 {
        return Err(shape_err("gru", "empty sequence".into()));
    }
    let get = |name: &str| params.var(&format!("{prefix}.{name}"));
    let mut h = tape.leaf(1, hidden, vec![0.0; hidden]);
    let ones = tape.leaf(1, hidden, vec![1.0; hidden]);
    for t in 0..steps {
        let x = {
            let map = Rc::new(rows_map(&[t], tape.shape(xs).1));
            let d = tape.shape(xs).1;
            tape.gather(xs, map, 1, d)
        };
        let gate = |tape: &mut Tape, w: &str, u: &str, b: &str, h: Var| {
            let xw = tape.matmul(x, get(w));
            let hu = tape.matmul(h, get(u));
            let s = tape.add(xw, hu);
            tape.add_row(s, get(b))
        };
        let z_pre = gate(tape, "wz", "uz", "bz", h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, "wr", "ur", "br", h);
        let r = tape.sigmoid(r_pre);
        let xw = tape.matmul(x, get("wn"));
        let hu = tape.matmul(h, get("un"));
        let rhu = tape.mul(r, hu);
        let n_pre0 = tape.add(xw, rhu);
        let n_pre = tape.add_row(n_pre0, get("bn"));
        let n = tape.tanh(n_pre);
        let keep = tape.sub(ones, z);
        let new_part = tape.mul(keep, n);
        let old_part = tape.mul(z, h);
        h = tape.add(new_part, old_part);
    }
    Ok(h)
}

/// Register the gate weights of one recurrent unit under `{prefix}.*`.
pub fn add_gru_params(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) {
    for g in ["z", "r", "n"] {
        store.add(&format!("{prefix}.w{g}"), d_in, hidden, Init::Glorot, rng);
        store.add(&format!("{prefix}.u{g}"), hidden, hidden, Init::Glorot, rng);
        store.add(&format!("{prefix}.b{g}"), 1, hidden, Init::Zeros, rng);
    }
}

/// Register every weight of both reflection-encoder branches.
pub fn add_lor_params(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let mut c_in = 4;
    for (i, &c_out) in cfg.wave_channels.iter().enumerate() {
        store.add(
            &format!("lor.wave.conv{i}.w"),
            cfg.wave_kernel * c_in,
            c_out,
            Init::Glorot,
            rng,
        );
        store.add(&format!("lor.wave.conv{i}.b"), 1, c_out, Init::Zeros, rng);
        c_in = c_out;
    }
    add_gru_params(store, "lor.wave.gru", *cfg.wave_channels.last().unwrap(), cfg.rnn_width, rng);
    let mut c_in = 4;
    for (i, &c_out) in cfg.spec_channels.iter().enumerate() {
        store.add(
            &format!("lor.spec.conv{i}.w"),
            cfg.spec_kernel * cfg.spec_kernel * c_in,
            c_out,
            Init::Glorot,
            rng,
        );
        store.add(&format!("lor.spec.conv{i}.b"), 1, c_out, Init::Zeros, rng);
        c_in = c_out;
    }
    let plan = cfg.plan().expect("validated config");
    let (h_last, _) = *plan.spec_dims.last().unwrap();
    add_gru_params(
        store,
        "lor.spec.gru",
        h_last * cfg.spec_channels.last().unwrap(),
        cfg.rnn_width,
        rng,
    );
}

/// Crop or zero-pad each channel to exactly `target` samples.
fn fit_channel(samples: &[f64], target: usize) -> Vec<f64> {
    let mut out = vec![0.0; target];
    let n = samples.len().min(target);
    out[..n].copy_from_slice(&samples[..n]);
    out
}

/// Encode a low-order reflection response into a `(1, d_lor)` embedding.
/// The response is cropped or zero-padded to `cfg.lor_samples` first.
pub fn lor_encode(
    tape: &mut Tape,
    ir: &AmbisonicIR,
    params: &Params,
    cfg: &ModelConfig,
    mel: &MelGraph,
) -> Result<Var, NeuralError> {
    if ir.sample_rate != cfg.sample_rate {
        return Err(shape_err(
            "lor_encode",
            format!("sample rate {} vs config {}", ir.sample_rate, cfg.sample_rate),
        ));
    }
    let plan = cfg.plan()?;
    // Waveform branch: samples arranged as (lor_samples, 4).
    let mut wave_data = vec![0.0; cfg.lor_samples * 4];
    let fitted: Vec<Vec<f64>> =
        ir.channels.iter().map(|c| fit_channel(c, cfg.lor_samples)).collect();
    for (c, ch) in fitted.iter().enumerate() {
        for (t, &v) in ch.iter().enumerate() {
            wave_data[t * 4 + c] = v;
        }
    }
    let mut wave = tape.leaf(cfg.lor_samples, 4, wave_data);
    for (i, _) in cfg.wave_channels.iter().enumerate() {
        let w = params.var(&format!("lor.wave.conv{i}.w"));
        let b = params.var(&format!("lor.wave.conv{i}.b"));
        let y = conv1d(tape, wave, w, b, cfg.wave_kernel, cfg.wave_stride)?;
        wave = tape.relu(y);
    }
    let h_wave = gru_sequence(tape, wave, params, "lor.wave.gru", cfg.rnn_width)?;

    // Spectral branch: per-channel shifted mel images stacked as 4 input
    // channels, rows ordered frame-major (j·n_mels + i).
    let frames = plan.mel_frames;
    let mel_chans: Vec<Var> = fitted
        .iter()
        .map(|ch| {
            let sig = tape.leaf(1, cfg.lor_samples, ch.clone());
            mel.channel_log_mel_shifted(tape, sig)
        })
        .collect::<Result<_, _>>()?;
    // Each channel mel is (frames, n_mels); reorder into one (frames·n_mels, 4)
    // matrix with rows ordered j·h + i for image position (mel i, frame j).
    let stacked = tape.concat_rows(&mel_chans);
    let mut map = Vec::with_capacity(frames * cfg.mel_n_mels * 4);
    for j in 0..frames {
        for i in 0..cfg.mel_n_mels {
            for c in 0..4 {
                map.push((c * frames + j) * cfg.mel_n_mels + i);
            }
        }
    }
    let mut spec = tape.gather(stacked, Rc::new(map), frames * cfg.mel_n_mels, 4);
    let (mut h_img, mut w_img) = (cfg.mel_n_mels, frames);
    for (i, _) in cfg.spec_channels.iter().enumerate() {
        let w = params.var(&format!("lor.spec.conv{i}.w"));
        let b = params.var(&format!("lor.spec.conv{i}.b"));
        let y = conv2d(tape, spec, h_img, w_img, w, b, cfg.spec_kernel, cfg.spec_stride)?;
        spec = tape.relu(y);
        h_img = (h_img - cfg.spec_kernel) / cfg.spec_stride + 1;
        w_img = (w_img - cfg.spec_kernel) / cfg.spec_stride + 1;
    }
    // Rows are frame-major, so each frame's (h_img · c_last) activations are
    // contiguous: a reshape yields the per-frame recurrent inputs directly.
    let c_last = *cfg.spec_channels.last().unwrap();
    let seq = tape.reshape(spec, w_img, h_img * c_last);
    let h_spec = gru_sequence(tape, seq, params, "lor.spec.gru", cfg.rnn_width)?;

    Ok(tape.concat_cols(&[h_wave, h_spec]))
}
