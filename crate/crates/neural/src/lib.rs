//! Toy-scale neural estimator of perceptual reverberation parameters.
//!
//! A from-scratch reverse-mode autodiff tape ([`tape`]) carries a multimodal
//! model: a graph-convolutional scene encoder with top-k pooling and a
//! transformer ([`layers`]), a dual-branch early-reflection encoder
//! ([`lor`]), and a three-headed decoder emitting the perceptual parameters
//! consumed by the synthesizer ([`model`]). Everything runs in double
//! precision and every layer is verified against central finite differences
//! ([`gradcheck`]).

use aurasim_core::metrics::MetricsError;
use aurasim_core::scene::SceneError;
use thiserror::Error;

pub mod config;
pub mod gradcheck;
pub mod layers;
pub mod lor;
pub mod loss;
pub mod melgraph;
pub mod model;
pub mod params;
pub mod tape;
pub mod train;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("top-k pooling selected no vertices")]
    EmptySelection,
    #[error("non-finite {what} in parameter block \"{block}\"")]
    NonFinite { what: &'static str, block: String },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Shape-error shorthand used by the layer builders.
pub(crate) fn shape_err(op: &'static str, detail: String) -> NeuralError {
    NeuralError::Shape { op, detail }
}
