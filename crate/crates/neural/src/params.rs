//! Named parameter blocks with deterministic initialization, tape
//! attachment, a plain gradient-descent step, and single-file checkpoints
//! (JSON manifest line + raw little-endian doubles).

use crate::tape::{Tape, Var};
use crate::NeuralError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Initialization scheme for a new block.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform ±√(6/(fan_in+fan_out)) with fan sizes taken from the shape.
    Glorot,
    /// Uniform over a symmetric interval.
    Uniform(f64),
}

/// Ordered collection of parameter blocks. Block order is creation order
/// and defines the checkpoint layout and the gradient vector layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
    by_name: HashMap<String, usize>,
}

/// Tape handles for every block of a store, in block order.
pub struct Params {
    vars: Vec<Var>,
    by_name: HashMap<String, usize>,
}

impl Params {
    /// Var of the named block; panics on unknown names (a model wiring bug,
    /// not a runtime condition).
    pub fn var(&self, name: &str) -> Var {
        self.vars[*self.by_name.get(name).unwrap_or_else(|| panic!("unknown param {name}"))]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut ChaCha8Rng) {
        let n = rows * cols;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Glorot => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Uniform(b) => (0..n).map(|_| rng.gen_range(-b..b)).collect(),
        };
        self.add_with(name, rows, cols, data);
    }

    pub fn add_with(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(data.len(), rows * cols, "param {name} data length mismatch");
        assert!(
            !self.by_name.contains_key(name),
            "duplicate param block {name}"
        );
        self.by_name.insert(name.to_string(), self.blocks.len());
        self.blocks.push(ParamBlock { name: name.to_string(), rows, cols, data });
    }

    pub fn get(&self, name: &str) -> Option<&ParamBlock> {
        self.by_name.get(name).map(|&i| &self.blocks[i])
    }

    /// Overwrite a block's values (used by fixed-weight oracle tests).
    pub fn set(&mut self, name: &str, data: Vec<f64>) {
        let i = *self.by_name.get(name).unwrap_or_else(|| panic!("unknown param {name}"));
        assert_eq!(data.len(), self.blocks[i].data.len(), "param {name} size mismatch");
        self.blocks[i].data = data;
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    /// Push one leaf per block onto the tape, in block order.
    pub fn attach(&self, tape: &mut Tape) -> Params {
        let vars = self
            .blocks
            .iter()
            .map(|b| tape.leaf(b.rows, b.cols, b.data.clone()))
            .collect();
        Params { vars, by_name: self.by_name.clone() }
    }

    /// Collect the gradient of every block after a `backward` pass, in
    /// block order. Errors if any gradient entry is non-finite.
    pub fn gradients(&self, tape: &Tape, params: &Params) -> Result<Vec<Vec<f64>>, NeuralError> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for (block, &var) in self.blocks.iter().zip(params.vars()) {
            let g = tape.grad(var).to_vec();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFinite { what: "gradient", block: block.name.clone() });
            }
            out.push(g);
        }
        Ok(out)
    }

    /// Gradient-descent update with optional momentum: `v ← μ·v + g`,
    /// `θ ← θ − lr·v`. `velocity` must have the block layout (use
    /// [`ParamStore::zero_velocity`]).
    pub fn sgd_step(&mut self, grads: &[Vec<f64>], lr: f64, momentum: f64, velocity: &mut [Vec<f64>]) {
        assert_eq!(grads.len(), self.blocks.len());
        assert_eq!(velocity.len(), self.blocks.len());
        for ((block, g), vel) in self.blocks.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            for i in 0..block.data.len() {
                vel[i] = momentum * vel[i] + g[i];
                block.data[i] -= lr * vel[i];
            }
        }
    }

    pub fn zero_velocity(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| vec![0.0; b.data.len()]).collect()
    }

    /// Write a checkpoint: one JSON manifest line (caller-supplied metadata
    /// plus the block table), then every block's raw `f64` little-endian
    /// values in block order.
    pub fn save(&self, path: &Path, meta: &serde_json::Value) -> Result<(), NeuralError> {
        let manifest = CheckpointManifest {
            magic: MAGIC.to_string(),
            version: 1,
            meta: meta.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockEntry { name: b.name.clone(), rows: b.rows, cols: b.cols })
                .collect(),
        };
        let io_err = |source| NeuralError::Io { path: path.display().to_string(), source };
        let mut f = std::fs::File::create(path).map_err(io_err)?;
        let mut header = serde_json::to_string(&manifest).expect("manifest serializes");
        header.push('\n');
        f.write_all(header.as_bytes()).map_err(io_err)?;
        let mut buf = Vec::with_capacity(self.n_params() * 8);
        for b in &self.blocks {
            for &v in &b.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        f.write_all(&buf).map_err(io_err)?;
        Ok(())
    }

    /// Read a checkpoint written by [`ParamStore::save`]; returns the store
    /// and the caller metadata.
    pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value), NeuralError> {
        let io_err = |source| NeuralError::Io { path: path.display().to_string(), source };
        let ck_err = |msg: String| NeuralError::Checkpoint { path: path.display().to_string(), msg };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ck_err("missing manifest line".into()))?;
        let manifest: CheckpointManifest = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| ck_err(format!("bad manifest: {e}")))?;
        if manifest.magic != MAGIC {
            return Err(ck_err(format!("unrecognized magic \"{}\"", manifest.magic)));
        }
        let body = &bytes[nl + 1..];
        let expected: usize = manifest.blocks.iter().map(|b| b.rows * b.cols).sum();
        if body.len() != expected * 8 {
            return Err(ck_err(format!(
                "value section holds {} bytes, manifest expects {}",
                body.len(),
                expected * 8
            )));
        }
        let mut store = ParamStore::new();
        let mut off = 0;
        for b in &manifest.blocks {
            let n = b.rows * b.cols;
            let data = body[off..off + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.add_with(&b.name, b.rows, b.cols, data);
            off += n * 8;
        }
        Ok((store, manifest.meta))
    }
}

const MAGIC: &str = "aurasim-checkpoint";

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    magic: String,
    version: u32,
    meta: serde_json::Value,
    blocks: Vec<BlockEntry>,
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use aurasim_core::rngutil::rng_from;

    fn sample_store(seed: u64) -> ParamStore {
        let mut rng = rng_from(seed, &[1]);
        let mut s = ParamStore::new();
        s.add("layer.w", 3, 4, Init::Glorot, &mut rng);
        s.add("layer.b", 1, 4, Init::Zeros, &mut rng);
        s.add("norm.gamma", 1, 4, Init::Ones, &mut rng);
        s.add("odd", 2, 2, Init::Uniform(0.1), &mut rng);
        s
    }

    #[test]
    fn initialization_is_deterministic_per_seed_and_scheme() {
        let a = sample_store(7);
        let b = sample_store(7);
        let c = sample_store(8);
        for (x, y) in a.blocks().iter().zip(b.blocks()) {
            assert_eq!(x.data, y.data);
        }
        assert_ne!(a.get("layer.w").unwrap().data, c.get("layer.w").unwrap().data);
        assert!(a.get("layer.b").unwrap().data.iter().all(|&v| v == 0.0));
        assert!(a.get("norm.gamma").unwrap().data.iter().all(|&v| v == 1.0));
        let bound = (6.0 / 7.0f64).sqrt();
        assert!(a.get("layer.w").unwrap().data.iter().all(|&v| v.abs() < bound));
        assert_eq!(a.n_params(), 12 + 4 + 4 + 4);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact_and_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = sample_store(42);
        let meta = serde_json::json!({"d_model": 32, "note": "fixture"});
        store.save(&path, &meta).unwrap();
        let (loaded, meta2) = ParamStore::load(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(store.blocks().len(), loaded.blocks().len());
        for (a, b) in store.blocks().iter().zip(loaded.blocks()) {
            assert_eq!(a.name, b.name);
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected_with_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"{\"not\": \"a manifest\"}\n").unwrap();
        let err = ParamStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("bad.ckpt"));
        // Truncated value section.
        let store = sample_store(1);
        let good = dir.path().join("good.ckpt");
        store.save(&good, &serde_json::Value::Null).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&good, &bytes).unwrap();
        let err = ParamStore::load(&good).unwrap_err();
        assert!(err.to_string().contains("manifest expects"));
    }

    #[test]
    fn sgd_with_momentum_follows_the_hand_iteration() {
        let mut s = ParamStore::new();
        s.add_with("w", 1, 1, vec![1.0]);
        let mut vel = s.zero_velocity();
        // Two steps of v ← 0.5 v + g, θ ← θ − 0.1 v with g = 2 then g = 1.
        s.sgd_step(&[vec![2.0]], 0.1, 0.5, &mut vel);
        assert!((s.get("w").unwrap().data[0] - 0.8).abs() < 1e-15);
        s.sgd_step(&[vec![1.0]], 0.1, 0.5, &mut vel);
        // v = 0.5·2 + 1 = 2, θ = 0.8 − 0.2 = 0.6.
        assert!((s.get("w").unwrap().data[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn attach_exposes_blocks_by_name_and_gradients_surface_non_finites() {
        let store = sample_store(3);
        let mut tape = Tape::new();
        let params = store.attach(&mut tape);
        let w = params.var("layer.w");
        assert_eq!(tape.shape(w), (3, 4));
        assert_eq!(tape.value(w), &store.get("layer.w").unwrap().data[..]);
        // sqrt at 0 has an infinite derivative: gradients() must name the block.
        let mut s2 = ParamStore::new();
        s2.add_with("frag", 1, 1, vec![0.0]);
        let mut t2 = Tape::new();
        let p2 = s2.attach(&mut t2);
        let x = p2.var("frag");
        let r = t2.pow_const(x, 0.5);
        let loss = t2.sum_all(r);
        t2.backward(loss);
        let err = s2.gradients(&t2, &p2).unwrap_err();
        assert!(matches!(err, NeuralError::NonFinite { ref block, .. } if block == "frag"));
    }
}
