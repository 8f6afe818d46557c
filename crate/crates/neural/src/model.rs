//! The full parameter-prediction model: graph encoder over the scene mesh,
//! position-query transformer, reflection encoder, and the three decoder
//! heads (early-reflection waveform, auxiliary gains/T60, late envelopes).

use crate::config::{ModelConfig, FACE_FEATURES};
use crate::layers::{
    add_transformer_params, gcn_forward, positional_query, topk_pool, transformer_decode,
    transformer_encode,
};
use crate::lor::{add_lor_params, lor_encode};
use crate::melgraph::MelGraph;
use crate::params::{Init, ParamStore, Params};
use crate::shape_err;
use crate::tape::{Tape, Var};
use crate::NeuralError;
use aurasim_core::ambisonic::AmbisonicIR;
use aurasim_core::rngutil::rng_from;
use aurasim_core::scene::{normalize_adjacency_matrix, PositionPair, SceneGraph};

/// Everything the model consumes for one scene/position example.
pub struct ModelInput<'a> {
    pub scene: &'a SceneGraph,
    pub pair: PositionPair,
    pub h_lor: &'a AmbisonicIR,
    /// Replace the reflection embedding with zeros (the encoder is skipped
    /// entirely); used by the ablation comparison.
    pub zero_lor: bool,
}

/// Forward-pass outputs, all still attached to the tape.
pub struct ModelOutput {
    /// Unit-scaled early-reflection waveform, `er_length × 4`.
    pub er: Var,
    /// Positive auxiliary row `[t60, g_er, g_lr]`, `1 × 3`.
    pub aux: Var,
    /// Positive late energy envelopes, `n_bands × n_env_points`.
    pub lr_env: Var,
    /// Flattened decoder queries, `1 × 2·d_model`.
    pub scene_emb: Var,
    /// Reflection embedding, `1 × 2·rnn_width`.
    pub lor_emb: Var,
    /// Vertex count after each pooling step.
    pub pooled_sizes: Vec<usize>,
}

/// Model = configuration + parameter store + precomputed mel constants.
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    mel: MelGraph,
}

/// Per-face feature row: centroid, normal, area, and the per-band
/// reflectivity and scattering columns.
pub fn scene_features(scene: &SceneGraph) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.faces.len() * FACE_FEATURES);
    for f in &scene.faces {
        out.extend([f.centroid.x, f.centroid.y, f.centroid.z]);
        out.extend([f.normal.x, f.normal.y, f.normal.z]);
        out.push(f.area);
        out.extend(f.reflectivity);
        out.extend(f.scattering);
    }
    out
}

fn add_head_params(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    d_out: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) {
    store.add(&format!("{prefix}.w1"), d_in, hidden, Init::Glorot, rng);
    store.add(&format!("{prefix}.b1"), 1, hidden, Init::Zeros, rng);
    store.add(&format!("{prefix}.w2"), hidden, d_out, Init::Glorot, rng);
    store.add(&format!("{prefix}.b2"), 1, d_out, Init::Zeros, rng);
}

fn head_forward(tape: &mut Tape, emb: Var, params: &Params, prefix: &str) -> Var {
    let h = tape.matmul(emb, params.var(&format!("{prefix}.w1")));
    let h = tape.add_row(h, params.var(&format!("{prefix}.b1")));
    let h = tape.relu(h);
    let o = tape.matmul(h, params.var(&format!("{prefix}.w2")));
    tape.add_row(o, params.var(&format!("{prefix}.b2")))
}

impl Model {
    /// Build a model with freshly initialized weights; `seed` fully
    /// determines every parameter.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Model, NeuralError> {
        cfg.validate()?;
        let plan = cfg.plan()?;
        let mut rng = rng_from(seed, &[0x6d6f_6465]);
        let mut store = ParamStore::new();
        let mut d_in = FACE_FEATURES;
        for (i, &width) in cfg.gcn_widths.iter().enumerate() {
            store.add(&format!("gcn.{i}.w"), d_in, width, Init::Glorot, &mut rng);
            store.add(&format!("pool.{i}.p"), width, 1, Init::Glorot, &mut rng);
            d_in = width;
        }
        add_transformer_params(&mut store, cfg, &mut rng);
        add_lor_params(&mut store, cfg, &mut rng);
        add_head_params(&mut store, "head.er", plan.emb_dim, cfg.head_hidden, cfg.er_length * 4, &mut rng);
        add_head_params(&mut store, "head.aux", plan.emb_dim, cfg.head_hidden, 3, &mut rng);
        add_head_params(
            &mut store,
            "head.lr",
            plan.emb_dim,
            cfg.head_hidden,
            cfg.n_bands * cfg.n_env_points,
            &mut rng,
        );
        let mel = MelGraph::new(&cfg.spectral_mel()?)?;
        Ok(Model { cfg: cfg.clone(), store, mel })
    }

    /// Rebuild the runtime pieces around an existing parameter store (for
    /// checkpoints reloaded from disk).
    pub fn from_store(cfg: &ModelConfig, store: ParamStore) -> Result<Model, NeuralError> {
        cfg.validate()?;
        let mel = MelGraph::new(&cfg.spectral_mel()?)?;
        Ok(Model { cfg: cfg.clone(), store, mel })
    }

    /// Run the model on one example, recording every op on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        input: &ModelInput,
    ) -> Result<ModelOutput, NeuralError> {
        let scene = input.scene;
        let n = scene.faces.len();
        if n == 0 {
            return Err(shape_err("forward", "empty scene".into()));
        }
        // Scene branch: GCN blocks with score-based pooling between them.
        let mut x = tape.leaf(n, FACE_FEATURES, scene_features(scene));
        let mut adjacency = scene.adjacency.clone();
        let mut pooled_sizes = Vec::with_capacity(self.cfg.gcn_widths.len());
        for (i, _) in self.cfg.gcn_widths.iter().enumerate() {
            let a_norm = normalize_adjacency_matrix(&adjacency, true)?;
            let k = adjacency.len();
            let flat: Vec<f64> = a_norm.into_iter().flatten().collect();
            let a_var = tape.leaf(k, k, flat);
            let w = params.var(&format!("gcn.{i}.w"));
            let h = gcn_forward(tape, x, a_var, w)?;
            let pooled = topk_pool(tape, h, &adjacency, self.cfg.pool_ratios[i], params.var(&format!("pool.{i}.p")))?;
            x = pooled.features;
            adjacency = pooled.adjacency;
            pooled_sizes.push(adjacency.len());
        }
        let (memory, _) = transformer_encode(tape, x, params, &self.cfg)?;
        let queries = positional_query(tape, &input.pair, params, self.cfg.n_freqs)?;
        let (decoded, _) = transformer_decode(tape, queries, memory, params, &self.cfg)?;
        let scene_emb = tape.reshape(decoded, 1, 2 * self.cfg.d_model);

        let lor_emb = if input.zero_lor {
            tape.leaf(1, 2 * self.cfg.rnn_width, vec![0.0; 2 * self.cfg.rnn_width])
        } else {
            lor_encode(tape, input.h_lor, params, &self.cfg, &self.mel)?
        };
        let emb = tape.concat_cols(&[scene_emb, lor_emb]);

        // Early-reflection head: raw waveform scaled to (near) unit energy.
        let er_flat = head_forward(tape, emb, params, "head.er");
        let er_raw = tape.reshape(er_flat, self.cfg.er_length, 4);
        let sq = tape.pow_const(er_raw, 2.0);
        let energy = tape.sum_all(sq);
        let l2 = tape.pow_const(energy, 0.5);
        let denom = tape.add_const(l2, 1e-8);
        let inv = tape.pow_const(denom, -1.0);
        let er = tape.mul_scalar(er_raw, inv);

        let aux_raw = head_forward(tape, emb, params, "head.aux");
        let aux = tape.softplus(aux_raw);

        let lr_flat = head_forward(tape, emb, params, "head.lr");
        let lr_raw = tape.reshape(lr_flat, self.cfg.n_bands, self.cfg.n_env_points);
        let lr_env = tape.softplus(lr_raw);

        Ok(ModelOutput { er, aux, lr_env, scene_emb, lor_emb, pooled_sizes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aurasim_core::geom::Vec3;
    use aurasim_core::scene::make_shoebox;

    fn shoebox_scene() -> SceneGraph {
        make_shoebox([4.0, 3.0, 2.5], [0.8; 8], [0.1; 8]).unwrap()
    }

    fn pair() -> PositionPair {
        PositionPair {
            source: Vec3::new(1.0, 1.0, 1.2),
            listener: Vec3::new(2.8, 1.9, 1.1),
        }
    }

    fn lor_input(cfg: &ModelConfig) -> AmbisonicIR {
        let mut ir = AmbisonicIR::new_a_format(cfg.lor_samples, cfg.sample_rate);
        for (c, ch) in ir.channels.iter_mut().enumerate() {
            ch[40 + 7 * c] = 0.5;
            ch[200 + 11 * c] = -0.2;
        }
        ir
    }

    #[test]
    fn feature_rows_follow_the_documented_layout() {
        let scene = shoebox_scene();
        let feats = scene_features(&scene);
        assert_eq!(feats.len(), scene.faces.len() * FACE_FEATURES);
        let f = &scene.faces[3];
        let row = &feats[3 * FACE_FEATURES..4 * FACE_FEATURES];
        assert_eq!(row[0], f.centroid.x);
        assert_eq!(row[2], f.centroid.z);
        assert_eq!(row[3], f.normal.x);
        assert_eq!(row[6], f.area);
        assert_eq!(row[7..15], f.reflectivity);
        assert_eq!(row[15..23], f.scattering);
    }

    #[test]
    fn forward_on_a_shoebox_produces_finite_well_shaped_heads() {
        let cfg = ModelConfig::toy(48_000);
        let model = Model::new(&cfg, 7).unwrap();
        let scene = shoebox_scene();
        let ir = lor_input(&cfg);
        let mut tape = Tape::new();
        let params = model.store.attach(&mut tape);
        let out = model
            .forward(&mut tape, &params, &ModelInput { scene: &scene, pair: pair(), h_lor: &ir, zero_lor: false })
            .unwrap();
        assert_eq!(tape.shape(out.er), (cfg.er_length, 4));
        assert_eq!(tape.shape(out.aux), (1, 3));
        assert_eq!(tape.shape(out.lr_env), (cfg.n_bands, cfg.n_env_points));
        assert_eq!(tape.shape(out.scene_emb), (1, 2 * cfg.d_model));
        assert_eq!(tape.shape(out.lor_emb), (1, 2 * cfg.rnn_width));
        for &v in tape.value(out.er) {
            assert!(v.is_finite());
        }
        for &v in tape.value(out.aux) {
            assert!(v > 0.0, "softplus output must be positive");
        }
        for &v in tape.value(out.lr_env) {
            assert!(v > 0.0);
        }
        // The early head is scaled by 1/(‖x‖+1e-8), so its energy is ≈ 1.
        let energy: f64 = tape.value(out.er).iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-6, "early-reflection energy {energy}");
        // Pool ratios [1, 0.75, 0.75, 0.5] on 12 faces: 12 → 9 → 7 → 4.
        assert_eq!(out.pooled_sizes, vec![12, 9, 7, 4]);
    }

    #[test]
    fn shape_table_holds_across_all_three_presets() {
        let scene = shoebox_scene();
        for cfg in [ModelConfig::toy(48_000), ModelConfig::minimal(48_000), ModelConfig::wide(48_000)] {
            let plan = cfg.plan().unwrap();
            let model = Model::new(&cfg, 11).unwrap();
            let ir = lor_input(&cfg);
            let mut tape = Tape::new();
            let params = model.store.attach(&mut tape);
            let out = model
                .forward(&mut tape, &params, &ModelInput { scene: &scene, pair: pair(), h_lor: &ir, zero_lor: false })
                .unwrap();
            assert_eq!(tape.shape(out.er), (cfg.er_length, 4));
            assert_eq!(tape.shape(out.aux), (1, 3));
            assert_eq!(tape.shape(out.lr_env), (cfg.n_bands, cfg.n_env_points));
            let emb_width = tape.shape(out.scene_emb).1 + tape.shape(out.lor_emb).1;
            assert_eq!(emb_width, plan.emb_dim);
            // Every pooling step keeps ⌈ratio · previous⌉ vertices.
            let mut expect = scene.faces.len();
            for (size, ratio) in out.pooled_sizes.iter().zip(&cfg.pool_ratios) {
                expect = (ratio * expect as f64).ceil() as usize;
                assert_eq!(*size, expect);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_outputs_and_different_seeds_differ() {
        let cfg = ModelConfig::minimal(48_000);
        let scene = shoebox_scene();
        let ir = lor_input(&cfg);
        let run = |seed: u64| {
            let model = Model::new(&cfg, seed).unwrap();
            let mut tape = Tape::new();
            let params = model.store.attach(&mut tape);
            let out = model
                .forward(&mut tape, &params, &ModelInput { scene: &scene, pair: pair(), h_lor: &ir, zero_lor: false })
                .unwrap();
            tape.value(out.er).to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn zeroing_the_reflection_branch_nulls_its_embedding_only() {
        let cfg = ModelConfig::minimal(48_000);
        let model = Model::new(&cfg, 5).unwrap();
        let scene = shoebox_scene();
        let ir = lor_input(&cfg);
        let mut tape = Tape::new();
        let params = model.store.attach(&mut tape);
        let out = model
            .forward(&mut tape, &params, &ModelInput { scene: &scene, pair: pair(), h_lor: &ir, zero_lor: true })
            .unwrap();
        assert!(tape.value(out.lor_emb).iter().all(|&v| v == 0.0));
        assert!(tape.value(out.scene_emb).iter().any(|&v| v != 0.0));
        assert!(tape.value(out.er).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_outputs_exactly() {
        let cfg = ModelConfig::minimal(48_000);
        let model = Model::new(&cfg, 13).unwrap();
        let scene = shoebox_scene();
        let ir = lor_input(&cfg);
        let run = |m: &Model| {
            let mut tape = Tape::new();
            let params = m.store.attach(&mut tape);
            let out = m
                .forward(&mut tape, &params, &ModelInput { scene: &scene, pair: pair(), h_lor: &ir, zero_lor: false })
                .unwrap();
            (tape.value(out.er).to_vec(), tape.value(out.aux).to_vec())
        };
        let before = run(&model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let meta = serde_json::to_value(&cfg).unwrap();
        model.store.save(&path, &meta).unwrap();
        let (store, meta_back) = ParamStore::load(&path).unwrap();
        let cfg_back: ModelConfig = serde_json::from_value(meta_back).unwrap();
        assert_eq!(cfg_back, cfg);
        let reloaded = Model::from_store(&cfg_back, store).unwrap();
        let after = run(&reloaded);
        assert_eq!(before.0, after.0);
        assert_eq!(before.1, after.1);
    }
}
