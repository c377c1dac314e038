//! The meta-mapping model: a shared latent space, an example/language
//! encoder, and a hypernetwork that parameterizes the task network.
//!
//! Performing a basic task and transforming a task representation run through
//! the same example network, hyper network, and task network; a task is
//! executed as `decode(T(H(z_task), P(input)))` and a transformation as
//! `T(H(z_meta), z_source)`. The shared-network structure is the default;
//! comparison variants split or remove pieces of it.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use autodiff::{Array, Linear, Mlp, ParamId, ParamStore, RecurrentEncoder, Tape, Var, LEAKY_SLOPE};

use crate::config::{ExperimentConfig, Variant};
use crate::CoreError;

/// Where a latent vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Examples,
    Language,
    MetaMappingOutput,
    Persistent,
    Optimized,
    Raw,
}

/// A vector in the shared latent space, tagged with its provenance.
#[derive(Debug, Clone)]
pub struct LatentVector {
    pub values: Array,
    pub provenance: Provenance,
}

impl LatentVector {
    pub fn new(values: Array, provenance: Provenance) -> Self {
        assert_eq!(values.rows(), 1, "latent vectors are single rows");
        LatentVector { values, provenance }
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Which role the shared networks are being used in. The homoiconic model
/// resolves both to the same parameters; the non-homoiconic variant keeps
/// separate copies for the meta path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Base,
    Meta,
}

/// Input batches are dense matrices except for the gridworld observations,
/// which are multi-hot and fed through a sparse first layer.
#[derive(Debug, Clone)]
pub enum InputBatch {
    Dense(Array),
    MultiHot { indices: Arc<Vec<Vec<u32>>>, dim: usize },
}

impl InputBatch {
    pub fn rows(&self) -> usize {
        match self {
            InputBatch::Dense(a) => a.rows(),
            InputBatch::MultiHot { indices, .. } => indices.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputBatch::Dense(a) => a.cols(),
            InputBatch::MultiHot { dim, .. } => *dim,
        }
    }

    pub fn select(&self, rows: &[usize]) -> InputBatch {
        match self {
            InputBatch::Dense(a) => {
                let n = a.cols();
                let mut data = Vec::with_capacity(rows.len() * n);
                for &r in rows {
                    data.extend_from_slice(&a.data()[r * n..(r + 1) * n]);
                }
                InputBatch::Dense(Array::matrix(rows.len(), n, data))
            }
            InputBatch::MultiHot { indices, dim } => InputBatch::MultiHot {
                indices: Arc::new(rows.iter().map(|&r| indices[r].clone()).collect()),
                dim: *dim,
            },
        }
    }
}

/// Shapes of the hyper-generated task-network parameters.
#[derive(Debug, Clone)]
pub struct TaskLayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Per-layer task-network parameters on a tape: the learned defaults plus
/// hyper-generated deltas; effective weights are their sum.
pub struct TaskNetworkParams {
    pub deltas: Vec<(Var, Var)>,
}

/// The sizes everything is built from; derived from the experiment config
/// plus the active domain's input/target/output widths.
#[derive(Debug, Clone)]
pub struct ModelDims {
    pub z_dim: usize,
    pub input_dim: usize,
    pub target_dim: usize,
    pub output_dim: usize,
    pub p_dims: Vec<usize>,
    pub oe_dims: Vec<usize>,
    pub e_datum_dims: Vec<usize>,
    pub e_post_dims: Vec<usize>,
    pub h_dims: Vec<usize>,
    pub t_shapes: Vec<TaskLayerShape>,
    pub od_dims: Vec<usize>,
    pub lstm_hidden: usize,
    pub hyper_init_scale: f64,
    pub weight_norm: bool,
    pub with_classifier: bool,
}

impl ModelDims {
    pub fn from_config(
        cfg: &ExperimentConfig,
        input_dim: usize,
        target_dim: usize,
        output_dim: usize,
    ) -> Self {
        let z = cfg.z_dim;
        let mut t_shapes = Vec::new();
        let mut prev = z;
        for &h in &cfg.t_hidden {
            t_shapes.push(TaskLayerShape { in_dim: prev, out_dim: h });
            prev = h;
        }
        t_shapes.push(TaskLayerShape { in_dim: prev, out_dim: z });
        let n_deltas: usize = t_shapes.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum();

        let stack = |input: usize, hidden: usize, layers: usize, out: usize| -> Vec<usize> {
            let mut dims = vec![input];
            for _ in 0..layers.saturating_sub(1) {
                dims.push(hidden);
            }
            dims.push(out);
            dims
        };

        ModelDims {
            z_dim: z,
            input_dim,
            target_dim,
            output_dim,
            p_dims: stack(input_dim, cfg.p_hidden, cfg.p_layers, z),
            oe_dims: stack(target_dim, cfg.oe_hidden, cfg.oe_layers, z),
            e_datum_dims: vec![2 * z, cfg.e_hidden, cfg.e_hidden],
            e_post_dims: vec![cfg.e_hidden, cfg.e_hidden, z],
            h_dims: stack(z, cfg.h_hidden, cfg.h_layers, n_deltas),
            t_shapes,
            od_dims: stack(z, cfg.od_hidden, cfg.od_layers, output_dim),
            lstm_hidden: cfg.lstm_hidden,
            hyper_init_scale: cfg.hyper_init_scale,
            weight_norm: cfg.weight_norm,
            with_classifier: cfg.metaclass,
        }
    }

    pub fn n_deltas(&self) -> usize {
        self.t_shapes.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum()
    }
}

/// Language tokens mapped into embedding-table rows.
pub struct LangEncoder {
    pub embed: ParamId,
    pub encoder: RecurrentEncoder,
    pub vocab: HashMap<String, usize>,
}

impl LangEncoder {
    pub fn token_ids(&self, tokens: &[String]) -> Result<Vec<usize>, CoreError> {
        tokens
            .iter()
            .map(|t| {
                self.vocab
                    .get(t)
                    .copied()
                    .ok_or_else(|| CoreError::Vocabulary(t.clone()))
            })
            .collect()
    }
}

/// Slowly-updated per-task representations, stored as parameters and mixed
/// with the freshly constructed representations during training.
#[derive(Debug, Clone, Default)]
pub struct PersistentRepStore {
    pub entries: BTreeMap<String, ParamId>,
    pub match_weight: f64,
}

pub struct Model {
    pub dims: ModelDims,
    pub variant: Variant,
    pub store: ParamStore,
    pub perception: Mlp,
    pub target_encoder: Mlp,
    pub example_datum: Mlp,
    pub example_post: Mlp,
    pub hyper: Mlp,
    pub task_defaults: Vec<Linear>,
    pub out_decoder: Mlp,
    pub classifier: Option<Mlp>,
    pub lang: Option<LangEncoder>,
    // meta-path copies (non-homoiconic variant only)
    meta_example_datum: Option<Mlp>,
    meta_example_post: Option<Mlp>,
    meta_hyper: Option<Mlp>,
    /// Fixed task network taking [input ++ task] (task-concat variant only).
    task_concat_net: Option<Mlp>,
    pub persistent: PersistentRepStore,
}

impl Model {
    pub fn new(dims: ModelDims, variant: Variant, vocab: &[String], seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let z = dims.z_dim;

        let perception = Mlp::new(&mut store, &mut rng, "perception", &dims.p_dims, 1.0);
        let target_encoder = Mlp::new(&mut store, &mut rng, "target_enc", &dims.oe_dims, 1.0);
        let example_datum = Mlp::new(&mut store, &mut rng, "example/datum", &dims.e_datum_dims, 1.0);
        let example_post = Mlp::new(&mut store, &mut rng, "example/post", &dims.e_post_dims, 1.0);
        // The output layer init is shrunk by 1/sqrt(fan_in) so the generated
        // deltas start comparable to the learned default weights; the
        // configured output scale multiplies that.
        let h_fan_in = dims.h_dims[dims.h_dims.len() - 2] as f64;
        let h_scale = dims.hyper_init_scale / h_fan_in.sqrt();
        let hyper = Mlp::new(&mut store, &mut rng, "hyper", &dims.h_dims, h_scale);

        let mut task_defaults = Vec::new();
        for (i, shape) in dims.t_shapes.iter().enumerate() {
            let name = format!("task_default/{i}");
            let layer = if dims.weight_norm {
                Linear::new_weight_norm(&mut store, &mut rng, &name, shape.in_dim, shape.out_dim, 1.0)
            } else {
                Linear::new(&mut store, &mut rng, &name, shape.in_dim, shape.out_dim, 1.0)
            };
            task_defaults.push(layer);
        }

        let out_decoder = Mlp::new(&mut store, &mut rng, "out_dec", &dims.od_dims, 1.0);
        let classifier = dims
            .with_classifier
            .then(|| Mlp::new(&mut store, &mut rng, "classify", &[z, 1], 1.0));

        let lang = (!vocab.is_empty()).then(|| {
            let embed = store.add(
                "lang/embed",
                autodiff::layers::init_weight(&mut rng, vocab.len(), dims.lstm_hidden, 1.0),
            );
            let encoder =
                RecurrentEncoder::new(&mut store, &mut rng, "lang", dims.lstm_hidden, dims.lstm_hidden, z);
            let vocab_map = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
            LangEncoder { embed, encoder, vocab: vocab_map }
        });

        let (meta_example_datum, meta_example_post, meta_hyper) = if variant == Variant::NonHomoiconic {
            (
                Some(Mlp::new(&mut store, &mut rng, "meta_example/datum", &dims.e_datum_dims, 1.0)),
                Some(Mlp::new(&mut store, &mut rng, "meta_example/post", &dims.e_post_dims, 1.0)),
                Some(Mlp::new(&mut store, &mut rng, "meta_hyper", &dims.h_dims, h_scale)),
            )
        } else {
            (None, None, None)
        };

        let task_concat_net = (variant == Variant::TaskConcat).then(|| {
            let mut dims_tc = vec![2 * z];
            for s in &dims.t_shapes {
                dims_tc.push(s.out_dim);
            }
            Mlp::new(&mut store, &mut rng, "task_concat", &dims_tc, 1.0)
        });

        Model {
            dims,
            variant,
            store,
            perception,
            target_encoder,
            example_datum,
            example_post,
            hyper,
            task_defaults,
            out_decoder,
            classifier,
            lang,
            meta_example_datum,
            meta_example_post,
            meta_hyper,
            task_concat_net,
            persistent: PersistentRepStore::default(),
        }
    }

    /// Deep copy with freshly owned parameter storage (used for the frozen
    /// target network in Q-learning).
    pub fn snapshot(&self) -> ParamStore {
        self.store.clone()
    }

    fn example_nets(&self, path: PathKind) -> (&Mlp, &Mlp) {
        match (self.variant, path) {
            (Variant::NonHomoiconic, PathKind::Meta) => (
                self.meta_example_datum.as_ref().unwrap(),
                self.meta_example_post.as_ref().unwrap(),
            ),
            _ => (&self.example_datum, &self.example_post),
        }
    }

    fn hyper_net(&self, path: PathKind) -> &Mlp {
        match (self.variant, path) {
            (Variant::NonHomoiconic, PathKind::Meta) => self.meta_hyper.as_ref().unwrap(),
            _ => &self.hyper,
        }
    }

    /// Parameter identities of the example network on a path; the structural
    /// homoiconicity test compares these across paths.
    pub fn example_net_param_ids(&self, path: PathKind) -> Vec<ParamId> {
        let (datum, post) = self.example_nets(path);
        let mut ids = datum.param_ids();
        ids.extend(post.param_ids());
        ids
    }

    pub fn hyper_param_ids(&self, path: PathKind) -> Vec<ParamId> {
        self.hyper_net(path).param_ids()
    }

    // ── forward paths ───────────────────────────────────────────────────

    /// P: embed a batch of domain inputs into Z.
    pub fn embed_inputs(&self, tape: &mut Tape, store: &ParamStore, x: &InputBatch) -> Var {
        match x {
            InputBatch::Dense(a) => {
                let v = tape.leaf(a.clone());
                self.perception.forward(tape, store, v)
            }
            InputBatch::MultiHot { indices, dim } => {
                assert_eq!(*dim, self.dims.input_dim, "observation width mismatch");
                // first layer runs sparse; the rest of the stack is dense
                let first = &self.perception.layers[0];
                let w = first.weight_var(tape, store);
                let b = tape.param(store, first.b);
                let xw = tape.one_hot_matmul(Arc::clone(indices), w);
                let mut h = tape.add_row(xw, b);
                h = tape.leaky_relu(h, LEAKY_SLOPE);
                for (i, layer) in self.perception.layers.iter().enumerate().skip(1) {
                    h = layer.forward(tape, store, h);
                    if i + 1 < self.perception.layers.len() {
                        h = tape.leaky_relu(h, LEAKY_SLOPE);
                    }
                }
                h
            }
        }
    }

    /// O_e: embed a batch of example targets into Z.
    pub fn embed_targets(&self, tape: &mut Tape, store: &ParamStore, y: &Array) -> Var {
        let v = tape.leaf(y.clone());
        self.target_encoder.forward(tape, store, v)
    }

    /// (P(input), O_e(target)) for a support batch.
    pub fn encode_base_examples(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &InputBatch,
        targets: &Array,
    ) -> (Var, Var) {
        assert_eq!(inputs.rows(), targets.rows(), "support inputs/targets disagree");
        (self.embed_inputs(tape, store, inputs), self.embed_targets(tape, store, targets))
    }

    /// E: encode a support set of (input embedding, target embedding) rows
    /// into one task representation. Order-invariant via the row max-pool.
    pub fn encode_examples(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_inputs: Var,
        z_targets: Var,
        path: PathKind,
    ) -> Var {
        assert!(tape.value(z_inputs).rows() > 0, "encode_examples precondition error: empty support");
        let (datum, post) = self.example_nets(path);
        let tuples = tape.concat_cols(&[z_inputs, z_targets]);
        let per = datum.forward(tape, store, tuples);
        let per = tape.leaky_relu(per, LEAKY_SLOPE);
        let pooled = tape.max_pool_rows(per);
        post.forward(tape, store, pooled)
    }

    /// L: encode a language description into Z.
    pub fn encode_language(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        token_ids: &[usize],
    ) -> Var {
        let lang = self.lang.as_ref().expect("model built without a language network");
        assert!(!token_ids.is_empty(), "encode_language precondition error: empty description");
        let table = tape.param(store, lang.embed);
        let tokens: Vec<Var> =
            token_ids.iter().map(|&i| tape.narrow_rows(table, i, 1)).collect();
        lang.encoder.encode(tape, store, &tokens)
    }

    /// H: map a latent vector to per-layer task-network deltas.
    pub fn hyper_parameterize(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        path: PathKind,
    ) -> TaskNetworkParams {
        assert!(self.variant != Variant::TaskConcat, "task-concat variant has no hyper network");
        let flat = self.hyper_net(path).forward(tape, store, z);
        let mut deltas = Vec::with_capacity(self.dims.t_shapes.len());
        let mut off = 0;
        for shape in &self.dims.t_shapes {
            let wlen = shape.in_dim * shape.out_dim;
            let w = tape.narrow_cols_as(flat, off, wlen, Some(vec![shape.in_dim, shape.out_dim]));
            off += wlen;
            let b = tape.narrow_cols(flat, off, shape.out_dim);
            off += shape.out_dim;
            deltas.push((w, b));
        }
        TaskNetworkParams { deltas }
    }

    /// T: run the task network with effective parameters
    /// (defaults + deltas) on a batch of latent rows.
    pub fn task_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        params: &TaskNetworkParams,
        mut x: Var,
    ) -> Var {
        assert_eq!(params.deltas.len(), self.task_defaults.len(), "delta layer count mismatch");
        let last = self.task_defaults.len() - 1;
        for (i, (layer, (dw, db))) in
            self.task_defaults.iter().zip(&params.deltas).enumerate()
        {
            let w0 = layer.weight_var(tape, store);
            let b0 = tape.param(store, layer.b);
            let w = tape.add(w0, *dw);
            let b = tape.add(b0, *db);
            let xw = tape.matmul(x, w);
            x = tape.add_row(xw, b);
            if i != last {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        x
    }

    /// The task network run purely on its learned defaults (zero deltas),
    /// i.e. the automatic / default processing pathway.
    pub fn task_forward_default(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        let last = self.task_defaults.len() - 1;
        for (i, layer) in self.task_defaults.iter().enumerate() {
            x = layer.forward(tape, store, x);
            if i != last {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        x
    }

    /// O_d: decode latent outputs into the domain output space.
    pub fn decode_output(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Var {
        self.out_decoder.forward(tape, store, z)
    }

    /// The task-representation classification head (logit output).
    pub fn decode_classify(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Var {
        self.classifier
            .as_ref()
            .expect("model built without a classification head")
            .forward(tape, store, z)
    }

    /// Full basic-task pipeline from a task representation node.
    pub fn perform_from_rep(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_task: Var,
        inputs: &InputBatch,
    ) -> Var {
        let z_in = self.embed_inputs(tape, store, inputs);
        let z_out = self.apply_task(tape, store, z_task, z_in, PathKind::Base);
        self.decode_output(tape, store, z_out)
    }

    /// Core task application: hyper-parameterized by default, concatenation
    /// in the task-concat variant. `x` is a batch of latent rows.
    pub fn apply_task(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_task: Var,
        x: Var,
        path: PathKind,
    ) -> Var {
        match self.variant {
            Variant::TaskConcat => {
                let net = self.task_concat_net.as_ref().unwrap();
                let rows = tape.value(x).rows();
                let z_rep = if rows > 1 {
                    let reps = vec![z_task; rows];
                    tape.concat_rows(&reps)
                } else {
                    z_task
                };
                let joined = tape.concat_cols(&[x, z_rep]);
                net.forward(tape, store, joined)
            }
            _ => {
                let params = self.hyper_parameterize(tape, store, z_task, path);
                self.task_forward(tape, store, &params, x)
            }
        }
    }

    /// Transform task representations: T(H(z_meta), z_sources). The sources
    /// are a [N, z] batch; one transformed representation per row.
    pub fn meta_map(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_meta: Var,
        z_sources: Var,
    ) -> Var {
        self.apply_task(tape, store, z_meta, z_sources, PathKind::Meta)
    }

    /// Binary classification of a batch of task representations under a
    /// metaclassification representation; returns probabilities.
    pub fn classify_task_rep(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_metaclass: Var,
        z_probe: Var,
    ) -> Var {
        let z_out = self.apply_task(tape, store, z_metaclass, z_probe, PathKind::Meta);
        let logit = self.decode_classify(tape, store, z_out);
        tape.sigmoid(logit)
    }

    // ── persistent representations ──────────────────────────────────────

    /// Register a persistent representation parameter for a task.
    pub fn add_persistent<R: Rng>(&mut self, task_id: &str, rng: &mut R) {
        let z = self.dims.z_dim;
        let sd = (1.0 / (z as f64).sqrt()).sqrt();
        let data = (0..z)
            .map(|_| {
                let u: f64 = rng.gen_range(-1.0..1.0);
                u * sd
            })
            .collect();
        let id = self.store.add(format!("persistent/{task_id}"), Array::row(data));
        self.persistent.entries.insert(task_id.to_string(), id);
    }

    pub fn persistent_id(&self, task_id: &str) -> Result<ParamId, CoreError> {
        self.persistent
            .entries
            .get(task_id)
            .copied()
            .ok_or_else(|| CoreError::MissingPersistent(task_id.to_string()))
    }

    /// Convex combination of the persistent and example representations:
    /// z_used = t * persistent + (1-t) * examples, plus the squared-distance
    /// match loss. Gradients flow into both representations.
    pub fn persistent_combine(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        task_id: &str,
        z_examples: Var,
        t: f64,
    ) -> Result<(Var, Var), CoreError> {
        let id = self.persistent_id(task_id)?;
        let z_pers = tape.param(store, id);
        let a = tape.scale(z_pers, t);
        let b = tape.scale(z_examples, 1.0 - t);
        let z_used = tape.add(a, b);
        let diff = tape.sub(z_pers, z_examples);
        let sq = tape.mul(diff, diff);
        let match_loss = tape.sum_all(sq);
        Ok((z_used, match_loss))
    }

    // ── evaluation-time helpers (no gradients) ──────────────────────────

    /// Construct a task representation from examples, returning its value.
    pub fn rep_from_examples(&self, inputs: &InputBatch, targets: &Array) -> LatentVector {
        let mut tape = Tape::new();
        let (zi, zt) = self.encode_base_examples(&mut tape, &self.store, inputs, targets);
        let z = self.encode_examples(&mut tape, &self.store, zi, zt, PathKind::Base);
        LatentVector::new(tape.value(z).clone(), Provenance::Examples)
    }

    pub fn rep_from_language(&self, tokens: &[String]) -> Result<LatentVector, CoreError> {
        let ids = self.lang.as_ref().expect("no language network").token_ids(tokens)?;
        let mut tape = Tape::new();
        let z = self.encode_language(&mut tape, &self.store, &ids);
        Ok(LatentVector::new(tape.value(z).clone(), Provenance::Language))
    }

    pub fn persistent_rep(&self, task_id: &str) -> Result<LatentVector, CoreError> {
        let id = self.persistent_id(task_id)?;
        Ok(LatentVector::new(self.store.value(id).clone(), Provenance::Persistent))
    }

    /// Meta-map a single representation by value.
    pub fn meta_map_value(&self, z_meta: &LatentVector, z_source: &LatentVector) -> LatentVector {
        let mut tape = Tape::new();
        let m = tape.leaf(z_meta.values.clone());
        let s = tape.leaf(z_source.values.clone());
        let out = self.meta_map(&mut tape, &self.store, m, s);
        LatentVector::new(tape.value(out).clone(), Provenance::MetaMappingOutput)
    }

    /// Encode a meta-mapping representation from (source, target)
    /// representation pairs by value.
    pub fn meta_rep_from_pairs(&self, pairs: &[(Array, Array)]) -> LatentVector {
        assert!(!pairs.is_empty(), "meta representation needs at least one pair");
        let mut tape = Tape::new();
        let z = self.dims.z_dim;
        let mut src = Vec::with_capacity(pairs.len() * z);
        let mut tgt = Vec::with_capacity(pairs.len() * z);
        for (s, t) in pairs {
            src.extend_from_slice(s.data());
            tgt.extend_from_slice(t.data());
        }
        let zs = tape.leaf(Array::matrix(pairs.len(), z, src));
        let zt = tape.leaf(Array::matrix(pairs.len(), z, tgt));
        let rep = self.encode_examples(&mut tape, &self.store, zs, zt, PathKind::Meta);
        LatentVector::new(tape.value(rep).clone(), Provenance::Examples)
    }

    /// Predict outputs for a batch from a task representation by value.
    pub fn predict(&self, rep: &LatentVector, inputs: &InputBatch) -> Array {
        self.predict_with_store(&self.store, rep, inputs)
    }

    /// Same as [`Model::predict`] but running on a different (e.g. frozen)
    /// parameter store with this model's architecture.
    pub fn predict_with_store(
        &self,
        store: &ParamStore,
        rep: &LatentVector,
        inputs: &InputBatch,
    ) -> Array {
        let mut tape = Tape::new();
        let z = tape.leaf(rep.values.clone());
        let out = self.perform_from_rep(&mut tape, store, z, inputs);
        tape.value(out).clone()
    }

    /// Classification probability for one task representation by value.
    pub fn classify_value(&self, z_metaclass: &LatentVector, z_probe: &LatentVector) -> f64 {
        let mut tape = Tape::new();
        let m = tape.leaf(z_metaclass.values.clone());
        let p = tape.leaf(z_probe.values.clone());
        let prob = self.classify_task_rep(&mut tape, &self.store, m, p);
        tape.value(prob).item()
    }
}

/// One-hot action concatenated with the raw reward: the (action, reward)
/// target encoding used by the cards and gridworld domains.
pub fn action_reward_target(action: usize, n_actions: usize, reward: f64) -> Vec<f64> {
    assert!(action < n_actions, "action out of range");
    let mut v = vec![0.0; n_actions + 1];
    v[action] = 1.0;
    v[n_actions] = reward;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny_model(variant: Variant) -> Model {
        let mut cfg = ExperimentConfig::poly_desk();
        cfg.z_dim = 8;
        cfg.p_hidden = 8;
        cfg.e_hidden = 8;
        cfg.h_hidden = 8;
        cfg.t_hidden = vec![4];
        cfg.od_hidden = 8;
        let dims = ModelDims::from_config(&cfg, 4, 1, 1);
        Model::new(dims, variant, &[], 7)
    }

    #[test]
    fn action_reward_encoding() {
        assert_eq!(action_reward_target(2, 3, -1.0), vec![0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn hyper_output_length_matches_delta_count() {
        let m = tiny_model(Variant::Homoiconic);
        let expected: usize = m.dims.t_shapes.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum();
        assert_eq!(m.dims.n_deltas(), expected);
        assert_eq!(*m.dims.h_dims.last().unwrap(), expected);
    }

    #[test]
    fn homoiconic_paths_share_parameters() {
        let m = tiny_model(Variant::Homoiconic);
        assert_eq!(
            m.example_net_param_ids(PathKind::Base),
            m.example_net_param_ids(PathKind::Meta)
        );
        assert_eq!(m.hyper_param_ids(PathKind::Base), m.hyper_param_ids(PathKind::Meta));
    }

    #[test]
    fn non_homoiconic_paths_are_disjoint() {
        let m = tiny_model(Variant::NonHomoiconic);
        let base: std::collections::HashSet<_> =
            m.example_net_param_ids(PathKind::Base).into_iter().collect();
        assert!(m
            .example_net_param_ids(PathKind::Meta)
            .iter()
            .all(|id| !base.contains(id)));
        let base_h: std::collections::HashSet<_> =
            m.hyper_param_ids(PathKind::Base).into_iter().collect();
        assert!(m.hyper_param_ids(PathKind::Meta).iter().all(|id| !base_h.contains(id)));
    }

    #[test]
    fn encode_examples_order_invariant() {
        let m = tiny_model(Variant::Homoiconic);
        let inputs = Array::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let targets = Array::matrix(3, 1, vec![0.2, -0.4, 0.9]);
        let rep = m.rep_from_examples(&InputBatch::Dense(inputs.clone()), &targets);

        // permuted support
        let perm = [2usize, 0, 1];
        let pi = InputBatch::Dense(inputs.clone()).select(&perm);
        let pt = Array::matrix(3, 1, perm.iter().map(|&i| targets.data()[i]).collect());
        let rep_perm = m.rep_from_examples(&pi, &pt);
        assert_eq!(rep.values.data(), rep_perm.values.data());

        // duplicated example appended
        let dup = [0usize, 1, 2, 1];
        let di = InputBatch::Dense(inputs).select(&dup);
        let dt = Array::matrix(4, 1, dup.iter().map(|&i| targets.data()[i]).collect());
        let rep_dup = m.rep_from_examples(&di, &dt);
        assert_eq!(rep.values.data(), rep_dup.values.data());
    }

    #[test]
    fn zero_hyper_deltas_reduce_to_default_network() {
        let mut m = tiny_model(Variant::Homoiconic);
        // zero the hyper output layer (weights and bias)
        let (w, b) = {
            let last = m.hyper.layers.last().unwrap();
            (last.w, last.b)
        };
        for id in [w, b] {
            let shape = m.store.value(id).shape().to_vec();
            let name = m.store.name(id).to_string();
            m.store.load(&name, Array::zeros(shape)).unwrap();
        }

        let x = Array::matrix(2, 8, (0..16).map(|i| (i as f64 * 0.21).cos()).collect());
        let z_task = Array::row((0..8).map(|i| (i as f64 * 0.11).sin()).collect());

        let mut tape = Tape::new();
        let xin = tape.leaf(x.clone());
        let zt = tape.leaf(z_task);
        let params = m.hyper_parameterize(&mut tape, &m.store, zt, PathKind::Base);
        for (w, b) in &params.deltas {
            assert!(tape.value(*w).data().iter().all(|&v| v == 0.0));
            assert!(tape.value(*b).data().iter().all(|&v| v == 0.0));
        }
        let with_deltas = m.task_forward(&mut tape, &m.store, &params, xin);
        let default = m.task_forward_default(&mut tape, &m.store, xin);
        assert_eq!(tape.value(with_deltas).data(), tape.value(default).data());
    }

    #[test]
    fn meta_map_output_dimension() {
        let m = tiny_model(Variant::Homoiconic);
        let z_meta = LatentVector::new(Array::row(vec![0.1; 8]), Provenance::Raw);
        let z_src = LatentVector::new(Array::row(vec![-0.2; 8]), Provenance::Examples);
        let out = m.meta_map_value(&z_meta, &z_src);
        assert_eq!(out.dim(), 8);
        assert_eq!(out.provenance, Provenance::MetaMappingOutput);
        // determinism
        let again = m.meta_map_value(&z_meta, &z_src);
        assert_eq!(out.values.data(), again.values.data());
    }

    #[test]
    fn task_concat_has_double_width_input() {
        let m = tiny_model(Variant::TaskConcat);
        let net = m.task_concat_net.as_ref().unwrap();
        assert_eq!(net.in_dim(), 16);
        // and it runs end to end without a hyper network
        let z_task = LatentVector::new(Array::row(vec![0.3; 8]), Provenance::Raw);
        let x = InputBatch::Dense(Array::matrix(3, 4, vec![0.1; 12]));
        let out = m.predict(&z_task, &x);
        assert_eq!(out.shape(), &[3, 1]);
    }

    #[test]
    fn persistent_combine_endpoints() {
        let mut m = tiny_model(Variant::Homoiconic);
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        m.add_persistent("taskA", &mut rng);
        let store = m.store.clone();
        let z_ex = Array::row((0..8).map(|i| 0.1 * i as f64).collect());
        let pers = m.persistent_rep("taskA").unwrap();

        let mut tape = Tape::new();
        let ze = tape.leaf(z_ex.clone());
        let (z1, _) = m.persistent_combine(&mut tape, &store, "taskA", ze, 1.0).unwrap();
        assert_eq!(tape.value(z1).data(), pers.values.data());
        let (z0, _) = m.persistent_combine(&mut tape, &store, "taskA", ze, 0.0).unwrap();
        assert_eq!(tape.value(z0).data(), z_ex.data());

        // equal representations give zero match loss
        let zp = tape.leaf(pers.values.clone());
        let (_, ml) = m.persistent_combine(&mut tape, &store, "taskA", zp, 0.5).unwrap();
        assert_eq!(tape.value(ml).item(), 0.0);

        assert!(m.persistent_combine(&mut tape, &store, "nope", ze, 0.5).is_err());
    }

    #[test]
    fn classify_outputs_probability() {
        let m = tiny_model(Variant::Homoiconic);
        let z_mc = LatentVector::new(Array::row(vec![0.5; 8]), Provenance::Raw);
        let z_probe = LatentVector::new(Array::row(vec![-0.5; 8]), Provenance::Examples);
        let p = m.classify_value(&z_mc, &z_probe);
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(p, m.classify_value(&z_mc, &z_probe));
    }
}
