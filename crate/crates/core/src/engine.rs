//! Shared training machinery: support/probe splits, the three step kinds
//! (basic task, meta-mapping, meta-classification), Q-learning targets,
//! memory buffers, and task-representation optimization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use autodiff::{Array, LossKind, OptimizerKind, OptimizerState, ParamId, ParamStore, Tape, Var};

use crate::model::{InputBatch, LatentVector, Model, PathKind, Provenance};

/// Disjoint random partition of `0..n` into (support, probe), resampled on
/// every call.
pub fn split_support_probe<R: Rng>(
    n: usize,
    support_size: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    assert!(
        support_size < n,
        "split_support_probe precondition error: support {support_size} >= batch {n}"
    );
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..support_size {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let probe = idx.split_off(support_size);
    (idx, probe)
}

/// A fully prepared basic-task batch: the support rows feed the example
/// network, the loss runs over the whole batch (support and probe).
pub struct BaseBatch {
    pub support_inputs: InputBatch,
    pub support_targets: Array,
    pub all_inputs: InputBatch,
    pub loss_targets: Array,
    pub mask: Option<Array>,
}

/// How the task representation for a step is constructed.
pub enum RepSpec<'a> {
    Examples,
    Language(&'a [usize]),
}

/// Result of a single training step.
pub struct StepOutcome {
    pub loss: f64,
    pub match_loss: f64,
}

/// One end-to-end training step on a basic task: build the representation
/// (from the support set or language), run the task on the full batch, and
/// update every network by the domain loss.
#[allow(clippy::too_many_arguments)]
pub fn train_base_step(
    model: &mut Model,
    task_id: &str,
    rep: RepSpec,
    batch: &BaseBatch,
    loss_kind: LossKind,
    persistent_t: Option<f64>,
    match_weight: f64,
    opt: &mut OptimizerState,
    ids: &[ParamId],
) -> StepOutcome {
    let mut tape = Tape::new();
    let store = &model.store;

    let z_built = match rep {
        RepSpec::Examples => {
            let (zi, zt) =
                model.encode_base_examples(&mut tape, store, &batch.support_inputs, &batch.support_targets);
            model.encode_examples(&mut tape, store, zi, zt, PathKind::Base)
        }
        RepSpec::Language(token_ids) => model.encode_language(&mut tape, store, token_ids),
    };

    let (z_task, match_loss_var) = match persistent_t {
        Some(t) => {
            let (z, ml) = model
                .persistent_combine(&mut tape, store, task_id, z_built, t)
                .expect("persistent entry registered for trained task");
            (z, Some(ml))
        }
        None => (z_built, None),
    };

    let out = {
        let z_in = model.embed_inputs(&mut tape, store, &batch.all_inputs);
        let z_out = model.apply_task(&mut tape, store, z_task, z_in, PathKind::Base);
        model.decode_output(&mut tape, store, z_out)
    };
    let targets = tape.leaf(batch.loss_targets.clone());
    let mask = batch.mask.as_ref().map(|m| tape.leaf(m.clone()));
    let loss = tape.loss(loss_kind, out, targets, mask);

    let (total, match_val) = match match_loss_var {
        Some(ml) => {
            let weighted = tape.scale(ml, match_weight);
            (tape.add(loss, weighted), tape.value(ml).item())
        }
        None => (loss, 0.0),
    };

    let loss_val = tape.value(loss).item();
    tape.backward(total);
    tape.export_grads(&mut model.store);
    opt.step(&mut model.store, ids);
    StepOutcome { loss: loss_val, match_loss: match_val }
}

/// A task representation entering a meta-mapping step: either a cached value
/// (gradients end there) or a persistent parameter, stopped unless the
/// gradients-through-representations flag is on.
#[derive(Clone, Copy)]
pub enum RepNode<'a> {
    Value(&'a Array),
    Param { id: ParamId, stop: bool },
}

fn rep_row(tape: &mut Tape, store: &ParamStore, node: RepNode) -> Var {
    match node {
        RepNode::Value(a) => tape.leaf(a.clone()),
        RepNode::Param { id, stop } => {
            let v = tape.param(store, id);
            if stop {
                tape.stop_gradient(v)
            } else {
                v
            }
        }
    }
}

fn stack_reps(tape: &mut Tape, store: &ParamStore, nodes: &[RepNode]) -> Var {
    let rows: Vec<Var> = nodes.iter().map(|&n| rep_row(tape, store, n)).collect();
    tape.concat_rows(&rows)
}

/// One meta-mapping training step: the support pairs (or a language cue)
/// instantiate the mapping, the probe sources are transformed, and an l2
/// loss against the probe targets updates the shared networks.
#[allow(clippy::too_many_arguments)]
pub fn train_meta_step(
    model: &mut Model,
    mapping_id: &str,
    rep: MetaRepSpec,
    probes: &[(RepNode, RepNode)],
    persistent_t: Option<f64>,
    match_weight: f64,
    opt: &mut OptimizerState,
    ids: &[ParamId],
) -> StepOutcome {
    assert!(!probes.is_empty(), "train_meta_step precondition error: no probe pairs");
    if let MetaRepSpec::Pairs(support) = &rep {
        assert!(
            !support.is_empty(),
            "train_meta_step precondition error: need at least 1 support and 1 probe pair"
        );
    }
    let mut tape = Tape::new();
    let store = &model.store;

    let z_built = match rep {
        MetaRepSpec::Pairs(support) => {
            let zs = stack_reps(&mut tape, store, &support.iter().map(|p| p.0).collect::<Vec<_>>());
            let zt = stack_reps(&mut tape, store, &support.iter().map(|p| p.1).collect::<Vec<_>>());
            model.encode_examples(&mut tape, store, zs, zt, PathKind::Meta)
        }
        MetaRepSpec::Language(token_ids) => model.encode_language(&mut tape, store, token_ids),
    };

    let (z_meta, match_loss_var) = match persistent_t {
        Some(t) => {
            let (z, ml) = model
                .persistent_combine(&mut tape, store, mapping_id, z_built, t)
                .expect("persistent entry registered for trained mapping");
            (z, Some(ml))
        }
        None => (z_built, None),
    };

    let srcs = stack_reps(&mut tape, store, &probes.iter().map(|p| p.0).collect::<Vec<_>>());
    let tgts = stack_reps(&mut tape, store, &probes.iter().map(|p| p.1).collect::<Vec<_>>());
    let transformed = model.meta_map(&mut tape, store, z_meta, srcs);
    let loss = tape.mse(transformed, tgts);

    let (total, match_val) = match match_loss_var {
        Some(ml) => {
            let weighted = tape.scale(ml, match_weight);
            (tape.add(loss, weighted), tape.value(ml).item())
        }
        None => (loss, 0.0),
    };

    let loss_val = tape.value(loss).item();
    tape.backward(total);
    tape.export_grads(&mut model.store);
    opt.step(&mut model.store, ids);
    StepOutcome { loss: loss_val, match_loss: match_val }
}

pub enum MetaRepSpec<'a> {
    Pairs(&'a [(RepNode<'a>, RepNode<'a>)]),
    Language(&'a [usize]),
}

/// One meta-classification step: (task representation, encoded label) tuples
/// instantiate the classification, probe representations are classified
/// through the separate sigmoid head with a cross-entropy loss.
#[allow(clippy::too_many_arguments)]
pub fn train_metaclass_step(
    model: &mut Model,
    reps: &[&Array],
    labels: &[bool],
    support: &[usize],
    probe: &[usize],
    opt: &mut OptimizerState,
    ids: &[ParamId],
) -> f64 {
    assert_eq!(reps.len(), labels.len());
    let mut tape = Tape::new();
    let store = &model.store;
    let z = model.dims.z_dim;
    let td = model.dims.target_dim;

    let gather = |tape: &mut Tape, idx: &[usize]| -> Var {
        let mut data = Vec::with_capacity(idx.len() * z);
        for &i in idx {
            data.extend_from_slice(reps[i].data());
        }
        tape.leaf(Array::matrix(idx.len(), z, data))
    };

    // support tuples: (representation, O_e(label)) with the label in the
    // first slot of the target encoding
    let sup_reps = gather(&mut tape, support);
    let mut label_rows = vec![0.0; support.len() * td];
    for (r, &i) in support.iter().enumerate() {
        label_rows[r * td] = labels[i] as u8 as f64;
    }
    let sup_labels = Array::matrix(support.len(), td, label_rows);
    let sup_label_emb = model.embed_targets(&mut tape, store, &sup_labels);
    let z_mc = model.encode_examples(&mut tape, store, sup_reps, sup_label_emb, PathKind::Meta);

    let probe_reps = gather(&mut tape, probe);
    let z_out = model.apply_task(&mut tape, store, z_mc, probe_reps, PathKind::Meta);
    let logits = model.decode_classify(&mut tape, store, z_out);
    let truth = Array::matrix(
        probe.len(),
        1,
        probe.iter().map(|&i| labels[i] as u8 as f64).collect(),
    );
    let tvar = tape.leaf(truth);
    let loss = tape.sigmoid_xent(logits, tvar);

    let loss_val = tape.value(loss).item();
    tape.backward(loss);
    tape.export_grads(&mut model.store);
    opt.step(&mut model.store, ids);
    loss_val
}

// ── reinforcement-learning pieces ───────────────────────────────────────

/// Bellman target from the frozen network's next-state values.
pub fn q_target(reward: f64, next_q: &[f64], done: bool, gamma: f64) -> f64 {
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0,1)");
    if done {
        reward
    } else {
        reward + gamma * next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct MemoryBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> MemoryBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        MemoryBuffer { items: Vec::with_capacity(capacity), capacity, next: 0 }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.next = 0;
    }
}

/// Sample an index from softmax(beta * q).
pub fn softmax_sample<R: Rng>(qs: &[f64], beta: f64, rng: &mut R) -> usize {
    let mx = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = qs.iter().map(|&q| (beta * (q - mx)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    qs.len() - 1
}

/// First index attaining the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

// ── task-representation optimization ────────────────────────────────────

/// Learning curve from optimizing a representation on new-task data with all
/// network weights frozen.
#[derive(Debug, Clone)]
pub struct RepOptimization {
    /// Loss before each update, plus the final loss: `steps + 1` entries.
    pub curve: Vec<f64>,
    /// Sum of the curve: the integral of the learning curve.
    pub cumulative: f64,
}

/// Gradient descent on the representation only; the model weights never
/// change. Uses a fixed learning rate with the given optimizer family.
#[allow(clippy::too_many_arguments)]
pub fn optimize_task_rep(
    model: &Model,
    init: &LatentVector,
    inputs: &InputBatch,
    loss_targets: &Array,
    mask: Option<&Array>,
    loss_kind: LossKind,
    steps: usize,
    opt_kind: OptimizerKind,
    lr: f64,
) -> RepOptimization {
    let mut rep_store = ParamStore::new();
    let rep_id = rep_store.add("rep", init.values.clone());
    let mut opt = OptimizerState::new(opt_kind, lr, 1.0, usize::MAX, lr);
    let mut curve = Vec::with_capacity(steps + 1);

    for step in 0..=steps {
        let mut tape = Tape::new();
        let rep = tape.param(&rep_store, rep_id);
        tape.freeze_params();
        let z_in = model.embed_inputs(&mut tape, &model.store, inputs);
        let z_out = model.apply_task(&mut tape, &model.store, rep, z_in, PathKind::Base);
        let out = model.decode_output(&mut tape, &model.store, z_out);
        let targets = tape.leaf(loss_targets.clone());
        let mvar = mask.map(|m| tape.leaf(m.clone()));
        let loss = tape.loss(loss_kind, out, targets, mvar);
        curve.push(tape.value(loss).item());
        if step == steps {
            break;
        }
        tape.backward(loss);
        tape.export_grads(&mut rep_store);
        opt.step(&mut rep_store, &[rep_id]);
    }

    let cumulative = curve.iter().sum();
    RepOptimization { curve, cumulative }
}

/// Random representation init: iid normal entries with variance 1/sqrt(z).
pub fn random_rep_init(z_dim: usize, rng: &mut ChaCha8Rng) -> LatentVector {
    use rand_distr::{Distribution, Normal};
    let sd = (1.0 / (z_dim as f64).sqrt()).sqrt();
    let normal = Normal::new(0.0, sd).unwrap();
    let data = (0..z_dim).map(|_| normal.sample(rng)).collect();
    LatentVector::new(Array::row(data), Provenance::Raw)
}

/// Centroid of a set of representations.
pub fn centroid_rep(reps: &[&Array]) -> LatentVector {
    assert!(!reps.is_empty());
    let z = reps[0].cols();
    let mut acc = vec![0.0; z];
    for r in reps {
        for (a, v) in acc.iter_mut().zip(r.data()) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= reps.len() as f64;
    }
    LatentVector::new(Array::row(acc), Provenance::Raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, p) = split_support_probe(1024, 50, &mut rng);
        assert_eq!(s.len(), 50);
        assert_eq!(p.len(), 974);
        let mut all: Vec<usize> = s.iter().chain(p.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 1024);

        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            split_support_probe(64, 24, &mut rng_a),
            split_support_probe(64, 24, &mut rng_b)
        );
    }

    #[test]
    fn every_index_reaches_support_eventually() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 64;
        let mut seen = vec![false; n];
        for _ in 0..1000 {
            let (s, _) = split_support_probe(n, 24, &mut rng);
            for i in s {
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b), "some index never sampled into support");
    }

    #[test]
    #[should_panic(expected = "precondition")]
    fn split_rejects_oversized_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        split_support_probe(10, 10, &mut rng);
    }

    #[test]
    fn q_target_values() {
        assert_eq!(q_target(1.0, &[5.0, 2.0], true, 0.85), 1.0);
        let v = q_target(1.0, &[2.0, 0.5, 1.0, -3.0], false, 0.85);
        assert!((v - 2.7).abs() < 1e-12);
        assert_eq!(q_target(0.0, &[0.0, 0.0, 0.0, 0.0], false, 0.85), 0.0);
    }

    #[test]
    fn buffer_ring_semantics() {
        let mut buf = MemoryBuffer::new(3);
        for i in 0..5 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 3);
        let items: Vec<i32> = (0..3).map(|i| *buf.get(i)).collect();
        assert!(items.contains(&4) && items.contains(&3) && items.contains(&2));
    }

    #[test]
    fn softmax_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // very high inverse temperature approaches greedy argmax
        let qs = [0.1, 0.9, 0.3, 0.2];
        for _ in 0..100 {
            assert_eq!(softmax_sample(&qs, 1e6, &mut rng), 1);
        }
        // beta = 0 is uniform
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[softmax_sample(&qs, 0.0, &mut rng)] += 1;
        }
        for c in counts {
            assert!((700..1300).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn random_rep_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = 64;
        let n = 2000;
        let mut acc = 0.0;
        for _ in 0..n {
            let r = random_rep_init(z, &mut rng);
            acc += r.values.data().iter().map(|v| v * v).sum::<f64>() / z as f64;
        }
        let var = acc / n as f64;
        let expected = 1.0 / (z as f64).sqrt();
        assert!((var - expected).abs() < 0.01, "variance {var} vs {expected}");
    }
}
