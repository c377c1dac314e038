//! Polynomial-domain training: interleaved basic-task, meta-mapping, and
//! meta-classification steps over the trained registry, with the normalized
//! performance evaluation protocol.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use autodiff::{Array, LossKind, OptimizerState, ParamId};
use domains::poly::{
    build_splits, metaclass_targets, sample_inputs, PolyRegistry, PolySplitSpec, Polynomial,
    METACLASS_NAMES,
};

use crate::config::ExperimentConfig;
use crate::engine::{
    self, split_support_probe, train_base_step, train_meta_step, train_metaclass_step, BaseBatch,
    MetaRepSpec, RepNode, RepSpec,
};
use crate::metrics::{normalized_performance, MetricsSink, Split};
use crate::model::{InputBatch, LatentVector, Model, ModelDims, Provenance};
use crate::CoreError;

pub fn derive_seed(seed: u64, tag: &str, salt: u64) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    tag.hash(&mut h);
    salt.hash(&mut h);
    h.finish()
}

pub struct PolyRun {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub model: Model,
    pub registry: PolyRegistry,
    pub metrics: MetricsSink,
    pub datasets: Vec<Vec<([f64; 4], f64)>>,
    pub rep_cache: Vec<Array>,
    opt_base: OptimizerState,
    opt_meta: OptimizerState,
    all_ids: Vec<ParamId>,
    rng: ChaCha8Rng,
}

fn inputs_matrix(data: &[([f64; 4], f64)], rows: &[usize]) -> Array {
    let mut v = Vec::with_capacity(rows.len() * 4);
    for &r in rows {
        v.extend_from_slice(&data[r].0);
    }
    Array::matrix(rows.len(), 4, v)
}

fn targets_matrix(data: &[([f64; 4], f64)], rows: &[usize]) -> Array {
    Array::matrix(rows.len(), 1, rows.iter().map(|&r| data[r].1).collect())
}

fn full_range(n: usize) -> Vec<usize> {
    (0..n).collect()
}

impl PolyRun {
    pub fn new(cfg: ExperimentConfig, seed: u64) -> Self {
        let spec = PolySplitSpec {
            n_sources: cfg.poly_sources,
            n_source_train: cfg.poly_source_train,
            n_train_mappings: cfg.poly_train_mappings,
            n_heldout_mappings: cfg.poly_heldout_mappings,
            coeff_sd: cfg.poly_coeff_sd,
        };
        let mut reg_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "registry", 0));
        let registry = build_splits(&spec, &mut reg_rng);

        let dims = ModelDims::from_config(&cfg, 4, 1, 1);
        let model = Model::new(dims, cfg.variant, &[], derive_seed(seed, "init", 0));
        let all_ids: Vec<ParamId> = model.store.ids().collect();

        let opt_base = OptimizerState::new(
            cfg.optimizer.into(),
            cfg.lr_base,
            cfg.lr_base_decay,
            cfg.lr_decay_interval,
            cfg.lr_base_min,
        );
        let opt_meta = OptimizerState::new(
            cfg.optimizer.into(),
            cfg.lr_meta,
            cfg.lr_meta_decay,
            cfg.lr_decay_interval,
            cfg.lr_meta_min,
        );

        let n_trained = registry.trained.len();
        PolyRun {
            metrics: MetricsSink::new("poly", seed),
            datasets: vec![Vec::new(); n_trained],
            rep_cache: vec![Array::zeros(vec![1, cfg.z_dim]); n_trained],
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "train", 0)),
            cfg,
            seed,
            model,
            registry,
            opt_base,
            opt_meta,
            all_ids,
        }
    }

    pub fn refresh_datasets(&mut self, epoch: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "data", epoch as u64));
        for (i, task) in self.registry.trained.iter().enumerate() {
            self.datasets[i] = sample_inputs(&task.poly, self.cfg.base_batch, &mut rng);
        }
    }

    /// Fresh example-based representations for every trained task, cached
    /// for the epoch's meta steps.
    pub fn cache_task_reps(&mut self) {
        let support = self.cfg.base_support;
        for i in 0..self.registry.trained.len() {
            let data = &self.datasets[i];
            let (sup, _) = split_support_probe(data.len(), support, &mut self.rng);
            let rep = self.model.rep_from_examples(
                &InputBatch::Dense(inputs_matrix(data, &sup)),
                &targets_matrix(data, &sup),
            );
            self.rep_cache[i] = rep.values;
        }
    }

    fn base_step(&mut self, task_idx: usize) -> f64 {
        let data = &self.datasets[task_idx];
        let n = data.len();
        let (sup, _) = split_support_probe(n, self.cfg.base_support, &mut self.rng);
        let all = full_range(n);
        let batch = BaseBatch {
            support_inputs: InputBatch::Dense(inputs_matrix(data, &sup)),
            support_targets: targets_matrix(data, &sup),
            all_inputs: InputBatch::Dense(inputs_matrix(data, &all)),
            loss_targets: targets_matrix(data, &all),
            mask: None,
        };
        let task_id = self.registry.trained[task_idx].id.clone();
        let out = train_base_step(
            &mut self.model,
            &task_id,
            RepSpec::Examples,
            &batch,
            LossKind::L2,
            None,
            0.0,
            &mut self.opt_base,
            &self.all_ids,
        );
        out.loss
    }

    fn meta_step(&mut self, mapping_idx: usize) -> f64 {
        let mapping = &self.registry.mappings[mapping_idx];
        let pair_reps: Vec<(usize, usize)> = mapping
            .train_pairs
            .iter()
            .map(|(s, t)| (self.task_index(s), self.task_index(t)))
            .collect();
        let n = pair_reps.len();
        let support_size = ((n as f64 * self.cfg.meta_support_fraction).round() as usize)
            .clamp(1, n - 1);
        let (sup, probe) = split_support_probe(n, support_size, &mut self.rng);
        let nodes: Vec<(RepNode, RepNode)> = pair_reps
            .iter()
            .map(|&(s, t)| {
                (RepNode::Value(&self.rep_cache[s]), RepNode::Value(&self.rep_cache[t]))
            })
            .collect();
        let support_nodes: Vec<_> = sup.iter().map(|&i| nodes[i]).collect();
        let probe_nodes: Vec<_> = probe.iter().map(|&i| nodes[i]).collect();
        let mapping_id = mapping.mapping.id();
        let out = train_meta_step(
            &mut self.model,
            &mapping_id,
            MetaRepSpec::Pairs(&support_nodes),
            &probe_nodes,
            None,
            0.0,
            &mut self.opt_meta,
            &self.all_ids,
        );
        out.loss
    }

    fn metaclass_step(&mut self, class_idx: usize) -> f64 {
        let labels: Vec<bool> = self
            .registry
            .trained
            .iter()
            .map(|t| metaclass_targets(&t.poly)[class_idx])
            .collect();
        let reps: Vec<&Array> = self.rep_cache.iter().collect();
        let n = reps.len();
        let support_size = ((n as f64 * self.cfg.meta_support_fraction).round() as usize)
            .clamp(1, n - 1);
        let (sup, probe) = split_support_probe(n, support_size, &mut self.rng);
        train_metaclass_step(
            &mut self.model,
            &reps,
            &labels,
            &sup,
            &probe,
            &mut self.opt_meta,
            &self.all_ids,
        )
    }

    fn task_index(&self, id: &str) -> usize {
        self.registry
            .trained
            .iter()
            .position(|t| t.id == id)
            .unwrap_or_else(|| panic!("unknown trained task {id}"))
    }

    /// One epoch: a single step on every base task, meta-mapping, and
    /// meta-classification, in a random order, then learning-rate annealing.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<(), CoreError> {
        if epoch % self.cfg.data_refresh_interval == 0 {
            self.refresh_datasets(epoch);
        }
        self.cache_task_reps();

        #[derive(Clone, Copy)]
        enum StepKind {
            Base(usize),
            Meta(usize),
            Class(usize),
        }
        let mut steps: Vec<StepKind> =
            (0..self.registry.trained.len()).map(StepKind::Base).collect();
        for (i, m) in self.registry.mappings.iter().enumerate() {
            // a trainable mapping needs at least one support and one probe pair
            if m.trained && m.train_pairs.len() >= 2 {
                steps.push(StepKind::Meta(i));
            }
        }
        if self.cfg.metaclass {
            for c in 0..METACLASS_NAMES.len() {
                steps.push(StepKind::Class(c));
            }
        }
        for i in (1..steps.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            steps.swap(i, j);
        }

        for step in steps {
            let loss = match step {
                StepKind::Base(i) => self.base_step(i),
                StepKind::Meta(i) => self.meta_step(i),
                StepKind::Class(i) => self.metaclass_step(i),
            };
            if !loss.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "non-finite loss at epoch {epoch}"
                )));
            }
        }

        self.opt_base.anneal_lr(epoch + 1);
        self.opt_meta.anneal_lr(epoch + 1);
        Ok(())
    }

    // ── evaluation ──────────────────────────────────────────────────────

    fn eval_rng(&self, epoch: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "eval", epoch as u64))
    }

    /// Normalized performance of a polynomial task from a fresh dataset:
    /// representation built from a support sample, scored on the probes.
    fn eval_polynomial(
        &self,
        poly: &Polynomial,
        rep_override: Option<&LatentVector>,
        rng: &mut ChaCha8Rng,
    ) -> (f64, f64) {
        self.eval_polynomial_at(poly, rep_override, self.cfg.base_support, rng)
    }

    /// Like [`PolyRun::eval_polynomial`] with an explicit support-set size,
    /// for sample-efficiency sweeps.
    pub fn eval_polynomial_at(
        &self,
        poly: &Polynomial,
        rep_override: Option<&LatentVector>,
        support: usize,
        rng: &mut ChaCha8Rng,
    ) -> (f64, f64) {
        let data = sample_inputs(poly, self.cfg.base_batch, rng);
        let (sup, probe) = split_support_probe(data.len(), support, rng);
        let rep = match rep_override {
            Some(r) => r.clone(),
            None => self.model.rep_from_examples(
                &InputBatch::Dense(inputs_matrix(&data, &sup)),
                &targets_matrix(&data, &sup),
            ),
        };
        let probe_inputs = InputBatch::Dense(inputs_matrix(&data, &probe));
        let pred = self.model.predict(&rep, &probe_inputs);
        let truth = targets_matrix(&data, &probe);
        let n = probe.len() as f64;
        let loss = pred
            .data()
            .iter()
            .zip(truth.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let zeros = truth.data().iter().map(|t| t * t).sum::<f64>() / n;
        (loss, zeros)
    }

    /// Basic-task evaluation over trained and held-out polynomials.
    pub fn eval_base(&mut self, epoch: usize, full: bool) {
        let mut rng = self.eval_rng(epoch);
        let train_count = if full {
            self.registry.trained.len()
        } else {
            self.registry.trained.len().min(60)
        };
        let mut train_sum = 0.0;
        let mut train_n = 0usize;
        for i in 0..train_count {
            let (loss, zeros) = self.eval_polynomial(&self.registry.trained[i].poly.clone(), None, &mut rng);
            if zeros > 1e-9 {
                train_sum += normalized_performance(loss, zeros);
                train_n += 1;
            }
        }
        self.metrics.push(
            epoch,
            "base",
            Split::Train,
            "normalized_performance",
            train_sum / train_n as f64,
        );

        // held-out: the never-trained transformed targets
        let heldout: Vec<Polynomial> = self
            .registry
            .mappings
            .iter()
            .flat_map(|m| m.eval_pairs.iter().map(|(_, p)| p.clone()))
            .collect();
        let take = if full {
            heldout.len()
        } else {
            heldout.len().min(self.cfg.eval_heldout_sample)
        };
        let stride = (heldout.len() / take.max(1)).max(1);
        let sample: Vec<&Polynomial> = heldout.iter().step_by(stride).take(take).collect();
        let mut held_sum = 0.0;
        let mut held_n = 0usize;
        for p in &sample {
            let (loss, zeros) = self.eval_polynomial(p, None, &mut rng);
            if zeros > 1e-9 {
                held_sum += normalized_performance(loss, zeros);
                held_n += 1;
            }
        }
        self.metrics.push(
            epoch,
            "base",
            Split::Heldout,
            "normalized_performance",
            held_sum / held_n as f64,
        );
    }

    /// Zero-shot meta-mapping evaluation: each mapping is instantiated from
    /// all its train pairs, applied to held-out sources, and the transformed
    /// representation is scored on the ground-truth transformed task.
    /// The unadapted source representation and the zeros output are scored
    /// alongside.
    pub fn eval_meta_mappings(&mut self, epoch: usize, full: bool) {
        let mut rng = self.eval_rng(epoch + 1_000_000);
        for mi in 0..self.registry.mappings.len() {
            let mapping = self.registry.mappings[mi].clone();
            let mapping_id = mapping.mapping.id();
            let split = if mapping.trained { Split::Train } else { Split::Heldout };
            // support set: ALL train pairs
            let pairs: Vec<(Array, Array)> = mapping
                .train_pairs
                .iter()
                .map(|(s, t)| {
                    (
                        self.rep_cache[self.task_index(s)].clone(),
                        self.rep_cache[self.task_index(t)].clone(),
                    )
                })
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let z_meta = self.model.meta_rep_from_pairs(&pairs);

            // probe targets: never-trained transformed tasks
            let take_probes = if full { mapping.eval_pairs.len() } else { mapping.eval_pairs.len().min(6) };
            let mut mm_sum = 0.0;
            let mut noadapt_sum = 0.0;
            let mut probes = 0usize;
            for (sid, target_poly) in mapping.eval_pairs.iter().take(take_probes) {
                let src = LatentVector::new(
                    self.rep_cache[self.task_index(sid)].clone(),
                    Provenance::Examples,
                );
                let transformed = self.model.meta_map_value(&z_meta, &src);
                let (loss, zeros) = self.eval_polynomial(target_poly, Some(&transformed), &mut rng);
                if zeros <= 1e-9 {
                    continue;
                }
                mm_sum += normalized_performance(loss, zeros);
                let (na_loss, na_zeros) = self.eval_polynomial(target_poly, Some(&src), &mut rng);
                noadapt_sum += normalized_performance(na_loss, na_zeros);
                probes += 1;
            }
            if probes > 0 {
                self.metrics.push(
                    epoch,
                    &mapping_id,
                    split,
                    "mm_probe_performance",
                    mm_sum / probes as f64,
                );
                self.metrics.push(
                    epoch,
                    &mapping_id,
                    split,
                    "mm_probe_noadapt",
                    noadapt_sum / probes as f64,
                );
            }

            // support-side targets (trained tasks used to instantiate the mapping)
            let take = if full { mapping.train_pairs.len().min(8) } else { 3 };
            let mut sup_sum = 0.0;
            let mut sup_n = 0usize;
            for (sid, tid) in mapping.train_pairs.iter().take(take) {
                let src = LatentVector::new(
                    self.rep_cache[self.task_index(sid)].clone(),
                    Provenance::Examples,
                );
                let transformed = self.model.meta_map_value(&z_meta, &src);
                let target_poly = self.registry.find(tid).unwrap().poly.clone();
                let (loss, zeros) = self.eval_polynomial(&target_poly, Some(&transformed), &mut rng);
                if zeros <= 1e-9 {
                    continue;
                }
                sup_sum += normalized_performance(loss, zeros);
                sup_n += 1;
            }
            if sup_n > 0 {
                self.metrics.push(
                    epoch,
                    &mapping_id,
                    split,
                    "mm_support_performance",
                    sup_sum / sup_n as f64,
                );
            }
        }
    }

    /// Behavioral check of the metaclassifications on the trained registry.
    pub fn eval_metaclass(&mut self, epoch: usize) {
        if !self.cfg.metaclass {
            return;
        }
        let mut rng = self.eval_rng(epoch + 2_000_000);
        for (ci, name) in METACLASS_NAMES.iter().enumerate() {
            let labels: Vec<bool> = self
                .registry
                .trained
                .iter()
                .map(|t| metaclass_targets(&t.poly)[ci])
                .collect();
            let n = labels.len();
            let support_size = ((n as f64 * self.cfg.meta_support_fraction).round() as usize)
                .clamp(1, n - 1);
            let (sup, probe) = split_support_probe(n, support_size, &mut rng);
            let pairs: Vec<(Array, Array)> = sup
                .iter()
                .map(|&i| {
                    let mut label_row = vec![0.0];
                    label_row[0] = labels[i] as u8 as f64;
                    (self.rep_cache[i].clone(), Array::row(label_row))
                })
                .collect();
            // encode the labels through the target encoder path by value
            let z_mc = {
                let mut tape = autodiff::Tape::new();
                let z = self.cfg.z_dim;
                let mut src = Vec::new();
                for (s, _) in &pairs {
                    src.extend_from_slice(s.data());
                }
                let zs = tape.leaf(Array::matrix(pairs.len(), z, src));
                let mut lab = Vec::new();
                for (_, l) in &pairs {
                    lab.extend_from_slice(l.data());
                }
                let lv = Array::matrix(pairs.len(), 1, lab);
                let zt = self.model.embed_targets(&mut tape, &self.model.store, &lv);
                let rep = self.model.encode_examples(
                    &mut tape,
                    &self.model.store,
                    zs,
                    zt,
                    crate::model::PathKind::Meta,
                );
                LatentVector::new(tape.value(rep).clone(), Provenance::Examples)
            };
            let mut correct = 0usize;
            for &i in &probe {
                let z_probe =
                    LatentVector::new(self.rep_cache[i].clone(), Provenance::Examples);
                let p = self.model.classify_value(&z_mc, &z_probe);
                if (p > 0.5) == labels[i] {
                    correct += 1;
                }
            }
            self.metrics.push(
                epoch,
                name,
                Split::Train,
                "metaclass_accuracy",
                correct as f64 / probe.len() as f64,
            );
        }
    }

    /// Train to completion with the configured evaluation cadence.
    pub fn run(&mut self) -> Result<(), CoreError> {
        for epoch in 0..self.cfg.epochs {
            self.run_epoch(epoch)?;
            let last = epoch + 1 == self.cfg.epochs;
            if last || (epoch + 1) % self.cfg.eval_interval == 0 {
                self.eval_base(epoch + 1, last);
                self.eval_meta_mappings(epoch + 1, last);
                if last {
                    self.eval_metaclass(epoch + 1);
                }
            }
        }
        Ok(())
    }

    // ── representation optimization (learning after zero-shot) ─────────

    /// Optimize representations for held-out tasks from several starting
    /// points; returns (init name, mean cumulative loss).
    pub fn rep_optimization_comparison(&mut self) -> Vec<(String, f64)> {
        let mut rng = self.eval_rng(usize::MAX - 1);
        self.cache_task_reps();
        let trained_reps: Vec<&Array> = self.rep_cache.iter().collect();
        let centroid = engine::centroid_rep(&trained_reps);

        // evaluation tasks: probe targets of trained mappings
        let mut tasks: Vec<(Polynomial, LatentVector)> = Vec::new();
        'outer: for m in &self.registry.mappings {
            if !m.trained {
                continue;
            }
            let pairs: Vec<(Array, Array)> = m
                .train_pairs
                .iter()
                .map(|(s, t)| {
                    (
                        self.rep_cache[self.task_index(s)].clone(),
                        self.rep_cache[self.task_index(t)].clone(),
                    )
                })
                .collect();
            let z_meta = self.model.meta_rep_from_pairs(&pairs);
            for (sid, target) in &m.eval_pairs {
                let src = LatentVector::new(
                    self.rep_cache[self.task_index(sid)].clone(),
                    Provenance::Examples,
                );
                let mm_init = self.model.meta_map_value(&z_meta, &src);
                tasks.push((target.clone(), mm_init));
                if tasks.len() >= self.cfg.rep_opt_tasks {
                    break 'outer;
                }
            }
        }

        let mut results: Vec<(String, f64)> = vec![
            ("meta_mapping".into(), 0.0),
            ("centroid".into(), 0.0),
            ("random".into(), 0.0),
        ];
        for (poly, mm_init) in &tasks {
            let data = sample_inputs(poly, self.cfg.base_batch, &mut rng);
            let all = full_range(data.len());
            let inputs = InputBatch::Dense(inputs_matrix(&data, &all));
            let targets = targets_matrix(&data, &all);
            let random = engine::random_rep_init(self.cfg.z_dim, &mut rng);
            for (init, slot) in [(mm_init.clone(), 0), (centroid.clone(), 1), (random, 2)] {
                let out = engine::optimize_task_rep(
                    &self.model,
                    &init,
                    &inputs,
                    &targets,
                    None,
                    LossKind::L2,
                    self.cfg.rep_opt_steps,
                    self.cfg.optimizer.into(),
                    self.cfg.rep_opt_lr,
                );
                results[slot].1 += out.cumulative / tasks.len() as f64;
            }
        }
        results
    }

    /// Basic-task sample efficiency: mean normalized performance at each
    /// support-set size, over a sample of trained and held-out tasks.
    pub fn sweep_base_support(&mut self, sizes: &[usize], sample: usize) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for (si, &size) in sizes.iter().enumerate() {
            let mut rng = self.eval_rng(3_000_000 + si);
            let mut train_sum = 0.0;
            let mut train_n = 0usize;
            for task in self.registry.trained.iter().take(sample) {
                let (loss, zeros) = self.eval_polynomial_at(&task.poly, None, size, &mut rng);
                if zeros > 1e-9 {
                    train_sum += normalized_performance(loss, zeros);
                    train_n += 1;
                }
            }
            let heldout: Vec<&Polynomial> = self
                .registry
                .mappings
                .iter()
                .flat_map(|m| m.eval_pairs.iter().map(|(_, p)| p))
                .take(sample)
                .collect();
            let mut held_sum = 0.0;
            let mut held_n = 0usize;
            for p in heldout {
                let (loss, zeros) = self.eval_polynomial_at(p, None, size, &mut rng);
                if zeros > 1e-9 {
                    held_sum += normalized_performance(loss, zeros);
                    held_n += 1;
                }
            }
            out.push((size, train_sum / train_n.max(1) as f64, held_sum / held_n.max(1) as f64));
        }
        out
    }

    /// Meta-mapping sample efficiency: zero-shot probe performance when the
    /// mapping is instantiated from only the first `size` train pairs.
    pub fn sweep_meta_support(&mut self, sizes: &[usize]) -> Vec<(usize, f64)> {
        self.refresh_datasets(0);
        self.cache_task_reps();
        let mut out = Vec::new();
        for (si, &size) in sizes.iter().enumerate() {
            let mut rng = self.eval_rng(4_000_000 + si);
            let mut total = 0.0;
            let mut count = 0usize;
            for mi in 0..self.registry.mappings.len() {
                let mapping = self.registry.mappings[mi].clone();
                if !mapping.trained || mapping.train_pairs.is_empty() {
                    continue;
                }
                let pairs: Vec<(Array, Array)> = mapping
                    .train_pairs
                    .iter()
                    .take(size.max(1))
                    .map(|(s, t)| {
                        (
                            self.rep_cache[self.task_index(s)].clone(),
                            self.rep_cache[self.task_index(t)].clone(),
                        )
                    })
                    .collect();
                let z_meta = self.model.meta_rep_from_pairs(&pairs);
                for (sid, target_poly) in mapping.eval_pairs.iter().take(4) {
                    let src = LatentVector::new(
                        self.rep_cache[self.task_index(sid)].clone(),
                        Provenance::Examples,
                    );
                    let transformed = self.model.meta_map_value(&z_meta, &src);
                    let (loss, zeros) = self.eval_polynomial(target_poly, Some(&transformed), &mut rng);
                    if zeros > 1e-9 {
                        total += normalized_performance(loss, zeros);
                        count += 1;
                    }
                }
            }
            out.push((size, total / count.max(1) as f64));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::poly_desk();
        cfg.z_dim = 16;
        cfg.p_hidden = 16;
        cfg.e_hidden = 24;
        cfg.h_hidden = 24;
        cfg.t_hidden = vec![8];
        cfg.base_batch = 24;
        cfg.base_support = 10;
        cfg.poly_sources = 6;
        cfg.poly_source_train = 4;
        cfg.poly_train_mappings = 3;
        cfg.poly_heldout_mappings = 2;
        cfg.epochs = 3;
        cfg.eval_interval = 3;
        cfg
    }

    #[test]
    fn epoch_runs_and_counts_steps() {
        let mut run = PolyRun::new(tiny_cfg(), 0);
        run.run_epoch(0).unwrap();
        assert!(run.rep_cache.iter().all(|r| r.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn loss_decreases_on_single_task() {
        // smoke training: one fixed polynomial, repeated base steps
        let mut cfg = tiny_cfg();
        cfg.lr_base = 1e-3;
        let mut run = PolyRun::new(cfg, 1);
        run.refresh_datasets(0);
        let first = run.base_step(0);
        let mut last = first;
        for _ in 0..100 {
            last = run.base_step(0);
        }
        assert!(
            last < first * 0.8,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn deterministic_metrics() {
        let make = || {
            let mut run = PolyRun::new(tiny_cfg(), 7);
            run.run().unwrap();
            run.metrics.to_csv()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn meta_loss_does_not_touch_perception() {
        let mut run = PolyRun::new(tiny_cfg(), 3);
        run.refresh_datasets(0);
        run.cache_task_reps();
        // snapshot perception weights, run one meta step, compare
        let pid = run.model.perception.layers[0].w;
        let before = run.model.store.value(pid).clone();
        let mapping_idx = run
            .registry
            .mappings
            .iter()
            .position(|m| m.trained && m.train_pairs.len() >= 2)
            .unwrap();
        run.meta_step(mapping_idx);
        let after = run.model.store.value(pid);
        assert_eq!(before.data(), after.data(), "meta step must stop at task representations");
    }
}
