//! Gridworld Q-learning: per-task replay buffers, Bellman targets from a
//! periodically copied frozen network, persistent task representations, and
//! the cross-validated optimal-stopping evaluation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use autodiff::{Array, LossKind, OptimizerState, ParamId, ParamStore};
use domains::grid::{
    grid_language, grid_mapping_language, grid_task_registry, grid_vocab, observe_sparse, reset,
    step, Action, GridRegistry, GridState, GridTask, ACTIONS, OBS_DIM,
};

use crate::config::{ExperimentConfig, RepSource, Variant};
use crate::engine::{
    argmax, q_target, softmax_sample, split_support_probe, train_base_step, train_meta_step,
    BaseBatch, MemoryBuffer, MetaRepSpec, RepNode, RepSpec,
};
use crate::metrics::{MetricsSink, Split};
use crate::model::{action_reward_target, InputBatch, LatentVector, Model, ModelDims, Provenance};
use crate::poly_run::derive_seed;
use crate::CoreError;

const N_ACTIONS: usize = 4;
pub const OPTIMAL_RETURN: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<u32>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<u32>,
    pub done: bool,
}

pub struct GridRun {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub model: Model,
    pub registry: GridRegistry,
    pub metrics: MetricsSink,
    pub buffers: Vec<MemoryBuffer<Transition>>,
    pub epsilon: f64,
    frozen: ParamStore,
    opt_base: OptimizerState,
    opt_meta: OptimizerState,
    all_ids: Vec<ParamId>,
    rng: ChaCha8Rng,
    pub mapping_id: String,
}

fn obs_batch(rows: Vec<Vec<u32>>) -> InputBatch {
    InputBatch::MultiHot { indices: Arc::new(rows), dim: OBS_DIM }
}

impl GridRun {
    pub fn new(cfg: ExperimentConfig, seed: u64) -> Self {
        let registry = grid_task_registry();
        let dims = ModelDims::from_config(&cfg, OBS_DIM, N_ACTIONS + 1, N_ACTIONS);
        let mut model = Model::new(dims, cfg.variant, &grid_vocab(), derive_seed(seed, "init", 0));
        let mapping_id = "switch_colors".to_string();
        if cfg.persistent_reps {
            let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "persistent", 0));
            for task in &registry.trained {
                model.add_persistent(&task.id(), &mut prng);
            }
            model.add_persistent(&mapping_id, &mut prng);
        }
        let all_ids: Vec<ParamId> = model.store.ids().collect();
        let frozen = model.snapshot();

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
        let n = registry.trained.len();
        GridRun {
            metrics: MetricsSink::new("grid", seed),
            buffers: (0..n).map(|_| MemoryBuffer::new(cfg.rl_buffer_size)).collect(),
            epsilon: cfg.rl_eps_init,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "train", 0)),
            frozen,
            cfg,
            seed,
            model,
            registry,
            opt_base,
            opt_meta,
            all_ids,
            mapping_id,
        }
    }

    fn language_mode(&self) -> bool {
        self.cfg.rep_source == RepSource::Language || self.cfg.variant == Variant::LanguageAlone
    }

    fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        self.model.lang.as_ref().unwrap().token_ids(tokens).unwrap()
    }

    /// The representation used to act on a trained task right now.
    pub fn task_rep(&self, ti: usize) -> LatentVector {
        let task = &self.registry.trained[ti];
        if self.language_mode() {
            self.model.rep_from_language(&grid_language(task)).unwrap()
        } else {
            self.model.persistent_rep(&task.id()).expect("persistent reps enabled for examples mode")
        }
    }

    fn q_values(&self, store: &ParamStore, rep: &LatentVector, obs: Vec<u32>) -> Vec<f64> {
        let batch = obs_batch(vec![obs]);
        self.model.predict_with_store(store, rep, &batch).into_data()
    }

    /// Behavior policy during buffer fill: epsilon-uniform, otherwise a
    /// sample from softmax(beta * Q).
    fn behavior_action<R: Rng>(
        &self,
        rep: &LatentVector,
        state: &GridState,
        epsilon: f64,
        rng: &mut R,
    ) -> Action {
        if rng.gen_range(0.0..1.0) < epsilon {
            ACTIONS[rng.gen_range(0..N_ACTIONS)]
        } else {
            let qs = self.q_values(&self.model.store, rep, observe_sparse(state));
            ACTIONS[softmax_sample(&qs, self.cfg.rl_softmax_beta, rng)]
        }
    }

    /// Replace a task's buffer by playing fresh episodes with the behavior
    /// policy until `rl_buffer_size` transitions are collected.
    pub fn fill_memory_buffer(&mut self, ti: usize, epoch: usize) {
        let task = self.registry.trained[ti];
        let rep = self.task_rep(ti);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "buffer", (epoch * 100 + ti) as u64));
        let mut fresh: Vec<Transition> = Vec::with_capacity(self.cfg.rl_buffer_size);
        while fresh.len() < self.cfg.rl_buffer_size {
            let mut state = reset(&task, &mut rng);
            while !state.done && fresh.len() < self.cfg.rl_buffer_size {
                let obs = observe_sparse(&state);
                let action = self.behavior_action(&rep, &state, self.epsilon, &mut rng);
                let (reward, done) = step(&mut state, action);
                fresh.push(Transition {
                    obs,
                    action: action.index(),
                    reward,
                    next_obs: observe_sparse(&state),
                    done,
                });
            }
        }
        self.buffers[ti].clear();
        for t in fresh {
            self.buffers[ti].push(t);
        }
    }

    fn base_step(&mut self, ti: usize) -> f64 {
        let task = self.registry.trained[ti];
        let n = self.cfg.base_batch;
        let idx = self.buffers[ti].sample_indices(n, &mut self.rng);
        let batch_items: Vec<Transition> =
            idx.iter().map(|&i| self.buffers[ti].get(i).clone()).collect();
        let (sup, _) = split_support_probe(n, self.cfg.base_support, &mut self.rng);

        // Bellman targets from the frozen network with the frozen
        // representation
        let frozen_rep = if self.language_mode() {
            LatentVector::new(
                {
                    // language representations from the frozen weights
                    let ids = self.token_ids(&grid_language(&task));
                    let mut tape = autodiff::Tape::new();
                    let z = self.model.encode_language(&mut tape, &self.frozen, &ids);
                    tape.value(z).clone()
                },
                Provenance::Language,
            )
        } else {
            let id = self.model.persistent_id(&task.id()).unwrap();
            LatentVector::new(self.frozen.value(id).clone(), Provenance::Persistent)
        };
        let next_rows: Vec<Vec<u32>> = batch_items.iter().map(|t| t.next_obs.clone()).collect();
        let next_q =
            self.model.predict_with_store(&self.frozen, &frozen_rep, &obs_batch(next_rows));

        let mut loss_targets = vec![0.0; n * N_ACTIONS];
        let mut mask = vec![0.0; n * N_ACTIONS];
        for (i, t) in batch_items.iter().enumerate() {
            let row = &next_q.data()[i * N_ACTIONS..(i + 1) * N_ACTIONS];
            loss_targets[i * N_ACTIONS + t.action] =
                q_target(t.reward, row, t.done, self.cfg.rl_gamma);
            mask[i * N_ACTIONS + t.action] = 1.0;
        }

        let sup_rows: Vec<Vec<u32>> = sup.iter().map(|&i| batch_items[i].obs.clone()).collect();
        let mut sup_targets = Vec::with_capacity(sup.len() * (N_ACTIONS + 1));
        for &i in &sup {
            sup_targets.extend_from_slice(&action_reward_target(
                batch_items[i].action,
                N_ACTIONS,
                batch_items[i].reward,
            ));
        }
        let all_rows: Vec<Vec<u32>> = batch_items.iter().map(|t| t.obs.clone()).collect();
        let batch = BaseBatch {
            support_inputs: obs_batch(sup_rows),
            support_targets: Array::matrix(sup.len(), N_ACTIONS + 1, sup_targets),
            all_inputs: obs_batch(all_rows),
            loss_targets: Array::matrix(n, N_ACTIONS, loss_targets),
            mask: Some(Array::matrix(n, N_ACTIONS, mask)),
        };

        let task_id = task.id();
        let tokens;
        let (rep, persistent_t) = if self.language_mode() {
            tokens = self.token_ids(&grid_language(&task));
            (RepSpec::Language(&tokens), None)
        } else {
            (RepSpec::Examples, Some(self.rng.gen_range(0.0..=1.0)))
        };
        let out = train_base_step(
            &mut self.model,
            &task_id,
            rep,
            &batch,
            LossKind::MaskedL2,
            persistent_t,
            self.cfg.persist_match_weight,
            &mut self.opt_base,
            &self.all_ids,
        );
        out.loss
    }

    fn trained_index(&self, task: &GridTask) -> usize {
        self.registry
            .trained
            .iter()
            .position(|t| t == task)
            .unwrap_or_else(|| panic!("task {} not trained", task.id()))
    }

    fn meta_step(&mut self) -> f64 {
        let stop = !self.cfg.allow_meta_gradients;
        let language = self.language_mode();
        let pair_ids: Vec<(usize, usize)> = self
            .registry
            .mapping_train_pairs
            .iter()
            .map(|(a, b)| (self.trained_index(a), self.trained_index(b)))
            .collect();

        if language {
            let lang_reps: Vec<(Array, Array)> = self
                .registry
                .mapping_train_pairs
                .iter()
                .map(|(a, b)| {
                    (
                        self.model.rep_from_language(&grid_language(a)).unwrap().values,
                        self.model.rep_from_language(&grid_language(b)).unwrap().values,
                    )
                })
                .collect();
            let nodes: Vec<(RepNode, RepNode)> = lang_reps
                .iter()
                .map(|(a, b)| (RepNode::Value(a), RepNode::Value(b)))
                .collect();
            let tokens = self.token_ids(&grid_mapping_language());
            let out = train_meta_step(
                &mut self.model,
                "switch_colors",
                MetaRepSpec::Language(&tokens),
                &nodes,
                None,
                0.0,
                &mut self.opt_meta,
                &self.all_ids,
            );
            return out.loss;
        }

        let persistent_pairs: Vec<(ParamId, ParamId)> = pair_ids
            .iter()
            .map(|&(a, b)| {
                (
                    self.model.persistent_id(&self.registry.trained[a].id()).unwrap(),
                    self.model.persistent_id(&self.registry.trained[b].id()).unwrap(),
                )
            })
            .collect();
        let nodes: Vec<(RepNode, RepNode)> = persistent_pairs
            .iter()
            .map(|&(a, b)| {
                (RepNode::Param { id: a, stop }, RepNode::Param { id: b, stop })
            })
            .collect();
        let n = nodes.len();
        let support_size =
            ((n as f64 * self.cfg.meta_support_fraction).round() as usize).clamp(1, n - 1);
        let (sup, probe) = split_support_probe(n, support_size, &mut self.rng);
        let support_nodes: Vec<_> = sup.iter().map(|&i| nodes[i]).collect();
        let probe_nodes: Vec<_> = probe.iter().map(|&i| nodes[i]).collect();
        let t = self.rng.gen_range(0.0..=1.0);
        let mapping_id = self.mapping_id.clone();
        let out = train_meta_step(
            &mut self.model,
            &mapping_id,
            MetaRepSpec::Pairs(&support_nodes),
            &probe_nodes,
            Some(t),
            self.cfg.persist_match_weight,
            &mut self.opt_meta,
            &self.all_ids,
        );
        out.loss
    }

    pub fn run_epoch(&mut self, epoch: usize) -> Result<(), CoreError> {
        if epoch % self.cfg.data_refresh_interval == 0 {
            for ti in 0..self.registry.trained.len() {
                self.fill_memory_buffer(ti, epoch);
            }
        }
        if epoch % self.cfg.rl_target_copy_interval == 0 {
            self.frozen = self.model.snapshot();
        }

        let n_tasks = self.registry.trained.len();
        let meta = self.cfg.variant != Variant::LanguageAlone;
        let mut steps: Vec<Option<usize>> = (0..n_tasks).map(Some).collect();
        if meta {
            steps.push(None); // the switch-good-and-bad meta-mapping
        }
        for i in (1..steps.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            steps.swap(i, j);
        }
        for s in steps {
            let loss = match s {
                Some(ti) => self.base_step(ti),
                None => self.meta_step(),
            };
            if !loss.is_finite() {
                return Err(CoreError::Diverged(format!("non-finite loss at epoch {epoch}")));
            }
        }

        let next = epoch + 1;
        self.opt_base.anneal_lr(next);
        self.opt_meta.anneal_lr(next);
        if next % self.cfg.lr_decay_interval == 0 {
            self.epsilon = (self.epsilon - self.cfg.rl_eps_decay).max(0.0);
        }
        Ok(())
    }

    // ── evaluation ──────────────────────────────────────────────────────

    /// Play `n` episodes greedily-softly (epsilon off, softmax on) from a
    /// representation; returns (mean return, mean steps).
    pub fn episode_stats(
        &self,
        rep: &LatentVector,
        task: &GridTask,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (f64, f64) {
        let beta = self.cfg.rl_softmax_beta;
        let mut policy = |state: &GridState, r: &mut ChaCha8Rng| {
            let qs = self.q_values(&self.model.store, rep, observe_sparse(state));
            ACTIONS[softmax_sample(&qs, beta, r)]
        };
        domains::grid::episode_return_stats(task, n, &mut policy, rng)
    }

    /// The meta-mapping representation from ALL train pairs (or language).
    pub fn mapping_rep(&self) -> LatentVector {
        if self.language_mode() {
            self.model.rep_from_language(&grid_mapping_language()).unwrap()
        } else {
            let pairs: Vec<(Array, Array)> = self
                .registry
                .mapping_train_pairs
                .iter()
                .map(|(a, b)| {
                    (
                        self.model.persistent_rep(&a.id()).unwrap().values,
                        self.model.persistent_rep(&b.id()).unwrap().values,
                    )
                })
                .collect();
            self.model.meta_rep_from_pairs(&pairs)
        }
    }

    pub fn evaluate(&mut self, epoch: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "eval", epoch as u64));
        let episodes = self.cfg.rl_eval_episodes;
        for ti in 0..self.registry.trained.len() {
            let task = self.registry.trained[ti];
            let rep = self.task_rep(ti);
            let (ret, steps) = self.episode_stats(&rep, &task, episodes, &mut rng);
            self.metrics.push(epoch, &task.id(), Split::Train, "mean_return", ret);
            self.metrics.push(epoch, &task.id(), Split::Train, "mean_steps", steps);
        }

        // zero-shot switched tasks via the meta-mapping
        let z_meta = self.mapping_rep();
        for (src, tgt) in self.registry.mapping_eval_pairs.clone() {
            let src_rep = if self.language_mode() {
                self.model.rep_from_language(&grid_language(&src)).unwrap()
            } else {
                self.model.persistent_rep(&src.id()).unwrap()
            };
            let transformed = self.model.meta_map_value(&z_meta, &src_rep);
            let (ret, steps) = self.episode_stats(&transformed, &tgt, episodes, &mut rng);
            self.metrics.push(epoch, &tgt.id(), Split::Heldout, "mm_return", ret);
            self.metrics.push(epoch, &tgt.id(), Split::Heldout, "mm_steps", steps);
            let (na_ret, _) = self.episode_stats(&src_rep, &tgt, episodes, &mut rng);
            self.metrics.push(epoch, &tgt.id(), Split::Heldout, "noadapt_return", na_ret);
            if self.language_mode() {
                let direct = self.model.rep_from_language(&grid_language(&tgt)).unwrap();
                let (lr_ret, _) = self.episode_stats(&direct, &tgt, episodes, &mut rng);
                self.metrics.push(epoch, &tgt.id(), Split::Heldout, "language_alone_return", lr_ret);
            }
        }
    }

    /// Mean return of a uniform-random policy on a task.
    pub fn chance_return(&self, task: &GridTask, n: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut policy = |_: &GridState, r: &mut ChaCha8Rng| ACTIONS[r.gen_range(0..N_ACTIONS)];
        domains::grid::episode_return_stats(task, n, &mut policy, rng).0
    }

    pub fn run(&mut self) -> Result<(), CoreError> {
        for epoch in 0..self.cfg.epochs {
            self.run_epoch(epoch)?;
            if (epoch + 1) % self.cfg.eval_interval == 0 || epoch + 1 == self.cfg.epochs {
                self.evaluate(epoch + 1);
            }
        }
        Ok(())
    }

    /// Greedy argmax action (used in tests).
    pub fn greedy_action(&self, rep: &LatentVector, state: &GridState) -> Action {
        let qs = self.q_values(&self.model.store, rep, observe_sparse(state));
        ACTIONS[argmax(&qs)]
    }
}

/// Cross-validated optimal stopping: an evaluation task's checkpoint is the
/// one where the OTHER evaluation task scores best, among checkpoints where
/// every trained task clears the threshold. Returns `(epoch, score)` per
/// evaluation task, or `None` when no checkpoint qualifies.
pub fn optimal_stopping_eval(
    epochs: &[usize],
    train_scores_per_epoch: &[Vec<f64>],
    eval_scores: [&[f64]; 2],
    train_threshold: f64,
) -> [Option<(usize, f64)>; 2] {
    assert_eq!(epochs.len(), train_scores_per_epoch.len());
    let qualifying: Vec<usize> = (0..epochs.len())
        .filter(|&i| train_scores_per_epoch[i].iter().all(|&s| s >= train_threshold))
        .collect();
    let mut out = [None, None];
    for task in 0..2 {
        let other = 1 - task;
        let best = qualifying
            .iter()
            .copied()
            .max_by(|&a, &b| eval_scores[other][a].partial_cmp(&eval_scores[other][b]).unwrap());
        out[task] = best.map(|i| (epochs[i], eval_scores[task][i]));
    }
    out
}
