//! A tiny two-task context model: report the word or report the color of a
//! compound stimulus, with the task given by examples. After training, the
//! default behavior (an all-zeros task representation) reveals which task
//! dominates the learned default weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use autodiff::{Array, LossKind, OptimizerState, ParamId};

use crate::config::ExperimentConfig;
use crate::engine::{argmax, split_support_probe, train_base_step, BaseBatch, RepSpec};
use crate::model::{InputBatch, LatentVector, Model, ModelDims, Provenance};
use crate::poly_run::derive_seed;

const N_PATTERNS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StroopTask {
    Word,
    Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stopping {
    /// First epoch at 100% accuracy and loss < 0.3 on both tasks.
    BarelyMastered,
    /// First epoch at 100% accuracy and loss < 0.01 on both tasks.
    FullyMastered,
}

impl Stopping {
    pub fn loss_threshold(&self) -> f64 {
        match self {
            Stopping::BarelyMastered => 0.3,
            Stopping::FullyMastered => 0.01,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stopping::BarelyMastered => "barely_mastered",
            Stopping::FullyMastered => "fully_mastered",
        }
    }
}

/// The four stimuli: word in {0,1} x color in {0,1}, each one-hot encoded.
fn stimulus(word: usize, color: usize) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[word] = 1.0;
    v[2 + color] = 1.0;
    v
}

fn patterns() -> Vec<([f64; 4], usize, usize)> {
    let mut out = Vec::new();
    for word in 0..2 {
        for color in 0..2 {
            out.push((stimulus(word, color), word, color));
        }
    }
    out
}

fn label_of(task: StroopTask, word: usize, color: usize) -> usize {
    match task {
        StroopTask::Word => word,
        StroopTask::Color => color,
    }
}

pub struct StroopRun {
    pub cfg: ExperimentConfig,
    pub model: Model,
    opt: OptimizerState,
    all_ids: Vec<ParamId>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct StroopOutcome {
    pub proportion: usize,
    pub stopping: &'static str,
    pub seed: u64,
    /// 2 * (word accuracy - color accuracy) under the all-zeros
    /// representation; -1 is pure color responding, +1 pure word.
    pub bias: f64,
    pub epoch: usize,
    pub converged: bool,
}

impl StroopRun {
    pub fn new(cfg: ExperimentConfig, seed: u64) -> Self {
        let dims = ModelDims::from_config(&cfg, 4, 2, 2);
        let model = Model::new(dims, cfg.variant, &[], derive_seed(seed, "init", 0));
        let all_ids = model.store.ids().collect();
        let opt = OptimizerState::new(
            cfg.optimizer.into(),
            cfg.lr_base,
            cfg.lr_base_decay,
            cfg.lr_decay_interval,
            cfg.lr_base_min,
        );
        StroopRun {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "train", 0)),
            cfg,
            model,
            opt,
            all_ids,
        }
    }

    fn task_batch(&mut self, task: StroopTask) -> BaseBatch {
        let pats = patterns();
        let (sup, _) = split_support_probe(N_PATTERNS, self.cfg.base_support, &mut self.rng);
        let row = |i: usize| pats[i].0.to_vec();
        let onehot = |i: usize| {
            let l = label_of(task, pats[i].1, pats[i].2);
            let mut v = vec![0.0, 0.0];
            v[l] = 1.0;
            v
        };
        let mut sup_inputs = Vec::new();
        let mut sup_targets = Vec::new();
        for &i in &sup {
            sup_inputs.extend(row(i));
            sup_targets.extend(onehot(i));
        }
        let mut all_inputs = Vec::new();
        let mut all_targets = Vec::new();
        for i in 0..N_PATTERNS {
            all_inputs.extend(row(i));
            all_targets.extend(onehot(i));
        }
        BaseBatch {
            support_inputs: InputBatch::Dense(Array::matrix(sup.len(), 4, sup_inputs)),
            support_targets: Array::matrix(sup.len(), 2, sup_targets),
            all_inputs: InputBatch::Dense(Array::matrix(N_PATTERNS, 4, all_inputs)),
            loss_targets: Array::matrix(N_PATTERNS, 2, all_targets),
            mask: None,
        }
    }

    fn train_task(&mut self, task: StroopTask) -> f64 {
        let batch = self.task_batch(task);
        let name = match task {
            StroopTask::Word => "word",
            StroopTask::Color => "color",
        };
        train_base_step(
            &mut self.model,
            name,
            RepSpec::Examples,
            &batch,
            LossKind::SoftmaxCrossEntropy,
            None,
            0.0,
            &mut self.opt,
            &self.all_ids,
        )
        .loss
    }

    /// Accuracy and loss of a task when its representation is built from all
    /// four examples.
    fn task_metrics(&self, task: StroopTask) -> (f64, f64) {
        let pats = patterns();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (x, w, c) in &pats {
            inputs.extend_from_slice(x);
            let mut v = vec![0.0, 0.0];
            v[label_of(task, *w, *c)] = 1.0;
            targets.extend(v);
        }
        let input_batch = InputBatch::Dense(Array::matrix(N_PATTERNS, 4, inputs.clone()));
        let target_arr = Array::matrix(N_PATTERNS, 2, targets.clone());
        let rep = self.model.rep_from_examples(&input_batch, &target_arr);
        self.rep_metrics(&rep, task)
    }

    fn rep_metrics(&self, rep: &LatentVector, task: StroopTask) -> (f64, f64) {
        let pats = patterns();
        let mut inputs = Vec::new();
        for (x, _, _) in &pats {
            inputs.extend_from_slice(x);
        }
        let logits =
            self.model.predict(rep, &InputBatch::Dense(Array::matrix(N_PATTERNS, 4, inputs)));
        let mut correct = 0;
        let mut loss = 0.0;
        for (i, (_, w, c)) in pats.iter().enumerate() {
            let row = &logits.data()[i * 2..(i + 1) * 2];
            let label = label_of(task, *w, *c);
            if argmax(row) == label {
                correct += 1;
            }
            let mx = row[0].max(row[1]);
            let lse = mx + ((row[0] - mx).exp() + (row[1] - mx).exp()).ln();
            loss -= row[label] - lse;
        }
        (correct as f64 / N_PATTERNS as f64, loss / N_PATTERNS as f64)
    }

    /// Default-behavior bias with an all-zeros task representation.
    pub fn default_bias(&self) -> f64 {
        let zeros = LatentVector::new(Array::row(vec![0.0; self.cfg.z_dim]), Provenance::Raw);
        let (acc_word, _) = self.rep_metrics(&zeros, StroopTask::Word);
        let (acc_color, _) = self.rep_metrics(&zeros, StroopTask::Color);
        2.0 * (acc_word - acc_color)
    }

    /// Train with `proportion` word steps per color step until the stopping
    /// rule fires (or the epoch cap); returns the bias at that point.
    pub fn run_until(&mut self, proportion: usize, stopping: Stopping) -> (f64, usize, bool) {
        assert!(proportion >= 1, "proportion is the word:color training ratio");
        let threshold = stopping.loss_threshold();
        for epoch in 0..self.cfg.stroop_max_epochs {
            let mut steps: Vec<StroopTask> = vec![StroopTask::Word; proportion];
            steps.push(StroopTask::Color);
            for i in (1..steps.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                steps.swap(i, j);
            }
            for task in steps {
                self.train_task(task);
            }
            if epoch % 10 == 0 || epoch + 1 == self.cfg.stroop_max_epochs {
                let (acc_w, loss_w) = self.task_metrics(StroopTask::Word);
                let (acc_c, loss_c) = self.task_metrics(StroopTask::Color);
                if acc_w == 1.0 && acc_c == 1.0 && loss_w < threshold && loss_c < threshold {
                    return (self.default_bias(), epoch, true);
                }
            }
        }
        (self.default_bias(), self.cfg.stroop_max_epochs, false)
    }
}

/// The full grid: every (proportion, stopping) cell across seeds.
pub fn stroop_experiment(cfg: &ExperimentConfig) -> Vec<StroopOutcome> {
    let mut out = Vec::new();
    for &proportion in &cfg.stroop_proportions {
        for stopping in [Stopping::BarelyMastered, Stopping::FullyMastered] {
            for seed in 0..cfg.stroop_seeds as u64 {
                let mut run = StroopRun::new(cfg.clone(), seed);
                let (bias, epoch, converged) = run.run_until(proportion, stopping);
                out.push(StroopOutcome {
                    proportion,
                    stopping: stopping.name(),
                    seed,
                    bias,
                    epoch,
                    converged,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_is_bounded_and_mastery_reachable() {
        let mut cfg = ExperimentConfig::stroop();
        cfg.stroop_max_epochs = 4000;
        let mut run = StroopRun::new(cfg, 0);
        let (bias, _epoch, converged) = run.run_until(2, Stopping::BarelyMastered);
        assert!((-1.0..=1.0).contains(&bias), "bias {bias}");
        assert!(converged, "tiny model should master both tasks");
    }
}
