//! Optimizers and learning-rate annealing.

use crate::array::Array;
use crate::params::{Grad, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
    Sgd,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMSPROP_DECAY: f64 = 0.9;
const EPS: f64 = 1e-8;

/// Per-parameter moment accumulators plus the annealing schedule.
///
/// Only parameters that actually received a gradient are updated on a step;
/// their moment buffers are created lazily. The learning rate decays by
/// `decay` every `decay_interval` epochs but never below `lr_min`.
#[derive(Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub decay: f64,
    pub decay_interval: usize,
    pub lr_min: f64,
    step: u64,
    m: Vec<Option<Array>>,
    v: Vec<Option<Array>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, decay: f64, decay_interval: usize, lr_min: f64) -> Self {
        OptimizerState {
            kind,
            lr,
            decay,
            decay_interval,
            lr_min,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, 1.0, usize::MAX, lr)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn slot<'a>(buf: &'a mut Vec<Option<Array>>, id: ParamId, shape: &[usize]) -> &'a mut Array {
        if buf.len() <= id.0 {
            buf.resize(id.0 + 1, None);
        }
        if buf[id.0].is_none() {
            buf[id.0] = Some(Array::zeros(shape.to_vec()));
        }
        buf[id.0].as_mut().unwrap()
    }

    /// Apply one update to every parameter in `ids` that has a gradient,
    /// consuming the gradients. Panics if none of them has one.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        let any = ids.iter().any(|&id| store.has_grad(id));
        assert!(any, "optimizer_step precondition error: no gradients populated");
        self.step += 1;
        let t = self.step as i32;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for &id in ids {
                    let Some(g) = store.take_grad(id) else { continue };
                    let p = store.value_mut(id);
                    for_each_grad(&g, p.cols(), p.data_mut(), |x, gi| *x -= lr * gi);
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for &id in ids {
                    let Some(g) = store.take_grad(id) else { continue };
                    let shape = store.value(id).shape().to_vec();
                    Self::slot(&mut self.m, id, &shape);
                    Self::slot(&mut self.v, id, &shape);
                    let m = self.m[id.0].as_mut().unwrap();
                    let v = self.v[id.0].as_mut().unwrap();
                    let p = store.value_mut(id);
                    let cols = p.cols();
                    // fused single pass; the hypernetwork output layer makes
                    // this the hottest loop in training
                    for_each_grad3(
                        &g,
                        cols,
                        p.data_mut(),
                        m.data_mut(),
                        v.data_mut(),
                        |x, mi, vi, gi| {
                            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                            let mhat = *mi / bc1;
                            let vhat = *vi / bc2;
                            *x -= lr * mhat / (vhat.sqrt() + EPS);
                        },
                    );
                }
            }
            OptimizerKind::RmsProp => {
                for &id in ids {
                    let Some(g) = store.take_grad(id) else { continue };
                    let shape = store.value(id).shape().to_vec();
                    Self::slot(&mut self.v, id, &shape);
                    let v = self.v[id.0].as_mut().unwrap();
                    let p = store.value_mut(id);
                    let cols = p.cols();
                    for_each_grad2(&g, cols, p.data_mut(), v.data_mut(), |x, vi, gi| {
                        *vi = RMSPROP_DECAY * *vi + (1.0 - RMSPROP_DECAY) * gi * gi;
                        *x -= lr * gi / (vi.sqrt() + EPS);
                    });
                }
            }
        }
    }

    /// Anneal the learning rate if `epoch` falls on a decay boundary:
    /// lr <- max(lr * decay, lr_min). Epoch 0 never decays.
    pub fn anneal_lr(&mut self, epoch: usize) {
        if epoch > 0 && self.decay_interval != usize::MAX && epoch % self.decay_interval == 0 {
            self.lr = (self.lr * self.decay).max(self.lr_min);
        }
    }
}

/// Walk a gradient in parameter order, materializing rank-1 factors on the
/// fly instead of expanding them.
fn for_each_grad(g: &Grad, cols: usize, p: &mut [f64], mut f: impl FnMut(&mut f64, f64)) {
    match g {
        Grad::Dense(g) => {
            for (x, &gi) in p.iter_mut().zip(g.data()) {
                f(x, gi);
            }
        }
        Grad::Rank1Sum { rows, terms, .. } => {
            for i in 0..*rows {
                let row = &mut p[i * cols..(i + 1) * cols];
                if let [(u, v)] = terms.as_slice() {
                    let ui = u[i];
                    for (x, &vj) in row.iter_mut().zip(v) {
                        f(x, ui * vj);
                    }
                } else {
                    for (j, x) in row.iter_mut().enumerate() {
                        let gi: f64 = terms.iter().map(|(u, v)| u[i] * v[j]).sum();
                        f(x, gi);
                    }
                }
            }
        }
    }
}

fn for_each_grad2(
    g: &Grad,
    cols: usize,
    p: &mut [f64],
    s1: &mut [f64],
    mut f: impl FnMut(&mut f64, &mut f64, f64),
) {
    match g {
        Grad::Dense(g) => {
            for ((x, a), &gi) in p.iter_mut().zip(s1.iter_mut()).zip(g.data()) {
                f(x, a, gi);
            }
        }
        Grad::Rank1Sum { rows, terms, .. } => {
            for i in 0..*rows {
                let base = i * cols;
                let row = &mut p[base..base + cols];
                let srow = &mut s1[base..base + cols];
                if let [(u, v)] = terms.as_slice() {
                    let ui = u[i];
                    for ((x, a), &vj) in row.iter_mut().zip(srow.iter_mut()).zip(v) {
                        f(x, a, ui * vj);
                    }
                } else {
                    for (j, (x, a)) in row.iter_mut().zip(srow.iter_mut()).enumerate() {
                        let gi: f64 = terms.iter().map(|(u, v)| u[i] * v[j]).sum();
                        f(x, a, gi);
                    }
                }
            }
        }
    }
}

fn for_each_grad3(
    g: &Grad,
    cols: usize,
    p: &mut [f64],
    s1: &mut [f64],
    s2: &mut [f64],
    mut f: impl FnMut(&mut f64, &mut f64, &mut f64, f64),
) {
    match g {
        Grad::Dense(g) => {
            for (((x, a), b), &gi) in
                p.iter_mut().zip(s1.iter_mut()).zip(s2.iter_mut()).zip(g.data())
            {
                f(x, a, b, gi);
            }
        }
        Grad::Rank1Sum { rows, terms, .. } => {
            for i in 0..*rows {
                let base = i * cols;
                let row = &mut p[base..base + cols];
                let arow = &mut s1[base..base + cols];
                let brow = &mut s2[base..base + cols];
                if let [(u, v)] = terms.as_slice() {
                    let ui = u[i];
                    for (((x, a), b), &vj) in
                        row.iter_mut().zip(arow.iter_mut()).zip(brow.iter_mut()).zip(v)
                    {
                        f(x, a, b, ui * vj);
                    }
                } else {
                    for (j, ((x, a), b)) in
                        row.iter_mut().zip(arow.iter_mut()).zip(brow.iter_mut()).enumerate()
                    {
                        let gi: f64 = terms.iter().map(|(u, v)| u[i] * v[j]).sum();
                        f(x, a, b, gi);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(v: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Array::row(v));
        (s, id)
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // closed form: with g=1, bias-corrected first step is -lr in the eps->0 limit
        let (mut s, id) = store_with(vec![0.0]);
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, 1.0, usize::MAX, 0.0);
        s.accumulate_grad(id, Array::row(vec![1.0]));
        opt.step(&mut s, &[id]);
        let moved = -s.value(id).data()[0];
        assert!((moved - 1e-3).abs() < 1e-9, "first Adam step was {moved}");
    }

    #[test]
    fn zero_grad_params_unchanged() {
        let mut s = ParamStore::new();
        let a = s.add("a", Array::row(vec![1.0]));
        let b = s.add("b", Array::row(vec![2.0]));
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-2, 1.0, usize::MAX, 0.0);
        s.accumulate_grad(a, Array::row(vec![1.0]));
        opt.step(&mut s, &[a, b]);
        assert_eq!(s.value(b).data(), &[2.0]);
        assert_ne!(s.value(a).data(), &[1.0]);
    }

    #[test]
    fn identical_grads_identical_updates() {
        let mut s = ParamStore::new();
        let a = s.add("a", Array::row(vec![0.5]));
        let b = s.add("b", Array::row(vec![0.5]));
        let mut opt = OptimizerState::new(OptimizerKind::RmsProp, 1e-2, 1.0, usize::MAX, 0.0);
        for _ in 0..5 {
            s.accumulate_grad(a, Array::row(vec![0.3]));
            s.accumulate_grad(b, Array::row(vec![0.3]));
            opt.step(&mut s, &[a, b]);
        }
        assert_eq!(s.value(a).data(), s.value(b).data());
    }

    #[test]
    #[should_panic(expected = "no gradients populated")]
    fn missing_grads_panics() {
        let (mut s, id) = store_with(vec![0.0]);
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut s, &[id]);
    }

    #[test]
    fn anneal_schedule() {
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 3e-5, 0.85, 100, 3e-8);
        opt.anneal_lr(50);
        assert_eq!(opt.lr, 3e-5);
        opt.anneal_lr(100);
        assert!((opt.lr - 2.55e-5).abs() < 1e-12);
        // floor
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 4e-8, 0.85, 100, 3e-8);
        opt.anneal_lr(100);
        assert_eq!(opt.lr, 3.4e-8);
        opt.anneal_lr(200);
        assert_eq!(opt.lr, 3e-8);
        opt.anneal_lr(300);
        assert_eq!(opt.lr, 3e-8);
    }
}
