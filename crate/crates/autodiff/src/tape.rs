//! Wengert tape: reverse-mode AD via operation recording.
//!
//! Values are computed eagerly as operations are pushed; `backward` replays
//! the tape in reverse to accumulate gradients via the chain rule. A fresh
//! tape is built per training step; parameters live outside the tape in a
//! [`ParamStore`](crate::params::ParamStore) and are attached as leaves.
//!
//! Contract violations (shape mismatches, empty pools, invalid masks) panic
//! with a descriptive message; they are programmer errors, not runtime
//! conditions.

use std::sync::Arc;

use crate::array::Array;
use crate::params::{ParamId, ParamStore};


/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Loss kinds supported by [`Tape::loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean squared error over all elements.
    L2,
    /// Mean squared error over mask=1 elements only.
    MaskedL2,
    /// Sigmoid cross-entropy, averaged over all elements.
    CrossEntropy,
    /// Row-wise softmax cross-entropy against one-hot rows.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    /// out[r] = sum of w rows listed in indices[r]; input rows are implicit
    /// one-hot sums (binary features), so no multiplies are needed.
    OneHotMatmul { w: usize, indices: Arc<Vec<Vec<u32>>> },
    Add { a: usize, b: usize },
    /// [m,n] + broadcast row [1,n]
    AddRow { a: usize, row: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    LeakyRelu { a: usize, slope: f64 },
    Sigmoid { a: usize },
    Tanh { a: usize },
    /// Column-wise max over rows: [m,n] -> [1,n]; ties go to the first row.
    MaxPoolRows { a: usize },
    StopGrad,
    ConcatCols { items: Vec<usize> },
    ConcatRows { items: Vec<usize> },
    NarrowCols { a: usize, start: usize, len: usize },
    NarrowRows { a: usize, start: usize, len: usize },
    Reshape { a: usize },
    SumAll { a: usize },
    MeanAll { a: usize },
    Mse { pred: usize, target: usize },
    MaskedMse { pred: usize, target: usize, mask: usize, count: f64 },
    SigmoidXent { logits: usize, targets: usize },
    SoftmaxXentRows { logits: usize, targets: usize },
    /// Per-column weight normalization: w[:,j] = g[j] * v[:,j] / (||v[:,j]|| + 1e-8)
    WeightNorm { v: usize, g: usize },
}

struct Node {
    value: Arc<Array>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// The recording tape. One per training step.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
    /// Outer-product gradients destined for parameter leaves, kept factored.
    rank1: Vec<(ParamId, Vec<f64>, Vec<f64>)>,
    params_frozen: bool,
}

const WEIGHT_NORM_EPS: f64 = 1e-8;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(128),
            grads: Vec::with_capacity(128),
            rank1: Vec::new(),
            params_frozen: false,
        }
    }

    /// Treat all subsequently attached parameters as constants. Used when
    /// optimizing a free representation through fixed network weights.
    pub fn freeze_params(&mut self) {
        self.params_frozen = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn rc_value(&self, v: Var) -> Arc<Array> {
        Arc::clone(&self.nodes[v.0].value)
    }

    /// Gradient of the last `backward` root w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op, needs_grad, param });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_shared(&mut self, value: Arc<Array>, op: Op, needs_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op, needs_grad, param });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf: no gradient will flow into it.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// A differentiable leaf (used for inputs under test and free vectors
    /// such as task representations being optimized directly).
    pub fn leaf_grad(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    /// A constant leaf sharing external storage (e.g. frozen model weights).
    pub fn leaf_shared(&mut self, value: Arc<Array>) -> Var {
        self.push_shared(value, Op::Leaf, false, None)
    }

    /// Attach a parameter from the store as a differentiable leaf. Gradients
    /// are exported back with [`Tape::export_grads`]. After
    /// [`Tape::freeze_params`] the parameter enters as a constant instead.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.rc_value(id);
        if self.params_frozen {
            self.push_shared(value, Op::Leaf, false, None)
        } else {
            self.push_shared(value, Op::Leaf, true, Some(id))
        }
    }

    // ── elementwise and linear ops ──────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul dimension error: [{m}x{k}] x [{k2}x{n}]");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, 0.0, &mut out);
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(Array::matrix(m, n, out), Op::Matmul { a: a.0, b: b.0 }, ng, None)
    }

    /// Matrix product where the left operand rows are sums of one-hot basis
    /// vectors given by `indices` (e.g. multi-hot observations): out[r] is the
    /// sum of the listed rows of `w`.
    pub fn one_hot_matmul(&mut self, indices: Arc<Vec<Vec<u32>>>, w: Var) -> Var {
        let wv = &self.nodes[w.0].value;
        let (rows_w, n) = (wv.rows(), wv.cols());
        let m = indices.len();
        let mut out = vec![0.0; m * n];
        for (r, idx) in indices.iter().enumerate() {
            let dst = &mut out[r * n..(r + 1) * n];
            for &i in idx {
                let i = i as usize;
                assert!(i < rows_w, "one_hot_matmul index {i} out of range {rows_w}");
                let src = &wv.data()[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let ng = self.nodes[w.0].needs_grad;
        self.push(Array::matrix(m, n, out), Op::OneHotMatmul { w: w.0, indices }, ng, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(Array::new(av.shape().to_vec(), data), Op::Add { a: a.0, b: b.0 }, ng, None)
    }

    /// `a` is [m,n], `row` is [1,n]; the row is broadcast over all rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(rv.len(), n, "add_row width mismatch: {} vs {}", rv.len(), n);
        let mut data = av.data().to_vec();
        for r in 0..m {
            for c in 0..n {
                data[r * n + c] += rv.data()[c];
            }
        }
        let ng = self.nodes[a.0].needs_grad || self.nodes[row.0].needs_grad;
        self.push(Array::matrix(m, n, data), Op::AddRow { a: a.0, row: row.0 }, ng, None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(Array::new(av.shape().to_vec(), data), Op::Sub { a: a.0, b: b.0 }, ng, None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(Array::new(av.shape().to_vec(), data), Op::Mul { a: a.0, b: b.0 }, ng, None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|x| x * c).collect();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::new(av.shape().to_vec(), data), Op::Scale { a: a.0, c }, ng, None)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Leaky rectifier: x if x >= 0 else slope*x.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| if x >= 0.0 { x } else { slope * x }).collect();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::new(av.shape().to_vec(), data), Op::LeakyRelu { a: a.0, slope }, ng, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| sigmoid(x)).collect();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::new(av.shape().to_vec(), data), Op::Sigmoid { a: a.0 }, ng, None)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| x.tanh()).collect();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::new(av.shape().to_vec(), data), Op::Tanh { a: a.0 }, ng, None)
    }

    /// Column-wise maximum over the rows of `a`: [m,n] -> [1,n]. The backward
    /// pass routes each column's gradient to the first row attaining the max.
    pub fn max_pool_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(m > 0, "max_pool_rows precondition error: empty input");
        let mut out = av.data()[..n].to_vec();
        for r in 1..m {
            for c in 0..n {
                let x = av.data()[r * n + c];
                if x > out[c] {
                    out[c] = x;
                }
            }
        }
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::row(out), Op::MaxPoolRows { a: a.0 }, ng, None)
    }

    /// Elementwise maximum over a nonempty set of same-shape row vectors.
    pub fn elementwise_max_pool(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "elementwise_max_pool precondition error: empty set");
        let stacked = self.concat_rows(items);
        self.max_pool_rows(stacked)
    }

    /// Identity forward; contributes zero gradient to its operand.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = Arc::clone(&self.nodes[a.0].value);
        self.push_shared(value, Op::StopGrad, false, None)
    }

    pub fn concat_cols(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "concat_cols: empty list");
        let m = self.nodes[items[0].0].value.rows();
        let total: usize = items.iter().map(|v| self.nodes[v.0].value.cols()).collect::<Vec<_>>().iter().sum();
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for v in items {
            let av = &self.nodes[v.0].value;
            assert_eq!(av.rows(), m, "concat_cols row mismatch");
            let n = av.cols();
            for r in 0..m {
                data[r * total + off..r * total + off + n].copy_from_slice(&av.data()[r * n..(r + 1) * n]);
            }
            off += n;
        }
        let ng = items.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(
            Array::matrix(m, total, data),
            Op::ConcatCols { items: items.iter().map(|v| v.0).collect() },
            ng,
            None,
        )
    }

    pub fn concat_rows(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "concat_rows: empty list");
        let n = self.nodes[items[0].0].value.cols();
        let total: usize = items.iter().map(|v| self.nodes[v.0].value.rows()).sum();
        let mut data = Vec::with_capacity(total * n);
        for v in items {
            let av = &self.nodes[v.0].value;
            assert_eq!(av.cols(), n, "concat_rows col mismatch");
            data.extend_from_slice(av.data());
        }
        let ng = items.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(
            Array::matrix(total, n, data),
            Op::ConcatRows { items: items.iter().map(|v| v.0).collect() },
            ng,
            None,
        )
    }

    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.narrow_cols_as(a, start, len, None)
    }

    /// Narrow a column range and optionally reinterpret the result shape
    /// (the element count must match). Used to carve hypernetwork outputs
    /// into per-layer weight matrices.
    pub fn narrow_cols_as(&mut self, a: Var, start: usize, len: usize, shape: Option<Vec<usize>>) -> Var {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(start + len <= n, "narrow_cols out of range: {start}+{len} > {n}");
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&av.data()[r * n + start..r * n + start + len]);
        }
        let out_shape = shape.unwrap_or_else(|| vec![m, len]);
        assert_eq!(out_shape.iter().product::<usize>(), m * len, "narrow_cols_as shape mismatch");
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::new(out_shape, data), Op::NarrowCols { a: a.0, start, len }, ng, None)
    }

    pub fn narrow_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(start + len <= m, "narrow_rows out of range: {start}+{len} > {m}");
        let data = av.data()[start * n..(start + len) * n].to_vec();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::matrix(len, n, data), Op::NarrowRows { a: a.0, start, len }, ng, None)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(shape.iter().product::<usize>(), av.len(), "reshape element count mismatch");
        let data = av.data().to_vec();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::new(shape, data), Op::Reshape { a: a.0 }, ng, None)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::scalar(s), Op::SumAll { a: a.0 }, ng, None)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let s: f64 = av.data().iter().sum::<f64>() / av.len() as f64;
        let ng = self.nodes[a.0].needs_grad;
        self.push(Array::scalar(s), Op::MeanAll { a: a.0 }, ng, None)
    }

    // ── losses ──────────────────────────────────────────────────────────

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let (pv, tv) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        assert_eq!(pv.shape(), tv.shape(), "mse shape mismatch");
        let n = pv.len() as f64;
        let s: f64 = pv.data().iter().zip(tv.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let ng = self.nodes[pred.0].needs_grad || self.nodes[target.0].needs_grad;
        self.push(Array::scalar(s / n), Op::Mse { pred: pred.0, target: target.0 }, ng, None)
    }

    /// Mean squared error over mask=1 entries only. The mask must be binary
    /// and contain at least one 1.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: Var) -> Var {
        let (pv, tv, mv) =
            (&self.nodes[pred.0].value, &self.nodes[target.0].value, &self.nodes[mask.0].value);
        assert_eq!(pv.shape(), tv.shape(), "masked_mse shape mismatch");
        assert_eq!(pv.shape(), mv.shape(), "masked_mse mask shape mismatch");
        assert!(
            mv.data().iter().all(|&x| x == 0.0 || x == 1.0),
            "masked_mse precondition error: mask entries must be 0 or 1"
        );
        let count: f64 = mv.data().iter().sum();
        assert!(count > 0.0, "masked_mse precondition error: all-zero mask");
        assert!(!self.nodes[mask.0].needs_grad, "masked_mse: mask must not require grad");
        let s: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .zip(mv.data())
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum();
        let ng = self.nodes[pred.0].needs_grad || self.nodes[target.0].needs_grad;
        self.push(
            Array::scalar(s / count),
            Op::MaskedMse { pred: pred.0, target: target.0, mask: mask.0, count },
            ng,
            None,
        )
    }

    /// Elementwise sigmoid cross-entropy with logits, averaged over elements.
    pub fn sigmoid_xent(&mut self, logits: Var, targets: Var) -> Var {
        let (lv, tv) = (&self.nodes[logits.0].value, &self.nodes[targets.0].value);
        assert_eq!(lv.shape(), tv.shape(), "sigmoid_xent shape mismatch");
        let n = lv.len() as f64;
        let s: f64 = lv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&x, &y)| x.max(0.0) - x * y + (1.0 + (-x.abs()).exp()).ln())
            .sum();
        let ng = self.nodes[logits.0].needs_grad;
        self.push(
            Array::scalar(s / n),
            Op::SigmoidXent { logits: logits.0, targets: targets.0 },
            ng,
            None,
        )
    }

    /// Row-wise softmax cross-entropy with logits; targets are per-row
    /// distributions (usually one-hot). Averaged over rows.
    pub fn softmax_xent(&mut self, logits: Var, targets: Var) -> Var {
        let (lv, tv) = (&self.nodes[logits.0].value, &self.nodes[targets.0].value);
        assert_eq!(lv.shape(), tv.shape(), "softmax_xent shape mismatch");
        let (m, n) = (lv.rows(), lv.cols());
        let mut s = 0.0;
        for r in 0..m {
            let row = &lv.data()[r * n..(r + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for c in 0..n {
                let y = tv.data()[r * n + c];
                if y != 0.0 {
                    s -= y * (row[c] - lse);
                }
            }
        }
        let ng = self.nodes[logits.0].needs_grad;
        self.push(
            Array::scalar(s / m as f64),
            Op::SoftmaxXentRows { logits: logits.0, targets: targets.0 },
            ng,
            None,
        )
    }

    /// Uniform entry point matching the loss-kind configuration.
    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Var, mask: Option<Var>) -> Var {
        match kind {
            LossKind::L2 => self.mse(pred, target),
            LossKind::MaskedL2 => {
                let mask = mask.expect("masked_l2 requires a mask");
                self.masked_mse(pred, target, mask)
            }
            LossKind::CrossEntropy => self.sigmoid_xent(pred, target),
            LossKind::SoftmaxCrossEntropy => self.softmax_xent(pred, target),
        }
    }

    /// Per-output-unit weight normalization. `v` is [in,out] with one
    /// direction vector per column, `g` is [1,out] with the learned scales:
    /// w[:,j] = g[j] * v[:,j] / (||v[:,j]|| + 1e-8).
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Var {
        let (vv, gv) = (&self.nodes[v.0].value, &self.nodes[g.0].value);
        let (m, n) = (vv.rows(), vv.cols());
        assert_eq!(gv.len(), n, "weight_norm scale width mismatch");
        let mut data = vec![0.0; m * n];
        for j in 0..n {
            let mut norm = 0.0;
            for i in 0..m {
                let x = vv.data()[i * n + j];
                norm += x * x;
            }
            let r = norm.sqrt() + WEIGHT_NORM_EPS;
            let gj = gv.data()[j];
            for i in 0..m {
                data[i * n + j] = gj * vv.data()[i * n + j] / r;
            }
        }
        let ng = self.nodes[v.0].needs_grad || self.nodes[g.0].needs_grad;
        self.push(Array::matrix(m, n, data), Op::WeightNorm { v: v.0, g: g.0 }, ng, None)
    }

    // ── backward ────────────────────────────────────────────────────────

    fn ensure_grad(&mut self, idx: usize) -> &mut Array {
        if self.grads[idx].is_none() {
            let shape = self.nodes[idx].value.shape().to_vec();
            self.grads[idx] = Some(Array::zeros(shape));
        }
        self.grads[idx].as_mut().unwrap()
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    /// Run the reverse pass from a scalar root. Gradients accumulate on every
    /// node that (transitively) requires them and can be read back with
    /// [`Tape::grad`] or exported with [`Tape::export_grads`].
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        assert!(self.nodes[root.0].needs_grad, "backward root does not depend on any gradient leaf");
        self.ensure_grad(root.0).fill(1.0);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let n = self.nodes[b].value.cols();
                    if self.wants(a) {
                        let bv = Arc::clone(&self.nodes[b].value);
                        let da = self.ensure_grad(a);
                        gemm(m, n, k, g.data(), false, bv.data(), true, 1.0, da.data_mut());
                    }
                    if self.wants(b) {
                        // dB = A^T dC; with a single-row A this is an outer
                        // product, exported factored when B is a parameter
                        if m == 1 && self.nodes[b].param.is_some() {
                            let pid = self.nodes[b].param.unwrap();
                            let av = self.nodes[a].value.data().to_vec();
                            self.rank1.push((pid, av, g.data().to_vec()));
                        } else {
                            let av = Arc::clone(&self.nodes[a].value);
                            let db = self.ensure_grad(b);
                            gemm(k, m, n, av.data(), true, g.data(), false, 1.0, db.data_mut());
                        }
                    }
                }
                Op::OneHotMatmul { w, indices } => {
                    if self.wants(w) {
                        let n = self.nodes[w].value.cols();
                        let dw = self.ensure_grad(w);
                        for (r, idxs) in indices.iter().enumerate() {
                            let src = &g.data()[r * n..(r + 1) * n];
                            for &i in idxs {
                                let dst = &mut dw.data_mut()[i as usize * n..(i as usize + 1) * n];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    if self.wants(a) {
                        self.ensure_grad(a).add_assign(&g);
                    }
                    if self.wants(b) {
                        self.ensure_grad(b).add_assign(&g);
                    }
                }
                Op::AddRow { a, row } => {
                    if self.wants(a) {
                        self.ensure_grad(a).add_assign(&g);
                    }
                    if self.wants(row) {
                        let (m, n) = (g.rows(), g.cols());
                        let dr = self.ensure_grad(row);
                        for r in 0..m {
                            for c in 0..n {
                                dr.data_mut()[c] += g.data()[r * n + c];
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if self.wants(a) {
                        self.ensure_grad(a).add_assign(&g);
                    }
                    if self.wants(b) {
                        let db = self.ensure_grad(b);
                        for (d, s) in db.data_mut().iter_mut().zip(g.data()) {
                            *d -= s;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.wants(a) {
                        let bv = Arc::clone(&self.nodes[b].value);
                        let da = self.ensure_grad(a);
                        for ((d, s), x) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *d += s * x;
                        }
                    }
                    if self.wants(b) {
                        let av = Arc::clone(&self.nodes[a].value);
                        let db = self.ensure_grad(b);
                        for ((d, s), x) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *d += s * x;
                        }
                    }
                }
                Op::Scale { a, c } => {
                    if self.wants(a) {
                        let da = self.ensure_grad(a);
                        for (d, s) in da.data_mut().iter_mut().zip(g.data()) {
                            *d += s * c;
                        }
                    }
                }
                Op::LeakyRelu { a, slope } => {
                    if self.wants(a) {
                        let av = Arc::clone(&self.nodes[a].value);
                        let da = self.ensure_grad(a);
                        for ((d, s), &x) in da.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *d += s * if x >= 0.0 { 1.0 } else { slope };
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    if self.wants(a) {
                        let out = Arc::clone(&self.nodes[idx].value);
                        let da = self.ensure_grad(a);
                        for ((d, s), &y) in da.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                            *d += s * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh { a } => {
                    if self.wants(a) {
                        let out = Arc::clone(&self.nodes[idx].value);
                        let da = self.ensure_grad(a);
                        for ((d, s), &y) in da.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                            *d += s * (1.0 - y * y);
                        }
                    }
                }
                Op::MaxPoolRows { a } => {
                    if self.wants(a) {
                        let av = Arc::clone(&self.nodes[a].value);
                        let (m, n) = (av.rows(), av.cols());
                        let da = self.ensure_grad(a);
                        for c in 0..n {
                            let mut best_r = 0;
                            let mut best = av.data()[c];
                            for r in 1..m {
                                let x = av.data()[r * n + c];
                                if x > best {
                                    best = x;
                                    best_r = r;
                                }
                            }
                            da.data_mut()[best_r * n + c] += g.data()[c];
                        }
                    }
                }
                Op::StopGrad => unreachable!("stop_gradient never needs grad"),
                Op::ConcatCols { items } => {
                    let total = g.cols();
                    let m = g.rows();
                    let mut off = 0;
                    for &it in &items {
                        let n = self.nodes[it].value.cols();
                        if self.wants(it) {
                            let di = self.ensure_grad(it);
                            for r in 0..m {
                                for c in 0..n {
                                    di.data_mut()[r * n + c] += g.data()[r * total + off + c];
                                }
                            }
                        }
                        off += n;
                    }
                }
                Op::ConcatRows { items } => {
                    let n = g.cols();
                    let mut off = 0;
                    for &it in &items {
                        let rows = self.nodes[it].value.rows();
                        if self.wants(it) {
                            let di = self.ensure_grad(it);
                            for (d, s) in di
                                .data_mut()
                                .iter_mut()
                                .zip(&g.data()[off * n..(off + rows) * n])
                            {
                                *d += s;
                            }
                        }
                        off += rows;
                    }
                }
                Op::NarrowCols { a, start, len } => {
                    if self.wants(a) {
                        let n = self.nodes[a].value.cols();
                        let m = self.nodes[a].value.rows();
                        let da = self.ensure_grad(a);
                        for r in 0..m {
                            for c in 0..len {
                                da.data_mut()[r * n + start + c] += g.data()[r * len + c];
                            }
                        }
                    }
                }
                Op::NarrowRows { a, start, len } => {
                    if self.wants(a) {
                        let n = self.nodes[a].value.cols();
                        let da = self.ensure_grad(a);
                        for (d, s) in da.data_mut()[start * n..(start + len) * n]
                            .iter_mut()
                            .zip(g.data())
                        {
                            *d += s;
                        }
                    }
                }
                Op::Reshape { a } => {
                    if self.wants(a) {
                        let da = self.ensure_grad(a);
                        for (d, s) in da.data_mut().iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    }
                }
                Op::SumAll { a } => {
                    if self.wants(a) {
                        let s = g.item();
                        let da = self.ensure_grad(a);
                        for d in da.data_mut() {
                            *d += s;
                        }
                    }
                }
                Op::MeanAll { a } => {
                    if self.wants(a) {
                        let n = self.nodes[a].value.len() as f64;
                        let s = g.item() / n;
                        let da = self.ensure_grad(a);
                        for d in da.data_mut() {
                            *d += s;
                        }
                    }
                }
                Op::Mse { pred, target } => {
                    let s = g.item();
                    let n = self.nodes[pred].value.len() as f64;
                    let pv = Arc::clone(&self.nodes[pred].value);
                    let tv = Arc::clone(&self.nodes[target].value);
                    if self.wants(pred) {
                        let dp = self.ensure_grad(pred);
                        for ((d, p), t) in dp.data_mut().iter_mut().zip(pv.data()).zip(tv.data()) {
                            *d += s * 2.0 * (p - t) / n;
                        }
                    }
                    if self.wants(target) {
                        let dt = self.ensure_grad(target);
                        for ((d, p), t) in dt.data_mut().iter_mut().zip(pv.data()).zip(tv.data()) {
                            *d -= s * 2.0 * (p - t) / n;
                        }
                    }
                }
                Op::MaskedMse { pred, target, mask, count } => {
                    let s = g.item();
                    let pv = Arc::clone(&self.nodes[pred].value);
                    let tv = Arc::clone(&self.nodes[target].value);
                    let mv = Arc::clone(&self.nodes[mask].value);
                    if self.wants(pred) {
                        let dp = self.ensure_grad(pred);
                        for (((d, p), t), m) in
                            dp.data_mut().iter_mut().zip(pv.data()).zip(tv.data()).zip(mv.data())
                        {
                            *d += s * 2.0 * m * (p - t) / count;
                        }
                    }
                    if self.wants(target) {
                        let dt = self.ensure_grad(target);
                        for (((d, p), t), m) in
                            dt.data_mut().iter_mut().zip(pv.data()).zip(tv.data()).zip(mv.data())
                        {
                            *d -= s * 2.0 * m * (p - t) / count;
                        }
                    }
                }
                Op::SigmoidXent { logits, targets } => {
                    if self.wants(logits) {
                        let s = g.item();
                        let n = self.nodes[logits].value.len() as f64;
                        let lv = Arc::clone(&self.nodes[logits].value);
                        let tv = Arc::clone(&self.nodes[targets].value);
                        let dl = self.ensure_grad(logits);
                        for ((d, &x), &y) in dl.data_mut().iter_mut().zip(lv.data()).zip(tv.data()) {
                            *d += s * (sigmoid(x) - y) / n;
                        }
                    }
                }
                Op::SoftmaxXentRows { logits, targets } => {
                    if self.wants(logits) {
                        let s = g.item();
                        let lv = Arc::clone(&self.nodes[logits].value);
                        let tv = Arc::clone(&self.nodes[targets].value);
                        let (m, n) = (lv.rows(), lv.cols());
                        let dl = self.ensure_grad(logits);
                        for r in 0..m {
                            let row = &lv.data()[r * n..(r + 1) * n];
                            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                            for c in 0..n {
                                let p = (row[c] - mx).exp() / z;
                                dl.data_mut()[r * n + c] +=
                                    s * (p - tv.data()[r * n + c]) / m as f64;
                            }
                        }
                    }
                }
                Op::WeightNorm { v, g: gv } => {
                    let vv = Arc::clone(&self.nodes[v].value);
                    let gvv = Arc::clone(&self.nodes[gv].value);
                    let (m, n) = (vv.rows(), vv.cols());
                    let mut norms = vec![0.0; n];
                    let mut dots = vec![0.0; n];
                    for j in 0..n {
                        let mut norm = 0.0;
                        let mut dot = 0.0;
                        for i in 0..m {
                            let x = vv.data()[i * n + j];
                            norm += x * x;
                            dot += g.data()[i * n + j] * x;
                        }
                        norms[j] = norm.sqrt();
                        dots[j] = dot;
                    }
                    if self.wants(gv) {
                        let dg = self.ensure_grad(gv);
                        for j in 0..n {
                            dg.data_mut()[j] += dots[j] / (norms[j] + WEIGHT_NORM_EPS);
                        }
                    }
                    if self.wants(v) {
                        let dv = self.ensure_grad(v);
                        for j in 0..n {
                            let r = norms[j] + WEIGHT_NORM_EPS;
                            let gj = gvv.data()[j];
                            if norms[j] == 0.0 {
                                for i in 0..m {
                                    dv.data_mut()[i * n + j] += gj * g.data()[i * n + j] / r;
                                }
                            } else {
                                let corr = dots[j] / (r * r * norms[j]);
                                for i in 0..m {
                                    dv.data_mut()[i * n + j] += gj
                                        * (g.data()[i * n + j] / r - vv.data()[i * n + j] * corr);
                                }
                            }
                        }
                    }
                }
            }
            self.grads[idx] = Some(g);
        }
    }

    /// Move accumulated leaf gradients back into the parameter store.
    pub fn export_grads(&mut self, store: &mut ParamStore) {
        for idx in 0..self.nodes.len() {
            if let Some(id) = self.nodes[idx].param {
                if let Some(g) = self.grads[idx].take() {
                    store.accumulate_grad(id, g);
                }
            }
        }
        for (id, u, v) in self.rank1.drain(..) {
            store.accumulate_grad_rank1(id, u, v);
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// C = alpha*A*B + beta*C with logical shapes A [m,k], B [k,n]; `ta`/`tb`
/// read the operand transposed without materializing it.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i2 = t.leaf(Array::matrix(2, 2, vec![1., 0., 0., 1.]));
        let a = t.leaf(Array::matrix(2, 2, vec![1., 2., 3., 4.]));
        let c = t.matmul(i2, a);
        assert_eq!(t.value(c).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn matmul_inner_product() {
        let mut t = Tape::new();
        let a = t.leaf(Array::matrix(1, 2, vec![1., 2.]));
        let b = t.leaf(Array::matrix(2, 1, vec![3., 4.]));
        let c = t.matmul(a, b);
        assert_eq!(t.value(c).data(), &[11.0]);
    }

    #[test]
    #[should_panic(expected = "matmul dimension error")]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.leaf(Array::matrix(1, 3, vec![1., 2., 3.]));
        let b = t.leaf(Array::matrix(2, 1, vec![3., 4.]));
        t.matmul(a, b);
    }

    #[test]
    fn matmul_gradient() {
        // gradient of sum(a.b) w.r.t a with b=[[3],[4]] is [[3,4]]
        let mut t = Tape::new();
        let a = t.leaf_grad(Array::matrix(1, 2, vec![1., 2.]));
        let b = t.leaf(Array::matrix(2, 1, vec![3., 4.]));
        let c = t.matmul(a, b);
        let s = t.sum_all(c);
        t.backward(s);
        assert_eq!(t.grad(a).unwrap().data(), &[3., 4.]);
    }

    #[test]
    fn leaky_relu_values() {
        let mut t = Tape::new();
        let x = t.leaf(Array::row(vec![2.0, -1.0, 0.0]));
        let y = t.leaky_relu(x, 0.2);
        assert_eq!(t.value(y).data(), &[2.0, -0.2, 0.0]);
    }

    #[test]
    fn max_pool_basics() {
        let mut t = Tape::new();
        let a = t.leaf(Array::row(vec![1., 3.]));
        let b = t.leaf(Array::row(vec![2., 0.]));
        let p = t.elementwise_max_pool(&[a, b]);
        assert_eq!(t.value(p).data(), &[2., 3.]);
        let q = t.elementwise_max_pool(&[b, a]);
        assert_eq!(t.value(q).data(), &[2., 3.]);
        let single = t.elementwise_max_pool(&[a]);
        assert_eq!(t.value(single).data(), &[1., 3.]);
    }

    #[test]
    #[should_panic(expected = "empty set")]
    fn max_pool_empty() {
        let mut t = Tape::new();
        t.elementwise_max_pool(&[]);
    }

    #[test]
    fn max_pool_ties_go_first() {
        let mut t = Tape::new();
        let a = t.leaf_grad(Array::matrix(2, 1, vec![5.0, 5.0]));
        let p = t.max_pool_rows(a);
        let s = t.sum_all(p);
        t.backward(s);
        assert_eq!(t.grad(a).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn stop_gradient_identity_and_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf_grad(Array::row(vec![1.5, -2.5]));
        let w = t.leaf_grad(Array::row(vec![2.0, 3.0]));
        let sx = t.stop_gradient(x);
        // forward bit-identical
        assert_eq!(t.value(sx).data(), t.value(x).data());
        let prod = t.mul(sx, w);
        let s = t.sum_all(prod);
        t.backward(s);
        assert!(t.grad(x).is_none(), "stopped input must receive no gradient");
        assert_eq!(t.grad(w).unwrap().data(), &[1.5, -2.5]);
    }

    #[test]
    fn losses_basic_values() {
        let mut t = Tape::new();
        let p = t.leaf(Array::row(vec![3.0]));
        let y = t.leaf(Array::row(vec![1.0]));
        let l = t.mse(p, y);
        assert_eq!(t.value(l).item(), 4.0);

        let p2 = t.leaf(Array::row(vec![1.0, 0.0]));
        let y2 = t.leaf(Array::row(vec![0.0, 0.0]));
        let m2 = t.leaf(Array::row(vec![1.0, 0.0]));
        let l2 = t.masked_mse(p2, y2, m2);
        assert_eq!(t.value(l2).item(), 1.0);

        let l3 = t.mse(p2, p2);
        assert_eq!(t.value(l3).item(), 0.0);
    }

    #[test]
    #[should_panic(expected = "all-zero mask")]
    fn all_zero_mask_rejected() {
        let mut t = Tape::new();
        let p = t.leaf(Array::row(vec![1.0]));
        let y = t.leaf(Array::row(vec![0.0]));
        let m = t.leaf(Array::row(vec![0.0]));
        t.masked_mse(p, y, m);
    }

    #[test]
    fn weight_norm_values() {
        // v=[3,4] (one column), g=5 -> effective [3,4]
        let mut t = Tape::new();
        let v = t.leaf(Array::matrix(2, 1, vec![3.0, 4.0]));
        let g = t.leaf(Array::row(vec![5.0]));
        let w = t.weight_norm(v, g);
        assert!((t.value(w).data()[0] - 3.0).abs() < 1e-7);
        assert!((t.value(w).data()[1] - 4.0).abs() < 1e-7);

        // v=[1,0], g=2 -> [2,0]
        let v2 = t.leaf(Array::matrix(2, 1, vec![1.0, 0.0]));
        let g2 = t.leaf(Array::row(vec![2.0]));
        let w2 = t.weight_norm(v2, g2);
        assert!((t.value(w2).data()[0] - 2.0).abs() < 1e-7);
        assert!(t.value(w2).data()[1].abs() < 1e-12);

        // scaling v by 10 with g fixed leaves the effective weight unchanged
        let v3 = t.leaf(Array::matrix(2, 1, vec![30.0, 40.0]));
        let g3 = t.leaf(Array::row(vec![5.0]));
        let w3 = t.weight_norm(v3, g3);
        assert!((t.value(w3).data()[0] - 3.0).abs() < 1e-6);
        assert!((t.value(w3).data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn one_hot_matmul_matches_dense() {
        let mut t = Tape::new();
        let w = t.leaf_grad(Array::matrix(4, 3, (0..12).map(|x| x as f64).collect()));
        let idx = Arc::new(vec![vec![0u32, 2], vec![3]]);
        let out = t.one_hot_matmul(Arc::clone(&idx), w);
        // dense equivalent
        let dense = t.leaf(Array::matrix(2, 4, vec![1., 0., 1., 0., 0., 0., 0., 1.]));
        let out2 = t.matmul(dense, w);
        assert_eq!(t.value(out).data(), t.value(out2).data());
        let s = t.sum_all(out);
        t.backward(s);
        let gw = t.grad(w).unwrap();
        assert_eq!(gw.at(0, 0), 1.0);
        assert_eq!(gw.at(1, 0), 0.0);
        assert_eq!(gw.at(2, 1), 1.0);
        assert_eq!(gw.at(3, 2), 1.0);
    }
}
