//! Network building blocks: linear layers, MLPs, and a small LSTM encoder.
//!
//! Layers own `ParamId`s into a shared [`ParamStore`]; the forward methods
//! record onto a [`Tape`]. Hidden activations are leaky rectifiers with
//! slope 0.2; layers that output into the shared latent space stay linear.

use rand::Rng;

use crate::array::Array;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Fan-in scaled uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in)) * scale.
pub fn init_weight<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, scale: f64) -> Array {
    let limit = (6.0 / fan_in as f64).sqrt() * scale;
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Array::matrix(fan_in, fan_out, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Linear,
}

/// A dense layer `y = x W + b`, optionally with per-output-unit weight
/// normalization of W.
#[derive(Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    /// Scale vector g when weight normalization is enabled; `w` then holds
    /// the direction matrix v.
    pub wn_scale: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init_scale: f64,
    ) -> Self {
        let w = store.add(format!("{name}/w"), init_weight(rng, in_dim, out_dim, init_scale));
        let b = store.add(format!("{name}/b"), Array::row(vec![0.0; out_dim]));
        Linear { w, b, wn_scale: None, in_dim, out_dim }
    }

    /// Weight-normalized variant: magnitude and direction estimated
    /// separately. Scales start at the initial column norms so the initial
    /// effective weights match the plain parameterization.
    pub fn new_weight_norm<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init_scale: f64,
    ) -> Self {
        let v = init_weight(rng, in_dim, out_dim, init_scale);
        let mut scales = vec![0.0; out_dim];
        for (j, s) in scales.iter_mut().enumerate() {
            let mut norm = 0.0;
            for i in 0..in_dim {
                norm += v.at(i, j) * v.at(i, j);
            }
            *s = norm.sqrt();
        }
        let w = store.add(format!("{name}/v"), v);
        let g = store.add(format!("{name}/g"), Array::row(scales));
        let b = store.add(format!("{name}/b"), Array::row(vec![0.0; out_dim]));
        Linear { w, b, wn_scale: Some(g), in_dim, out_dim }
    }

    /// The effective weight matrix node (applies weight norm if configured).
    pub fn weight_var(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let w = tape.param(store, self.w);
        match self.wn_scale {
            Some(g) => {
                let g = tape.param(store, g);
                tape.weight_norm(w, g)
            }
            None => w,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = self.weight_var(tape, store);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w, self.b];
        if let Some(g) = self.wn_scale {
            ids.push(g);
        }
        ids
    }
}

/// A plain MLP: leaky-ReLU hidden layers, linear output layer.
#[derive(Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub final_activation: Activation,
}

impl Mlp {
    /// `dims` lists layer sizes including input and output, e.g.
    /// `[4, 64, 64]` is two layers. `final_init_scale` multiplies the last
    /// layer's init (used for hypernetwork output scaling).
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        final_init_scale: f64,
    ) -> Self {
        Self::build(store, rng, name, dims, final_init_scale, false)
    }

    pub fn new_weight_norm<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        final_init_scale: f64,
    ) -> Self {
        Self::build(store, rng, name, dims, final_init_scale, true)
    }

    fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        final_init_scale: f64,
        weight_norm: bool,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let scale = if i == dims.len() - 2 { final_init_scale } else { 1.0 };
            let lname = format!("{name}/{i}");
            let layer = if weight_norm {
                Linear::new_weight_norm(store, rng, &lname, dims[i], dims[i + 1], scale)
            } else {
                Linear::new(store, rng, &lname, dims[i], dims[i + 1], scale)
            };
            layers.push(layer);
        }
        Mlp { layers, final_activation: Activation::Linear }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x);
            let act = if i == last { self.final_activation } else { Activation::LeakyRelu };
            if act == Activation::LeakyRelu {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        x
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.param_ids()).collect()
    }
}

/// One LSTM cell. Gate order on the packed [in,4H] weights: input, forget,
/// cell, output. Forget-gate biases start at +1.
#[derive(Clone)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let wx = store.add(format!("{name}/wx"), init_weight(rng, in_dim, 4 * hidden, 1.0));
        let wh = store.add(format!("{name}/wh"), init_weight(rng, hidden, 4 * hidden, 1.0));
        let mut bias = vec![0.0; 4 * hidden];
        for b in bias.iter_mut().skip(hidden).take(hidden) {
            *b = 1.0;
        }
        let b = store.add(format!("{name}/b"), Array::row(bias));
        LstmCell { wx, wh, b, hidden }
    }

    /// One step: (h, c) -> (h', c'), both [1,H].
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: Var,
        c: Var,
    ) -> (Var, Var) {
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.b);
        let xg = tape.matmul(x, wx);
        let hg = tape.matmul(h, wh);
        let pre = tape.add(xg, hg);
        let gates = tape.add_row(pre, b);
        let hdim = self.hidden;
        let i_in = tape.narrow_cols(gates, 0, hdim);
        let f_in = tape.narrow_cols(gates, hdim, hdim);
        let g_in = tape.narrow_cols(gates, 2 * hdim, hdim);
        let o_in = tape.narrow_cols(gates, 3 * hdim, hdim);
        let i = tape.sigmoid(i_in);
        let f = tape.sigmoid(f_in);
        let gg = tape.tanh(g_in);
        let o = tape.sigmoid(o_in);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, gg);
        let c_new = tape.add(fc, ig);
        let ct = tape.tanh(c_new);
        let h_new = tape.mul(o, ct);
        (h_new, c_new)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.wx, self.wh, self.b]
    }
}

/// Two stacked LSTM cells followed by two fully-connected layers; encodes a
/// token-embedding sequence into a single vector from the final hidden state.
#[derive(Clone)]
pub struct RecurrentEncoder {
    pub cell1: LstmCell,
    pub cell2: LstmCell,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl RecurrentEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        RecurrentEncoder {
            cell1: LstmCell::new(store, rng, &format!("{name}/lstm0"), in_dim, hidden),
            cell2: LstmCell::new(store, rng, &format!("{name}/lstm1"), hidden, hidden),
            fc1: Linear::new(store, rng, &format!("{name}/fc0"), hidden, hidden, 1.0),
            fc2: Linear::new(store, rng, &format!("{name}/fc1"), hidden, out_dim, 1.0),
        }
    }

    /// Encode a nonempty sequence of [1,in] embeddings.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, tokens: &[Var]) -> Var {
        assert!(!tokens.is_empty(), "recurrent_encode precondition error: empty sequence");
        let hdim = self.cell1.hidden;
        let mut h1 = tape.leaf(Array::row(vec![0.0; hdim]));
        let mut c1 = tape.leaf(Array::row(vec![0.0; hdim]));
        let mut h2 = tape.leaf(Array::row(vec![0.0; hdim]));
        let mut c2 = tape.leaf(Array::row(vec![0.0; hdim]));
        for &x in tokens {
            let (nh1, nc1) = self.cell1.step(tape, store, x, h1, c1);
            let (nh2, nc2) = self.cell2.step(tape, store, nh1, h2, c2);
            h1 = nh1;
            c1 = nc1;
            h2 = nh2;
            c2 = nc2;
        }
        let z = self.fc1.forward(tape, store, h2);
        let z = tape.leaky_relu(z, LEAKY_SLOPE);
        self.fc2.forward(tape, store, z)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.cell1.param_ids();
        ids.extend(self.cell2.param_ids());
        ids.extend(self.fc1.param_ids());
        ids.extend(self.fc2.param_ids());
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, &mut rng, "net", &[4, 8, 3], 1.0);
        let mut tape = Tape::new();
        let x = tape.leaf(Array::matrix(5, 4, vec![0.1; 20]));
        let y = mlp.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y).shape(), &[5, 3]);
    }

    #[test]
    fn recurrent_encode_deterministic_and_sensitive() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = RecurrentEncoder::new(&mut store, &mut rng, "lang", 6, 12, 5);
        let toks: Vec<Array> =
            (0..3).map(|i| Array::row((0..6).map(|j| ((i * 7 + j) as f64).sin()).collect())).collect();

        let run = |toks: &[Array]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = toks.iter().map(|t| tape.leaf(t.clone())).collect();
            let z = enc.encode(&mut tape, &store, &vars);
            tape.value(z).clone()
        };
        let a = run(&toks);
        let b = run(&toks);
        assert_eq!(a, b, "same sequence twice must give identical output");

        let mut toks2 = toks.clone();
        toks2[1] = Array::row(vec![0.9; 6]);
        let c = run(&toks2);
        assert!(a.max_abs_diff(&c) > 1e-9, "different token should change the encoding");
    }

    #[test]
    #[should_panic(expected = "empty sequence")]
    fn recurrent_encode_empty_panics() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = RecurrentEncoder::new(&mut store, &mut rng, "lang", 6, 12, 5);
        let mut tape = Tape::new();
        enc.encode(&mut tape, &store, &[]);
    }

    #[test]
    fn forget_gate_bias_init() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = LstmCell::new(&mut store, &mut rng, "c", 3, 4);
        let b = store.value(cell.b);
        assert_eq!(b.data()[3], 0.0);
        assert_eq!(b.data()[4], 1.0);
        assert_eq!(b.data()[7], 1.0);
        assert_eq!(b.data()[8], 0.0);
    }
}
