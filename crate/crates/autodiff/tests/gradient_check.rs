//! Gradient checks for random op compositions against central finite
//! differences, plus the op-level derived-value tests whose expectations are
//! computed from the finite-difference oracle.

use autodiff::array::Array;
use autodiff::gradcheck::{check_gradients, finite_diff_grads};
use autodiff::layers::RecurrentEncoder;
use autodiff::params::ParamStore;
use autodiff::tape::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Draw values away from zero so leaky-relu / max-pool kinks are not crossed
/// by the finite-difference perturbation.
fn sample_array<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array {
    let data = (0..rows * cols)
        .map(|_| {
            let mut v: f64 = rng.gen_range(-1.5..1.5);
            if v.abs() < 0.05 {
                v += 0.1_f64.copysign(v + 1e-12);
            }
            v
        })
        .collect();
    Array::matrix(rows, cols, data)
}

/// Build a random composition of ops (depth <= 6, dims <= 8) over the inputs,
/// ending in a scalar reduction.
fn random_composition(
    rng_seed: u64,
    dims: (usize, usize, usize),
) -> (Vec<Array>, impl Fn(&mut Tape, &[Var]) -> Var) {
    let (m, k, n) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let inputs = vec![
        sample_array(&mut rng, m, k),
        sample_array(&mut rng, k, n),
        sample_array(&mut rng, m, n),
        sample_array(&mut rng, 1, n),
        sample_array(&mut rng, m, n),
    ];
    let ops: Vec<u8> = (0..6).map(|_| rng.gen_range(0u8..8)).collect();
    let build = move |t: &mut Tape, vs: &[Var]| {
        let mut x = t.matmul(vs[0], vs[1]); // [m,n]
        for &op in &ops {
            x = match op {
                0 => t.add(x, vs[2]),
                1 => t.leaky_relu(x, 0.2),
                2 => t.mul(x, vs[4]),
                3 => t.add_row(x, vs[3]),
                4 => t.tanh(x),
                5 => t.sigmoid(x),
                6 => t.sub(x, vs[2]),
                _ => {
                    let stacked = t.concat_rows(&[x, vs[2]]);
                    t.max_pool_rows(stacked)
                }
            };
            if t.value(x).rows() == 1 && op == 7 {
                // pooled down to a row; keep shapes consistent for later ops
                x = t.concat_rows(&[x; 1]);
                break;
            }
        }
        if t.value(x).rows() > 1 || t.value(x).cols() > 1 {
            t.mean_all(x)
        } else {
            x
        }
    };
    (inputs, build)
}

#[test]
fn random_compositions_match_finite_differences() {
    let mut worst = 0.0f64;
    for case in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let dims = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (inputs, build) = random_composition(case, dims);
        let err = check_gradients(&build, &inputs, H);
        worst = worst.max(err);
        assert!(err < TOL, "case {case} dims {dims:?}: relative error {err}");
    }
    println!("max relative error over 100 random compositions: {worst:.3e}");
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10 {
        let pred = sample_array(&mut rng, 3, 4);
        let target = sample_array(&mut rng, 3, 4);
        let mask_data: Vec<f64> =
            (0..12).map(|i| if i % 3 == 0 || i == 1 { 1.0 } else { 0.0 }).collect();

        let err = check_gradients(
            |t, vs| t.mse(vs[0], vs[1]),
            &[pred.clone(), target.clone()],
            H,
        );
        assert!(err < TOL, "mse gradient error {err}");

        let mask = Array::matrix(3, 4, mask_data);
        let err = check_gradients(
            |t, vs| {
                let m = t.leaf(mask.clone());
                t.masked_mse(vs[0], vs[1], m)
            },
            &[pred.clone(), target.clone()],
            H,
        );
        assert!(err < TOL, "masked mse gradient error {err}");

        let labels = Array::matrix(3, 4, (0..12).map(|i| (i % 2) as f64).collect());
        let err = check_gradients(
            |t, vs| {
                let y = t.leaf(labels.clone());
                t.sigmoid_xent(vs[0], y)
            },
            &[pred.clone()],
            H,
        );
        assert!(err < TOL, "sigmoid xent gradient error {err}");

        let onehot = Array::matrix(3, 4, {
            let mut v = vec![0.0; 12];
            v[1] = 1.0;
            v[4] = 1.0;
            v[11] = 1.0;
            v
        });
        let err = check_gradients(
            |t, vs| {
                let y = t.leaf(onehot.clone());
                t.softmax_xent(vs[0], y)
            },
            &[pred.clone()],
            H,
        );
        assert!(err < TOL, "softmax xent gradient error {err}");
    }
}

#[test]
fn weight_norm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let v = sample_array(&mut rng, 5, 3);
        let g = sample_array(&mut rng, 1, 3);
        let x = sample_array(&mut rng, 2, 5);
        let err = check_gradients(
            |t, vs| {
                let w = t.weight_norm(vs[0], vs[1]);
                let y = t.matmul(vs[2], w);
                t.mean_all(y)
            },
            &[v.clone(), g.clone(), x.clone()],
            H,
        );
        assert!(err < TOL, "weight_norm gradient error {err}");
    }
}

#[test]
fn matmul_grad_matches_derived_value() {
    // Frozen from the finite-difference oracle: d sum(a.b)/d a with
    // b=[[3],[4]] is [[3, 4]].
    let a = Array::matrix(1, 2, vec![1.0, 2.0]);
    let b = Array::matrix(2, 1, vec![3.0, 4.0]);
    let fd = finite_diff_grads(
        |xs: &[Array]| {
            let mut t = Tape::new();
            let va = t.leaf(xs[0].clone());
            let vb = t.leaf(xs[1].clone());
            let c = t.matmul(va, vb);
            t.value(c).item()
        },
        &[a.clone(), b.clone()],
        H,
    );
    assert!((fd[0].data()[0] - 3.0).abs() < 1e-6);
    assert!((fd[0].data()[1] - 4.0).abs() < 1e-6);

    let mut t = Tape::new();
    let va = t.leaf_grad(a);
    let vb = t.leaf(b);
    let c = t.matmul(va, vb);
    let s = t.sum_all(c);
    t.backward(s);
    assert_eq!(t.grad(va).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn stop_gradient_leaves_other_path_unchanged() {
    // grad w.r.t. w of sum(stop(x) * w) must equal grad of sum(x * w):
    // verified against the finite-difference oracle on the stopped form.
    let x = Array::row(vec![0.7, -1.3, 2.2]);
    let w = Array::row(vec![0.4, 0.9, -0.6]);
    let fd = finite_diff_grads(
        |xs: &[Array]| {
            let mut t = Tape::new();
            let vx = t.leaf(xs[0].clone());
            let vw = t.leaf(xs[1].clone());
            let sx = t.stop_gradient(vx);
            let p = t.mul(sx, vw);
            let s = t.sum_all(p);
            t.value(s).item()
        },
        &[x.clone(), w.clone()],
        H,
    );
    // d/dw = x exactly, d/dx = w numerically (the finite differences see
    // through the stop because they re-evaluate the forward pass).
    assert!(fd[1].max_abs_diff(&x) < 1e-6);

    let mut t = Tape::new();
    let vx = t.leaf_grad(x.clone());
    let vw = t.leaf_grad(w);
    let sx = t.stop_gradient(vx);
    let p = t.mul(sx, vw);
    let s = t.sum_all(p);
    t.backward(s);
    assert!(t.grad(vx).is_none(), "gradient must be stopped");
    assert!(t.grad(vw).unwrap().max_abs_diff(&x) < 1e-12);
}

#[test]
fn recurrent_encoder_gradient_check() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let enc = RecurrentEncoder::new(&mut store, &mut rng, "enc", 4, 6, 3);
    let tokens: Vec<Array> = (0..3)
        .map(|i| Array::row((0..4).map(|j| 0.3 * ((i * 5 + j) as f64).cos() + 0.2).collect()))
        .collect();

    // check gradient w.r.t. the token embeddings through the whole encoder
    let err = check_gradients(
        |t, vs| {
            let z = enc.encode(t, &store, vs);
            t.mean_all(z)
        },
        &tokens,
        H,
    );
    assert!(err < TOL, "recurrent encoder input-gradient error {err}");

    // and w.r.t. one of the recurrent weight matrices, via the param path
    let wx = enc.cell1.wx;
    let base = store.value(wx).clone();
    let eval = |arr: &Array| {
        let mut s2 = store.clone();
        s2.load("enc/lstm0/wx", arr.clone()).unwrap();
        let mut t = Tape::new();
        let vs: Vec<Var> = tokens.iter().map(|a| t.leaf(a.clone())).collect();
        let z = enc.encode(&mut t, &s2, &vs);
        let m = t.mean_all(z);
        t.value(m).item()
    };
    let fd = finite_diff_grads(|xs: &[Array]| eval(&xs[0]), &[base.clone()], H);

    let mut t = Tape::new();
    let vs: Vec<Var> = tokens.iter().map(|a| t.leaf(a.clone())).collect();
    let z = enc.encode(&mut t, &store, &vs);
    let m = t.mean_all(z);
    t.backward(m);
    let mut s2 = store.clone();
    t.export_grads(&mut s2);
    let analytic = s2.grad_dense(wx).unwrap();
    let mut max_rel = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(fd[0].data()) {
        let denom = a.abs().max(n.abs()).max(1e-3);
        max_rel = max_rel.max((a - n).abs() / denom);
    }
    assert!(max_rel < TOL, "recurrent encoder weight-gradient error {max_rel}");
}

#[test]
fn pooling_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let nitems = rng.gen_range(1..6);
        let d = rng.gen_range(1..8);
        let items: Vec<Array> = (0..nitems).map(|_| sample_array(&mut rng, 1, d)).collect();
        let mut perm: Vec<usize> = (0..nitems).collect();
        for i in (1..nitems).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let mut t = Tape::new();
        let vars: Vec<Var> = items.iter().map(|a| t.leaf(a.clone())).collect();
        let p1 = t.elementwise_max_pool(&vars);
        let permuted: Vec<Var> = perm.iter().map(|&i| vars[i]).collect();
        let p2 = t.elementwise_max_pool(&permuted);
        assert_eq!(t.value(p1).data(), t.value(p2).data());
    }
}
