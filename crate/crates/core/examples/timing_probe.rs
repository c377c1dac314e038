// quick manual timing of step components at desk scale
use autodiff::{Array, Tape, ParamStore};
use std::time::Instant;

fn main() {
    let mut store = ParamStore::new();
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let w = store.add("w", autodiff::layers::init_weight(&mut rng, 128, 5248, 1.0));
    let x = Array::matrix(1, 128, (0..128).map(|i| (i as f64)*0.01).collect());

    // forward+backward through the big layer, 100 reps
    let t0 = Instant::now();
    for _ in 0..100 {
        let mut tape = Tape::new();
        let xv = tape.leaf_grad(x.clone());
        let wv = tape.param(&store, w);
        let y = tape.matmul(xv, wv);
        let s = tape.mean_all(y);
        tape.backward(s);
        tape.export_grads(&mut store);
        store.clear_grads();
    }
    println!("big-layer fwd+bwd: {:.2} ms/iter", t0.elapsed().as_secs_f64()*10.0);

    // adam sweep over 672k params
    let mut opt = autodiff::OptimizerState::new(autodiff::OptimizerKind::Adam, 1e-4, 1.0, usize::MAX, 0.0);
    let g = Array::matrix(128, 5248, vec![0.001; 128*5248]);
    let t0 = Instant::now();
    for _ in 0..100 {
        store.accumulate_grad(w, g.clone());
        opt.step(&mut store, &[w]);
    }
    println!("adam sweep + grad clone: {:.2} ms/iter", t0.elapsed().as_secs_f64()*10.0);

    /* raw gemm speed check
    let a = vec![0.5f64; 128*128];
    let b = vec![0.25f64; 128*5248];
    let mut c = vec![0.0f64; 128*5248];
    let t0 = Instant::now();
    for _ in 0..100 {
        unsafe { matrixmultiply::dgemm(128, 128, 5248, 1.0, a.as_ptr(), 128, 1, b.as_ptr(), 5248, 1, 0.0, c.as_mut_ptr(), 5248, 1); }
    }
    let secs = t0.elapsed().as_secs_f64();
    */
}
