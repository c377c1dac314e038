// phase timing of the polynomial base step
use autodiff::{Array, LossKind, OptimizerState, OptimizerKind, Tape};
use metamap::config::ExperimentConfig;
use metamap::model::{InputBatch, Model, ModelDims, PathKind};
use std::time::Instant;

fn main() {
    let cfg = ExperimentConfig::poly_desk();
    let dims = ModelDims::from_config(&cfg, 4, 1, 1);
    let mut model = Model::new(dims, cfg.variant, &[], 0);
    let ids: Vec<_> = model.store.ids().collect();
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-4, 1.0, usize::MAX, 0.0);

    let n = cfg.base_batch;
    let s = cfg.base_support;
    let inputs = Array::matrix(n, 4, (0..n * 4).map(|i| ((i * 37) % 100) as f64 / 50.0 - 1.0).collect());
    let targets = Array::matrix(n, 1, (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0).collect());
    let sup_inputs = Array::matrix(s, 4, inputs.data()[..s * 4].to_vec());
    let sup_targets = Array::matrix(s, 1, targets.data()[..s].to_vec());

    let reps = 300;
    let (mut t_fwd, mut t_bwd, mut t_exp, mut t_opt) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..reps {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let (zi, zt) = model.encode_base_examples(&mut tape, &model.store, &InputBatch::Dense(sup_inputs.clone()), &sup_targets);
        let z = model.encode_examples(&mut tape, &model.store, zi, zt, PathKind::Base);
        let z_in = model.embed_inputs(&mut tape, &model.store, &InputBatch::Dense(inputs.clone()));
        let z_out = model.apply_task(&mut tape, &model.store, z, z_in, PathKind::Base);
        let out = model.decode_output(&mut tape, &model.store, z_out);
        let tv = tape.leaf(targets.clone());
        let loss = tape.loss(LossKind::L2, out, tv, None);
        t_fwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        tape.backward(loss);
        t_bwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        tape.export_grads(&mut model.store);
        drop(tape);
        t_exp += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        opt.step(&mut model.store, &ids);
        t_opt += t0.elapsed().as_secs_f64();
    }
    let k = 1000.0 / reps as f64;
    println!("forward {:.2} ms | backward {:.2} ms | export {:.2} ms | adam {:.2} ms | total {:.2} ms",
        t_fwd * k, t_bwd * k, t_exp * k, t_opt * k, (t_fwd + t_bwd + t_exp + t_opt) * k);
}
