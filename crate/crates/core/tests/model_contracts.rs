//! Structural contracts of the model variants and end-to-end training
//! plumbing at tiny scale.

use autodiff::Array;
use metamap::checkpoint::Checkpoint;
use metamap::config::{ExperimentConfig, Variant};
use metamap::model::{InputBatch, LatentVector, Model, ModelDims, PathKind, Provenance};
use metamap::poly_run::PolyRun;

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
    cfg.epochs = 2;
    cfg.eval_interval = 2;
    cfg
}

#[test]
fn homoiconicity_structural_assertion() {
    // default model: identical parameter objects on both paths
    let cfg = tiny_cfg();
    let dims = ModelDims::from_config(&cfg, 4, 1, 1);
    let m = Model::new(dims.clone(), Variant::Homoiconic, &[], 0);
    assert_eq!(
        m.example_net_param_ids(PathKind::Base),
        m.example_net_param_ids(PathKind::Meta),
        "homoiconic example networks must share storage"
    );
    assert_eq!(m.hyper_param_ids(PathKind::Base), m.hyper_param_ids(PathKind::Meta));

    // the non-homoiconic variant fails the identity check by construction
    let nh = Model::new(dims, Variant::NonHomoiconic, &[], 0);
    assert_ne!(
        nh.example_net_param_ids(PathKind::Base),
        nh.example_net_param_ids(PathKind::Meta)
    );
    assert_ne!(nh.hyper_param_ids(PathKind::Base), nh.hyper_param_ids(PathKind::Meta));
}

#[test]
fn non_homoiconic_variant_trains() {
    let mut cfg = tiny_cfg();
    cfg.variant = Variant::NonHomoiconic;
    let mut run = PolyRun::new(cfg, 1);
    run.run().unwrap();
    assert!(run.metrics.last("base", "normalized_performance").is_some());
}

#[test]
fn task_concat_variant_trains_and_evaluates_without_hyper() {
    let mut cfg = tiny_cfg();
    cfg.variant = Variant::TaskConcat;
    let mut run = PolyRun::new(cfg, 1);
    run.run().unwrap();
    assert!(run.metrics.last("base", "normalized_performance").is_some());
    // and its task-mapping input really is two latent vectors wide
    let z = run.cfg.z_dim;
    let zeros = LatentVector::new(Array::row(vec![0.0; z]), Provenance::Raw);
    let out = run.model.predict(&zeros, &InputBatch::Dense(Array::matrix(1, 4, vec![0.5; 4])));
    assert_eq!(out.len(), 1);
}

#[test]
fn base_step_reaches_perception_parameters() {
    let cfg = tiny_cfg();
    let mut run = PolyRun::new(cfg, 2);
    run.refresh_datasets(0);
    let pid = run.model.perception.layers[0].w;
    let before = run.model.store.value(pid).clone();
    run.run_epoch(0).unwrap();
    let after = run.model.store.value(pid);
    assert!(
        before.max_abs_diff(after) > 0.0,
        "end-to-end training must update the perception network"
    );
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let cfg = tiny_cfg();
    let mut run = PolyRun::new(cfg.clone(), 3);
    run.refresh_datasets(0);
    run.run_epoch(0).unwrap();

    let dir = std::env::temp_dir().join("metamap-model-ck");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.ckpt");
    Checkpoint::from_store(&run.model.store).write(&path).unwrap();

    let mut fresh = PolyRun::new(cfg, 3);
    let inputs = InputBatch::Dense(Array::matrix(5, 4, (0..20).map(|i| (i as f64 * 0.17).sin()).collect()));
    let rep = LatentVector::new(Array::row(vec![0.25; 16]), Provenance::Raw);
    let before = fresh.model.predict(&rep, &inputs);
    Checkpoint::read(&path).unwrap().apply(&mut fresh.model.store).unwrap();
    let after = fresh.model.predict(&rep, &inputs);
    let original = run.model.predict(&rep, &inputs);
    assert_ne!(before.data(), after.data(), "loading must change fresh weights");
    for (x, y) in after.data().iter().zip(original.data()) {
        assert_eq!(x.to_bits(), y.to_bits(), "restored predictions must be bit-exact");
    }
}

#[test]
fn output_arity_follows_domain_configuration() {
    let cfg = tiny_cfg();
    for (outputs, expect) in [(1usize, 1usize), (3, 3), (4, 4), (2, 2)] {
        let dims = ModelDims::from_config(&cfg, 4, 2, outputs);
        let m = Model::new(dims, Variant::Homoiconic, &[], 0);
        let rep = LatentVector::new(Array::row(vec![0.1; 16]), Provenance::Raw);
        let out = m.predict(&rep, &InputBatch::Dense(Array::matrix(2, 4, vec![0.3; 8])));
        assert_eq!(out.shape(), &[2, expect]);
    }
}
