use metamap::config::ExperimentConfig;
use metamap::poly_run::PolyRun;

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mut cfg = ExperimentConfig::poly_desk();
    cfg.epochs = epochs;
    cfg.lr_base = env_f64("LR_BASE", cfg.lr_base);
    cfg.lr_meta = env_f64("LR_META", cfg.lr_meta);
    cfg.lr_base_decay = env_f64("DECAY", cfg.lr_base_decay);
    cfg.lr_meta_decay = env_f64("DECAY_META", cfg.lr_base_decay);
    cfg.base_batch = env_usize("BATCH", cfg.base_batch);
    cfg.base_support = env_usize("SUPPORT", cfg.base_support);
    cfg.eval_interval = env_usize("EVAL_INT", 50);
    let mut run = PolyRun::new(cfg.clone(), seed);
    println!(
        "cfg: lr_base {} lr_meta {} decay {} batch {}/{} tasks {}",
        cfg.lr_base, cfg.lr_meta, cfg.lr_base_decay, cfg.base_batch, cfg.base_support,
        run.registry.trained.len()
    );
    let t0 = std::time::Instant::now();
    for epoch in 0..epochs {
        run.run_epoch(epoch).unwrap();
        if (epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == epochs {
            let full = epoch + 1 == epochs;
            run.eval_base(epoch + 1, full);
            run.eval_meta_mappings(epoch + 1, full);
            let grab = |split: metamap::metrics::Split| -> f64 {
                run.metrics
                    .records
                    .iter()
                    .rev()
                    .find(|r| {
                        r.epoch == epoch + 1 && r.task_id == "base" && r.split == split
                            && r.metric == "normalized_performance"
                    })
                    .map(|r| r.value)
                    .unwrap_or(f64::NAN)
            };
            println!(
                "epoch {}: {:.0}s train {:.1} held {:.1}",
                epoch + 1,
                t0.elapsed().as_secs_f64(),
                grab(metamap::metrics::Split::Train),
                grab(metamap::metrics::Split::Heldout)
            );
        }
    }
    // final meta-mapping summary
    let last_epoch = epochs;
    let mut trained_mm = Vec::new();
    let mut heldout_mm = Vec::new();
    let mut trained_na = Vec::new();
    for r in &run.metrics.records {
        if r.epoch == last_epoch && r.metric == "mm_probe_performance" {
            match r.split {
                metamap::metrics::Split::Train => trained_mm.push(r.value),
                metamap::metrics::Split::Heldout => heldout_mm.push(r.value),
            }
        }
        if r.epoch == last_epoch
            && r.metric == "mm_probe_noadapt"
            && r.split == metamap::metrics::Split::Train
        {
            trained_na.push(r.value);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!(
        "FINAL: mm_trained {:.1} (noadapt {:.1}), mm_heldout {:.1}",
        mean(&trained_mm),
        mean(&trained_na),
        mean(&heldout_mm)
    );
}
