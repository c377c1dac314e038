use metamap::cards_run::CardsRun;
use metamap::config::{ExperimentConfig, RepSource, Variant};

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mode = args.get(3).map(|s| s.as_str()).unwrap_or("examples").to_string();
    let mut cfg = ExperimentConfig::cards_desk();
    cfg.epochs = epochs;
    cfg.lr_base = env_f64("LR_BASE", cfg.lr_base);
    cfg.lr_meta = env_f64("LR_META", cfg.lr_meta);
    cfg.lr_base_decay = env_f64("DECAY", cfg.lr_base_decay);
    cfg.lr_decay_interval = env_usize("DECAY_INT", cfg.lr_decay_interval);
    cfg.base_batch = env_usize("BATCH", cfg.base_batch);
    cfg.base_support = env_usize("SUPPORT", cfg.base_support);
    cfg.eval_interval = env_usize("EVAL_INT", 200);
    match mode.as_str() {
        "language" => cfg.rep_source = RepSource::Language,
        "language_alone" => {
            cfg.rep_source = RepSource::Language;
            cfg.variant = Variant::LanguageAlone;
        }
        _ => {}
    }
    let mut run = CardsRun::new(cfg.clone(), seed);
    println!(
        "cards cfg: mode {mode} lr {} decay {}@{} batch {}/{}",
        cfg.lr_base, cfg.lr_base_decay, cfg.lr_decay_interval, cfg.base_batch, cfg.base_support
    );
    let t0 = std::time::Instant::now();
    for epoch in 0..epochs {
        run.run_epoch(epoch).unwrap();
        if (epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == epochs {
            run.evaluate(epoch + 1);
            println!(
                "epoch {}: {:.0}s train {:.1}% | lose_sf mm {:.1}% noadapt {:.1}% lang {:.1}%",
                epoch + 1,
                t0.elapsed().as_secs_f64(),
                run.metrics.last("base", "pct_optimal").unwrap_or(f64::NAN),
                run.metrics.last("lose_sf", "mm_pct_optimal").unwrap_or(f64::NAN),
                run.metrics.last("lose_sf", "noadapt_pct_optimal").unwrap_or(f64::NAN),
                run.metrics.last("lose_sf", "language_alone_pct_optimal").unwrap_or(f64::NAN),
            );
        }
    }
}
