use metamap::config::{ExperimentConfig, RepSource, Variant};
use metamap::grid_run::GridRun;

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mode = args.get(3).map(|s| s.as_str()).unwrap_or("examples").to_string();
    let mut cfg = ExperimentConfig::grid_desk();
    cfg.epochs = epochs;
    cfg.eval_interval = env_usize("EVAL_INT", 1000);
    cfg.lr_base = env_f64("LR_BASE", cfg.lr_base);
    cfg.lr_meta = env_f64("LR_META", cfg.lr_meta);
    cfg.lr_decay_interval = env_usize("DECAY_INT", cfg.lr_decay_interval);
    cfg.rl_target_copy_interval = env_usize("TARGET_INT", cfg.rl_target_copy_interval);
    match mode.as_str() {
        "language" => {
            cfg.rep_source = RepSource::Language;
            cfg.persistent_reps = false;
        }
        "language_alone" => {
            cfg.rep_source = RepSource::Language;
            cfg.variant = Variant::LanguageAlone;
            cfg.persistent_reps = false;
        }
        _ => {}
    }
    let mut run = GridRun::new(cfg.clone(), seed);
    println!(
        "grid cfg: mode {mode} lr {} decay@{} target@{} eps {} epochs {epochs}",
        cfg.lr_base, cfg.lr_decay_interval, cfg.rl_target_copy_interval, cfg.rl_eps_init
    );
    let t0 = std::time::Instant::now();
    for epoch in 0..epochs {
        run.run_epoch(epoch).unwrap();
        if (epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == epochs {
            run.evaluate(epoch + 1);
            let train_mean: f64 = run
                .registry
                .trained
                .iter()
                .map(|t| run.metrics.last(&t.id(), "mean_return").unwrap())
                .sum::<f64>()
                / run.registry.trained.len() as f64;
            let train_min: f64 = run
                .registry
                .trained
                .iter()
                .map(|t| run.metrics.last(&t.id(), "mean_return").unwrap())
                .fold(f64::INFINITY, f64::min);
            let hp = run.metrics.last("pickup_red_blue_1", "mm_return").unwrap_or(f64::NAN);
            let hq = run.metrics.last("pushoff_red_blue_1", "mm_return").unwrap_or(f64::NAN);
            println!(
                "epoch {}: {:.0}s eps {:.2} train mean {:.2} min {:.2} | mm pickup {:.2} pushoff {:.2}",
                epoch + 1,
                t0.elapsed().as_secs_f64(),
                run.epsilon,
                train_mean,
                train_min,
                hp,
                hq
            );
        }
    }
}
