//! Training orchestration: build the domain run, train, and write the
//! metrics CSV and final checkpoint.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};

use metamap::cards_run::CardsRun;
use metamap::checkpoint::Checkpoint;
use metamap::config::{DomainKind, ExperimentConfig, Variant};
use metamap::grid_run::GridRun;
use metamap::metrics::{MetricsSink, Split};
use metamap::poly_run::PolyRun;
use metamap::stroop_run;

use crate::config_file::{config_from_toml, config_to_toml};

pub enum TrainedRun {
    Poly(Box<PolyRun>),
    Cards(Box<CardsRun>),
    Grid(Box<GridRun>),
    Stroop(MetricsSink),
}

impl TrainedRun {
    pub fn metrics(&self) -> &MetricsSink {
        match self {
            TrainedRun::Poly(r) => &r.metrics,
            TrainedRun::Cards(r) => &r.metrics,
            TrainedRun::Grid(r) => &r.metrics,
            TrainedRun::Stroop(m) => m,
        }
    }

    pub fn store(&self) -> Option<&autodiff::ParamStore> {
        match self {
            TrainedRun::Poly(r) => Some(&r.model.store),
            TrainedRun::Cards(r) => Some(&r.model.store),
            TrainedRun::Grid(r) => Some(&r.model.store),
            TrainedRun::Stroop(_) => None,
        }
    }
}

/// Train a single seed fully in memory.
pub fn train_in_memory(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<TrainedRun> {
    cfg.validate().map_err(|e| anyhow!("schema error: {e}"))?;
    Ok(match cfg.domain {
        DomainKind::Poly => {
            let mut run = PolyRun::new(cfg.clone(), seed);
            run.run().context("polynomial training diverged")?;
            TrainedRun::Poly(Box::new(run))
        }
        DomainKind::Cards => {
            let mut run = CardsRun::new(cfg.clone(), seed);
            run.run().context("cards training diverged")?;
            TrainedRun::Cards(Box::new(run))
        }
        DomainKind::Grid => {
            let mut run = GridRun::new(cfg.clone(), seed);
            run.run().context("gridworld training diverged")?;
            TrainedRun::Grid(Box::new(run))
        }
        DomainKind::Stroop => {
            let outcomes = stroop_run::stroop_experiment(cfg);
            let mut sink = MetricsSink::new("stroop", seed);
            for o in &outcomes {
                sink.push(
                    o.epoch,
                    &format!("p{}_{}_s{}", o.proportion, o.stopping, o.seed),
                    Split::Train,
                    "bias",
                    o.bias,
                );
                sink.push(
                    o.epoch,
                    &format!("p{}_{}_s{}", o.proportion, o.stopping, o.seed),
                    Split::Train,
                    "converged",
                    o.converged as u8 as f64,
                );
            }
            TrainedRun::Stroop(sink)
        }
    })
}

pub struct RunArtifacts {
    pub metrics_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
}

/// Train one seed and write `metrics.csv` plus the final checkpoint under
/// `<out>/<name>_seed<seed>/`.
pub fn train_one(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
    name: &str,
) -> anyhow::Result<RunArtifacts> {
    let dir = out_dir.join(format!("{name}_seed{seed}"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let run = train_in_memory(cfg, seed)?;

    let metrics_path = dir.join("metrics.csv");
    std::fs::write(&metrics_path, run.metrics().to_csv())
        .with_context(|| format!("writing {}", metrics_path.display()))?;

    let checkpoint_path = match run.store() {
        Some(store) => {
            let path = dir.join("final.ckpt");
            Checkpoint::from_store(store)
                .with_meta("config", &config_to_toml(cfg))
                .with_meta("seed", &seed.to_string())
                .write(&path)
                .map_err(|e| anyhow!("checkpoint: {e}"))?;
            Some(path)
        }
        None => None,
    };
    Ok(RunArtifacts { metrics_path, checkpoint_path })
}

/// Worker-thread budget: METAMAP_THREADS or the machine's parallelism.
pub fn thread_budget() -> usize {
    std::env::var("METAMAP_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

/// Train several seeds, at most `thread_budget()` at a time.
pub fn train_seeds(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    out_dir: &Path,
    name: &str,
) -> anyhow::Result<Vec<RunArtifacts>> {
    let budget = thread_budget();
    let mut results: Vec<Option<anyhow::Result<RunArtifacts>>> =
        (0..seeds.len()).map(|_| None).collect();
    for wave in seeds.chunks(budget.max(1)) {
        let offset = seeds.iter().position(|s| s == &wave[0]).unwrap();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (i, &seed) in wave.iter().enumerate() {
                let cfg = cfg.clone();
                let out_dir = out_dir.to_path_buf();
                let name = name.to_string();
                handles.push((
                    offset + i,
                    scope.spawn(move || train_one(&cfg, seed, &out_dir, &name)),
                ));
            }
            for (idx, h) in handles {
                results[idx] = Some(h.join().expect("training thread panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.unwrap()).collect()
}

/// Rebuild a trained run from a checkpoint: the embedded config and seed
/// reconstruct the registry and architecture, then the stored weights are
/// loaded over the fresh initialization.
pub fn load_run(checkpoint_path: &Path) -> anyhow::Result<(ExperimentConfig, u64, TrainedRun)> {
    let ck = Checkpoint::read(checkpoint_path).map_err(|e| anyhow!("{e}"))?;
    let cfg_text =
        ck.meta_value("config").ok_or_else(|| anyhow!("checkpoint missing config metadata"))?;
    let cfg = config_from_toml(cfg_text)?;
    let seed: u64 = ck
        .meta_value("seed")
        .ok_or_else(|| anyhow!("checkpoint missing seed metadata"))?
        .parse()
        .context("checkpoint seed")?;

    let run = match cfg.domain {
        DomainKind::Poly => {
            let mut run = PolyRun::new(cfg.clone(), seed);
            ck.apply(&mut run.model.store).map_err(|e| anyhow!("{e}"))?;
            TrainedRun::Poly(Box::new(run))
        }
        DomainKind::Cards => {
            let mut run = CardsRun::new(cfg.clone(), seed);
            ck.apply(&mut run.model.store).map_err(|e| anyhow!("{e}"))?;
            // rebuild play buffers with the loaded policy so example-based
            // representations can be constructed
            run.refresh_buffers(0);
            run.cache_task_reps();
            run.refresh_buffers(1);
            run.cache_task_reps();
            TrainedRun::Cards(Box::new(run))
        }
        DomainKind::Grid => {
            let mut run = GridRun::new(cfg.clone(), seed);
            ck.apply(&mut run.model.store).map_err(|e| anyhow!("{e}"))?;
            TrainedRun::Grid(Box::new(run))
        }
        DomainKind::Stroop => bail!("stroop runs do not produce checkpoints"),
    };
    Ok((cfg, seed, run))
}

/// Variant override by name, for `train --variant`.
pub fn parse_variant(name: &str) -> anyhow::Result<Variant> {
    Ok(match name {
        "homoiconic" => Variant::Homoiconic,
        "non_homoiconic" => Variant::NonHomoiconic,
        "task_concat" => Variant::TaskConcat,
        "language_alone" => Variant::LanguageAlone,
        other => bail!("unknown variant `{other}`"),
    })
}
