//! Experiment harness for the meta-mapping models.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use metamap_cli::analyze::{analyze_reps, cosine_csv, projections_csv};
use metamap_cli::config_file::load_config_path;
use metamap_cli::evalcmd::{run_protocol, Protocol};
use metamap_cli::report;
use metamap_cli::runner::{self, load_run, train_seeds, TrainedRun};

#[derive(Parser)]
#[command(name = "metamap", about = "Train and evaluate meta-mapping models", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeds from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Single seed (use --seeds for several).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated seed list overriding --seed.
        #[arg(long)]
        seeds: Option<String>,
        /// Architecture variant override:
        /// homoiconic|non_homoiconic|task_concat|language_alone.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Run name used for the output subdirectories.
        #[arg(long, default_value = "run")]
        name: String,
    },
    /// Evaluate a checkpoint under a named protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// meta-mapping | language | no-adapt
        #[arg(long)]
        protocol: String,
        /// Optional CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Principal components and cosine-similarity structure of the task
    /// representations in a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        /// Output directory for projections.csv and cosine_similarity.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics across seeds with bootstrap confidence intervals.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump a domain's exact oracle for golden-file tests.
    Oracle {
        /// cards | poly
        #[arg(long)]
        domain: String,
        #[arg(long)]
        dump: PathBuf,
        /// Registry seed (poly only).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a checkpoint at several support-set sizes.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated support sizes.
        #[arg(long)]
        sizes: String,
        /// Sweep the meta-mapping support (pair count) instead of the base
        /// support set.
        #[arg(long, default_value_t = false)]
        meta: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seed_list(seed: u64, seeds: &Option<String>) -> anyhow::Result<Vec<u64>> {
    match seeds {
        None => Ok(vec![seed]),
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse().context("bad seed list"))
            .collect(),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, seeds, variant, out, name } => {
            let mut cfg = load_config_path(&config)?;
            if let Some(v) = variant {
                cfg.variant = runner::parse_variant(&v)?;
            }
            let seed_list = parse_seed_list(seed, &seeds)?;
            let artifacts = train_seeds(&cfg, &seed_list, &out, &name)?;
            for (s, a) in seed_list.iter().zip(&artifacts) {
                println!("seed {s}: metrics {}", a.metrics_path.display());
                if let Some(ck) = &a.checkpoint_path {
                    println!("seed {s}: checkpoint {}", ck.display());
                }
            }
            Ok(())
        }
        Command::Eval { checkpoint, protocol, out } => {
            let protocol = Protocol::parse(&protocol)?;
            let (cfg, _seed, mut run) = load_run(&checkpoint)?;
            let rows = run_protocol(&cfg, &mut run, protocol)?;
            let mut csv = String::from("task_id,metric,value\n");
            for (task, metric, value) in &rows {
                println!("{task:<28} {metric:<28} {value:.4}");
                csv.push_str(&format!("{task},{metric},{value}\n"));
            }
            if let Some(path) = out {
                std::fs::write(&path, csv)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Analyze { checkpoint, components, out } => {
            let (_cfg, _seed, mut run) = load_run(&checkpoint)?;
            let analysis = analyze_reps(&mut run, components)?;
            if let Some(w) = &analysis.reduced_k_warning {
                eprintln!("warning: {w}");
            }
            let top: Vec<f64> = analysis.eigenvalues.iter().take(components).copied().collect();
            println!("top eigenvalues: {top:?}");
            for (g, n, mean, sd, min, max) in &analysis.cosine_groups {
                println!("cosine {g}: n={n} mean={mean:.4} sd={sd:.4} min={min:.4} max={max:.4}");
            }
            let dir = out.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("projections.csv"), projections_csv(&analysis))?;
            std::fs::write(dir.join("cosine_similarity.csv"), cosine_csv(&analysis))?;
            println!("wrote {}", dir.join("projections.csv").display());
            Ok(())
        }
        Command::Report { dir, out } => {
            let rows = report::load_dir(&dir)?;
            let summary = report::summarize(&rows);
            print!("{}", report::summary_table(&summary));
            if let Some(path) = out {
                std::fs::write(&path, report::summary_csv(&summary))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Oracle { domain, dump, seed } => {
            let text = match domain.as_str() {
                "cards" => domains::cards::oracle_dump(),
                "poly" => {
                    use rand::SeedableRng;
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let reg = domains::poly::build_splits(
                        &domains::poly::PolySplitSpec::desk(),
                        &mut rng,
                    );
                    reg.to_text()
                }
                other => bail!("unknown oracle domain `{other}` (cards|poly)"),
            };
            std::fs::write(&dump, text)?;
            println!("wrote {}", dump.display());
            Ok(())
        }
        Command::Sweep { checkpoint, sizes, meta, out } => {
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| s.trim().parse().context("bad size list"))
                .collect::<Result<_, _>>()?;
            let (_cfg, _seed, mut run) = load_run(&checkpoint)?;
            let TrainedRun::Poly(poly) = &mut run else {
                bail!("support-size sweeps are implemented for polynomial checkpoints");
            };
            let mut csv = String::from("size,split,metric,value\n");
            if meta {
                for (size, perf) in poly.sweep_meta_support(&sizes) {
                    println!("meta support {size}: probe performance {perf:.2}");
                    csv.push_str(&format!("{size},heldout,mm_probe_performance,{perf}\n"));
                }
            } else {
                poly.refresh_datasets(0);
                for (size, train, held) in poly.sweep_base_support(&sizes, 40) {
                    println!("support {size}: train {train:.2} heldout {held:.2}");
                    csv.push_str(&format!("{size},train,normalized_performance,{train}\n"));
                    csv.push_str(&format!("{size},heldout,normalized_performance,{held}\n"));
                }
            }
            if let Some(path) = out {
                std::fs::write(&path, csv)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
