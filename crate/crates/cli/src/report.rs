//! Metrics aggregation: per-experiment means with seeded bootstrap
//! confidence intervals across seeds.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Mean and bootstrap 95% CI (percentile method, fixed resample count and
/// seed). A single observation collapses to a point interval.
pub fn bootstrap_ci(values: &[f64], seed: u64) -> (f64, f64, f64) {
    assert!(!values.is_empty());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() == 1 {
        return (mean, mean, mean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let s: f64 =
                (0..values.len()).map(|_| values[rng.gen_range(0..values.len())]).sum();
            s / values.len() as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = means[(BOOTSTRAP_RESAMPLES as f64 * 0.025) as usize];
    let hi = means[(BOOTSTRAP_RESAMPLES as f64 * 0.975) as usize];
    (mean, lo, hi)
}

#[derive(Debug, Clone)]
pub struct ParsedRow {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub task_id: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn parse_metrics_csv(text: &str) -> anyhow::Result<Vec<ParsedRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != metamap::metrics::CSV_HEADER {
        bail!("unexpected metrics header: {header}");
    }
    for line in lines {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            bail!("bad metrics row: {line}");
        }
        rows.push(ParsedRow {
            run_id: parts[0].to_string(),
            seed: parts[1].parse().context("seed")?,
            epoch: parts[2].parse().context("epoch")?,
            task_id: parts[3].to_string(),
            split: parts[4].to_string(),
            metric: parts[5].to_string(),
            value: parts[6].parse().context("value")?,
        });
    }
    Ok(rows)
}

/// Load every metrics.csv under a directory tree.
pub fn load_dir(dir: &Path) -> anyhow::Result<Vec<ParsedRow>> {
    let mut rows = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> =
            std::fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))?
                .collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
                let text = std::fs::read_to_string(&path)?;
                rows.extend(parse_metrics_csv(&text)?);
            }
        }
    }
    if rows.is_empty() {
        bail!("no metrics.csv files under {}", dir.display());
    }
    Ok(rows)
}

#[derive(Debug)]
pub struct SummaryRow {
    pub run_id: String,
    pub task_id: String,
    pub split: String,
    pub metric: String,
    pub n_seeds: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Final-epoch value per seed, aggregated across seeds with bootstrap CIs.
pub fn summarize(rows: &[ParsedRow]) -> Vec<SummaryRow> {
    // last epoch per (run, seed)
    let mut final_epoch: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for r in rows {
        let e = final_epoch.entry((r.run_id.clone(), r.seed)).or_insert(0);
        *e = (*e).max(r.epoch);
    }
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if final_epoch[&(r.run_id.clone(), r.seed)] == r.epoch {
            groups
                .entry((r.run_id.clone(), r.task_id.clone(), r.split.clone(), r.metric.clone()))
                .or_default()
                .push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|((run_id, task_id, split, metric), values)| {
            let (mean, lo, hi) = bootstrap_ci(&values, 1000);
            SummaryRow {
                run_id,
                task_id,
                split,
                metric,
                n_seeds: values.len(),
                mean,
                ci_lo: lo,
                ci_hi: hi,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("run_id,task_id,split,metric,n_seeds,mean,ci_lo,ci_hi\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.run_id, r.task_id, r.split, r.metric, r.n_seeds, r.mean, r.ci_lo, r.ci_hi
        ));
    }
    out
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<10} {:<24} {:<8} {:<28} {:>3} {:>12} {:>12} {:>12}\n",
        "run", "task", "split", "metric", "n", "mean", "ci_lo", "ci_hi"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<24} {:<8} {:<28} {:>3} {:>12.4} {:>12.4} {:>12.4}\n",
            r.run_id, r.task_id, r.split, r.metric, r.n_seeds, r.mean, r.ci_lo, r.ci_hi
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_collapses_to_point() {
        let (mean, lo, hi) = bootstrap_ci(&[5.0], 0);
        assert_eq!((mean, lo, hi), (5.0, 5.0, 5.0));
    }

    #[test]
    fn constant_series_zero_width() {
        let (mean, lo, hi) = bootstrap_ci(&[2.5; 7], 0);
        assert_eq!(mean, 2.5);
        assert_eq!(lo, 2.5);
        assert_eq!(hi, 2.5);
    }

    #[test]
    fn ci_brackets_mean() {
        let vals = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (mean, lo, hi) = bootstrap_ci(&vals, 0);
        assert!((mean - 3.0).abs() < 1e-12);
        assert!(lo <= mean && mean <= hi);
        assert!(lo > 0.9 && hi < 5.1);
    }

    #[test]
    fn summarize_uses_final_epoch() {
        let csv = "run_id,seed,epoch,task_id,split,metric,value\n\
                   exp,0,50,base,train,perf,10\n\
                   exp,0,100,base,train,perf,20\n\
                   exp,1,100,base,train,perf,30\n";
        let rows = parse_metrics_csv(csv).unwrap();
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].n_seeds, 2);
        assert!((summary[0].mean - 25.0).abs() < 1e-12);
    }
}
