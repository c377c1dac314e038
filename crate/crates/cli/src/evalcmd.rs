//! Post-training evaluation protocols over a loaded checkpoint.

use anyhow::bail;

use metamap::config::{ExperimentConfig, RepSource, Variant};
use metamap::metrics::MetricsSink;

use crate::runner::TrainedRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Zero-shot transformed-task evaluation via the meta-mapping.
    MetaMapping,
    /// Language-based scores (needs a language-trained model).
    Language,
    /// Scores for the untransformed source representations.
    NoAdapt,
}

impl Protocol {
    pub fn parse(s: &str) -> anyhow::Result<Protocol> {
        Ok(match s {
            "meta-mapping" => Protocol::MetaMapping,
            "language" => Protocol::Language,
            "no-adapt" => Protocol::NoAdapt,
            other => bail!("unknown protocol `{other}` (meta-mapping|language|no-adapt)"),
        })
    }
}

/// Run the protocol's evaluation pass and return the relevant metric rows
/// as (task, metric, value).
pub fn run_protocol(
    cfg: &ExperimentConfig,
    run: &mut TrainedRun,
    protocol: Protocol,
) -> anyhow::Result<Vec<(String, String, f64)>> {
    if protocol == Protocol::Language
        && cfg.rep_source != RepSource::Language
        && cfg.variant != Variant::LanguageAlone
    {
        bail!("language protocol needs a language-trained checkpoint");
    }
    let epoch = cfg.epochs;
    let metrics: MetricsSink = match run {
        TrainedRun::Poly(r) => {
            r.metrics.records.clear();
            r.refresh_datasets(0);
            r.cache_task_reps();
            r.eval_base(epoch, true);
            r.eval_meta_mappings(epoch, true);
            r.metrics.clone()
        }
        TrainedRun::Cards(r) => {
            r.metrics.records.clear();
            r.evaluate(epoch);
            r.metrics.clone()
        }
        TrainedRun::Grid(r) => {
            r.metrics.records.clear();
            r.evaluate(epoch);
            r.metrics.clone()
        }
        TrainedRun::Stroop(_) => bail!("stroop checkpoints are not evaluable"),
    };

    let wanted: &[&str] = match protocol {
        Protocol::MetaMapping => &[
            "normalized_performance",
            "mm_probe_performance",
            "mm_support_performance",
            "mm_pct_optimal",
            "pct_optimal",
            "mm_return",
            "mean_return",
        ],
        Protocol::NoAdapt => &["mm_probe_noadapt", "noadapt_pct_optimal", "noadapt_return"],
        Protocol::Language => &["language_alone_pct_optimal", "language_alone_return"],
    };
    let rows: Vec<(String, String, f64)> = metrics
        .records
        .iter()
        .filter(|r| wanted.contains(&r.metric.as_str()))
        .map(|r| (r.task_id.clone(), r.metric.clone(), r.value))
        .collect();
    if rows.is_empty() {
        bail!("protocol produced no rows (is the checkpoint domain compatible?)");
    }
    Ok(rows)
}
