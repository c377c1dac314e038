//! Metrics records and the append-only CSV stream.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

/// One observation: (run, seed, epoch, task, split, metric, value).
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub task_id: String,
    pub split: Split,
    pub metric: String,
    pub value: f64,
}

pub const CSV_HEADER: &str = "run_id,seed,epoch,task_id,split,metric,value";

/// In-memory metrics stream with a stable CSV rendering. Records are
/// appended in deterministic order; values must be finite.
#[derive(Debug, Default, Clone)]
pub struct MetricsSink {
    pub run_id: String,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

impl MetricsSink {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        MetricsSink { run_id: run_id.into(), seed, records: Vec::new() }
    }

    pub fn push(&mut self, epoch: usize, task_id: &str, split: Split, metric: &str, value: f64) {
        assert!(value.is_finite(), "metric {metric} for {task_id} at epoch {epoch} is not finite");
        self.records.push(MetricsRecord {
            run_id: self.run_id.clone(),
            seed: self.seed,
            epoch,
            task_id: task_id.to_string(),
            split,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.run_id,
                r.seed,
                r.epoch,
                r.task_id,
                r.split.as_str(),
                r.metric,
                r.value
            )
            .unwrap();
        }
        out
    }

    /// Last recorded value of a metric for a task.
    pub fn last(&self, task_id: &str, metric: &str) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .find(|r| r.task_id == task_id && r.metric == metric)
            .map(|r| r.value)
    }

    /// All (epoch, value) points of a metric for a task, in epoch order.
    pub fn series(&self, task_id: &str, metric: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.task_id == task_id && r.metric == metric)
            .map(|r| (r.epoch, r.value))
            .collect()
    }

    /// Mean of a metric over tasks matching a predicate at a given epoch.
    pub fn mean_at(
        &self,
        epoch: usize,
        metric: &str,
        pred: impl Fn(&MetricsRecord) -> bool,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == epoch && r.metric == metric && pred(r))
            .map(|r| r.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Normalized performance: 100 * (1 - loss / zeros_loss). The baseline is
/// the loss of a model that always outputs zero.
pub fn normalized_performance(loss: f64, zeros_loss: f64) -> f64 {
    assert!(zeros_loss > 0.0, "undefined baseline: zeros loss must be positive");
    100.0 * (1.0 - loss / zeros_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_performance_reference_points() {
        // published table row: loss 0.317 against zeros loss 18.8 is 98.3%
        let v = normalized_performance(0.317, 18.8);
        assert!((v - 98.3).abs() < 0.05, "{v}");
        assert_eq!(normalized_performance(0.0, 5.0), 100.0);
        assert_eq!(normalized_performance(5.0, 5.0), 0.0);
    }

    #[test]
    #[should_panic(expected = "undefined baseline")]
    fn zero_baseline_rejected() {
        normalized_performance(1.0, 0.0);
    }

    #[test]
    fn csv_is_stable() {
        let mut sink = MetricsSink::new("run", 3);
        sink.push(0, "t1", Split::Train, "loss", 0.5);
        sink.push(50, "t1", Split::Heldout, "perf", 93.125);
        let csv = sink.to_csv();
        assert_eq!(
            csv,
            "run_id,seed,epoch,task_id,split,metric,value\nrun,3,0,t1,train,loss,0.5\nrun,3,50,t1,heldout,perf,93.125\n"
        );
    }

    #[test]
    #[should_panic(expected = "not finite")]
    fn non_finite_metric_rejected() {
        let mut sink = MetricsSink::new("run", 0);
        sink.push(0, "t", Split::Train, "loss", f64::NAN);
    }
}
