use std::fmt::Write as _;

use crate::metrics::{mean_std, MetricSet};
use crate::scores::ScoreFn;

use super::RunRecord;

pub const CSV_HEADER: &str = "split_seed,score_fn,accuracy,auroc,fpr95,oscr";

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub seed: u64,
    /// `None` when training diverged.
    pub metrics: Option<Vec<(ScoreFn, MetricSet)>>,
    pub record: RunRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub score_fns: Vec<ScoreFn>,
    pub splits: Vec<SplitResult>,
}

/// Per-metric summary over the splits that produced a value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub accuracy: Option<(f64, f64)>,
    pub auroc: Option<(f64, f64)>,
    pub fpr95: Option<(f64, f64)>,
    pub oscr: Option<(f64, f64)>,
}

impl ExperimentReport {
    /// True when at least one split diverged and is missing from the summary.
    pub fn partial(&self) -> bool {
        self.splits.iter().any(|s| s.metrics.is_none())
    }

    fn column(&self, idx: usize, pick: impl Fn(&MetricSet) -> Option<f64>) -> Vec<f64> {
        self.splits
            .iter()
            .filter_map(|s| s.metrics.as_ref())
            .filter_map(|m| pick(&m[idx].1))
            .collect()
    }

    /// Mean and population standard deviation per score function, in
    /// configured order.
    pub fn summary(&self) -> Vec<(ScoreFn, MetricSummary)> {
        self.score_fns
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                (
                    f,
                    MetricSummary {
                        accuracy: mean_std(&self.column(i, |m| Some(m.accuracy))),
                        auroc: mean_std(&self.column(i, |m| m.auroc)),
                        fpr95: mean_std(&self.column(i, |m| m.fpr95)),
                        oscr: mean_std(&self.column(i, |m| m.oscr)),
                    },
                )
            })
            .collect()
    }

    /// Per-split rows, then `mean` rows, then `std` rows. Missing values are `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for split in &self.splits {
            for (i, f) in self.score_fns.iter().enumerate() {
                let m = split.metrics.as_ref().map(|m| m[i].1);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    split.seed,
                    f,
                    fmt(m.map(|m| m.accuracy)),
                    fmt(m.and_then(|m| m.auroc)),
                    fmt(m.and_then(|m| m.fpr95)),
                    fmt(m.and_then(|m| m.oscr)),
                );
            }
        }
        let summary = self.summary();
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            for (f, s) in &summary {
                let get = |v: Option<(f64, f64)>| fmt(v.map(|(m, sd)| if pick == 0 { m } else { sd }));
                let _ = writeln!(
                    out,
                    "{label},{f},{},{},{},{}",
                    get(s.accuracy),
                    get(s.auroc),
                    get(s.fpr95),
                    get(s.oscr)
                );
            }
        }
        out
    }
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "NA".to_string(),
    }
}

/// `epoch,lr,lambda_eff,loss` per completed epoch, plus a `diverged` marker line.
pub fn training_log_csv(record: &RunRecord) -> String {
    let mut out = String::from("epoch,lr,lambda_eff,loss\n");
    for e in &record.epochs {
        let _ = writeln!(out, "{},{:.9},{:.9},{:.9}", e.epoch, e.lr, e.lambda_eff, e.loss);
    }
    if record.diverged {
        out.push_str("diverged\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{LossRegime, TrainSettings};

    fn record(seed: u64) -> RunRecord {
        RunRecord {
            settings: TrainSettings {
                hidden_dims: vec![],
                loss: LossRegime::CrossEntropy,
                epochs: 0,
                batch_size: 1,
                lr0: 0.1,
                lr_min: 0.0,
                momentum: 0.0,
                weight_decay: 0.0,
            },
            seed,
            epochs: vec![],
            diverged: false,
        }
    }

    fn ms(acc: f64, auroc: f64) -> MetricSet {
        MetricSet {
            accuracy: acc,
            auroc: Some(auroc),
            fpr95: Some(0.5),
            oscr: Some(auroc * acc),
        }
    }

    #[test]
    fn single_split_summary_has_zero_std() {
        let r = ExperimentReport {
            score_fns: vec![ScoreFn::Msp],
            splits: vec![SplitResult {
                seed: 3,
                metrics: Some(vec![(ScoreFn::Msp, ms(0.9, 0.8))]),
                record: record(3),
            }],
        };
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "3,msp,0.900000,0.800000,0.500000,0.720000");
        assert_eq!(lines[2], "mean,msp,0.900000,0.800000,0.500000,0.720000");
        assert_eq!(lines[3], "std,msp,0.000000,0.000000,0.000000,0.000000");
    }

    #[test]
    fn five_splits_row_shape() {
        let fns = vec![ScoreFn::Msp, ScoreFn::Energy];
        let r = ExperimentReport {
            score_fns: fns.clone(),
            splits: (0..5)
                .map(|s| SplitResult {
                    seed: s,
                    metrics: Some(fns.iter().map(|&f| (f, ms(0.9, 0.1 * s as f64))).collect()),
                    record: record(s),
                })
                .collect(),
        };
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 5 * 2 + 2 + 2);
        assert_eq!(csv.lines().filter(|l| l.starts_with("mean,")).count(), 2);
        assert!(!r.partial());
    }

    #[test]
    fn diverged_split_is_na_and_excluded() {
        let r = ExperimentReport {
            score_fns: vec![ScoreFn::Msp],
            splits: vec![
                SplitResult {
                    seed: 0,
                    metrics: Some(vec![(ScoreFn::Msp, ms(1.0, 0.5))]),
                    record: record(0),
                },
                SplitResult {
                    seed: 1,
                    metrics: None,
                    record: RunRecord {
                        diverged: true,
                        ..record(1)
                    },
                },
            ],
        };
        assert!(r.partial());
        let csv = r.to_csv();
        assert!(csv.contains("1,msp,NA,NA,NA,NA"));
        assert!(csv.contains("mean,msp,1.000000,0.500000"));
        assert!(training_log_csv(&r.splits[1].record).ends_with("diverged\n"));
    }
}
