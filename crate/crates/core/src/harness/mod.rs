//! Experiment orchestration: training, calibration, evaluation across class
//! splits, and result persistence.

pub mod config;
mod report;

use std::fs;
use std::path::Path;

pub use config::{DataSource, ExperimentConfig, LossRegime, TrainSettings};
pub use report::{ExperimentReport, SplitResult};

use crate::data::{apply_split, gen_blobs, load_idx, make_split, Dataset, SplitDatasets, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::{als_loss, cross_entropy, ls_loss};
use crate::metrics::{accuracy, auroc, fpr_at_tpr, oscr, KnownSample, MetricSet};
use crate::model::{cosine_lr, weights_to_text, Architecture, ModelParams, Sgd};
use crate::rng::{SplitMix64, Stream};
use crate::scores::{ScoreFn, Scorer, ScorerConfig};
use crate::tensor::{Tape, Tensor};

pub const TPR_TARGET: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub lambda_eff: f64,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub settings: TrainSettings,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Set when a batch loss or gradient became non-finite; training stopped there.
    pub diverged: bool,
}

/// Result of [`train`]. `params` is `None` exactly when the run diverged.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Option<ModelParams>,
    pub record: RunRecord,
}

/// Mini-batch SGD with a cosine-annealed learning rate. Initialization and
/// batch order derive from `seed`.
pub fn train(settings: &TrainSettings, data: &Dataset, seed: u64) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let arch = Architecture::new(data.dim(), settings.hidden_dims.clone(), data.class_count)?;
    let mut params = ModelParams::init(&arch, seed)?;
    let mut sgd = Sgd::new(settings.momentum, settings.weight_decay);
    let mut shuffle = SplitMix64::stream(seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut record = RunRecord {
        settings: settings.clone(),
        seed,
        epochs: Vec::with_capacity(settings.epochs),
        diverged: false,
    };

    for epoch in 0..settings.epochs {
        let lr = cosine_lr(epoch, settings.epochs, settings.lr0, settings.lr_min);
        let lambda_eff = match settings.loss {
            LossRegime::Adaptive(cfg) => cfg.effective_lambda(epoch),
            _ => 0.0,
        };
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(settings.batch_size) {
            let x = data.inputs.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let tape = Tape::new();
            let fwd = params.forward_taped(&tape, &x);
            let fwd = match fwd {
                Ok(f) => f,
                Err(Error::NonFinite(_)) => {
                    record.diverged = true;
                    return Ok(TrainOutcome { params: None, record });
                }
                Err(e) => return Err(e),
            };
            let loss = match settings.loss {
                LossRegime::CrossEntropy => cross_entropy(fwd.probs, &y)?,
                LossRegime::LabelSmoothing(cfg) => ls_loss(fwd.probs, &y, cfg)?,
                LossRegime::Adaptive(cfg) => als_loss(fwd.probs, &y, cfg, epoch)?,
            };
            let value = loss.value().item();
            if !value.is_finite() {
                record.diverged = true;
                return Ok(TrainOutcome { params: None, record });
            }
            tape.backward(loss)?;
            let grads = fwd.gradients()?;
            sgd.step(&mut params, &grads, lr)?;
            if !params.all_finite() {
                record.diverged = true;
                return Ok(TrainOutcome { params: None, record });
            }
            total += value * batch.len() as f64;
        }
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            lambda_eff,
            loss: total / data.len() as f64,
        });
    }
    Ok(TrainOutcome {
        params: Some(params),
        record,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub scorer: ScorerConfig,
    /// Score functions are evaluated concurrently when the `parallel`
    /// feature is enabled; results are identical either way.
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            scorer: ScorerConfig::default(),
            parallel: true,
        }
    }
}

/// Scores every test sample with each function in `score_fns` and computes
/// the metric set. Calibration only ever sees `split.train_known`.
pub fn evaluate(
    params: &ModelParams,
    split: &SplitDatasets,
    score_fns: &[ScoreFn],
    opts: EvalOptions,
) -> Result<Vec<(ScoreFn, MetricSet)>> {
    if split.test_known.is_empty() {
        return Err(Error::Empty("known test partition"));
    }
    let train_out = params.forward(&split.train_known.inputs)?;
    let scorer = Scorer::fit(params.last_layer(), &train_out, score_fns, opts.scorer)?;
    drop(train_out);

    let known_out = params.forward(&split.test_known.inputs)?;
    let unknown_out = if split.test_unknown.rows() > 0 {
        Some(params.forward(&split.test_unknown)?)
    } else {
        None
    };
    let preds = known_out.probs.row_argmax();
    let acc = accuracy(&preds, &split.test_known.labels)?;
    let correct: Vec<bool> = preds
        .iter()
        .zip(&split.test_known.labels)
        .map(|(p, l)| p == l)
        .collect();

    let score_rows = |out: &crate::model::ForwardOut, f: ScoreFn| -> Result<Vec<f64>> {
        (0..out.logits.rows())
            .map(|i| scorer.score(f, out.features.row(i), out.logits.row(i), out.probs.row(i)))
            .collect()
    };
    let one = |f: ScoreFn| -> Result<(ScoreFn, MetricSet)> {
        let known = score_rows(&known_out, f)?;
        let (auroc_v, fpr_v, oscr_v) = match &unknown_out {
            Some(u) => {
                let unknown = score_rows(u, f)?;
                let ks: Vec<KnownSample> = known
                    .iter()
                    .zip(&correct)
                    .map(|(&score, &correct)| KnownSample { score, correct })
                    .collect();
                (
                    Some(auroc(&known, &unknown)?),
                    Some(fpr_at_tpr(&known, &unknown, TPR_TARGET)?),
                    Some(oscr(&ks, &unknown)?),
                )
            }
            None => (None, None, None),
        };
        Ok((
            f,
            MetricSet {
                accuracy: acc,
                auroc: auroc_v,
                fpr95: fpr_v,
                oscr: oscr_v,
            },
        ))
    };

    #[cfg(feature = "parallel")]
    if opts.parallel {
        use rayon::prelude::*;
        return score_fns.par_iter().map(|&f| one(f)).collect();
    }
    score_fns.iter().map(|&f| one(f)).collect()
}

/// Train and test data for a config, before any class split.
pub fn load_data(source: &DataSource) -> Result<(Dataset, Dataset)> {
    match source {
        DataSource::Blobs {
            params,
            train_per_class,
        } => Ok(gen_blobs(params)?.partition_per_class(*train_per_class)),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let mut train = load_idx(train_images, train_labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            if train.dim() != test.dim() && !train.is_empty() && !test.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "train images have {} pixels, test images {}",
                    train.dim(),
                    test.dim()
                )));
            }
            let k = train.class_count.max(test.class_count);
            train.class_count = k;
            test.class_count = k;
            Ok((train, test))
        }
    }
}

/// Class split for every configured seed, rejecting duplicates.
pub fn splits_for(config: &ExperimentConfig, class_count: usize) -> Result<Vec<SplitSpec>> {
    let specs = config
        .seeds
        .iter()
        .map(|&s| make_split(class_count, config.n_known, s))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Config {
            line: 0,
            reason: e.to_string(),
        })?;
    for (i, a) in specs.iter().enumerate() {
        if let Some(b) = specs[..i].iter().find(|b| b.known_classes == a.known_classes) {
            return Err(Error::Config {
                line: 0,
                reason: format!("seeds {} and {} produce the same class split", b.seed, a.seed),
            });
        }
    }
    Ok(specs)
}

/// Trained weights (if any) and evaluation for one split.
pub struct SplitRun {
    pub result: SplitResult,
    pub params: Option<ModelParams>,
}

pub fn run_split(
    config: &ExperimentConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    spec: &SplitSpec,
) -> Result<SplitRun> {
    let split = apply_split(train_data, test_data, spec)?;
    let outcome = train(&config.train, &split.train_known, spec.seed)?;
    let metrics = match &outcome.params {
        Some(p) => Some(evaluate(
            p,
            &split,
            &config.score_fns,
            EvalOptions {
                scorer: config.scorer,
                parallel: true,
            },
        )?),
        None => None,
    };
    Ok(SplitRun {
        result: SplitResult {
            seed: spec.seed,
            metrics,
            record: outcome.record,
        },
        params: outcome.params,
    })
}

/// Trains and evaluates every configured split. Weights of each successful
/// split are returned alongside the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentReport, Vec<SplitRun>)> {
    let (train_data, test_data) = load_data(&config.data)?;
    let specs = splits_for(config, train_data.class_count.max(test_data.class_count))?;
    let runs = specs
        .iter()
        .map(|spec| run_split(config, &train_data, &test_data, spec))
        .collect::<Result<Vec<_>>>()?;
    let report = ExperimentReport {
        score_fns: config.score_fns.clone(),
        splits: runs.iter().map(|r| r.result.clone()).collect(),
    };
    Ok((report, runs))
}

/// Writes `<name>.csv`, and per split `weights_seed<k>.txt` (when training
/// succeeded) and `train_seed<k>.csv`.
pub fn write_outputs(
    config: &ExperimentConfig,
    dir: &Path,
    report: &ExperimentReport,
    runs: &[SplitRun],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{}.csv", config.name)), report.to_csv())?;
    for run in runs {
        let seed = run.result.seed;
        if let Some(p) = &run.params {
            fs::write(dir.join(format!("weights_seed{seed}.txt")), weights_to_text(p))?;
        }
        fs::write(
            dir.join(format!("train_seed{seed}.csv")),
            report::training_log_csv(&run.result.record),
        )?;
    }
    Ok(())
}

/// Evaluates saved weights on the split of the first configured seed.
pub fn evaluate_weights(config: &ExperimentConfig, params: &ModelParams) -> Result<ExperimentReport> {
    let (train_data, test_data) = load_data(&config.data)?;
    let specs = splits_for(config, train_data.class_count.max(test_data.class_count))?;
    let spec = &specs[0];
    let split = apply_split(&train_data, &test_data, spec)?;
    if params.arch.input_dim != split.train_known.dim() || params.arch.num_classes != spec.known_classes.len() {
        return Err(Error::InvalidArgument(format!(
            "weights expect {} inputs / {} classes, split has {} / {}",
            params.arch.input_dim,
            params.arch.num_classes,
            split.train_known.dim(),
            spec.known_classes.len()
        )));
    }
    let metrics = evaluate(
        params,
        &split,
        &config.score_fns,
        EvalOptions {
            scorer: config.scorer,
            parallel: true,
        },
    )?;
    Ok(ExperimentReport {
        score_fns: config.score_fns.clone(),
        splits: vec![SplitResult {
            seed: spec.seed,
            metrics: Some(metrics),
            record: RunRecord {
                settings: config.train.clone(),
                seed: spec.seed,
                epochs: Vec::new(),
                diverged: false,
            },
        }],
    })
}

/// Mean of the row maxima of `t`.
pub fn mean_row_max(t: &Tensor) -> f64 {
    t.row_max().data().iter().sum::<f64>() / t.rows() as f64
}
