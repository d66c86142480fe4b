use serde::{Deserialize, Serialize};

use oodlab::data::{apply_split, gen_blobs, make_split, BlobParams};
use oodlab::harness::{mean_row_max, train, LossRegime, TrainSettings};
use oodlab::losses::{
    als_loss, cross_entropy, lambda_schedule, ls_loss, nmpc_penalty, AlsConfig, AlsStrategy, LsConfig,
};
use oodlab::metrics::{auroc, curve_area, fpr_at_tpr, oscr_curve, roc_curve, KnownSample};
use oodlab::model::cosine_lr;
use oodlab::scores::{ScoreFn, Scorer, ScorerConfig};
use oodlab::{Error, Result, Tape, Tensor};

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct TrainQuery {
    pub loss: String,
    pub alpha: f64,
    pub lambda: f64,
    pub strategy: String,
    pub ramp_epochs: usize,
    pub dims: usize,
    pub separation: f64,
    pub noise: f64,
    pub per_class: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr0: f64,
    pub split_seed: u64,
    pub data_seed: u64,
    pub bins: usize,
}

impl Default for TrainQuery {
    fn default() -> Self {
        TrainQuery {
            loss: "als".into(),
            alpha: 0.1,
            lambda: 5.0,
            strategy: "only_corr".into(),
            ramp_epochs: 10,
            dims: 16,
            separation: 5.0,
            noise: 1.0,
            per_class: 60,
            hidden: vec![32, 32],
            epochs: 60,
            lr0: 0.1,
            split_seed: 0,
            data_seed: 0,
            bins: 30,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct ScoreView {
    pub name: &'static str,
    pub auroc: f64,
    pub fpr95: f64,
    pub oscr: f64,
    pub histogram: Histogram,
    pub roc: Vec<(f64, f64)>,
    pub oscr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct TrainReply {
    pub known_classes: Vec<usize>,
    pub accuracy: f64,
    pub train_max_prob: f64,
    pub train_max_logit: f64,
    pub losses: Vec<f64>,
    pub scores: Vec<ScoreView>,
}

fn regime(q: &TrainQuery) -> Result<LossRegime> {
    Ok(match q.loss.as_str() {
        "ce" => LossRegime::CrossEntropy,
        "ls" => LossRegime::LabelSmoothing(LsConfig::new(q.alpha)?),
        "als" => {
            let strategy: AlsStrategy = q.strategy.parse()?;
            LossRegime::Adaptive(AlsConfig::new(q.lambda, strategy, q.ramp_epochs)?)
        }
        other => return Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
    })
}

fn histogram(known: &[f64], unknown: &[f64], bins: usize) -> Histogram {
    let all = known.iter().chain(unknown);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let count = |v: &[f64]| {
        let mut h = vec![0; bins];
        for &s in v {
            h[(((s - lo) / width) as usize).min(bins - 1)] += 1;
        }
        h
    };
    Histogram {
        lo,
        hi,
        known: count(known),
        unknown: count(unknown),
    }
}

/// Thins a curve to at most `n` points, keeping both ends.
fn thin(points: Vec<(f64, f64)>, n: usize) -> Vec<(f64, f64)> {
    if points.len() <= n {
        return points;
    }
    let step = (points.len() - 1) as f64 / (n - 1) as f64;
    (0..n).map(|i| points[(i as f64 * step).round() as usize]).collect()
}

pub fn train_and_score(q: TrainQuery) -> Result<TrainReply> {
    if q.bins == 0 || q.per_class < 2 {
        return Err(Error::InvalidArgument("need bins >= 1 and per_class >= 2".into()));
    }
    let blobs = gen_blobs(&BlobParams {
        classes: 10,
        dims: q.dims,
        n_per_class: 2 * q.per_class,
        separation: q.separation,
        noise: q.noise,
        seed: q.data_seed,
    })?;
    let (train_all, test_all) = blobs.partition_per_class(q.per_class);
    let spec = make_split(10, 6, q.split_seed)?;
    let split = apply_split(&train_all, &test_all, &spec)?;
    let settings = TrainSettings {
        hidden_dims: q.hidden.clone(),
        loss: regime(&q)?,
        epochs: q.epochs,
        batch_size: 32,
        lr0: q.lr0,
        lr_min: 0.0,
        momentum: 0.0,
        weight_decay: 0.0,
    };
    let outcome = train(&settings, &split.train_known, q.split_seed)?;
    let losses = outcome.record.epochs.iter().map(|e| e.loss).collect();
    let params = outcome
        .params
        .ok_or_else(|| Error::InvalidArgument("training diverged; lower the learning rate".into()))?;

    let fns = [
        ScoreFn::Msp,
        ScoreFn::Entropy,
        ScoreFn::MaxLogit,
        ScoreFn::Energy,
        ScoreFn::GradNorm,
        ScoreFn::Vim,
    ];
    let train_out = params.forward(&split.train_known.inputs)?;
    let scorer = Scorer::fit(params.last_layer(), &train_out, &fns, ScorerConfig::default())?;
    let known_out = params.forward(&split.test_known.inputs)?;
    let unknown_out = params.forward(&split.test_unknown)?;
    let preds = known_out.probs.row_argmax();
    let correct: Vec<bool> = preds
        .iter()
        .zip(&split.test_known.labels)
        .map(|(p, l)| p == l)
        .collect();
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;

    let scores = fns
        .iter()
        .map(|&f| {
            let rows = |out: &oodlab::model::ForwardOut| -> Result<Vec<f64>> {
                (0..out.logits.rows())
                    .map(|i| scorer.score(f, out.features.row(i), out.logits.row(i), out.probs.row(i)))
                    .collect()
            };
            let known = rows(&known_out)?;
            let unknown = rows(&unknown_out)?;
            let samples: Vec<KnownSample> = known
                .iter()
                .zip(&correct)
                .map(|(&score, &correct)| KnownSample { score, correct })
                .collect();
            let oscr_points = oscr_curve(&samples, &unknown)?;
            Ok(ScoreView {
                name: f.name(),
                auroc: auroc(&known, &unknown)?,
                fpr95: fpr_at_tpr(&known, &unknown, 0.95)?,
                oscr: curve_area(&oscr_points),
                histogram: histogram(&known, &unknown, q.bins),
                roc: thin(roc_curve(&known, &unknown)?, 200),
                oscr_curve: thin(oscr_points, 200),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TrainReply {
        known_classes: spec.known_classes,
        accuracy,
        train_max_prob: mean_row_max(&train_out.probs),
        train_max_logit: mean_row_max(&train_out.logits),
        losses,
        scores,
    })
}

#[derive(Debug, Deserialize)]
pub struct LossQuery {
    pub logits: Vec<f64>,
    pub target: usize,
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Debug, Serialize)]
pub struct LossReply {
    pub probs: Vec<f64>,
    pub ce: f64,
    pub ls: f64,
    pub als: f64,
    pub nmpc: f64,
}

pub fn explore_loss(q: LossQuery) -> Result<LossReply> {
    if q.target >= q.logits.len() {
        return Err(Error::InvalidArgument(format!("target {} out of range", q.target)));
    }
    let probs = Tensor::from_rows(&[&q.logits[..]])?.softmax()?;
    let value = |f: &dyn Fn(oodlab::Var<'_>) -> Result<f64>| -> Result<f64> {
        let tape = Tape::new();
        f(tape.leaf(probs.clone()))
    };
    let y = [q.target];
    let ce = value(&|p| Ok(cross_entropy(p, &y)?.value().item()))?;
    let ls_cfg = LsConfig::new(q.alpha)?;
    let ls = value(&|p| Ok(ls_loss(p, &y, ls_cfg)?.value().item()))?;
    let als_cfg = AlsConfig::new(q.lambda, AlsStrategy::RampAll, 0)?;
    let als = value(&|p| Ok(als_loss(p, &y, als_cfg, 0)?.value().item()))?;
    Ok(LossReply {
        nmpc: nmpc_penalty(probs.data()),
        probs: probs.into_data(),
        ce,
        ls,
        als,
    })
}

#[derive(Debug, Deserialize)]
pub struct ScheduleQuery {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub lambda: f64,
    pub ramp_epochs: usize,
}

#[derive(Debug, Serialize)]
pub struct ScheduleReply {
    pub lr: Vec<f64>,
    pub lambda: Vec<f64>,
}

pub fn schedule(q: ScheduleQuery) -> Result<ScheduleReply> {
    if q.epochs > 100_000 {
        return Err(Error::InvalidArgument("at most 100000 epochs".into()));
    }
    Ok(ScheduleReply {
        lr: (0..q.epochs).map(|e| cosine_lr(e, q.epochs, q.lr0, q.lr_min)).collect(),
        lambda: (0..q.epochs)
            .map(|e| lambda_schedule(e, q.ramp_epochs, q.lambda))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_training_run() {
        let reply = train_and_score(TrainQuery {
            epochs: 10,
            per_class: 20,
            ..TrainQuery::default()
        })
        .unwrap();
        assert_eq!(reply.known_classes.len(), 6);
        assert_eq!(reply.losses.len(), 10);
        assert_eq!(reply.scores.len(), 6);
        for s in &reply.scores {
            assert_eq!(s.histogram.known.iter().sum::<usize>(), 6 * 20);
            assert_eq!(s.histogram.unknown.iter().sum::<usize>(), 4 * 20);
            assert_eq!(s.roc.first(), Some(&(0.0, 0.0)));
            assert_eq!(s.roc.last(), Some(&(1.0, 1.0)));
            assert!(s.oscr <= s.auroc + 1e-12);
        }
        let json = serde_json::to_string(&reply).unwrap();
        assert!(json.contains("\"name\":\"energy\""));
    }

    #[test]
    fn loss_explorer_uniform_row() {
        let r = explore_loss(LossQuery {
            logits: vec![0.0, 0.0],
            target: 1,
            alpha: 0.0,
            lambda: 5.0,
        })
        .unwrap();
        assert!((r.ce - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.ce, r.ls);
        assert_eq!(r.nmpc, 0.0);
        assert!(explore_loss(LossQuery {
            logits: vec![1.0],
            target: 1,
            alpha: 0.1,
            lambda: 1.0
        })
        .is_err());
    }

    #[test]
    fn schedule_curves() {
        let r = schedule(ScheduleQuery {
            epochs: 20,
            lr0: 0.1,
            lr_min: 0.0,
            lambda: 5.0,
            ramp_epochs: 10,
        })
        .unwrap();
        assert_eq!(r.lr[0], 0.1);
        assert_eq!(r.lambda[5], 2.5);
        assert_eq!(r.lambda[15], 5.0);
    }

    #[test]
    fn bad_query_is_rejected() {
        let err = train_and_score(TrainQuery {
            loss: "focal".into(),
            ..TrainQuery::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("focal"));
    }
}
