#![allow(dead_code)]

use oodlab::losses::{als_loss, cross_entropy, ls_loss, AlsConfig, AlsStrategy, LsConfig};
use oodlab::metrics::KnownSample;
use oodlab::model::{Architecture, Gradients, ModelParams};
use oodlab::rng::SplitMix64;
use oodlab::{Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub enum Regime {
    Ce,
    Ls(f64),
    Als(f64, AlsStrategy),
}

impl Regime {
    pub fn all() -> [Regime; 4] {
        [
            Regime::Ce,
            Regime::Ls(0.1),
            Regime::Als(5.0, AlsStrategy::OnlyCorr),
            Regime::Als(5.0, AlsStrategy::RampAll),
        ]
    }

    pub fn label(&self) -> String {
        match self {
            Regime::Ce => "ce".into(),
            Regime::Ls(a) => format!("ls a={a}"),
            Regime::Als(l, s) => format!("als l={l} {s}"),
        }
    }
}

// Ramp length and epoch for ALS batches: ramp_all then runs at half strength.
const RAMP: usize = 10;
const EPOCH: usize = 5;

pub fn loss_and_grads(
    params: &ModelParams,
    x: &Tensor,
    y: &[usize],
    regime: Regime,
    want_grads: bool,
) -> (f64, Option<Gradients>) {
    let tape = Tape::new();
    let fwd = params.forward_taped(&tape, x).unwrap();
    let loss = match regime {
        Regime::Ce => cross_entropy(fwd.probs, y).unwrap(),
        Regime::Ls(a) => ls_loss(fwd.probs, y, LsConfig::new(a).unwrap()).unwrap(),
        Regime::Als(l, s) => als_loss(fwd.probs, y, AlsConfig::new(l, s, RAMP).unwrap(), EPOCH).unwrap(),
    };
    let value = loss.value().item();
    if !want_grads {
        return (value, None);
    }
    tape.backward(loss).unwrap();
    (value, Some(fwd.gradients().unwrap()))
}

/// Random small MLP (nonzero biases) plus a batch whose first half is labelled with the
/// model's own predictions, so only_corr always has eligible rows.
pub fn random_problem(seed: u64) -> (ModelParams, Tensor, Vec<usize>) {
    let mut rng = SplitMix64::new(seed);
    let dim = 3 + rng.below(4) as usize;
    let classes = 3 + rng.below(4) as usize;
    let hidden = vec![3 + rng.below(4) as usize, 3 + rng.below(4) as usize];
    let batch = 4 + rng.below(6) as usize;
    let mut params = ModelParams::init(&Architecture::new(dim, hidden, classes).unwrap(), seed).unwrap();
    // Zero biases put dead-row pre-activations exactly on the ReLU kink.
    for layer in &mut params.layers {
        for b in layer.bias.data_mut() {
            *b = 0.5 * rng.normal();
        }
    }
    let x = Tensor::matrix(batch, dim, (0..batch * dim).map(|_| 2.0 * rng.normal()).collect()).unwrap();
    let pred = params.forward(&x).unwrap().probs.row_argmax();
    let y = (0..batch)
        .map(|i| {
            if i < batch / 2 {
                pred[i]
            } else {
                rng.below(classes as u64) as usize
            }
        })
        .collect();
    (params, x, y)
}

fn param_slot(params: &mut ModelParams, k: usize) -> &mut f64 {
    let mut k = k;
    for layer in &mut params.layers {
        for t in [&mut layer.weight, &mut layer.bias] {
            if k < t.len() {
                return &mut t.data_mut()[k];
            }
            k -= t.len();
        }
    }
    panic!("parameter index out of range");
}

fn flatten(grads: &Gradients) -> Vec<f64> {
    grads
        .layers
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
        .collect()
}

/// Norm-wise relative error `|g_ad - g_fd| / max(|g_ad|, |g_fd|)` between
/// autodiff and central differences with step `h`.
pub fn gradient_error(params: &ModelParams, x: &Tensor, y: &[usize], regime: Regime, h: f64) -> f64 {
    let (_, grads) = loss_and_grads(params, x, y, regime, true);
    let analytic = flatten(&grads.unwrap());
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..analytic.len() {
        let mut plus = params.clone();
        *param_slot(&mut plus, k) += h;
        let mut minus = params.clone();
        *param_slot(&mut minus, k) -= h;
        let fp = loss_and_grads(&plus, x, y, regime, false).0;
        let fm = loss_and_grads(&minus, x, y, regime, false).0;
        numeric.push((fp - fm) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Largest gradient error over `batches` random problems for one regime.
pub fn worst_gradient_error(regime: Regime, batches: u64) -> f64 {
    (0..batches)
        .map(|s| {
            let (p, x, y) = random_problem(1000 + s);
            gradient_error(&p, &x, &y, regime, 1e-5)
        })
        .fold(0.0, f64::max)
}

// Brute-force metric oracles.

pub fn auroc_pairs(known: &[f64], unknown: &[f64]) -> f64 {
    let mut total = 0.0;
    for &k in known {
        for &u in unknown {
            total += if k > u {
                1.0
            } else if k == u {
                0.5
            } else {
                0.0
            };
        }
    }
    total / (known.len() * unknown.len()) as f64
}

/// Tries every known score as a threshold and keeps the largest one whose
/// acceptance rate (`>=`) reaches the target.
pub fn fpr_sweep(known: &[f64], unknown: &[f64], tpr_target: f64) -> f64 {
    let n = known.len() as f64;
    let mut best: Option<f64> = None;
    for &tau in known {
        let tpr = known.iter().filter(|&&k| k >= tau).count() as f64 / n;
        if tpr + 1e-12 >= tpr_target && best.is_none_or(|b| tau > b) {
            best = Some(tau);
        }
    }
    let tau = best.expect("the smallest known score always reaches any target");
    unknown.iter().filter(|&&u| u >= tau).count() as f64 / unknown.len() as f64
}

/// OSCR from an explicit threshold list: `+inf` and every distinct score,
/// counting samples strictly above each threshold.
pub fn oscr_sweep(known: &[KnownSample], unknown: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = known.iter().map(|k| k.score).chain(unknown.iter().copied()).collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let ccr = known.iter().filter(|k| k.correct && k.score > t).count() as f64 / known.len() as f64;
            let fpr = unknown.iter().filter(|&&u| u > t).count() as f64 / unknown.len() as f64;
            (fpr, ccr)
        })
        .collect();
    let mut area = 0.0;
    for w in points.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    let (x, y) = *points.last().unwrap();
    area + (1.0 - x) * y
}

/// Random metric instance; `ties` draws scores from a handful of values.
pub fn metric_instance(seed: u64, ties: bool) -> (Vec<KnownSample>, Vec<f64>) {
    let mut rng = SplitMix64::new(seed);
    let nk = 1 + rng.below(500) as usize;
    let nu = 1 + rng.below(500) as usize;
    let levels = 1 + rng.below(6);
    let mut draw = |shift: f64| {
        if ties {
            rng.below(levels) as f64 + if shift > 0.0 { rng.below(2) as f64 } else { 0.0 }
        } else {
            rng.normal() + shift
        }
    };
    let known_scores: Vec<f64> = (0..nk).map(|_| draw(1.0)).collect();
    let unknown: Vec<f64> = (0..nu).map(|_| draw(0.0)).collect();
    let known = known_scores
        .into_iter()
        .map(|score| KnownSample {
            score,
            correct: rng.next_f64() < 0.8,
        })
        .collect();
    (known, unknown)
}
