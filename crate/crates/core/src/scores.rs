//! Post-hoc knownness scores and the threshold decision rule.
//!
//! Every score follows the same convention: higher means "more likely known".
//! Entropy and GEN are therefore negated relative to their usual definitions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{ForwardOut, Layer};
use crate::tensor::{argmax, Tensor};

pub const DEFAULT_GEN_GAMMA: f64 = 0.1;
pub const DEFAULT_REACT_PERCENTILE: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreFn {
    Msp,
    Entropy,
    Gen,
    MaxLogit,
    Energy,
    React,
    GradNorm,
    Vim,
}

impl ScoreFn {
    pub const ALL: [ScoreFn; 8] = [
        ScoreFn::Msp,
        ScoreFn::Entropy,
        ScoreFn::Gen,
        ScoreFn::MaxLogit,
        ScoreFn::Energy,
        ScoreFn::React,
        ScoreFn::GradNorm,
        ScoreFn::Vim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreFn::Msp => "msp",
            ScoreFn::Entropy => "entropy",
            ScoreFn::Gen => "gen",
            ScoreFn::MaxLogit => "max_logit",
            ScoreFn::Energy => "energy",
            ScoreFn::React => "react",
            ScoreFn::GradNorm => "grad_norm",
            ScoreFn::Vim => "vim",
        }
    }
}

impl fmt::Display for ScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreFn::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown score function {s:?}")))
    }
}

pub fn msp(probs: &[f64]) -> f64 {
    probs[argmax(probs)]
}

/// `sum p ln p`, with `0 ln 0 = 0`.
pub fn neg_entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum()
}

/// `-sum p^gamma (1 - p)^gamma` over all classes.
pub fn gen(probs: &[f64], gamma: f64) -> f64 {
    -probs
        .iter()
        .map(|&p| p.powf(gamma) * (1.0 - p).max(0.0).powf(gamma))
        .sum::<f64>()
}

pub fn max_logit(logits: &[f64]) -> f64 {
    logits[argmax(logits)]
}

/// `logsumexp(logits)`, the negative free energy.
pub fn energy(logits: &[f64]) -> f64 {
    let m = max_logit(logits);
    if m.is_infinite() {
        return m;
    }
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

/// Clip threshold for penultimate activations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReactCalib {
    pub clip: f64,
}

/// Linear-interpolation quantile of `values` (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of no values"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn react_fit(train_features: &Tensor, percentile: f64) -> Result<ReactCalib> {
    if train_features.is_empty() {
        return Err(Error::Empty("ReAct calibration needs training features"));
    }
    Ok(ReactCalib {
        clip: quantile(train_features.data(), percentile)?,
    })
}

fn affine(features: &[f64], layer: &Layer) -> Vec<f64> {
    let w = &layer.weight;
    let mut out = layer.bias.data().to_vec();
    for (j, &f) in features.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(j)) {
            *o += f * wv;
        }
    }
    out
}

/// Energy of the logits recomputed from activations clipped at `calib.clip`.
pub fn react_score(features: &[f64], last: &Layer, calib: &ReactCalib) -> f64 {
    let clipped: Vec<f64> = features.iter().map(|&f| f.min(calib.clip)).collect();
    energy(&affine(&clipped, last))
}

/// L1 norm of the last-layer weight gradient of the cross-entropy between the
/// uniform distribution and the softmax output: `|p - u|_1 * |f|_1`.
pub fn grad_norm_score(features: &[f64], probs: &[f64]) -> f64 {
    let u = 1.0 / probs.len() as f64;
    let dp: f64 = probs.iter().map(|&p| (p - u).abs()).sum();
    let df: f64 = features.iter().map(|f| f.abs()).sum();
    dp * df
}

/// Principal subspace of training features plus the virtual-logit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct VimCalib {
    pub feature_mean: Vec<f64>,
    /// `h x r`, orthonormal columns.
    pub basis: Tensor,
    pub alpha_v: f64,
}

impl VimCalib {
    /// Norm of the component of `f - mean` outside the principal subspace.
    pub fn residual(&self, features: &[f64]) -> f64 {
        let z: Vec<f64> = features.iter().zip(&self.feature_mean).map(|(f, m)| f - m).collect();
        let r = self.basis.cols();
        let mut coeff = vec![0.0; r];
        for (j, &zj) in z.iter().enumerate() {
            for (c, &b) in coeff.iter_mut().zip(self.basis.row(j)) {
                *c += zj * b;
            }
        }
        z.iter()
            .enumerate()
            .map(|(j, &zj)| {
                let proj: f64 = self.basis.row(j).iter().zip(&coeff).map(|(b, c)| b * c).sum();
                (zj - proj).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Fits the ViM subspace and scale on training features and logits.
pub fn vim_fit(train_features: &Tensor, train_logits: &Tensor, r: usize) -> Result<VimCalib> {
    let (n, h) = (train_features.rows(), train_features.cols());
    if r == 0 || r >= h {
        return Err(Error::Calibration(format!(
            "subspace dimension {r} must satisfy 1 <= r < feature dim {h}"
        )));
    }
    if n < 2 {
        return Err(Error::Calibration(format!("need at least 2 samples, got {n}")));
    }
    if train_logits.rows() != n {
        return Err(Error::dim(
            "vim_fit",
            format!("{n} feature rows, {} logit rows", train_logits.rows()),
        ));
    }

    let mut mean = vec![0.0; h];
    for row in train_features.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(h, h);
    for row in train_features.row_iter() {
        let z: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..h {
            if z[i] == 0.0 {
                continue;
            }
            for j in 0..h {
                cov[(i, j)] += z[i] * z[j];
            }
        }
    }
    cov /= n as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = vec![0.0; h * r];
    for (c, &k) in order.iter().take(r).enumerate() {
        let v = eig.eigenvectors.column(k);
        for j in 0..h {
            basis[j * r + c] = v[j];
        }
    }
    let mut calib = VimCalib {
        feature_mean: mean,
        basis: Tensor::matrix(h, r, basis)?,
        alpha_v: 1.0,
    };

    let mean_residual = train_features.row_iter().map(|f| calib.residual(f)).sum::<f64>() / n as f64;
    let mean_norm = train_features
        .row_iter()
        .map(|f| {
            f.iter()
                .zip(&calib.feature_mean)
                .map(|(v, m)| (v - m).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n as f64;
    if !(mean_residual > 1e-9 * mean_norm.max(f64::MIN_POSITIVE)) {
        return Err(Error::Calibration(
            "training features lie in the principal subspace; residual norm is zero".into(),
        ));
    }
    let mean_max_logit = train_logits.row_iter().map(max_logit).sum::<f64>() / n as f64;
    let alpha_v = mean_max_logit / mean_residual;
    if !(alpha_v > 0.0 && alpha_v.is_finite()) {
        return Err(Error::Calibration(format!(
            "virtual-logit scale must be positive, got {alpha_v} (mean max logit {mean_max_logit})"
        )));
    }
    calib.alpha_v = alpha_v;
    Ok(calib)
}

/// Energy minus the scaled out-of-subspace residual.
pub fn vim_score(features: &[f64], logits: &[f64], calib: &VimCalib) -> f64 {
    energy(logits) - calib.alpha_v * calib.residual(features)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Known,
    Unknown,
}

/// Known iff the knownness score strictly exceeds the threshold.
pub fn decide(score: f64, threshold: Threshold) -> Decision {
    if score > threshold.tau {
        Decision::Known
    } else {
        Decision::Unknown
    }
}

/// Per-sample record used by evaluation. `label` is `None` for samples of
/// unknown classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub features: Vec<f64>,
    pub score: f64,
    pub pred_class: usize,
    pub label: Option<usize>,
}

/// Frozen calibration for every score function, fitted on training data only.
#[derive(Clone, Debug)]
pub struct Scorer {
    pub last_layer: Layer,
    pub gamma: f64,
    pub react: Option<ReactCalib>,
    pub vim: Option<VimCalib>,
}

/// Settings for [`Scorer::fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScorerConfig {
    pub gamma: f64,
    pub react_percentile: f64,
    /// ViM subspace dimension; `None` means half the feature width.
    pub vim_dim: Option<usize>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            gamma: DEFAULT_GEN_GAMMA,
            react_percentile: DEFAULT_REACT_PERCENTILE,
            vim_dim: None,
        }
    }
}

impl Scorer {
    /// Calibrates the score functions in `fns` that need it on the training
    /// forward pass `train`.
    pub fn fit(last_layer: &Layer, train: &ForwardOut, fns: &[ScoreFn], cfg: ScorerConfig) -> Result<Self> {
        if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "GEN gamma must be in (0, 1), got {}",
                cfg.gamma
            )));
        }
        let react = if fns.contains(&ScoreFn::React) {
            Some(react_fit(&train.features, cfg.react_percentile)?)
        } else {
            None
        };
        let vim = if fns.contains(&ScoreFn::Vim) {
            let r = cfg.vim_dim.unwrap_or(train.features.cols() / 2);
            Some(vim_fit(&train.features, &train.logits, r)?)
        } else {
            None
        };
        Ok(Scorer {
            last_layer: last_layer.clone(),
            gamma: cfg.gamma,
            react,
            vim,
        })
    }

    pub fn score(&self, f: ScoreFn, features: &[f64], logits: &[f64], probs: &[f64]) -> Result<f64> {
        Ok(match f {
            ScoreFn::Msp => msp(probs),
            ScoreFn::Entropy => neg_entropy(probs),
            ScoreFn::Gen => gen(probs, self.gamma),
            ScoreFn::MaxLogit => max_logit(logits),
            ScoreFn::Energy => energy(logits),
            ScoreFn::React => {
                let calib = self
                    .react
                    .as_ref()
                    .ok_or_else(|| Error::Usage("ReAct score requested without calibration".into()))?;
                react_score(features, &self.last_layer, calib)
            }
            ScoreFn::GradNorm => grad_norm_score(features, probs),
            ScoreFn::Vim => {
                let calib = self
                    .vim
                    .as_ref()
                    .ok_or_else(|| Error::Usage("ViM score requested without calibration".into()))?;
                vim_score(features, logits, calib)
            }
        })
    }

    /// Scores every row of a forward pass.
    pub fn score_batch(&self, f: ScoreFn, out: &ForwardOut, labels: &[Option<usize>]) -> Result<Vec<ScoredSample>> {
        let n = out.logits.rows();
        if labels.len() != n {
            return Err(Error::dim(
                "score_batch",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        (0..n)
            .map(|i| {
                let (feat, logits, probs) = (out.features.row(i), out.logits.row(i), out.probs.row(i));
                Ok(ScoredSample {
                    logits: logits.to_vec(),
                    probs: probs.to_vec(),
                    features: feat.to_vec(),
                    score: self.score(f, feat, logits, probs)?,
                    pred_class: argmax(probs),
                    label: labels[i],
                })
            })
            .collect()
    }
}
