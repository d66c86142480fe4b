//! Training objectives: cross-entropy, label smoothing (LS) and adaptive label
//! smoothing (ALS).
//!
//! All losses take the softmax output as a taped [`Var`] and reduce with a
//! mean over the batch. ALS is cross-entropy plus `lambda` times the standard
//! deviation of the non-maximal probabilities of each eligible row.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor, Var};

/// Inputs to `ln` are clamped from below at this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// Added under the square root of the non-max variance so the gradient stays
/// finite when the variance is exactly zero.
pub const SQRT_GUARD: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsConfig {
    pub alpha: f64,
}

impl LsConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(LsConfig { alpha })
    }
}

/// Which rows receive the non-max penalty and how `lambda` evolves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlsStrategy {
    /// Penalize only rows whose argmax equals the target; constant lambda.
    OnlyCorr,
    /// Penalize every row; lambda ramps linearly over `ramp_epochs`.
    RampAll,
}

impl fmt::Display for AlsStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlsStrategy::OnlyCorr => "only_corr",
            AlsStrategy::RampAll => "ramp_all",
        })
    }
}

impl FromStr for AlsStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "only_corr" => Ok(AlsStrategy::OnlyCorr),
            "ramp_all" => Ok(AlsStrategy::RampAll),
            other => Err(Error::InvalidArgument(format!(
                "unknown ALS strategy {other:?} (expected only_corr or ramp_all)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlsConfig {
    pub lambda: f64,
    pub strategy: AlsStrategy,
    pub ramp_epochs: usize,
}

impl AlsConfig {
    pub fn new(lambda: f64, strategy: AlsStrategy, ramp_epochs: usize) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(AlsConfig {
            lambda,
            strategy,
            ramp_epochs,
        })
    }

    /// Penalty weight in effect at `epoch`.
    pub fn effective_lambda(&self, epoch: usize) -> f64 {
        match self.strategy {
            AlsStrategy::OnlyCorr => self.lambda,
            AlsStrategy::RampAll => lambda_schedule(epoch, self.ramp_epochs, self.lambda),
        }
    }
}

/// `min(e / T_e, 1) * lambda`, or `lambda` when `T_e == 0`.
pub fn lambda_schedule(epoch: usize, ramp_epochs: usize, lambda: f64) -> f64 {
    if ramp_epochs == 0 {
        return lambda;
    }
    (epoch as f64 / ramp_epochs as f64).min(1.0) * lambda
}

fn check_targets(probs: &Tensor, targets: &[usize]) -> Result<()> {
    if targets.len() != probs.rows() {
        return Err(Error::dim(
            "loss",
            format!("{} targets for {} rows", targets.len(), probs.rows()),
        ));
    }
    if probs.rows() == 0 {
        return Err(Error::Empty("loss over an empty batch"));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= probs.cols()) {
        return Err(Error::dim(
            "loss",
            format!("target {t} out of range for {} classes", probs.cols()),
        ));
    }
    Ok(())
}

/// Batch mean of `-ln p[target]`.
pub fn cross_entropy<'t>(probs: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    check_targets(&probs.value(), targets)?;
    probs.log_floor(LOG_FLOOR)?.gather(targets)?.mean()?.scale(-1.0)
}

/// Soft target with `1 - alpha` on the true class and `alpha / (N - 1)` elsewhere.
pub fn smooth_targets(num_classes: usize, alpha: f64, true_index: usize) -> Vec<f64> {
    assert!(num_classes >= 2, "label smoothing needs at least two classes");
    let off = alpha / (num_classes - 1) as f64;
    let mut t = vec![off; num_classes];
    t[true_index] = 1.0 - alpha;
    t
}

/// Batch mean of the cross-entropy against smoothed targets.
pub fn ls_loss<'t>(probs: Var<'t>, targets: &[usize], cfg: LsConfig) -> Result<Var<'t>> {
    let (n, classes) = {
        let p = probs.value();
        check_targets(&p, targets)?;
        (p.rows(), p.cols())
    };
    if classes < 2 {
        return Err(Error::InvalidArgument(
            "label smoothing needs at least two classes".into(),
        ));
    }
    let tape = probs.tape();
    let mut soft = Vec::with_capacity(n * classes);
    for &t in targets {
        soft.extend(smooth_targets(classes, cfg.alpha, t));
    }
    let soft = tape.leaf(Tensor::matrix(n, classes, soft)?);
    let ones = tape.leaf(Tensor::full(classes, 1, 1.0));
    // Row sums go through matmul so that alpha = 0 reproduces cross_entropy bit for bit.
    probs.log_floor(LOG_FLOOR)?.mul(soft)?.matmul(ones)?.mean()?.scale(-1.0)
}

/// Standard deviation of the non-maximal entries of one probability row.
pub fn nmpc_penalty(prob_row: &[f64]) -> f64 {
    assert!(prob_row.len() >= 2, "non-max penalty needs at least two classes");
    let k = argmax(prob_row);
    let m = (prob_row.len() - 1) as f64;
    let rest = || {
        prob_row
            .iter()
            .enumerate()
            .filter(move |&(i, _)| i != k)
            .map(|(_, &p)| p)
    };
    let mean = rest().sum::<f64>() / m;
    (rest().map(|p| (p - mean).powi(2)).sum::<f64>() / m).sqrt()
}

/// Taped per-row non-max standard deviation (with the sqrt guard), `n x 1`.
pub fn nmpc_rows<'t>(probs: Var<'t>) -> Result<Var<'t>> {
    let tape = probs.tape();
    let (n, classes, mask) = {
        let p = probs.value();
        if p.cols() < 2 {
            return Err(Error::InvalidArgument(
                "non-max penalty needs at least two classes".into(),
            ));
        }
        let mut mask = vec![1.0; p.len()];
        for (r, k) in p.row_argmax().into_iter().enumerate() {
            mask[r * p.cols() + k] = 0.0;
        }
        (p.rows(), p.cols(), Tensor::matrix(p.rows(), p.cols(), mask)?)
    };
    let inv = 1.0 / (classes - 1) as f64;
    let mask = tape.leaf(mask);
    let ones_col = tape.leaf(Tensor::full(classes, 1, 1.0));
    let ones_row = tape.leaf(Tensor::full(1, classes, 1.0));
    let guard = tape.leaf(Tensor::full(n, 1, SQRT_GUARD));

    let mean = probs.mul(mask)?.matmul(ones_col)?.scale(inv)?;
    let dev = probs.sub(mean.matmul(ones_row)?)?.mul(mask)?;
    dev.mul(dev)?.matmul(ones_col)?.scale(inv)?.add(guard)?.sqrt()
}

/// Rows that receive the non-max penalty under `strategy`.
pub fn eligible_rows(probs: &Tensor, targets: &[usize], strategy: AlsStrategy) -> Vec<bool> {
    match strategy {
        AlsStrategy::RampAll => vec![true; probs.rows()],
        AlsStrategy::OnlyCorr => probs
            .row_argmax()
            .into_iter()
            .zip(targets)
            .map(|(k, &t)| k == t)
            .collect(),
    }
}

/// Cross-entropy plus `lambda_eff` times the mean non-max penalty over
/// eligible rows; the penalty term is zero when no row is eligible.
pub fn als_loss<'t>(probs: Var<'t>, targets: &[usize], cfg: AlsConfig, epoch: usize) -> Result<Var<'t>> {
    let ce = cross_entropy(probs, targets)?;
    let eligible = eligible_rows(&probs.value(), targets, cfg.strategy);
    let count = eligible.iter().filter(|&&e| e).count();
    if count == 0 {
        return Ok(ce);
    }
    let weights: Vec<f64> = eligible
        .iter()
        .map(|&e| if e { 1.0 / count as f64 } else { 0.0 })
        .collect();
    let weights = probs.tape().leaf(Tensor::matrix(eligible.len(), 1, weights)?);
    let penalty = nmpc_rows(probs)?.mul(weights)?.sum()?;
    ce.add(penalty.scale(cfg.effective_lambda(epoch))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn loss_value(rows: &[&[f64]], f: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>>) -> f64 {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::from_rows(rows).unwrap());
        let l = f(p).unwrap();
        let v = l.value().item();
        v
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = |rows: &[&[f64]], t: &[usize]| loss_value(rows, |p| cross_entropy(p, t));
        assert_eq!(ce(&[&[1.0, 0.0, 0.0]], &[0]), 0.0);
        assert!((ce(&[&[0.5, 0.5]], &[1]) - std::f64::consts::LN_2).abs() < 1e-15);
        let both = ce(&[&[1.0, 0.0], &[0.5, 0.5]], &[0, 1]);
        assert!((both - 0.346574).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let v = loss_value(&[&[1.0, 0.0]], |p| cross_entropy(p, &[1]));
        assert!((v - (-LOG_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::from_rows(&[[0.5, 0.5]]).unwrap());
        assert!(cross_entropy(p, &[2]).is_err());
        assert!(cross_entropy(p, &[0, 1]).is_err());
    }

    #[test]
    fn smooth_target_examples() {
        let t = smooth_targets(5, 0.1, 2);
        let want = [0.025, 0.025, 0.9, 0.025, 0.025];
        for (a, b) in t.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(smooth_targets(4, 0.0, 1), vec![0.0, 1.0, 0.0, 0.0]);
        let t = smooth_targets(2, 0.3, 0);
        assert!((t[0] - 0.7).abs() < 1e-15 && (t[1] - 0.3).abs() < 1e-15);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ls_with_zero_alpha_is_cross_entropy_bitwise() {
        let rows: &[&[f64]] = &[&[0.2, 0.5, 0.3], &[0.6, 0.1, 0.3], &[0.05, 0.05, 0.9]];
        let t = [1, 0, 2];
        let ls = loss_value(rows, |p| ls_loss(p, &t, LsConfig::new(0.0).unwrap()));
        let ce = loss_value(rows, |p| cross_entropy(p, &t));
        assert_eq!(ls.to_bits(), ce.to_bits());
    }

    #[test]
    fn ls_at_target_is_target_entropy() {
        let y = smooth_targets(5, 0.1, 2);
        let v = loss_value(&[&y], |p| ls_loss(p, &[2], LsConfig::new(0.1).unwrap()));
        let hand = 0.9 * (1.0f64 / 0.9).ln() + 4.0 * 0.025 * (1.0f64 / 0.025).ln();
        assert!((v - hand).abs() < 1e-12);
        assert!((v - 0.46371).abs() < 1e-5);
    }

    #[test]
    fn ls_minimized_at_soft_target() {
        let cfg = LsConfig::new(0.1).unwrap();
        let y = smooth_targets(5, 0.1, 2);
        let at = loss_value(&[&y], |p| ls_loss(p, &[2], cfg));
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let mut q = y.clone();
                q[i] += 1e-3;
                q[j] -= 1e-3;
                let moved = loss_value(&[&q], |p| ls_loss(p, &[2], cfg));
                assert!(moved > at, "moving mass {j}->{i} lowered the loss");
            }
        }
    }

    #[test]
    fn nmpc_examples() {
        assert!((nmpc_penalty(&[0.7, 0.2, 0.1]) - 0.05).abs() < 1e-15);
        assert_eq!(nmpc_penalty(&[1.0 / 3.0; 3]), 0.0);
        assert_eq!(nmpc_penalty(&[0.9, 0.05, 0.05]), 0.0);
    }

    #[test]
    fn taped_nmpc_matches_plain() {
        let rows: &[&[f64]] = &[&[0.7, 0.2, 0.1], &[0.1, 0.3, 0.4, 0.2][..3], &[0.25, 0.5, 0.25]];
        let tape = Tape::new();
        let p = tape.leaf(Tensor::from_rows(rows).unwrap());
        let s = nmpc_rows(p).unwrap();
        for (r, &got) in s.value().data().iter().enumerate() {
            assert!((got - nmpc_penalty(rows[r])).abs() < 1e-11);
        }
    }

    #[test]
    fn als_examples() {
        let cfg = AlsConfig::new(5.0, AlsStrategy::OnlyCorr, 0).unwrap();
        let v = loss_value(&[&[0.7, 0.2, 0.1]], |p| als_loss(p, &[0], cfg, 0));
        assert!((v - (-(0.7f64).ln() + 0.25)).abs() < 1e-12);
        assert!((v - 0.60667).abs() < 1e-5);

        let v = loss_value(&[&[0.7, 0.2, 0.1]], |p| als_loss(p, &[1], cfg, 0));
        assert!((v - (-(0.2f64).ln())).abs() < 1e-15);
        assert!((v - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn als_zero_lambda_is_cross_entropy_bitwise() {
        let rows: &[&[f64]] = &[&[0.7, 0.2, 0.1], &[0.3, 0.3, 0.4]];
        let t = [0, 2];
        for strategy in [AlsStrategy::OnlyCorr, AlsStrategy::RampAll] {
            let cfg = AlsConfig::new(0.0, strategy, 10).unwrap();
            let als = loss_value(rows, |p| als_loss(p, &t, cfg, 3));
            let ce = loss_value(rows, |p| cross_entropy(p, &t));
            assert_eq!(als.to_bits(), ce.to_bits());
        }
    }

    #[test]
    fn lambda_schedule_examples() {
        assert_eq!(lambda_schedule(10, 20, 40.0), 20.0);
        assert_eq!(lambda_schedule(0, 20, 40.0), 0.0);
        assert_eq!(lambda_schedule(20, 20, 40.0), 40.0);
        assert_eq!(lambda_schedule(77, 20, 40.0), 40.0);
        assert_eq!(lambda_schedule(0, 0, 40.0), 40.0);
    }

    #[test]
    fn ramp_strategy_uses_schedule() {
        let cfg = AlsConfig::new(8.0, AlsStrategy::RampAll, 4).unwrap();
        assert_eq!(cfg.effective_lambda(1), 2.0);
        let cfg = AlsConfig::new(8.0, AlsStrategy::OnlyCorr, 4).unwrap();
        assert_eq!(cfg.effective_lambda(1), 8.0);
    }

    #[test]
    fn config_validation() {
        assert!(LsConfig::new(1.5).is_err());
        assert!(LsConfig::new(-0.1).is_err());
        assert!(AlsConfig::new(-1.0, AlsStrategy::OnlyCorr, 0).is_err());
        assert!(AlsConfig::new(f64::NAN, AlsStrategy::OnlyCorr, 0).is_err());
        assert_eq!("ramp_all".parse::<AlsStrategy>().unwrap(), AlsStrategy::RampAll);
        assert!("sometimes".parse::<AlsStrategy>().is_err());
    }
}
