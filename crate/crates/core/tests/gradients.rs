mod common;

use common::{random_problem, worst_gradient_error, Regime};
use oodlab::scores::grad_norm_score;
use oodlab::{Tape, Tensor};

#[test]
fn autodiff_matches_central_differences() {
    for regime in Regime::all() {
        let err = worst_gradient_error(regime, 20);
        assert!(err < 1e-6, "{}: relative error {err:e}", regime.label());
    }
}

#[test]
fn gradients_survive_extreme_logits() {
    // Large inputs saturate the softmax; the log floor must keep things finite.
    let (params, x, y) = random_problem(7);
    let x = x.scale(1e4);
    for regime in Regime::all() {
        let (loss, grads) = common::loss_and_grads(&params, &x, &y, regime, true);
        assert!(loss.is_finite(), "{}", regime.label());
        let g = grads.unwrap();
        assert!(
            g.layers.iter().all(|l| l.weight.all_finite() && l.bias.all_finite()),
            "{}",
            regime.label()
        );
    }
}

/// L1 norm of the last-layer weight gradient of CE against the uniform target.
fn grad_norm_autodiff(features: &[f64], weight: &Tensor, bias: &Tensor) -> f64 {
    let tape = Tape::new();
    let f = tape.leaf(Tensor::from_rows(&[features]).unwrap());
    let w = tape.leaf(weight.clone());
    let b = tape.leaf(bias.clone());
    let probs = f.matmul(w).unwrap().add_row(b).unwrap().softmax().unwrap();
    let loss = probs.log_floor(1e-12).unwrap().mean().unwrap().scale(-1.0).unwrap();
    tape.backward(loss).unwrap();
    w.grad().unwrap().data().iter().map(|g| g.abs()).sum()
}

#[test]
fn grad_norm_closed_form_matches_autodiff() {
    let mut rng = oodlab::rng::SplitMix64::new(99);
    for _ in 0..50 {
        let h = 2 + rng.below(8) as usize;
        let c = 2 + rng.below(8) as usize;
        let feats: Vec<f64> = (0..h).map(|_| rng.normal().abs()).collect();
        let weight = Tensor::matrix(h, c, (0..h * c).map(|_| rng.normal()).collect()).unwrap();
        let bias = Tensor::matrix(1, c, (0..c).map(|_| rng.normal()).collect()).unwrap();
        let probs = Tensor::from_rows(&[&feats[..]])
            .unwrap()
            .matmul(&weight)
            .unwrap()
            .add_row(&bias)
            .unwrap()
            .softmax()
            .unwrap();
        let closed = grad_norm_score(&feats, probs.data());
        let auto = grad_norm_autodiff(&feats, &weight, &bias);
        assert!((closed - auto).abs() < 1e-10, "{closed} vs {auto}");
    }
}
