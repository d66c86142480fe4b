use oodlab::losses::nmpc_penalty;
use oodlab::metrics::{auroc, fpr_at_tpr, oscr, KnownSample};
use oodlab::Tensor;
use proptest::prelude::*;

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -10.0..10.0f64], 1..max)
}

fn known_samples() -> impl Strategy<Value = Vec<KnownSample>> {
    prop::collection::vec(
        ((-5i32..5).prop_map(f64::from), any::<bool>()).prop_map(|(score, correct)| KnownSample { score, correct }),
        1..60,
    )
}

fn prob_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0..6.0f64, 2..10)
        .prop_map(|l| Tensor::from_rows(&[l]).unwrap().softmax().unwrap().into_data())
}

proptest! {
    #[test]
    fn softmax_shift_invariant(l in prop::collection::vec(-30.0..30.0f64, 1..12), c in -100.0..100.0f64) {
        let a = Tensor::from_rows(&[&l[..]]).unwrap().softmax().unwrap();
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        let b = Tensor::from_rows(&[&shifted[..]]).unwrap().softmax().unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmpc_nonnegative_and_permutation_invariant(p in prob_row(), rot in 0usize..10) {
        let v = nmpc_penalty(&p);
        prop_assert!(v >= 0.0);
        let mut q = p.clone();
        let n = q.len();
        q.rotate_left(rot % n);
        prop_assert!((nmpc_penalty(&q) - v).abs() < 1e-12);
        q.reverse();
        prop_assert!((nmpc_penalty(&q) - v).abs() < 1e-12);
    }

    #[test]
    fn auroc_is_antisymmetric(a in scores(80), b in scores(80)) {
        let s = auroc(&a, &b).unwrap() + auroc(&b, &a).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_increasing_transform(known in known_samples(), unknown in scores(60)) {
        let t = |s: f64| (0.7 * s).exp() + 3.0;
        let ks: Vec<f64> = known.iter().map(|k| k.score).collect();
        let kt: Vec<f64> = ks.iter().map(|&s| t(s)).collect();
        let ut: Vec<f64> = unknown.iter().map(|&s| t(s)).collect();
        let known_t: Vec<KnownSample> = known.iter().map(|k| KnownSample { score: t(k.score), ..*k }).collect();
        prop_assert_eq!(auroc(&ks, &unknown).unwrap(), auroc(&kt, &ut).unwrap());
        prop_assert_eq!(fpr_at_tpr(&ks, &unknown, 0.95).unwrap(), fpr_at_tpr(&kt, &ut, 0.95).unwrap());
        prop_assert!((oscr(&known, &unknown).unwrap() - oscr(&known_t, &ut).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn oscr_bounded_by_auroc(known in known_samples(), unknown in scores(60)) {
        let ks: Vec<f64> = known.iter().map(|k| k.score).collect();
        prop_assert!(oscr(&known, &unknown).unwrap() <= auroc(&ks, &unknown).unwrap() + 1e-12);
    }

    #[test]
    fn appending_samples_keeps_ranking(known in scores(40), unknown in scores(40), extra in scores(20)) {
        // Ranks among the original samples do not move when others are added.
        let rank = |all: &[f64], s: f64| all.iter().filter(|&&o| o > s).count();
        let mut pool = known.clone();
        pool.extend(&unknown);
        let mut grown = pool.clone();
        grown.extend(&extra);
        for i in 0..pool.len() {
            for j in 0..pool.len() {
                let before = rank(&pool, pool[i]) < rank(&pool, pool[j]);
                let after = rank(&grown, pool[i]) < rank(&grown, pool[j]);
                prop_assert_eq!(before, after);
            }
        }
    }
}
