use proptest::prelude::*;

use clwb_core::composer::{
    calibration_loss, fit_calibration, predict_composed_sharpened, predict_concat_argmax, tp_sigmoid_maxlogit,
    wp_temperature, compose_full, CalibrationOptions, CalibrationParams, CalibrationSample,
};
use clwb_core::metrics::{auc, auc_pairwise, auc_rank_sum, ScoredPopulation};
use clwb_core::numkit::{grad_check, softmax_cross_entropy};
use clwb_core::oodlab::{rotate90, sup_con_loss_from_features};
use clwb_core::theory::{entropy_report, Prediction};
use clwb_core::{Categorical, GroundTruth, TaskTopology};

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

fn population() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    // Scores on a coarse grid so ties actually happen.
    let score = (-20i32..20).prop_map(|v| v as f64 / 4.0);
    (prop::collection::vec(score.clone(), 1..60), prop::collection::vec(score, 1..60))
}

fn logits(tasks: std::ops::Range<usize>, width: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(finite(-6.0, 6.0), width), tasks)
}

fn categorical(n: usize) -> impl Strategy<Value = Categorical> {
    prop::collection::vec(finite(0.01, 1.0), n).prop_map(|w| Categorical::normalized(w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_sum_equals_pair_count((ind, ood) in population()) {
        let pop = ScoredPopulation::new(ind, ood).unwrap();
        prop_assert!((auc_rank_sum(&pop) - auc_pairwise(&pop)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_antisymmetric((ind, ood) in population()) {
        let a = auc(&ScoredPopulation::new(ind.clone(), ood.clone()).unwrap());
        let b = auc(&ScoredPopulation::new(ood, ind).unwrap());
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_strictly_increasing_maps((ind, ood) in population(), scale in 0.1f64..5.0, shift in -3.0f64..3.0) {
        let f = |v: &Vec<f64>| v.iter().map(|s| (scale * s + shift).tanh() * 7.0 + s.powi(3)).collect::<Vec<_>>();
        let a = auc(&ScoredPopulation::new(ind.clone(), ood.clone()).unwrap());
        let b = auc(&ScoredPopulation::new(f(&ind), f(&ood)).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rotate90_has_order_four(side in 1usize..7, seed in any::<u64>()) {
        let img: Vec<f64> = (0..side * side).map(|i| ((i as u64).wrapping_mul(seed | 1) % 97) as f64).collect();
        let mut cur = img.clone();
        for t in 1..=4 {
            cur = rotate90(&cur, side, side, 1).unwrap();
            prop_assert_eq!(&cur, &rotate90(&img, side, side, t).unwrap());
        }
        prop_assert_eq!(cur, img);
    }

    #[test]
    fn concat_argmax_ignores_a_common_shift(per_task in logits(1..5, 1..5), c in -50.0f64..50.0) {
        let shifted: Vec<Vec<f64>> = per_task.iter().map(|f| f.iter().map(|v| v + c).collect()).collect();
        prop_assert_eq!(predict_concat_argmax(&per_task).unwrap(), predict_concat_argmax(&shifted).unwrap());
    }

    #[test]
    fn composed_distribution_normalizes(per_task in logits(1..5, 1..5), nu in 0.05f64..3.0) {
        let topo = TaskTopology::new(per_task.iter().map(Vec::len).collect()).unwrap();
        let wp: Vec<Categorical> = per_task.iter().map(|f| wp_temperature(f, nu).unwrap()).collect();
        let tp = tp_sigmoid_maxlogit(&per_task).unwrap();
        let p = compose_full(&wp, &tp, &topo).unwrap();
        prop_assert_eq!(p.len(), topo.total_classes());
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.probs().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sharpened_compose_matches_concat_argmax(per_task in logits(2..5, 1..5)) {
        let mut maxes: Vec<f64> = per_task.iter().map(|f| f.iter().copied().fold(f64::MIN, f64::max)).collect();
        maxes.sort_by(f64::total_cmp);
        prop_assume!(maxes[maxes.len() - 1] > maxes[maxes.len() - 2]);
        prop_assert_eq!(predict_composed_sharpened(&per_task, 1e-9).unwrap(), predict_concat_argmax(&per_task).unwrap());
    }

    #[test]
    fn entropy_decomposes(wp0 in categorical(3), wp1 in categorical(2), tp in categorical(2), task in 0usize..2, class in 0usize..2) {
        let topo = TaskTopology::new(vec![3, 2]).unwrap();
        let class = class.min(topo.class_count(task) - 1);
        let r = entropy_report(Prediction::Decomposed { wp: &[wp0, wp1], tp: &tp }, GroundTruth::new(task, class), &topo).unwrap();
        prop_assert!((r.h_cil - r.h_wp - r.h_tp).abs() < 1e-9);
        prop_assert!(r.h_wp >= 0.0 && r.h_tp >= 0.0);
    }

    #[test]
    fn calibration_never_raises_buffer_loss(per_task in prop::collection::vec(logits(3..4, 2..3), 4..20), seed in any::<u64>()) {
        let samples: Vec<CalibrationSample> = per_task
            .into_iter()
            .enumerate()
            .map(|(i, logits)| CalibrationSample { logits, class: i % 6 })
            .collect();
        let fit = fit_calibration(&samples, &CalibrationOptions { iters: 40, lr: 0.05, batch: 5, seed }).unwrap();
        let start = calibration_loss(&samples, &CalibrationParams::identity(3)).unwrap().0;
        prop_assert!(fit.final_loss <= start);
        prop_assert!((calibration_loss(&samples, &fit.params).unwrap().0 - fit.final_loss).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_gradient(z in prop::collection::vec(finite(-5.0, 5.0), 2..8), t in 0usize..8) {
        let t = t % z.len();
        let r = grad_check(|p| softmax_cross_entropy(p, t).unwrap(), &z, 1e-6, 1e-4);
        prop_assert!(r.passed(), "max rel error {}", r.max_rel_error);
    }

    #[test]
    fn calibration_gradient(per_task in prop::collection::vec(logits(2..3, 3..4), 2..8), ab in prop::collection::vec(finite(-1.5, 1.5), 4)) {
        let samples: Vec<CalibrationSample> =
            per_task.into_iter().enumerate().map(|(i, logits)| CalibrationSample { logits, class: i % 6 }).collect();
        let f = |p: &[f64]| {
            let params = CalibrationParams { alpha: p[..2].to_vec(), beta: p[2..].to_vec() };
            let (l, mut ga, gb) = calibration_loss(&samples, &params).unwrap();
            ga.extend(gb);
            (l, ga)
        };
        let r = grad_check(f, &ab, 1e-6, 1e-4);
        prop_assert!(r.passed(), "max rel error {}", r.max_rel_error);
    }

    #[test]
    fn sup_con_gradient(u in prop::collection::vec(prop::collection::vec(finite(-2.0, 2.0), 3), 4..8), tau in 0.2f64..2.0) {
        prop_assume!(u.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 0.05));
        let n = u.len();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let flat: Vec<f64> = u.iter().flatten().copied().collect();
        let f = |p: &[f64]| {
            let feats: Vec<Vec<f64>> = p.chunks(3).map(<[f64]>::to_vec).collect();
            let (l, g) = sup_con_loss_from_features(&feats, &labels, tau).unwrap();
            (l, g.into_iter().flatten().collect())
        };
        let r = grad_check(f, &flat, 1e-6, 1e-4);
        prop_assert!(r.passed(), "max rel error {}", r.max_rel_error);
    }
}
