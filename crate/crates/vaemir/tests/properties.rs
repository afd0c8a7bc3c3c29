//! Property-based checks against brute-force reference implementations.

use proptest::prelude::*;
use vaemir::eval::{r2, rmse, roc_auc};
use vaemir::mir::{mean_prototype, vaemir_prototype};
use vaemir::vae::{latent_loss, recon_loss};
use vaemir::Bag;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len)
}

fn positive_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..10.0, len)
}

fn bag_with_scores() -> impl Strategy<Value = (Bag, Vec<f64>)> {
    (1usize..12, 1usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(finite_vec(d), n),
            prop::collection::vec(-50.0f64..50.0, n),
        )
            .prop_map(|(instances, scores)| {
                let bag = Bag {
                    bag_id: "b".into(),
                    year: 2010,
                    label: Some(1.0),
                    instances,
                    anomaly_flags: None,
                };
                (bag, scores)
            })
    })
}

proptest! {
    #[test]
    fn latent_loss_nonnegative(mu in finite_vec(4), sigma in positive_vec(4)) {
        let loss = latent_loss(&mu, &sigma).unwrap();
        prop_assert!(loss >= -1e-12, "latent loss {loss} < 0");
    }

    #[test]
    fn latent_loss_zero_only_at_standard_normal(mu in finite_vec(4), sigma in positive_vec(4)) {
        let loss = latent_loss(&mu, &sigma).unwrap();
        let deviates = mu.iter().any(|m| m.abs() > 1e-3)
            || sigma.iter().any(|s| (s - 1.0).abs() > 1e-3);
        if deviates {
            prop_assert!(loss > 1e-8, "loss {loss} too small for mu {mu:?} sigma {sigma:?}");
        }
    }

    #[test]
    fn recon_loss_is_a_metric(a in finite_vec(5), b in finite_vec(5), c in finite_vec(5)) {
        let ab = recon_loss(&a, &b).unwrap();
        let ba = recon_loss(&b, &a).unwrap();
        let ac = recon_loss(&a, &c).unwrap();
        let cb = recon_loss(&c, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(recon_loss(&a, &a).unwrap(), 0.0);
        prop_assert!(ab <= ac + cb + 1e-9, "triangle violated: {ab} > {ac} + {cb}");
    }

    #[test]
    fn prototype_stays_in_componentwise_envelope((bag, scores) in bag_with_scores(), k_frac in 0.0f64..1.0) {
        let n = bag.n_instances();
        let k = 1 + (k_frac * (n - 1) as f64).floor() as usize;
        let proto = vaemir_prototype(&bag, &scores, k).unwrap();
        for d in 0..bag.feature_dim() {
            let lo = bag.instances.iter().map(|i| i[d]).fold(f64::INFINITY, f64::min);
            let hi = bag.instances.iter().map(|i| i[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(proto.vector[d] >= lo - 1e-9 && proto.vector[d] <= hi + 1e-9);
        }
    }

    #[test]
    fn prototype_invariant_under_joint_permutation((bag, scores) in bag_with_scores(), seed in 0u64..1000) {
        // Distinct scores so the tie rule (lowest index wins) cannot change
        // the selected set across permutations.
        let n = bag.n_instances();
        let scores: Vec<f64> = scores.iter().enumerate().map(|(i, s)| s + i as f64 * 1e-6).collect();
        let k = 1 + (seed as usize) % n;

        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed.wrapping_add(1);
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let permuted = Bag {
            instances: perm.iter().map(|&i| bag.instances[i].clone()).collect(),
            ..bag.clone()
        };
        let perm_scores: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();

        let p1 = vaemir_prototype(&bag, &scores, k).unwrap();
        let p2 = vaemir_prototype(&permuted, &perm_scores, k).unwrap();
        for (a, b) in p1.vector.iter().zip(&p2.vector) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn prototype_invariant_under_score_shift((bag, scores) in bag_with_scores(), shift in -10.0f64..10.0) {
        let n = bag.n_instances();
        let k = 1 + n / 2;
        let k = k.min(n);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let p1 = vaemir_prototype(&bag, &scores, k).unwrap();
        let p2 = vaemir_prototype(&bag, &shifted, k).unwrap();
        prop_assert_eq!(p1.vector, p2.vector);
    }

    #[test]
    fn prototype_at_full_k_equals_mean_exactly((bag, scores) in bag_with_scores()) {
        let n = bag.n_instances();
        let p = vaemir_prototype(&bag, &scores, n).unwrap();
        let m = mean_prototype(&bag).unwrap();
        prop_assert_eq!(p.vector, m.vector);
    }

    #[test]
    fn rmse_matches_brute_force(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let got = rmse::<f64>(&pred, &truth).unwrap();
        let expect = (pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
            / pairs.len() as f64)
            .sqrt();
        prop_assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn r2_matches_brute_force(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
        prop_assume!(ss_tot > 1e-9);
        let got = r2::<f64>(&pred, &truth).unwrap();
        let ss_res: f64 = pairs.iter().map(|(p, t)| (t - p) * (t - p)).sum();
        let expect = 1.0 - ss_res / ss_tot;
        prop_assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0));

        // r2 = 1 - n * rmse^2 / ss_tot ties the two metrics together.
        let r = rmse::<f64>(&pred, &truth).unwrap();
        let identity = 1.0 - truth.len() as f64 * r * r / ss_tot;
        prop_assert!((got - identity).abs() <= 1e-9 * identity.abs().max(1.0));
    }

    #[test]
    fn roc_auc_matches_pair_counting(
        scores in prop::collection::vec(-5.0f64..5.0, 4..30),
        flag_bits in prop::collection::vec(any::<bool>(), 4..30),
    ) {
        let n = scores.len().min(flag_bits.len());
        let scores = &scores[..n];
        // Round to coarse grid so ties actually occur.
        let scores: Vec<f64> = scores.iter().map(|s| (s * 2.0).round() / 2.0).collect();
        let flags = &flag_bits[..n];
        prop_assume!(flags.iter().any(|f| *f) && flags.iter().any(|f| !*f));

        let got = roc_auc(&scores, flags).unwrap();
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for i in 0..n {
            if !flags[i] {
                continue;
            }
            for j in 0..n {
                if flags[j] {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        let expect = wins / pairs;
        prop_assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn jsonl_round_trip_preserves_bags(
        raw in prop::collection::vec((finite_vec(3), any::<bool>()), 1..5),
        year in 1990i32..2030,
    ) {
        let bags: Vec<Bag> = raw
            .iter()
            .enumerate()
            .map(|(i, (features, labeled))| Bag {
                bag_id: format!("bag-{i}"),
                year,
                label: labeled.then_some(features[0] * 1.7),
                instances: vec![features.clone(), features.iter().map(|v| v + 0.1).collect()],
                anomaly_flags: Some(vec![false, true]),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bags.jsonl");
        vaemir::dataset::write_bags(&path, &bags).unwrap();
        let back: Vec<Bag> = vaemir::dataset::read_bags(&path).unwrap();
        prop_assert_eq!(bags.len(), back.len());
        for (a, b) in bags.iter().zip(&back) {
            prop_assert_eq!(&a.bag_id, &b.bag_id);
            prop_assert_eq!(a.year, b.year);
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(&a.instances, &b.instances);
            prop_assert_eq!(&a.anomaly_flags, &b.anomaly_flags);
        }
    }
}
