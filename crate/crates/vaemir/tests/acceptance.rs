//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values. Run with `--nocapture` to see the lines.

mod common;

use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::SeedableRng;
use vaemir::eval::{
    build_splits, check_no_leakage, r2, rmse, roc_auc, run_experiment, sweep_k, ExperimentConfig,
};
use vaemir::mir::{mean_prototype, score_bag, vaemir_fit, vaemir_predict, vaemir_prototype, Method};
use vaemir::nn::{Activation, Rng};
use vaemir::regressor::{fit, RegressorTrainConfig};
use vaemir::synth::{generate, SynthConfig};
use vaemir::vae::{latent_loss, per_sample_grads, recon_loss, train_vae, VaeTrainConfig};
use vaemir::{Bag, GroundTruth, Network, Scalar, VaeModel};

use common::{numeric_network_gradient, rel_error, vae_loss_forward};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Shared corpus: D=16, N=100, 100 bags/year over 4 years, p=0.2, alpha=0.6.
fn corpus() -> &'static (Vec<Bag>, GroundTruth) {
    static DATA: OnceLock<(Vec<Bag>, GroundTruth)> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = SynthConfig {
            n_bags_per_year: 100,
            year_start: 2008,
            year_end: 2011,
            instances_per_bag: 100,
            feature_dim: 16,
            contamination_rate: 0.2,
            mixing_fraction: 0.6,
            seed: 1,
            ..SynthConfig::default()
        };
        generate(&cfg).unwrap()
    })
}

fn all_instances(bags: &[Bag]) -> Vec<Vec<f64>> {
    bags.iter().flat_map(|b| b.instances.iter().cloned()).collect()
}

fn eval_config() -> ExperimentConfig {
    ExperimentConfig {
        vae: VaeTrainConfig {
            epochs: 8,
            ..VaeTrainConfig::default()
        },
        regressor: RegressorTrainConfig {
            epochs: 150,
            ..RegressorTrainConfig::default()
        },
        instance_epochs: Some(6),
        prime_max_iters: 3,
        ..ExperimentConfig::default()
    }
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(41);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n_layers = rand::Rng::random_range(&mut rng, 1..=3usize);
        let dims: Vec<usize> = (0..=n_layers)
            .map(|_| rand::Rng::random_range(&mut rng, 2..=8usize))
            .collect();
        let acts: Vec<Activation> = (0..n_layers)
            .map(|i| if i + 1 == n_layers { Activation::Identity } else { Activation::Relu })
            .collect();
        let net = Network::init(&dims, &acts, &mut rng).unwrap();
        // Skip inputs whose ReLU pre-activations sit at the kink, where the
        // finite difference itself is invalid.
        let x = loop {
            let x: Vec<f64> =
                (0..dims[0]).map(|_| f64::sample_uniform(&mut rng, -1.0, 1.0)).collect();
            if common::away_from_relu_kinks(&net, &x) {
                break x;
            }
        };
        let trace = net.forward_trace(&x).unwrap();
        let upstream: Vec<f64> = trace.output().iter().map(|v| 2.0 * v).collect();
        let analytic = net.backward(&trace, &upstream).unwrap().flat();
        let numeric =
            numeric_network_gradient(&net, |n| n.forward(&x).unwrap().iter().map(|v| v * v).sum());
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_error(*a, *n));
        }
    }

    // Full VAE per-sample loss over both networks.
    let mut rng = Rng::seed_from_u64(42);
    let model = VaeModel {
        latent_dim: 3,
        feature_mean: vec![0.0; 6],
        feature_std: vec![1.0; 6],
        encoder: Network::init(&[6, 8, 6], &[Activation::Relu, Activation::Identity], &mut rng)
            .unwrap(),
        decoder: Network::init(&[3, 8, 6], &[Activation::Relu, Activation::Identity], &mut rng)
            .unwrap(),
    };
    let (x, eps) = loop {
        let x: Vec<f64> = (0..6).map(|_| f64::sample_uniform(&mut rng, -1.0, 1.0)).collect();
        let eps: Vec<f64> = (0..3).map(|_| f64::sample_standard_normal(&mut rng)).collect();
        let head = model.encoder.forward(&x).unwrap();
        let z: Vec<f64> = (0..3)
            .map(|i| head[i] + eps[i] * (head[3 + i] / 2.0).exp())
            .collect();
        if common::away_from_relu_kinks(&model.encoder, &x)
            && common::away_from_relu_kinks(&model.decoder, &z)
        {
            break (x, eps);
        }
    };
    let (_, enc_grads, dec_grads) = per_sample_grads(&model, &x, &eps).unwrap();
    let enc_numeric = numeric_network_gradient(&model.encoder, |enc| {
        vae_loss_forward(&VaeModel { encoder: enc.clone(), ..model.clone() }, &x, &eps)
    });
    let dec_numeric = numeric_network_gradient(&model.decoder, |dec| {
        vae_loss_forward(&VaeModel { decoder: dec.clone(), ..model.clone() }, &x, &eps)
    });
    for (a, n) in enc_grads.flat().iter().zip(&enc_numeric) {
        worst = worst.max(rel_error(*a, *n));
    }
    for (a, n) in dec_grads.flat().iter().zip(&dec_numeric) {
        worst = worst.max(rel_error(*a, *n));
    }

    let elapsed = start.elapsed();
    assert!(worst < 1e-4, "criterion 1: FAIL, max relative error {worst}");
    assert!(elapsed.as_secs() < 30, "criterion 1: FAIL, took {elapsed:?}");
    println!("criterion 1: PASS (max relative error {worst:.2e}, {elapsed:.2?})");
}

#[test]
fn criterion_02_loss_identities() {
    let zero = latent_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    assert_eq!(zero, 0.0, "criterion 2: FAIL, latent_loss(0,1) = {zero}");
    let half: f64 = latent_loss(&[1.0], &[1.0]).unwrap();
    assert!((half - 0.5).abs() <= 1e-12, "criterion 2: FAIL, latent_loss([1],[1]) = {half}");
    let five: f64 = recon_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
    assert!((five - 5.0).abs() <= 1e-12, "criterion 2: FAIL, recon_loss = {five}");
    println!("criterion 2: PASS (latent 0 exact, 0.5 and 5.0 within 1e-12)");
}

#[test]
fn criterion_03_k_equals_n_degrades_to_mean_regression() {
    let (bags, _) = corpus();
    let train: Vec<Bag> = bags.iter().filter(|b| b.year <= 2009).cloned().collect();
    let vae_cfg = VaeTrainConfig { epochs: 1, seed: 5, ..VaeTrainConfig::default() };
    let (vae, _) = train_vae(&all_instances(&train), &vae_cfg).unwrap();

    let reg_cfg = RegressorTrainConfig { epochs: 40, seed: 7, ..RegressorTrainConfig::default() };
    let k = 100;
    let vaemir_model = vaemir_fit(&train, &vae, k, &reg_cfg).unwrap();
    let mean_pairs: Vec<(Vec<f64>, f64)> = train
        .iter()
        .map(|b| (mean_prototype(b).unwrap().vector, b.label.unwrap()))
        .collect();
    let mean_model = fit(&mean_pairs, &reg_cfg).unwrap();

    for bag in bags.iter() {
        let v = vaemir_predict(&vaemir_model, &vae, bag, k).unwrap();
        let m = mean_model.predict(&mean_prototype(bag).unwrap().vector).unwrap();
        assert_eq!(
            v.to_bits(),
            m.to_bits(),
            "criterion 3: FAIL, bag {} predicts {v} vs {m}",
            bag.bag_id
        );
    }
    println!("criterion 3: PASS (k=N predictions bit-identical to mean regression, {} bags)", bags.len());
}

#[test]
fn criterion_04_k_equals_1_selects_min_score_instance() {
    let (bags, _) = corpus();
    let train: Vec<Bag> = bags.iter().filter(|b| b.year == 2008).cloned().collect();
    let vae_cfg = VaeTrainConfig { epochs: 1, seed: 3, ..VaeTrainConfig::default() };
    let (vae, _) = train_vae(&all_instances(&train), &vae_cfg).unwrap();

    for bag in bags.iter() {
        let scores = score_bag(&vae, bag).unwrap();
        let proto = vaemir_prototype(bag, &scores, 1).unwrap();
        let argmin = scores
            .iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ia.cmp(ib)))
            .unwrap()
            .0;
        assert_eq!(
            proto.vector, bag.instances[argmin],
            "criterion 4: FAIL, bag {} prototype is not instance {argmin}",
            bag.bag_id
        );
    }
    println!("criterion 4: PASS (k=1 prototype equals the min-score instance, {} bags)", bags.len());
}

#[test]
fn criterion_05_vae_detects_contamination() {
    let start = Instant::now();
    let (bags, _) = corpus();
    let cfg = VaeTrainConfig { epochs: 10, seed: 1, ..VaeTrainConfig::default() };
    let (vae, _) = train_vae(&all_instances(bags), &cfg).unwrap();

    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for bag in bags {
        scores.extend(score_bag(&vae, bag).unwrap());
        flags.extend(bag.anomaly_flags.clone().unwrap());
    }
    let auc = roc_auc(&scores, &flags).unwrap();
    let elapsed = start.elapsed();
    assert!(auc > 0.9, "criterion 5: FAIL, roc_auc = {auc}");
    assert!(elapsed.as_secs() < 300, "criterion 5: FAIL, took {elapsed:?}");
    println!("criterion 5: PASS (roc_auc {auc:.4}, {elapsed:.2?})");
}

#[test]
fn criterion_06_vaemir_beats_mean_and_prime() {
    let (bags, _) = corpus();
    let years: Vec<i32> = bags.iter().map(|b| b.year).collect();
    let plan = build_splits(&years, 2010).unwrap();
    let cfg = ExperimentConfig { k: Some(80), ..eval_config() };
    let methods = [Method::Mean, Method::Prime, Method::Vaemir];
    let report = run_experiment(bags, &methods, &plan, &SEEDS, &cfg).unwrap();

    let mean_rmse = |method: Method, seed: u64| -> f64 {
        let rows: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.method == method && r.seed == seed)
            .map(|r| r.rmse)
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    let mut wins = 0;
    for seed in SEEDS {
        let v = mean_rmse(Method::Vaemir, seed);
        let m = mean_rmse(Method::Mean, seed);
        let p = mean_rmse(Method::Prime, seed);
        if v < m && v < p {
            wins += 1;
        }
        println!("  seed {seed}: vaemir {v:.4}, mean {m:.4}, prime {p:.4}");
    }
    assert!(wins >= 4, "criterion 6: FAIL, vaemir wins {wins}/5 seeds");
    println!("criterion 6: PASS (vaemir lowest mean rmse in {wins}/5 seeds)");
}

#[test]
fn criterion_07_interior_k_optimum() {
    let (bags, _) = corpus();
    let years: Vec<i32> = bags.iter().map(|b| b.year).collect();
    let plan = build_splits(&years, 2011).unwrap();
    let k_values: Vec<usize> = std::iter::once(1).chain((10..=100).step_by(10)).collect();
    let sweep = sweep_k(bags, &plan, &k_values, &SEEDS, &eval_config()).unwrap();

    let mut interior = 0;
    let mut k1_best = 0;
    for seed in SEEDS {
        let best = sweep
            .rows
            .iter()
            .filter(|r| r.seed == seed)
            .max_by(|a, b| a.r2.partial_cmp(&b.r2).unwrap())
            .unwrap();
        println!("  seed {seed}: best k {} (r2 {:.4})", best.k, best.r2);
        if best.k > 1 && best.k < 100 {
            interior += 1;
        }
        if best.k == 1 {
            k1_best += 1;
        }
    }
    assert!(
        interior >= 4 && k1_best == 0,
        "criterion 7: FAIL, interior optimum in {interior}/5 seeds, k=1 best in {k1_best}"
    );
    println!("criterion 7: PASS (interior optimum in {interior}/5 seeds, k=1 never best)");
}

#[test]
fn criterion_08_metric_oracles() {
    let mut rng = Rng::seed_from_u64(88);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rand::Rng::random_range(&mut rng, 2..=32usize);
        let pred: Vec<f64> = (0..n).map(|_| f64::sample_uniform(&mut rng, -10.0, 10.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| f64::sample_uniform(&mut rng, -10.0, 10.0)).collect();

        let brute_rmse = (pred
            .iter()
            .zip(&truth)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        worst = worst.max((rmse::<f64>(&pred, &truth).unwrap() - brute_rmse).abs());

        let mean = truth.iter().sum::<f64>() / n as f64;
        let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
        let ss_res: f64 = pred.iter().zip(&truth).map(|(p, t)| (t - p) * (t - p)).sum();
        worst = worst.max((r2::<f64>(&pred, &truth).unwrap() - (1.0 - ss_res / ss_tot)).abs());

        assert_eq!(r2::<f64>(&truth, &truth).unwrap(), 1.0, "criterion 8: FAIL, r2(truth,truth)");
        let const_mean = vec![mean; n];
        assert_eq!(r2::<f64>(&const_mean, &truth).unwrap(), 0.0, "criterion 8: FAIL, r2(mean,truth)");
    }
    assert!(worst <= 1e-12, "criterion 8: FAIL, worst deviation {worst}");
    println!("criterion 8: PASS (1000 vectors, worst deviation {worst:.2e}, exact 1 and 0)");
}

#[test]
fn criterion_09_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_vaemir");
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    let runs: Vec<Vec<String>> = ["x", "y"]
        .iter()
        .map(|tag| {
            vec![
                format!("generate --bags-per-year 6 --years 2008:2010 --n 20 --dim 6 --seed 4 --out {}", p(&format!("{tag}.jsonl"))),
                format!("train-vae --data {} --out {} --epochs 3 --seed 2", p(&format!("{tag}.jsonl")), p(&format!("{tag}-vae.json"))),
                format!("score --data {} --model {} --out {}", p(&format!("{tag}.jsonl")), p(&format!("{tag}-vae.json")), p(&format!("{tag}-scores.csv"))),
                format!("eval --data {} --methods mean,vaemir --k 10 --first-test-year 2010 --repeats 2 --vae-epochs 2 --reg-epochs 5 --out {}", p(&format!("{tag}.jsonl")), p(&format!("{tag}-eval"))),
                format!("sweep-k --data {} --k-values 1,10,20 --first-test-year 2010 --repeats 2 --vae-epochs 2 --reg-epochs 5 --out {}", p(&format!("{tag}.jsonl")), p(&format!("{tag}-sweep.csv"))),
            ]
        })
        .collect();
    for cmds in &runs {
        for cmd in cmds {
            let args: Vec<&str> = cmd.split_whitespace().collect();
            let out = Command::new(bin).args(&args).output().unwrap();
            assert!(out.status.success(), "criterion 9: FAIL, {cmd} errored: {out:?}");
        }
    }
    for file in [
        ".jsonl",
        ".jsonl.truth.json",
        "-vae.json",
        "-scores.csv",
        "-eval.csv",
        "-eval.json",
        "-sweep.csv",
    ] {
        let x = std::fs::read(p(&format!("x{file}"))).unwrap();
        let y = std::fs::read(p(&format!("y{file}"))).unwrap();
        assert_eq!(x, y, "criterion 9: FAIL, rerun differs for {file}");
    }
    println!("criterion 9: PASS (all five subcommands byte-identical on rerun)");
}

#[test]
fn criterion_10_no_split_leakage() {
    let (bags, _) = corpus();
    let years: Vec<i32> = bags.iter().map(|b| b.year).collect();
    let plan = build_splits(&years, 2009).unwrap();
    check_no_leakage(&plan, bags).unwrap();

    for split in &plan.splits {
        let train_ids: std::collections::HashSet<&str> = bags
            .iter()
            .filter(|b| split.train_years.contains(&b.year))
            .map(|b| b.bag_id.as_str())
            .collect();
        for bag in bags.iter().filter(|b| b.year == split.test_year) {
            assert!(
                !train_ids.contains(bag.bag_id.as_str()),
                "criterion 10: FAIL, bag {} leaks into training for test year {}",
                bag.bag_id,
                split.test_year
            );
        }
        assert!(
            split.train_years.iter().all(|y| *y < split.test_year),
            "criterion 10: FAIL, train years {:?} not before {}",
            split.train_years,
            split.test_year
        );
    }
    println!("criterion 10: PASS ({} splits, no test bag_id in training)", plan.splits.len());
}
