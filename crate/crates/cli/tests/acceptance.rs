//! Acceptance criteria 1–11, one PASS/FAIL line each.
//!
//! `cargo test -p clwb --test acceptance` runs all of them; trailing numeric
//! arguments (`-- 6 7`) select a subset.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use clwb::checkpoint::{self, Checkpoint};
use clwb::config::{ComposeConfig, ExperimentConfig, RouteKind, ScorerKind, TpVariant};
use clwb::pipeline::{self, Route};
use clwb_core::backbones::{hat_objective, Isolation, MaskedNet};
use clwb_core::composer::{calibration_loss, predict_composed_sharpened, predict_concat_argmax, CalibrationParams, CalibrationSample};
use clwb_core::metrics::{auc_pairwise, auc_rank_sum, spearman, ScoredPopulation};
use clwb_core::numkit::{derive_seed, grad_check, seeded_rng, softmax_cross_entropy, Rng};
use clwb_core::oodlab::{sup_con_loss_from_features, HeadLayout, OdinParams, Scorer};
use clwb_core::theory::suites::{run_suite, Suite, SuiteConfig};
use clwb_core::TaskTopology;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text, &configs_dir()).expect("fixture config is valid");
    cfg.out = out.to_path_buf();
    cfg
}

fn gaussian_config(backbone: &str, seed: u64, tasks: usize, separation: f64) -> String {
    format!(
        r#"
seed = {seed}
[dataset]
kind = "gaussian"
tasks = {tasks}
classes_per_task = 2
dim = 4
separation = {separation}
train_per_class = 60
test_per_class = 40
[backbone]
{backbone}
[train]
epochs = 15
lr = 0.05
batch = 16
validation_fraction = 0.0
"#
    )
}

fn image_config(seed: u64, loss: &str) -> String {
    format!(
        r#"
seed = {seed}
[dataset]
kind = "images"
tasks = 2
classes_per_task = 2
side = 10
train_per_class = 80
test_per_class = 40
noise = 0.1
[backbone]
kind = "hat"
hidden = [64, 64]
[train]
loss = "{loss}"
epochs = 15
lr = 0.05
batch = 16
flip = false
validation_fraction = 0.0
"#
    )
}

/// Digits 0–3 as two tasks, 400 training images per class, pooled to 14×14.
fn mnist_subset_config(seed: u64, loss: &str) -> String {
    format!(
        r#"
seed = {seed}
[dataset]
kind = "idx"
train_images = "../data/mnist-10k/train-images-idx3-ubyte.gz"
train_labels = "../data/mnist-10k/train-labels-idx1-ubyte.gz"
test_images = "../data/mnist-10k/t10k-images-idx3-ubyte.gz"
test_labels = "../data/mnist-10k/t10k-labels-idx1-ubyte.gz"
classes_per_task = 2
tasks = 2
per_class = 400
downsample = true
[backbone]
kind = "hat"
hidden = [200, 200]
lambdas = [0.1, 0.05]
[train]
loss = "{loss}"
epochs = 20
lr = 0.05
batch = 32
flip = false
validation_fraction = 0.0
"#
    )
}

// ------------------------------------------------------------------ 1, 2

fn c1_identity() -> Outcome {
    let t0 = Instant::now();
    let o = run_suite(Suite::Identity, SuiteConfig { trials: 10_000, seed: 1, inject_fault: false });
    let secs = t0.elapsed().as_secs_f64();
    outcome(o.ok() && secs < 1.0, format!("{}/{} instances with |H_CIL − H_WP − H_TP| < 1e-9, {secs:.2} s (< 1 s)", o.passed, o.trials))
}

fn c2_bound_suites() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for s in Suite::ALL.into_iter().filter(|s| *s != Suite::Identity) {
        let o = run_suite(s, SuiteConfig { trials: 10_000, seed: 2, inject_fault: false });
        ok &= o.ok();
        parts.push(match &o.counterexample {
            None => format!("{s} {}/{}", o.passed, o.trials),
            Some(c) => format!("{s} counterexample at trial {} (seed {})", c.trial, c.trial_seed),
        });
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(ok && secs < 30.0, format!("{}; {secs:.1} s (< 30 s)", parts.join(", ")))
}

// ------------------------------------------------------------------ 3

const CONFIGS: usize = 100;

fn worst(reports: impl IntoIterator<Item = (bool, f64)>) -> (usize, f64) {
    reports.into_iter().fold((0, 0.0), |(n, m), (ok, e)| (n + usize::from(ok), f64::max(m, e)))
}

fn c3_gradients() -> Outcome {
    let mut rng = seeded_rng(3);
    let h = 1e-6;
    let tol = 1e-4;

    let ce = worst((0..CONFIGS).map(|_| {
        let n = rng.gen_range(2..10);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let t = rng.gen_range(0..n);
        let r = grad_check(|p| softmax_cross_entropy(p, t).unwrap(), &z, h, tol);
        (r.passed(), r.max_rel_error)
    }));

    let hat = worst((0..CONFIGS as u64).map(|trial| hat_config(trial, h, tol)));

    let supcon = worst((0..CONFIGS).map(|_| {
        let (n, d) = (rng.gen_range(4..9), rng.gen_range(2..6));
        let tau = rng.gen_range(0.1..1.5);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let u: Vec<f64> = (0..n * d).map(|_| rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let r = grad_check(
            |p| {
                let feats: Vec<Vec<f64>> = p.chunks(d).map(<[f64]>::to_vec).collect();
                let (l, g) = sup_con_loss_from_features(&feats, &labels, tau).unwrap();
                (l, g.concat())
            },
            &u,
            h,
            tol,
        );
        (r.passed(), r.max_rel_error)
    }));

    let cal = worst((0..CONFIGS).map(|_| {
        let t = rng.gen_range(2..5);
        let m = rng.gen_range(2..4);
        let samples: Vec<CalibrationSample> = (0..rng.gen_range(3..12))
            .map(|_| CalibrationSample {
                logits: (0..t).map(|_| (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect(),
                class: rng.gen_range(0..t * m),
            })
            .collect();
        let p0: Vec<f64> = (0..2 * t).map(|i| if i < t { rng.gen_range(0.3..2.0) } else { rng.gen_range(-1.0..1.0) }).collect();
        let r = grad_check(
            |p| {
                let params = CalibrationParams { alpha: p[..t].to_vec(), beta: p[t..].to_vec() };
                let (l, mut ga, gb) = calibration_loss(&samples, &params).unwrap();
                ga.extend(gb);
                (l, ga)
            },
            &p0,
            h,
            tol,
        );
        (r.passed(), r.max_rel_error)
    }));

    let all = [("softmax-CE", ce), ("HAT objective", hat), ("supervised contrastive", supcon), ("calibration CE", cal)];
    let pass = all.iter().all(|(_, (n, _))| *n == CONFIGS);
    let detail = all.iter().map(|(name, (n, e))| format!("{name} {n}/{CONFIGS} (max {e:.1e})")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("{detail}; tolerance 1e-4"))
}

/// Two-task HAT net whose first task left fractional accumulated attention, so every
/// regularizer and masking term is active.
fn hat_config(trial: u64, h: f64, tol: f64) -> (bool, f64) {
    let mut rng = seeded_rng(derive_seed(33, trial));
    let input = rng.gen_range(2..5);
    let hidden = [rng.gen_range(3..7), rng.gen_range(3..6)];
    let lambda = rng.gen_range(0.1..1.0);
    let mut net = MaskedNet::hat(input, &hidden, HeadLayout::Plain, 400.0, vec![lambda], false, &mut rng).unwrap();
    for l in net.trunk.layers_mut() {
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(0.1..0.5));
    }
    net.begin_task(0, 2, &mut rng).unwrap();
    if let Isolation::Hat(hs) = &mut net.isolation {
        hs.embeddings[0].iter_mut().flatten().for_each(|e| *e *= 0.004);
        hs.finish_task(0);
    }
    net.finished = 1;
    let classes = rng.gen_range(2..5);
    net.begin_task(1, classes, &mut rng).unwrap();
    let n = rng.gen_range(2..6);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let s = rng.gen_range(0.5..4.0);

    let pack = |net: &MaskedNet| {
        let Isolation::Hat(hs) = &net.isolation else { unreachable!() };
        let mut p = net.trunk.params();
        p.extend(net.heads[1].params());
        p.extend(hs.embeddings[1].iter().flatten());
        p
    };
    let unpack = |net: &mut MaskedNet, p: &[f64]| {
        let nt = net.trunk.param_count();
        let nh = net.heads[1].param_count();
        net.trunk.set_params(&p[..nt]).unwrap();
        net.heads[1].set_params(&p[nt..nt + nh]).unwrap();
        let Isolation::Hat(hs) = &mut net.isolation else { unreachable!() };
        let mut rest = &p[nt + nh..];
        for e in &mut hs.embeddings[1] {
            let (a, b) = rest.split_at(e.len());
            e.copy_from_slice(a);
            rest = b;
        }
    };
    let p0 = pack(&net);
    let r = grad_check(
        |p| {
            let mut m = net.clone();
            unpack(&mut m, p);
            let o = hat_objective(&m, 1, &xs, &ys, s).unwrap();
            let mut g = o.trunk.flat_params();
            g.extend(o.head.flat_params());
            g.extend(o.embeddings.concat());
            (o.loss, g)
        },
        &p0,
        h,
        tol,
    );
    (r.passed(), r.max_rel_error)
}

// ------------------------------------------------------------------ 4

fn per_task_logits(ck: &Checkpoint, task: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = ck.net.freeze().unwrap();
    xs.iter().map(|x| clwb_core::oodlab::HeadModel::logits(&m, x, task).unwrap()).collect()
}

fn c4_no_forgetting() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, backbone) in [("sup", "kind = \"sup\"\nhidden = [32, 32]"), ("hat", "kind = \"hat\"\nhidden = [32, 32]")] {
        let out = dir.path().join(name);
        let cfg = config(&gaussian_config(backbone, 4, 5, 4.0), &out);
        let trained = pipeline::cmd_train(&cfg).unwrap();
        let seq = pipeline::load_sequence(&cfg).unwrap();
        let last = checkpoint::load(&trained.final_checkpoint).unwrap();
        let mut identical = true;
        let mut drift: f64 = 0.0;
        for k in 0..5 {
            let at_finish = checkpoint::load(&trained.task_checkpoints[k]).unwrap();
            let xs = &seq.tasks[k].test.x;
            let (a, b) = (per_task_logits(&at_finish, k, xs), per_task_logits(&last, k, xs));
            for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
                identical &= u.to_bits() == v.to_bits();
                drift = drift.max((u - v).abs());
            }
        }
        let report = pipeline::cmd_eval(&cfg, &trained.final_checkpoint, Some(ScorerKind::Msp), Some(RouteKind::ConcatArgmax)).unwrap().0;
        let f = report.forgetting.last().map(|p| p.rate);
        match name {
            "sup" => {
                pass &= identical && f == Some(0.0);
                parts.push(format!("Sup logits bit-identical: {identical}, F^5 = {}", f.map_or("-".into(), |v| v.to_string())));
            }
            _ => {
                pass &= drift < 1e-6;
                parts.push(format!("HAT max logit drift {drift:.1e} (< 1e-6), F^5 = {}", f.map_or("-".into(), |v| format!("{v:.2}"))));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

// ------------------------------------------------------------------ 5

fn c5_auc() -> Outcome {
    let mut rng = seeded_rng(5);
    let mut worst_gap: f64 = 0.0;
    for i in 0..200 {
        let (n1, n2) = (rng.gen_range(1..=500), rng.gen_range(1..=500));
        // Every other population draws from a small grid so tied scores are common.
        let draw = |rng: &mut Rng| if i % 2 == 0 { rng.gen::<f64>() } else { rng.gen_range(0..12) as f64 / 4.0 };
        let ind = (0..n1).map(|_| draw(&mut rng) + 0.2).collect();
        let ood = (0..n2).map(|_| draw(&mut rng)).collect();
        let pop = ScoredPopulation::new(ind, ood).unwrap();
        worst_gap = worst_gap.max((auc_rank_sum(&pop) - auc_pairwise(&pop)).abs());
    }
    let ex = |ind: Vec<f64>, ood: Vec<f64>| {
        let p = ScoredPopulation::new(ind, ood).unwrap();
        (auc_rank_sum(&p), auc_pairwise(&p))
    };
    let a = ex(vec![0.9, 0.4], vec![0.5, 0.1]);
    let b = ex(vec![0.5], vec![0.5]);
    let pass = worst_gap <= 1e-12 && a == (0.75, 0.75) && b == (0.5, 0.5);
    outcome(pass, format!("200 populations, max |rank-sum − pairwise| = {worst_gap:.1e}; examples {} and {}", a.0, b.0))
}

// ------------------------------------------------------------------ 6

fn c6_mnist() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&configs_dir().join("m5t-hat.toml")).unwrap();
    cfg.out = dir.path().to_path_buf();
    let t0 = Instant::now();
    let trained = pipeline::cmd_train(&cfg).unwrap();
    let (r, _) = pipeline::cmd_eval(&cfg, &trained.final_checkpoint, None, Some(RouteKind::ConcatArgmax)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let reg_ok = trained.log.tasks.iter().all(|t| t.lambda.is_some_and(|l| t.trace.epoch_reg.iter().all(|&r| r <= l)));
    let pass = r.til >= 98.0 && r.cil >= 70.0 && secs < 600.0 && r.test_samples > 0;
    outcome(
        pass,
        format!(
            "{} tasks, {} test images, scorer {}: TIL {:.1} (≥ 98.0), CIL {:.1} (≥ 70.0), L_r ≤ λ_k every epoch: {reg_ok}, {secs:.0} s (< 600 s)",
            r.til_per_task.len(),
            r.test_samples,
            r.scorer,
            r.til,
            r.cil
        ),
    )
}

// ------------------------------------------------------------------ 7

fn c7_auc_cil_monotone() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let cfg = config(&image_config(7, "rotation-ce").replace("tasks = 2", "tasks = 4"), dir.path());
    let trained = pipeline::cmd_train(&cfg).unwrap();
    let ck = checkpoint::load(&trained.final_checkpoint).unwrap();
    let model = ck.net.freeze().unwrap();
    let seq = pipeline::load_sequence(&cfg).unwrap();
    let samples = pipeline::test_samples(&seq, seq.tasks.len());
    let t = seq.tasks.len();
    let scorers = [
        Scorer::Msp,
        Scorer::RotationEnsemble,
        Scorer::Odin(OdinParams::uniform(t, 1.0, 0.0).unwrap()),
        Scorer::Odin(OdinParams::uniform(t, 10.0, 0.0014).unwrap()),
        Scorer::Odin(OdinParams::uniform(t, 1000.0, 0.0014).unwrap()),
        Scorer::Odin(OdinParams::uniform(t, 1000.0, 0.02).unwrap()),
    ];
    let entropy = ComposeConfig { tp: TpVariant::SigmoidMaxlogit, nu: 1.0, tau: 1.0 };
    let (mut aucs, mut cils, mut parts) = (Vec::new(), Vec::new(), Vec::new());
    for s in &scorers {
        let evals = pipeline::evaluate_samples(&model, &samples, s).unwrap();
        let m = pipeline::summarize(&evals, &ck.topology, &Route::ConcatArgmax, &entropy).unwrap();
        let label = match s {
            Scorer::Odin(p) => format!("odin(τ={},ε={})", p.tau[0], p.eps[0]),
            other => other.name().to_string(),
        };
        parts.push(format!("{label} {:.1}/{:.1}", 100.0 * m.avg_auc, m.cil));
        aucs.push(m.avg_auc);
        cils.push(m.cil);
    }
    let rho = spearman(&aucs, &cils).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pass = rho.is_some_and(|r| r > 0.0) && secs < 300.0;
    outcome(
        pass,
        format!(
            "AUC/CIL {}; Spearman {}, {secs:.0} s (< 300 s)",
            parts.join(", "),
            rho.map_or("undefined".into(), |r| format!("{r:.3}"))
        ),
    )
}

// ------------------------------------------------------------------ 8

fn c8_rotation_ensemble() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=5u64 {
        let plain = config(&mnist_subset_config(seed, "ce"), &dir.path().join(format!("ce-{seed}")));
        let rot = config(&mnist_subset_config(seed, "rotation-ce"), &dir.path().join(format!("rot-{seed}")));
        let a = pipeline::cmd_train(&plain).unwrap();
        let b = pipeline::cmd_train(&rot).unwrap();
        let ra = pipeline::cmd_eval(&plain, &a.final_checkpoint, Some(ScorerKind::Msp), Some(RouteKind::ConcatArgmax)).unwrap().0;
        let rb = pipeline::cmd_eval(&rot, &b.final_checkpoint, Some(ScorerKind::RotationEnsemble), Some(RouteKind::ConcatArgmax))
            .unwrap()
            .0;
        let ok = rb.avg_auc >= ra.avg_auc && rb.cil >= ra.cil - 0.5;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: AUC {:.1}→{:.1}, CIL {:.1}→{:.1}{}",
            100.0 * ra.avg_auc,
            100.0 * rb.avg_auc,
            ra.cil,
            rb.cil,
            if ok { "" } else { " ✗" }
        ));
    }
    outcome(pass, format!("2-task MNIST subset, MSP(CE) → ensemble(rotation-CE): {}", parts.join("; ")))
}

// ------------------------------------------------------------------ 9

fn c9_calibration() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&gaussian_config("kind = \"hat\"\nhidden = [32, 32]", 9, 3, 4.0), &dir.path().join("balanced"));
    let trained = pipeline::cmd_train(&cfg).unwrap();
    let (balanced, _) = pipeline::cmd_calibrate(&cfg, &trained.final_checkpoint, Some(ScorerKind::Msp)).unwrap();

    // Same network with the first head's logits inflated sixfold.
    let mut ck = checkpoint::load(&trained.final_checkpoint).unwrap();
    let last = ck.net.heads[0].layers_mut().last_mut().unwrap();
    last.weight.as_mut_slice().iter_mut().for_each(|w| *w *= 6.0);
    last.bias.iter_mut().for_each(|b| *b *= 6.0);
    let skew_dir = dir.path().join("skewed");
    std::fs::create_dir_all(&skew_dir).unwrap();
    let skew_ck = pipeline::final_checkpoint_path(&skew_dir);
    checkpoint::save(&skew_ck, &ck).unwrap();
    let mut skew_cfg = cfg.clone();
    skew_cfg.out = skew_dir;
    let (skewed, _) = pipeline::cmd_calibrate(&skew_cfg, &skew_ck, Some(ScorerKind::Msp)).unwrap();

    let pass = skewed.delta_cil > 0.0 && balanced.delta_cil >= -0.5;
    outcome(
        pass,
        format!(
            "skewed heads CIL {:.1}→{:.1} (Δ {:+.1} > 0); balanced heads CIL {:.1}→{:.1} (Δ {:+.1} ≥ −0.5)",
            skewed.cil_before, skewed.cil_after, skewed.delta_cil, balanced.cil_before, balanced.cil_after, balanced.delta_cil
        ),
    )
}

// ------------------------------------------------------------------ 10

fn c10_composer() -> Outcome {
    let mut rng = seeded_rng(10);
    let route = Route::Compose(ComposeConfig { tp: TpVariant::SigmoidMaxlogitSharpened, nu: 1.0, tau: 1e-9 });
    let (mut draws, mut agree, mut agree_route) = (0, 0, 0);
    while draws < 1000 {
        let widths = [rng.gen_range(1..6), rng.gen_range(1..6)];
        let logits: Vec<Vec<f64>> = widths
            .iter()
            .map(|&w| (0..w).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 3.0 * z }).collect::<Vec<f64>>())
            .collect();
        let m: Vec<f64> = logits.iter().map(|f| f.iter().copied().fold(f64::MIN, f64::max)).collect();
        if m[0] == m[1] {
            continue;
        }
        draws += 1;
        let topo = TaskTopology::new(widths.to_vec()).unwrap();
        let want = predict_concat_argmax(&logits).unwrap();
        agree += usize::from(predict_composed_sharpened(&logits, 1e-9).unwrap() == want);
        agree_route += usize::from(route.predict(&logits, &topo).unwrap() == want);
    }
    outcome(
        agree == draws && agree_route == draws,
        format!("{agree}/{draws} composer, {agree_route}/{draws} compose route agree with concat-argmax"),
    )
}

// ------------------------------------------------------------------ 11

fn c11_checkpoint() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&gaussian_config("kind = \"hat\"\nhidden = [16, 16]", 11, 3, 4.0), dir.path());
    let trained = pipeline::cmd_train(&cfg).unwrap();
    let bytes = std::fs::read(&trained.final_checkpoint).unwrap();
    let original = checkpoint::load(&trained.final_checkpoint).unwrap();
    let reloaded = checkpoint::decode(&checkpoint::encode(&original)).unwrap();
    let (a, b) = (original.net.freeze().unwrap(), reloaded.net.freeze().unwrap());
    let mut rng = seeded_rng(11);
    let mut equal = 0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let task = rng.gen_range(0..3);
        let same = clwb_core::oodlab::HeadModel::logits(&a, &x, task)
            .unwrap()
            .iter()
            .zip(&clwb_core::oodlab::HeadModel::logits(&b, &x, task).unwrap())
            .all(|(u, v)| u.to_bits() == v.to_bits());
        equal += usize::from(same);
    }
    let mut detected = 0;
    for _ in 0..100 {
        let mut damaged = bytes.clone();
        let at = rng.gen_range(0..damaged.len());
        damaged[at] ^= rng.gen_range(1..=255u8);
        detected += usize::from(checkpoint::decode(&damaged).is_err());
    }
    outcome(
        equal == 100 && detected == 100,
        format!("{equal}/100 inputs bit-identical after round-trip, {detected}/100 single-byte flips rejected ({} byte file)", bytes.len()),
    )
}

// ------------------------------------------------------------------

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    (1, "decomposition identity", c1_identity),
    (2, "bound fuzz suites", c2_bound_suites),
    (3, "gradient checks", c3_gradients),
    (4, "no-forgetting invariant", c4_no_forgetting),
    (5, "AUC oracle equivalence", c5_auc),
    (6, "MNIST 5-task HAT", c6_mnist),
    (7, "AUC/CIL monotonicity", c7_auc_cil_monotone),
    (8, "rotation ensemble", c8_rotation_ensemble),
    (9, "calibration direction", c9_calibration),
    (10, "composer cross-check", c10_composer),
    (11, "checkpoint persistence", c11_checkpoint),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} {name}: {} [{:.1} s]", o.detail, t0.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
