//! The subcommand pipelines, callable without the binary.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use clwb_core::backbones::{train_task, FrozenNet, Isolation, LossSpec, MaskedNet, TrainSpec, TrainTrace};
use clwb_core::composer::{
    calibrated_logits, compose_full, fit_calibration, predict_concat_argmax, tp_maxsoftmax_temperature,
    tp_sigmoid_maxlogit, tp_sigmoid_maxlogit_sharpened, wp_temperature, CalibrationFit, CalibrationOptions,
    CalibrationParams, CalibrationSample, MemoryBuffer,
};
use clwb_core::data::{
    load_idx_pair, split_tasks, synth_gaussian_tasks, synth_image_tasks, validation_split, GaussianSpec, ImageSpec,
    Samples, TaskSequence,
};
use clwb_core::metrics::{auc, avg_auc, cil_accuracy, forgetting_rate, til_accuracy, AccuracyMatrix, ScoredPopulation};
use clwb_core::numkit::{argmax, clamped_ln, derive_seed, seeded_rng};
use clwb_core::oodlab::{odin_grid_search, task_output, Augment, HeadLayout, OdinGrid, OdinParams, Scorer};
use clwb_core::theory::suites::{run_suite, Suite, SuiteConfig, SuiteOutcome};
use clwb_core::theory::{entropy_report, Categorical, GroundTruth, Prediction};
use clwb_core::TaskTopology;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{
    BackboneConfig, ComposeConfig, DatasetConfig, ExperimentConfig, LossKind, RouteKind, ScorerKind, TpVariant,
};
use crate::report::{write_atomic, EntropySummary, ExperimentReport, ForgettingPoint, Versions};
use crate::{thread_pool, CliError};

// Stream ids for `derive_seed(config.seed, ·)`.
const DATA_STREAM: u64 = 0xDA7A;
const INIT_STREAM: u64 = 0x1417;
const TRAIN_STREAM: u64 = 0x7EA1;
const SPLIT_STREAM: u64 = 0x5A11;
const BUFFER_STREAM: u64 = 0xB0FF;

// ---------------------------------------------------------------- verify

/// Runs the selected suites; an outcome with a counterexample carries its replay seed.
pub fn cmd_verify(suites: &[Suite], seed: u64, trials: usize, inject_fault: bool) -> Result<Vec<SuiteOutcome>, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be ≥ 1".into()));
    }
    Ok(suites.iter().map(|&s| run_suite(s, SuiteConfig { trials, seed, inject_fault })).collect())
}

/// `all` or a comma-separated list of suite names.
pub fn parse_suites(sel: &str) -> Result<Vec<Suite>, CliError> {
    if sel == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    sel.split(',')
        .map(|n| {
            Suite::from_name(n.trim()).ok_or_else(|| {
                let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                CliError::Usage(format!("unknown suite `{n}` (all | {})", names.join(" | ")))
            })
        })
        .collect()
}

// ---------------------------------------------------------------- data

/// The task sequence used for training (validation samples removed) and the held-out
/// validation inputs per task.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seq: TaskSequence,
    pub validation: Vec<Samples>,
}

pub fn load_sequence(cfg: &ExperimentConfig) -> Result<TaskSequence, CliError> {
    let seed = derive_seed(cfg.seed, DATA_STREAM);
    Ok(match &cfg.dataset {
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes_per_task,
            tasks,
            per_class,
            downsample,
            shuffle_classes,
        } => {
            let mut train = load_idx_pair(train_images, train_labels, None)?;
            let mut test = load_idx_pair(test_images, test_labels, Some(train.class_count()))?;
            if let Some(n) = per_class {
                train = train.take_per_class(*n);
                test = test.take_per_class((n / 4).max(1));
            }
            if *downsample {
                train = train.downsample2();
                test = test.downsample2();
            }
            let mut seq = split_tasks(&train, &test, *classes_per_task, *shuffle_classes)?;
            if let Some(t) = tasks {
                if *t > seq.tasks.len() {
                    return Err(CliError::Usage(format!("dataset.tasks: only {} tasks available", seq.tasks.len())));
                }
                seq.tasks.truncate(*t);
                seq.topology = TaskTopology::uniform(*t, *classes_per_task)?;
            }
            seq
        }
        DatasetConfig::Gaussian { tasks, classes_per_task, dim, separation, train_per_class, test_per_class } => {
            synth_gaussian_tasks(&GaussianSpec {
                tasks: *tasks,
                classes_per_task: *classes_per_task,
                dim: *dim,
                separation: *separation,
                train_per_class: *train_per_class,
                test_per_class: *test_per_class,
                seed,
            })?
        }
        DatasetConfig::Images { tasks, classes_per_task, side, train_per_class, test_per_class, noise } => {
            synth_image_tasks(&ImageSpec {
                tasks: *tasks,
                classes_per_task: *classes_per_task,
                side: *side,
                train_per_class: *train_per_class,
                test_per_class: *test_per_class,
                noise: *noise,
                seed,
            })?
        }
    })
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let mut seq = load_sequence(cfg)?;
    let f = cfg.train.validation_fraction;
    let mut validation = Vec::with_capacity(seq.tasks.len());
    for (k, task) in seq.tasks.iter_mut().enumerate() {
        if f > 0.0 {
            let (train, val) = validation_split(&task.train, f, derive_seed(cfg.seed, SPLIT_STREAM + k as u64))?;
            task.train = train;
            validation.push(val);
        } else {
            validation.push(Samples::default());
        }
    }
    Ok(Prepared { seq, validation })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task: usize,
    /// `λ_k` for HAT runs.
    pub lambda: Option<f64>,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub versions: Versions,
    pub config: ExperimentConfig,
    pub tasks: Vec<TaskTrace>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub task_checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub trace: PathBuf,
    pub log: TrainLog,
}

pub fn task_checkpoint_path(out: &Path, task: usize) -> PathBuf {
    out.join(format!("task-{task}.clwb"))
}

pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("final.clwb")
}

pub fn new_network(cfg: &ExperimentConfig, seq: &TaskSequence) -> Result<MaskedNet, CliError> {
    let layout = match cfg.train.loss {
        LossKind::Ce => HeadLayout::Plain,
        _ => HeadLayout::Rotation {
            side: seq.image_side.ok_or_else(|| CliError::Usage("train.loss: rotation losses need square images".into()))?,
        },
    };
    let mut rng = seeded_rng(derive_seed(cfg.seed, INIT_STREAM));
    Ok(match &cfg.backbone {
        BackboneConfig::Hat { hidden, s_max, lambdas, snap } => {
            MaskedNet::hat(seq.input_width, hidden, layout, *s_max, lambdas.clone(), *snap, &mut rng)?
        }
        BackboneConfig::Sup { hidden, p } => MaskedNet::sup(seq.input_width, hidden, layout, *p, &mut rng)?,
    })
}

pub fn train_spec(cfg: &ExperimentConfig) -> TrainSpec {
    let t = &cfg.train;
    TrainSpec {
        loss: match t.loss {
            LossKind::Ce => LossSpec::Ce,
            LossKind::RotationCe => LossSpec::RotationCe,
            LossKind::ContrastiveRotationCe => {
                LossSpec::ContrastiveThenCe { tau: t.contrastive_tau, contrastive_epochs: t.contrastive_epochs }
            }
        },
        epochs: t.epochs,
        lr: t.lr,
        batch: t.batch,
        seed: derive_seed(cfg.seed, TRAIN_STREAM),
        augment: Augment { flip: t.flip, noise: t.noise },
    }
}

/// Trains every task in order, writing `task-k.clwb` after each and `final.clwb` at the end.
/// A failing task leaves the checkpoints of all earlier tasks in place.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let data = prepare_data(cfg)?;
    let mut net = new_network(cfg, &data.seq)?;
    let spec = train_spec(cfg);
    let mut log = TrainLog { versions: Versions::current(), config: cfg.clone(), tasks: Vec::new() };
    let mut task_checkpoints = Vec::new();
    let trace_path = cfg.out.join("trace.json");
    for (k, task) in data.seq.tasks.iter().enumerate() {
        let trace = train_task(&mut net, k, &task.train, data.seq.topology.class_count(k), &spec).map_err(|e| {
            let kept = if k == 0 { "no checkpoints written".to_string() } else { format!("checkpoints of tasks 0..{} retained", k - 1) };
            CliError::Run(format!("task {k} failed: {e}; {kept}"))
        })?;
        let lambda = match &net.isolation {
            Isolation::Hat(h) => Some(h.lambda(k)),
            Isolation::Sup(_) => None,
        };
        log.tasks.push(TaskTrace { task: k, lambda, trace });
        let ck = Checkpoint { net: net.clone(), topology: data.seq.topology.clone() };
        let p = task_checkpoint_path(&cfg.out, k);
        checkpoint::save(&p, &ck)?;
        task_checkpoints.push(p);
        write_atomic(&trace_path, (serde_json::to_string_pretty(&log).expect("trace serializes") + "\n").as_bytes())?;
    }
    let final_checkpoint = final_checkpoint_path(&cfg.out);
    checkpoint::save(&final_checkpoint, &Checkpoint { net, topology: data.seq.topology.clone() })?;
    Ok(TrainOutcome { task_checkpoints, final_checkpoint, trace: trace_path, log })
}

// ---------------------------------------------------------------- eval

/// What a single test input produced under every head.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub task: usize,
    pub class: usize,
    /// Per-task outputs in logit units (log-probabilities for ODIN).
    pub outputs: Vec<Vec<f64>>,
    /// Per-task membership scores.
    pub scores: Vec<f64>,
}

/// Scores every `(x, task, local class)` under every head.
pub fn evaluate_samples(
    model: &FrozenNet,
    samples: &[(&[f64], usize, usize)],
    scorer: &Scorer,
) -> Result<Vec<SampleEval>, CliError> {
    let pool = thread_pool()?;
    let t = clwb_core::oodlab::HeadModel::task_count(model);
    pool.install(|| {
        samples
            .par_iter()
            .map(|&(x, task, class)| {
                let mut outputs = Vec::with_capacity(t);
                let mut scores = Vec::with_capacity(t);
                for k in 0..t {
                    let o = task_output(model, model.layout(), x, k, scorer)?;
                    outputs.push(match scorer {
                        Scorer::Odin(_) => o.outputs.iter().map(|&p| clamped_ln(p)).collect(),
                        _ => o.outputs,
                    });
                    scores.push(o.score);
                }
                Ok(SampleEval { task, class, outputs, scores })
            })
            .collect::<Result<Vec<_>, clwb_core::oodlab::OodError>>()
            .map_err(CliError::from)
    })
}

/// How per-task outputs become one global class.
#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    ConcatArgmax,
    Compose(ComposeConfig),
    Calibrated(CalibrationParams),
}

impl Route {
    pub fn name(&self) -> &'static str {
        match self {
            Route::ConcatArgmax => "concat-argmax",
            Route::Compose(_) => "compose",
            Route::Calibrated(_) => "calibrated",
        }
    }

    pub fn predict(&self, outputs: &[Vec<f64>], topo: &TaskTopology) -> Result<usize, CliError> {
        Ok(match self {
            Route::ConcatArgmax => predict_concat_argmax(outputs)?,
            Route::Compose(c) => {
                let (wp, tp) = decompose(outputs, c)?;
                compose_full(&wp, &tp, topo)?.argmax()
            }
            Route::Calibrated(p) => argmax(&calibrated_logits(outputs, p)?),
        })
    }
}

fn decompose(outputs: &[Vec<f64>], c: &ComposeConfig) -> Result<(Vec<Categorical>, Categorical), CliError> {
    let wp = outputs.iter().map(|o| wp_temperature(o, c.nu)).collect::<Result<Vec<_>, _>>()?;
    let tp = match c.tp {
        TpVariant::SigmoidMaxlogit => tp_sigmoid_maxlogit(outputs)?,
        TpVariant::SigmoidMaxlogitSharpened => tp_sigmoid_maxlogit_sharpened(outputs, c.tau)?,
        TpVariant::MaxsoftmaxTemperature => tp_maxsoftmax_temperature(outputs, &vec![c.tau; outputs.len()])?,
    };
    Ok((wp, tp))
}

/// Accuracy, AUC and entropy summaries of one scored test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub til_per_task: Vec<f64>,
    pub til: f64,
    pub cil: f64,
    pub auc_per_task: Vec<f64>,
    pub avg_auc: f64,
    pub entropy: EntropySummary,
}

/// `entropy_wp_tp` fixes the decomposition the entropy summary uses; with the compose route
/// it is the route's own, so mean H_CIL = mean H_WP + mean H_TP.
pub fn summarize(evals: &[SampleEval], topo: &TaskTopology, route: &Route, entropy_wp_tp: &ComposeConfig) -> Result<Metrics, CliError> {
    let t = topo.task_count();
    if evals.is_empty() {
        return Err(CliError::Run("empty test set".into()));
    }
    let mut til_sets: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); t];
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    let (mut hw, mut ht, mut hc) = (0.0, 0.0, 0.0);
    for e in evals {
        til_sets[e.task].0.push(argmax(&e.outputs[e.task]));
        til_sets[e.task].1.push(e.class);
        preds.push(route.predict(&e.outputs, topo)?);
        labels.push(topo.global(e.task, e.class));
        let (wp, tp) = decompose(&e.outputs, entropy_wp_tp)?;
        let r = entropy_report(Prediction::Decomposed { wp: &wp, tp: &tp }, GroundTruth::new(e.task, e.class), topo)?;
        hw += r.h_wp;
        ht += r.h_tp;
        hc += r.h_cil;
    }
    let til = til_accuracy(&til_sets)?;
    let cil = cil_accuracy(&preds, &labels)?;
    let auc_per_task = (0..t)
        .map(|k| {
            let (ind, ood): (Vec<&SampleEval>, Vec<&SampleEval>) = evals.iter().partition(|e| e.task == k);
            let pop = ScoredPopulation::new(ind.iter().map(|e| e.scores[k]).collect(), ood.iter().map(|e| e.scores[k]).collect())?;
            Ok(auc(&pop))
        })
        .collect::<Result<Vec<_>, clwb_core::metrics::MetricsError>>()?;
    let n = evals.len() as f64;
    Ok(Metrics {
        til_per_task: til.per_task,
        til: til.mean,
        cil,
        avg_auc: avg_auc(&auc_per_task)?,
        auc_per_task,
        entropy: EntropySummary {
            mean_h_wp: hw / n,
            mean_h_tp: ht / n,
            mean_h_cil: hc / n,
            wp_nu: entropy_wp_tp.nu,
            tp: serde_json::to_value(entropy_wp_tp.tp).unwrap().as_str().unwrap().to_string(),
        },
    })
}

pub fn scorer_for(kind: ScorerKind, cfg: &ExperimentConfig, model: &FrozenNet, validation: &[Samples]) -> Result<Scorer, CliError> {
    let t = clwb_core::oodlab::HeadModel::task_count(model);
    Ok(match kind {
        ScorerKind::Msp => Scorer::Msp,
        ScorerKind::RotationEnsemble => Scorer::RotationEnsemble,
        ScorerKind::Odin if cfg.eval.odin.grid => {
            let val: Vec<Vec<Vec<f64>>> = validation.iter().take(t).map(|s| s.x.clone()).collect();
            if val.iter().any(|v| v.is_empty()) {
                return Err(CliError::Usage("eval.odin.grid: a task has no validation samples".into()));
            }
            let grid = OdinGrid { taus: cfg.eval.odin.taus.clone(), eps: cfg.eval.odin.eps_grid.clone() };
            Scorer::Odin(odin_grid_search(model, model.layout(), &val, &grid)?.0)
        }
        ScorerKind::Odin => Scorer::Odin(OdinParams::uniform(t, cfg.eval.odin.tau, cfg.eval.odin.eps)?),
    })
}

/// Scorer used for the forgetting trace: head argmax only, so no ODIN search per stage.
fn til_scorer(model: &FrozenNet) -> Scorer {
    match model.layout() {
        HeadLayout::Rotation { .. } => Scorer::RotationEnsemble,
        HeadLayout::Plain => Scorer::Msp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub versions: Versions,
    pub scorer: String,
    pub params: CalibrationParams,
    pub initial_params: CalibrationParams,
    pub buffer_size: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub cil_before: f64,
    pub cil_after: f64,
    pub delta_cil: f64,
}

pub fn calibration_path(out: &Path) -> PathBuf {
    out.join("calibration.json")
}

pub fn report_stem(scorer: &str, route: &str) -> String {
    format!("eval-{scorer}-{route}.report")
}

pub fn test_samples(seq: &TaskSequence, tasks: usize) -> Vec<(&[f64], usize, usize)> {
    seq.tasks
        .iter()
        .take(tasks)
        .enumerate()
        .flat_map(|(k, t)| t.test.x.iter().zip(&t.test.y).map(move |(x, &y)| (x.as_slice(), k, y)))
        .collect()
}

fn forgetting_trace(dir: &Path, seq: &TaskSequence, tasks: usize) -> Result<Option<Vec<ForgettingPoint>>, CliError> {
    let mut matrix = AccuracyMatrix::new();
    for stage in 0..tasks {
        let p = task_checkpoint_path(dir, stage);
        if !p.is_file() {
            return Ok(None);
        }
        let model = checkpoint::load(&p)?.net.freeze()?;
        let samples = test_samples(seq, stage + 1);
        let evals = evaluate_samples(&model, &samples, &til_scorer(&model))?;
        let mut sets: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); stage + 1];
        for e in &evals {
            sets[e.task].0.push(argmax(&e.outputs[e.task]));
            sets[e.task].1.push(e.class);
        }
        matrix.push_stage(&til_accuracy(&sets)?.per_task)?;
    }
    Ok(Some((2..=tasks).map(|t| Ok(ForgettingPoint { t, rate: forgetting_rate(&matrix, t)? })).collect::<Result<_, CliError>>()?))
}

/// Evaluates a checkpoint without modifying it; writes `eval-<scorer>-<route>.report.{json,csv}`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    scorer: Option<ScorerKind>,
    route: Option<RouteKind>,
) -> Result<(ExperimentReport, PathBuf), CliError> {
    let scorer_kind = scorer.unwrap_or(cfg.eval.scorer);
    let route_kind = route.unwrap_or(cfg.eval.route);
    let mut cfg = cfg.clone();
    cfg.eval.scorer = scorer_kind;
    cfg.eval.route = route_kind;
    cfg.validate()?;
    let ck = checkpoint::load(checkpoint_path)?;
    let data = prepare_data(&cfg)?;
    if ck.topology != data.seq.topology {
        return Err(CliError::Usage("checkpoint topology does not match the configured dataset".into()));
    }
    let model = ck.net.freeze()?;
    let tasks = ck.net.heads.len();
    if tasks == 0 {
        return Err(CliError::Run("checkpoint has no trained tasks".into()));
    }
    let topo = TaskTopology::new(ck.topology.sizes()[..tasks].to_vec())?;
    let scorer = scorer_for(scorer_kind, &cfg, &model, &data.validation)?;
    let mut notes = Vec::new();
    let route = match route_kind {
        RouteKind::ConcatArgmax => Route::ConcatArgmax,
        RouteKind::Compose => Route::Compose(cfg.eval.compose.clone()),
        RouteKind::Calibrated => {
            let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
            let p = calibration_path(dir);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| CliError::Usage(format!("route calibrated needs {} (run calibrate first): {e}", p.display())))?;
            let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", p.display())))?;
            if file.params.tasks() != tasks {
                return Err(CliError::Format(format!("{} holds {} tasks, checkpoint has {tasks}", p.display(), file.params.tasks())));
            }
            if file.scorer != scorer.name() {
                notes.push(format!("calibration was fitted on {} outputs, applied to {} outputs", file.scorer, scorer.name()));
            }
            Route::Calibrated(file.params)
        }
    };
    let samples = test_samples(&data.seq, tasks);
    let evals = evaluate_samples(&model, &samples, &scorer)?;
    let entropy_cfg = match &route {
        Route::Compose(c) => c.clone(),
        _ => ComposeConfig { tp: TpVariant::SigmoidMaxlogit, nu: 1.0, tau: 1.0 },
    };
    let m = summarize(&evals, &topo, &route, &entropy_cfg)?;
    let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    let forgetting = match forgetting_trace(dir, &data.seq, tasks)? {
        Some(f) => f,
        None => {
            notes.push("forgetting trace omitted: per-task checkpoints not found next to the checkpoint".into());
            Vec::new()
        }
    };
    if cfg.train.loss != LossKind::Ce {
        notes.push(format!(
            "augmentation: horizontal flip {} + Gaussian pixel noise σ={} clamped to [0,1]",
            if cfg.train.flip { "on" } else { "off" },
            cfg.train.noise
        ));
    }
    if matches!(route, Route::Calibrated(_)) {
        notes.push(format!("calibrated logits: per-task {} outputs", scorer.name()));
    }
    let backbone = cfg.backbone.name().to_string();
    let loss = serde_json::to_value(cfg.train.loss).unwrap().as_str().unwrap().to_string();
    let report = ExperimentReport {
        versions: Versions::current(),
        method: format!("{backbone}+{loss}+{}+{}", scorer.name(), route.name()),
        checkpoint: checkpoint_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        backbone,
        scorer: scorer.name().to_string(),
        route: route.name().to_string(),
        odin: match &scorer {
            Scorer::Odin(p) => Some(p.clone()),
            _ => None,
        },
        calibration: match &route {
            Route::Calibrated(p) => Some(p.clone()),
            _ => None,
        },
        test_samples: evals.len(),
        til_per_task: m.til_per_task,
        til: m.til,
        cil: m.cil,
        auc_per_task: m.auc_per_task,
        avg_auc: m.avg_auc,
        forgetting,
        entropy: m.entropy,
        notes,
        config: cfg.clone(),
    };
    let (json, _) = report.write(&cfg.out, &report_stem(&report.scorer, &report.route))?;
    Ok((report, json))
}

// ---------------------------------------------------------------- calibrate

/// Per-task outputs of every buffer sample under `scorer`.
pub fn buffer_samples(model: &FrozenNet, buffer: &MemoryBuffer, scorer: &Scorer) -> Result<Vec<CalibrationSample>, CliError> {
    let inputs: Vec<(&[f64], usize, usize)> = buffer.samples().iter().map(|s| (s.x.as_slice(), s.task, s.class)).collect();
    Ok(evaluate_samples(model, &inputs, scorer)?
        .into_iter()
        .zip(buffer.samples())
        .map(|(e, s)| CalibrationSample { logits: e.outputs, class: s.class })
        .collect())
}

/// Fits `(α, β)` on a class-balanced buffer; writes `calibration.json` and before/after reports.
pub fn cmd_calibrate(cfg: &ExperimentConfig, checkpoint_path: &Path, scorer: Option<ScorerKind>) -> Result<(CalibrationFile, PathBuf), CliError> {
    let mut cfg = cfg.clone();
    if let Some(s) = scorer {
        cfg.eval.scorer = s;
    }
    cfg.validate()?;
    let ck = checkpoint::load(checkpoint_path)?;
    let data = prepare_data(&cfg)?;
    if ck.topology != data.seq.topology || ck.net.heads.len() != ck.topology.task_count() {
        return Err(CliError::Usage("calibration needs a final checkpoint matching the configured dataset".into()));
    }
    let model = ck.net.freeze()?;
    let scorer = scorer_for(cfg.eval.scorer, &cfg, &model, &data.validation)?;
    let buffer = MemoryBuffer::class_balanced(&data.seq, cfg.calibration.buffer, derive_seed(cfg.seed, BUFFER_STREAM))?;
    let samples = buffer_samples(&model, &buffer, &scorer)?;
    let opts = CalibrationOptions {
        iters: cfg.calibration.iters,
        lr: cfg.calibration.lr,
        batch: cfg.calibration.batch,
        seed: derive_seed(cfg.seed, BUFFER_STREAM + 1),
    };
    let fit: CalibrationFit = fit_calibration(&samples, &opts)?;
    let topo = &data.seq.topology;
    let evals = evaluate_samples(&model, &test_samples(&data.seq, topo.task_count()), &scorer)?;
    let labels: Vec<usize> = evals.iter().map(|e| topo.global(e.task, e.class)).collect();
    let cil_with = |route: &Route| -> Result<f64, CliError> {
        let preds = evals.iter().map(|e| route.predict(&e.outputs, topo)).collect::<Result<Vec<_>, _>>()?;
        Ok(cil_accuracy(&preds, &labels)?)
    };
    let before = cil_with(&Route::ConcatArgmax)?;
    let after = cil_with(&Route::Calibrated(fit.params.clone()))?;
    let file = CalibrationFile {
        versions: Versions::current(),
        scorer: scorer.name().to_string(),
        initial_params: CalibrationParams::identity(topo.task_count()),
        params: fit.params,
        buffer_size: buffer.len(),
        initial_loss: fit.initial_loss,
        final_loss: fit.final_loss,
        cil_before: before,
        cil_after: after,
        delta_cil: after - before,
    };
    let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    let p = calibration_path(dir);
    write_atomic(&p, (serde_json::to_string_pretty(&file).expect("calibration serializes") + "\n").as_bytes())?;
    if cfg.out != dir {
        write_atomic(&calibration_path(&cfg.out), &std::fs::read(&p).map_err(|e| CliError::Io(e.to_string()))?)?;
    }
    Ok((file, p))
}

// ---------------------------------------------------------------- report

/// Collects every report in `dir` into `summary.csv`.
pub fn cmd_report(dir: &Path) -> Result<(String, PathBuf), CliError> {
    let reports = crate::report::collect_reports(dir)?;
    if reports.is_empty() {
        return Err(CliError::Usage(format!("no *.report.json files in {}", dir.display())));
    }
    let csv = crate::report::summary_csv(&reports);
    let p = dir.join("summary.csv");
    write_atomic(&p, csv.as_bytes())?;
    Ok((csv, p))
}
