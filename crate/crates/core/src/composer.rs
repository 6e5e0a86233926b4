//! Turning per-task head outputs into class-incremental predictions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::TaskSequence;
use crate::numkit::{argmax, log_sigmoid, log_sum_exp, seeded_rng, sigmoid, softmax, softmax_cross_entropy, softmax_with_temperature};
use crate::theory::{compose_cil, tp_from_ood, Categorical, OodProfile, TaskTopology, TheoryError};

/// Default WP temperature `ν_k`.
pub const DEFAULT_NU: f64 = 0.1;
/// Default TP temperature `τ_k`.
pub const DEFAULT_TAU: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComposeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

fn arg(msg: impl Into<String>) -> ComposeError {
    ComposeError::Argument(msg.into())
}

fn check_logits(per_task: &[Vec<f64>]) -> Result<(), ComposeError> {
    if per_task.is_empty() {
        return Err(arg("no task logits"));
    }
    if let Some(k) = per_task.iter().position(Vec::is_empty) {
        return Err(arg(format!("task {k} has no logits")));
    }
    Ok(())
}

/// Argmax over the concatenated head outputs.
pub fn predict_concat_argmax(per_task: &[Vec<f64>]) -> Result<usize, ComposeError> {
    check_logits(per_task)?;
    Ok(argmax(&per_task.concat()))
}

/// `OOD_k = σ(max f(x)_k)`, normalized over tasks.
pub fn tp_sigmoid_maxlogit(per_task: &[Vec<f64>]) -> Result<Categorical, ComposeError> {
    check_logits(per_task)?;
    let profile = OodProfile::new(per_task.iter().map(|f| sigmoid(max(f))).collect())?;
    Ok(tp_from_ood(&profile)?)
}

/// `TP(k) ∝ σ(max f(x)_k)^{1/τ}`, normalized in log space so small `τ` does not underflow.
pub fn tp_sigmoid_maxlogit_sharpened(per_task: &[Vec<f64>], tau: f64) -> Result<Categorical, ComposeError> {
    check_logits(per_task)?;
    if !(tau > 0.0) {
        return Err(arg(format!("temperature {tau} must be positive")));
    }
    let w: Vec<f64> = per_task.iter().map(|f| log_sigmoid(max(f)) / tau).collect();
    let z = log_sum_exp(&w);
    Ok(Categorical::normalized(w.iter().map(|v| (v - z).exp()).collect())?)
}

pub fn wp_temperature(logits: &[f64], nu: f64) -> Result<Categorical, ComposeError> {
    if !(nu > 0.0) {
        return Err(arg(format!("temperature {nu} must be positive")));
    }
    Ok(Categorical::normalized(softmax_with_temperature(logits, nu))?)
}

/// `P'_k = max_j softmax(f_k / τ_k)_j`, normalized over tasks.
pub fn tp_maxsoftmax_temperature(per_task: &[Vec<f64>], taus: &[f64]) -> Result<Categorical, ComposeError> {
    check_logits(per_task)?;
    if taus.len() != per_task.len() {
        return Err(arg(format!("{} temperatures for {} tasks", taus.len(), per_task.len())));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0)) {
        return Err(arg(format!("temperature {t} must be positive")));
    }
    let p: Vec<f64> = per_task.iter().zip(taus).map(|(f, &t)| max(&softmax_with_temperature(f, t))).collect();
    Ok(tp_from_ood(&OodProfile::new(p)?)?)
}

pub fn compose_full(wp: &[Categorical], tp: &Categorical, topo: &TaskTopology) -> Result<Categorical, ComposeError> {
    Ok(compose_cil(wp, tp, topo)?)
}

/// Per-task softmax WP composed with log-domain sharpened sigmoid-max-logit TP.
pub fn predict_composed_sharpened(per_task: &[Vec<f64>], tau: f64) -> Result<usize, ComposeError> {
    let topo = TaskTopology::new(per_task.iter().map(Vec::len).collect())?;
    let wp = per_task
        .iter()
        .map(|f| Categorical::normalized(softmax(f)))
        .collect::<Result<Vec<_>, _>>()?;
    let tp = tp_sigmoid_maxlogit_sharpened(per_task, tau)?;
    Ok(compose_full(&wp, &tp, &topo)?.argmax())
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Per-task affine calibration `α_k f(x)_k + β_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl CalibrationParams {
    pub fn identity(tasks: usize) -> Self {
        Self { alpha: vec![1.0; tasks], beta: vec![0.0; tasks] }
    }

    pub fn tasks(&self) -> usize {
        self.alpha.len()
    }
}

pub fn calibrated_logits(per_task: &[Vec<f64>], params: &CalibrationParams) -> Result<Vec<f64>, ComposeError> {
    if per_task.len() != params.alpha.len() || per_task.len() != params.beta.len() {
        return Err(arg(format!("{} tasks of logits for {} calibration pairs", per_task.len(), params.tasks())));
    }
    Ok(per_task
        .iter()
        .zip(params.alpha.iter().zip(&params.beta))
        .flat_map(|(f, (a, b))| f.iter().map(move |v| a * v + b))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSample {
    pub x: Vec<f64>,
    pub class: usize,
    pub task: usize,
}

/// A small class-balanced replay memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    capacity: usize,
    samples: Vec<BufferSample>,
}

impl MemoryBuffer {
    /// Draws `⌊capacity / C⌋` training samples per class, plus one for the lowest classes
    /// until the capacity is used.
    pub fn class_balanced(seq: &TaskSequence, capacity: usize, seed: u64) -> Result<Self, ComposeError> {
        let c = seq.topology.total_classes();
        if capacity < c {
            return Err(arg(format!("capacity {capacity} cannot hold one sample of each of {c} classes")));
        }
        let mut rng = seeded_rng(seed);
        let mut samples = Vec::with_capacity(capacity);
        for (k, task) in seq.tasks.iter().enumerate() {
            for j in 0..seq.topology.class_count(k) {
                let g = seq.topology.global(k, j);
                let quota = capacity / c + usize::from(g < capacity % c);
                let mut idx: Vec<usize> = (0..task.train.len()).filter(|&i| task.train.y[i] == j).collect();
                if idx.is_empty() {
                    return Err(arg(format!("class {g} has no training samples")));
                }
                idx.shuffle(&mut rng);
                samples.extend(idx.into_iter().take(quota).map(|i| BufferSample {
                    x: task.train.x[i].clone(),
                    class: g,
                    task: k,
                }));
            }
        }
        Ok(Self { capacity, samples })
    }

    pub fn from_samples(capacity: usize, samples: Vec<BufferSample>) -> Result<Self, ComposeError> {
        if samples.len() > capacity {
            return Err(arg(format!("{} samples exceed capacity {capacity}", samples.len())));
        }
        Ok(Self { capacity, samples })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> &[BufferSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Frozen per-task logits of one buffer sample and its global class.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub logits: Vec<Vec<f64>>,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub iters: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { iters: 160, lr: 0.01, batch: 15, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub params: CalibrationParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Full-buffer loss after every iteration.
    pub trace: Vec<f64>,
}

/// Mean CE of softmax over calibrated logits, with gradients `(∂α, ∂β)`.
pub fn calibration_loss(
    samples: &[CalibrationSample],
    params: &CalibrationParams,
) -> Result<(f64, Vec<f64>, Vec<f64>), ComposeError> {
    if samples.is_empty() {
        return Err(arg("calibration needs at least one sample"));
    }
    let t = params.tasks();
    let (mut ga, mut gb) = (vec![0.0; t], vec![0.0; t]);
    let mut loss = 0.0;
    for s in samples {
        let z = calibrated_logits(&s.logits, params)?;
        let (l, g) = softmax_cross_entropy(&z, s.class).map_err(|e| arg(e.to_string()))?;
        loss += l;
        let mut at = 0;
        for (k, f) in s.logits.iter().enumerate() {
            for &v in f {
                ga[k] += g[at] * v;
                gb[k] += g[at];
                at += 1;
            }
        }
    }
    let n = samples.len() as f64;
    ga.iter_mut().chain(gb.iter_mut()).for_each(|v| *v /= n);
    Ok((loss / n, ga, gb))
}

/// Minibatch gradient descent from `(α, β) = (1, 0)`; returns the iterate with the lowest
/// full-buffer loss, so the result never scores worse than the start.
pub fn fit_calibration(samples: &[CalibrationSample], opts: &CalibrationOptions) -> Result<CalibrationFit, ComposeError> {
    if samples.is_empty() {
        return Err(arg("calibration buffer is empty"));
    }
    if opts.batch == 0 || !(opts.lr > 0.0) {
        return Err(arg("calibration needs a positive batch size and learning rate"));
    }
    let t = samples[0].logits.len();
    if let Some(s) = samples.iter().find(|s| s.logits.len() != t) {
        return Err(arg(format!("sample of class {} has {} tasks, expected {t}", s.class, s.logits.len())));
    }
    let mut params = CalibrationParams::identity(t);
    let initial_loss = calibration_loss(samples, &params)?.0;
    let (mut best, mut best_loss) = (params.clone(), initial_loss);
    let mut rng = seeded_rng(opts.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(opts.iters);
    for _ in 0..opts.iters {
        if order.len() < opts.batch.min(samples.len()) {
            let mut fresh: Vec<usize> = (0..samples.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let batch: Vec<CalibrationSample> =
            order.drain(..opts.batch.min(samples.len())).map(|i| samples[i].clone()).collect();
        let (_, ga, gb) = calibration_loss(&batch, &params)?;
        params.alpha.iter_mut().zip(&ga).for_each(|(p, g)| *p -= opts.lr * g);
        params.beta.iter_mut().zip(&gb).for_each(|(p, g)| *p -= opts.lr * g);
        let full = calibration_loss(samples, &params)?.0;
        trace.push(full);
        if full < best_loss {
            best_loss = full;
            best = params.clone();
        }
    }
    Ok(CalibrationFit { params: best, initial_loss, final_loss: best_loss, trace })
}
