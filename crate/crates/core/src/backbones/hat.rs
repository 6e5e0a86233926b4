//! Hard attention to the task.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numkit::{sigmoid, GradTape, Rng};

pub const DEFAULT_S_MAX: f64 = 400.0;
/// `s·e` magnitude that finished-task embeddings are pushed to; `σ(40)` rounds to 1.
pub const SNAP_LOGIT: f64 = 40.0;
/// Attention within this distance of 0 or 1 counts as binary.
pub const SATURATION_EPS: f64 = 1e-6;

/// Per-task, per-layer embeddings and the attention accumulated over finished tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatState {
    pub s_max: f64,
    /// `λ_k` for task k is `lambdas[min(k, len − 1)]`.
    pub lambdas: Vec<f64>,
    /// Push finished-task embeddings to `±SNAP_LOGIT / s_max` so their attention is binary.
    pub snap: bool,
    /// `[task][layer][unit]`
    pub embeddings: Vec<Vec<Vec<f64>>>,
    /// `a^{<k}` for the next task, per layer.
    pub accumulated: Vec<Vec<f64>>,
}

impl HatState {
    pub fn new(widths: &[usize], s_max: f64, lambdas: Vec<f64>, snap: bool) -> Self {
        Self {
            s_max,
            lambdas,
            snap,
            embeddings: Vec::new(),
            accumulated: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    pub fn lambda(&self, task: usize) -> f64 {
        self.lambdas.get(task).or(self.lambdas.last()).copied().unwrap_or(0.0)
    }

    pub fn attention(&self, task: usize, s: f64) -> Vec<Vec<f64>> {
        self.embeddings[task].iter().map(|e| hat_attention(e, s)).collect()
    }

    pub(crate) fn add_task(&mut self, rng: &mut Rng) {
        let e = self
            .accumulated
            .iter()
            .map(|layer| layer.iter().map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        self.embeddings.push(e);
    }

    pub fn finish_task(&mut self, task: usize) {
        if self.snap {
            for layer in &mut self.embeddings[task] {
                snap_embeddings(layer, self.s_max);
            }
        }
        let a = self.attention(task, self.s_max);
        hat_accumulate(&mut self.accumulated, &a);
    }
}

/// `a = σ(s·e)`
pub fn hat_attention(e: &[f64], s: f64) -> Vec<f64> {
    e.iter().map(|&v| sigmoid(s * v)).collect()
}

/// Linear ramp from `1/s_max` at the first batch of an epoch to `s_max` at the last.
pub fn anneal_s(batch: usize, batches: usize, s_max: f64) -> f64 {
    if batches <= 1 {
        return s_max;
    }
    let lo = 1.0 / s_max;
    lo + (s_max - lo) * batch as f64 / (batches - 1) as f64
}

/// Scales trunk gradients by `1 − min(a^{<k}_{i,l}, a^{<k}_{j,l−1})` (input attention is 1)
/// and bias gradients by `1 − a^{<k}_{i,l}`.
pub fn hat_masked_gradients(tape: &mut GradTape, accumulated: &[Vec<f64>]) {
    for l in 0..tape.weights.len() {
        let here = &accumulated[l];
        let w = &mut tape.weights[l];
        let cols = w.cols();
        for i in 0..w.rows() {
            for j in 0..cols {
                let below = if l == 0 { 1.0 } else { accumulated[l - 1][j] };
                let g = w.get(i, j) * (1.0 - here[i].min(below));
                w.set(i, j, g);
            }
        }
        for (b, a) in tape.biases[l].iter_mut().zip(here) {
            *b *= 1.0 - a;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HatRegularizer {
    pub loss: f64,
    /// `∂L_r/∂a^k` per layer.
    pub grad_attention: Vec<Vec<f64>>,
    /// Every unit is already claimed by earlier tasks; `loss` is reported as 0.
    pub capacity_exhausted: bool,
}

/// `L_r = λ Σ a^k (1 − a^{<k}) / Σ (1 − a^{<k})`
pub fn hat_regularizer(attention: &[Vec<f64>], accumulated: &[Vec<f64>], lambda: f64) -> HatRegularizer {
    let denom: f64 = accumulated.iter().flatten().map(|a| 1.0 - a).sum();
    if denom <= 0.0 {
        return HatRegularizer {
            loss: 0.0,
            grad_attention: attention.iter().map(|l| vec![0.0; l.len()]).collect(),
            capacity_exhausted: true,
        };
    }
    let num: f64 = attention.iter().flatten().zip(accumulated.iter().flatten()).map(|(a, p)| a * (1.0 - p)).sum();
    let grad_attention = accumulated.iter().map(|l| l.iter().map(|p| lambda * (1.0 - p) / denom).collect()).collect();
    HatRegularizer { loss: lambda * num / denom, grad_attention, capacity_exhausted: false }
}

/// Chain rule through `a = σ(s·e)`: `∂L/∂e = ∂L/∂a · s·a(1−a)`.
pub fn attention_grad_to_embedding(grad_a: &[f64], attention: &[f64], s: f64) -> Vec<f64> {
    grad_a.iter().zip(attention).map(|(g, a)| g * s * a * (1.0 - a)).collect()
}

/// `a^{<k+1} = max(a^{<k}, a^k)` elementwise.
pub fn hat_accumulate(accumulated: &mut [Vec<f64>], attention: &[Vec<f64>]) {
    for (acc, a) in accumulated.iter_mut().zip(attention) {
        acc.iter_mut().zip(a).for_each(|(p, v)| *p = p.max(*v));
    }
}

pub fn snap_embeddings(e: &mut [f64], s_max: f64) {
    let c = SNAP_LOGIT / s_max;
    for v in e {
        *v = if *v >= 0.0 { v.max(c) } else { v.min(-c) };
    }
}

pub fn is_saturated(a: f64) -> bool {
    a <= SATURATION_EPS || a >= 1.0 - SATURATION_EPS
}
