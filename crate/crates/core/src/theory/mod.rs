//! Cross-entropy quantities of the WP/TP decomposition and the bounds that
//! connect class-incremental, within-task, task-id and per-task OOD losses.
//!
//! Every distribution handed to this module is understood as already
//! conditioned on a trained model; the conditioning event is never stored.

mod bounds;
mod entropy;
pub mod suites;

pub use bounds::{
    check_corollary1, check_theorem1, check_theorem2_i, check_theorem2_ii, check_theorem3,
    check_theorem5_i, check_theorem5_ii, ood_from_tp, theorem2_bound, theorem4_construct,
    theorem5_ood_from_tp, theorem5_tp_from_ood, tp_from_ood, tp_from_ood_tempered,
    Corollary1Verdict, Theorem4Construction, Theorem5Ood, Theorem5Tp,
};
pub use entropy::{compose_cil, cross_entropy, entropy_report, ood_entropies, Prediction};

use serde::{Deserialize, Serialize};

/// Tolerance on `Σ p = 1` for a [`Categorical`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A caller-asserted hypothesis of a theorem does not hold for the instance.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

fn arg(msg: impl Into<String>) -> TheoryError {
    TheoryError::Argument(msg.into())
}

/// A finite probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self, TheoryError> {
        Self::check_entries(&probs)?;
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(arg(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Divides nonnegative weights by their sum.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, TheoryError> {
        Self::check_entries(&weights)?;
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(TheoryError::Degenerate("all weights are zero".into()));
        }
        Ok(Self { probs: weights.into_iter().map(|w| w / s).collect() })
    }

    /// Nonnegative entries summing to at most one.
    pub fn sub_normalized(probs: Vec<f64>) -> Result<Self, TheoryError> {
        Self::check_entries(&probs)?;
        let s: f64 = probs.iter().sum();
        if s > 1.0 + NORMALIZATION_TOL {
            return Err(arg(format!("sub-normalized vector sums to {s} > 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn one_hot(n: usize, at: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Self { probs }
    }

    fn check_entries(p: &[f64]) -> Result<(), TheoryError> {
        if p.is_empty() {
            return Err(arg("empty distribution"));
        }
        if let Some(i) = p.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(arg(format!("entry {i} = {} is not a nonnegative real", p[i])));
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        crate::numkit::argmax(&self.probs)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// Task count, per-task class counts and the `(task, class) ↔ global id` map.
///
/// Tasks own disjoint, contiguous ranges of global class ids, so every global
/// class belongs to exactly one `(task, class)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTopology {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl TaskTopology {
    pub fn new(sizes: Vec<usize>) -> Result<Self, TheoryError> {
        if sizes.is_empty() {
            return Err(arg("a topology needs at least one task"));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(arg(format!("task {k} has no classes")));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &s in &sizes {
            offsets.push(at);
            at += s;
        }
        Ok(Self { sizes, offsets })
    }

    pub fn uniform(tasks: usize, classes_per_task: usize) -> Result<Self, TheoryError> {
        Self::new(vec![classes_per_task; tasks])
    }

    pub fn task_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn class_count(&self, task: usize) -> usize {
        self.sizes[task]
    }

    pub fn offset(&self, task: usize) -> usize {
        self.offsets[task]
    }

    pub fn total_classes(&self) -> usize {
        self.offsets[self.offsets.len() - 1] + self.sizes[self.sizes.len() - 1]
    }

    pub fn global(&self, task: usize, class: usize) -> usize {
        debug_assert!(class < self.sizes[task]);
        self.offsets[task] + class
    }

    /// Inverse of [`TaskTopology::global`].
    pub fn locate(&self, global: usize) -> Option<GroundTruth> {
        if global >= self.total_classes() {
            return None;
        }
        let task = self.offsets.partition_point(|&o| o <= global) - 1;
        Some(GroundTruth { task, class: global - self.offsets[task] })
    }
}

/// The `(task, within-task class)` an input truly belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task: usize,
    pub class: usize,
}

impl GroundTruth {
    pub fn new(task: usize, class: usize) -> Self {
        Self { task, class }
    }

    pub fn validate(&self, topo: &TaskTopology) -> Result<(), TheoryError> {
        if self.task >= topo.task_count() || self.class >= topo.class_count(self.task) {
            return Err(arg(format!("ground truth {self:?} lies outside the topology")));
        }
        Ok(())
    }
}

/// Independent per-task Bernoulli membership probabilities `P'_k(x ∈ X_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodProfile {
    probs: Vec<f64>,
}

impl OodProfile {
    pub fn new(probs: Vec<f64>) -> Result<Self, TheoryError> {
        if probs.is_empty() {
            return Err(arg("empty OOD profile"));
        }
        if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(arg(format!("OOD probability {i} = {} outside [0,1]", probs[i])));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Per-input cross-entropies of the three predictors and of each task's OOD detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h_wp: f64,
    pub h_tp: f64,
    pub h_cil: f64,
    pub h_ood: Vec<f64>,
}

/// `a ≤ b` up to floating-point roundoff in the last few ulps of `b`.
pub(crate) fn le(a: f64, b: f64) -> bool {
    a <= b + 1e-12 * b.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_maps_round_trip() {
        let t = TaskTopology::new(vec![2, 3, 1]).unwrap();
        assert_eq!(t.total_classes(), 6);
        for g in 0..6 {
            let gt = t.locate(g).unwrap();
            assert_eq!(t.global(gt.task, gt.class), g);
        }
        assert_eq!(t.locate(2), Some(GroundTruth::new(1, 0)));
        assert_eq!(t.locate(6), None);
        assert!(TaskTopology::new(vec![]).is_err());
        assert!(TaskTopology::new(vec![2, 0]).is_err());
    }

    #[test]
    fn categorical_validation() {
        assert!(Categorical::new(vec![0.5, 0.5]).is_ok());
        assert!(Categorical::new(vec![0.5, 0.6]).is_err());
        assert!(Categorical::new(vec![-0.1, 1.1]).is_err());
        assert!(Categorical::normalized(vec![0.0, 0.0]).is_err());
        assert_eq!(Categorical::normalized(vec![1.0, 3.0]).unwrap().probs(), &[0.25, 0.75]);
        assert!(OodProfile::new(vec![1.2]).is_err());
    }
}
