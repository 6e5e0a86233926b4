//! Supermasks found by Edge Popup over a frozen random trunk.

use serde::{Deserialize, Serialize};

use crate::numkit::{DenseNet, GradTape, Matrix};

/// Percentage of trunk weights each task keeps.
pub const DEFAULT_SUP_P: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupState {
    pub p: f64,
    /// Frozen binary masks, `[task][layer]`.
    pub masks: Vec<Vec<Matrix>>,
    /// Scores of the task in training, if any.
    pub scores: Option<Vec<Matrix>>,
}

impl SupState {
    pub fn new(p: f64) -> Self {
        Self { p, masks: Vec::new(), scores: None }
    }
}

/// `⌈p/100 · n⌉`
pub fn active_count(n: usize, p: f64) -> usize {
    ((p * n as f64) / 100.0).ceil().min(n as f64) as usize
}

/// Ones at the top `⌈p%·N⌉` scores, ties going to the lowest flat index.
pub fn edge_popup_mask(scores: &Matrix, p: f64) -> Matrix {
    let s = scores.as_slice();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut mask = Matrix::zeros(scores.rows(), scores.cols());
    let m = mask.as_mut_slice();
    for &i in &idx[..active_count(s.len(), p)] {
        m[i] = 1.0;
    }
    mask
}

/// Straight-through score gradient `∂L/∂V = ∂L/∂(W⊗M) ⊙ W`, where `tape` came from the
/// masked trunk and `trunk` holds the unmasked weights.
pub fn sup_score_gradients(tape: &GradTape, trunk: &DenseNet) -> Vec<Matrix> {
    tape.weights.iter().zip(trunk.layers()).map(|(g, l)| g.hadamard(&l.weight)).collect()
}
