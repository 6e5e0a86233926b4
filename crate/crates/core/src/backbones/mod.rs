//! Parameter-isolation task-incremental backbones: hard attention (HAT) and supermasks (Sup).

mod hat;
mod sup;
mod train;

pub use hat::{
    anneal_s, attention_grad_to_embedding, hat_accumulate, hat_attention, hat_masked_gradients, hat_regularizer,
    is_saturated, snap_embeddings, HatRegularizer, HatState, DEFAULT_S_MAX, SATURATION_EPS, SNAP_LOGIT,
};
pub use sup::{active_count, edge_popup_mask, sup_score_gradients, SupState, DEFAULT_SUP_P};
pub use train::{hat_objective, train_task, HatObjective, LossSpec, TrainSpec, TrainTrace};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numkit::{Activation, DenseNet, GradTape, Matrix, NumError, Rng};
use crate::oodlab::{HeadLayout, HeadModel, OodError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackboneError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Ood(#[from] OodError),
}

pub(crate) fn arg(msg: impl Into<String>) -> BackboneError {
    BackboneError::Argument(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Isolation {
    Hat(HatState),
    Sup(SupState),
}

impl Isolation {
    pub fn name(&self) -> &'static str {
        match self {
            Isolation::Hat(_) => "hat",
            Isolation::Sup(_) => "sup",
        }
    }
}

/// A shared ReLU trunk, one linear head per task, and the per-task isolation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedNet {
    pub trunk: DenseNet,
    pub heads: Vec<DenseNet>,
    pub isolation: Isolation,
    pub layout: HeadLayout,
    /// Tasks `0..finished` are frozen.
    pub finished: usize,
}

impl MaskedNet {
    pub fn hat(
        input: usize,
        hidden: &[usize],
        layout: HeadLayout,
        s_max: f64,
        lambdas: Vec<f64>,
        snap: bool,
        rng: &mut Rng,
    ) -> Result<Self, BackboneError> {
        if !(s_max > 0.0) {
            return Err(arg(format!("s_max {s_max} must be positive")));
        }
        if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(arg("HAT needs at least one nonnegative λ"));
        }
        let trunk = trunk(input, hidden, rng)?;
        let state = HatState::new(hidden, s_max, lambdas, snap);
        Ok(Self { trunk, heads: Vec::new(), isolation: Isolation::Hat(state), layout, finished: 0 })
    }

    pub fn sup(input: usize, hidden: &[usize], layout: HeadLayout, p: f64, rng: &mut Rng) -> Result<Self, BackboneError> {
        if !(p > 0.0 && p <= 100.0) {
            return Err(arg(format!("Sup keep-percentage {p} outside (0,100]")));
        }
        let trunk = trunk(input, hidden, rng)?;
        Ok(Self { trunk, heads: Vec::new(), isolation: Isolation::Sup(SupState::new(p)), layout, finished: 0 })
    }

    pub fn task_count(&self) -> usize {
        self.heads.len()
    }

    pub fn feature_width(&self) -> usize {
        self.trunk.output_width()
    }

    fn check_task(&self, task: usize) -> Result<(), BackboneError> {
        if task >= self.heads.len() {
            return Err(arg(format!("no head for task {task}; {} heads exist", self.heads.len())));
        }
        Ok(())
    }

    /// The trunk and hooks task `task` runs with at evaluation time.
    pub fn task_view(&self, task: usize) -> Result<TaskView, BackboneError> {
        self.check_task(task)?;
        let (trunk, hooks) = match &self.isolation {
            Isolation::Hat(h) => (Arc::new(self.trunk.clone()), Some(h.attention(task, h.s_max))),
            Isolation::Sup(s) => (Arc::new(self.trunk.with_weight_masks(&self.sup_masks(s, task)?)?), None),
        };
        Ok(TaskView { trunk, hooks, head: self.heads[task].clone() })
    }

    fn sup_masks(&self, s: &SupState, task: usize) -> Result<Vec<Matrix>, BackboneError> {
        if let Some(m) = s.masks.get(task) {
            return Ok(m.clone());
        }
        match &s.scores {
            Some(scores) if task == s.masks.len() => Ok(scores.iter().map(|v| edge_popup_mask(v, s.p)).collect()),
            _ => Err(BackboneError::State(format!("task {task} has neither a mask nor scores"))),
        }
    }

    /// Read-only evaluation form of every task with a head; one trunk shared across HAT tasks.
    pub fn freeze(&self) -> Result<FrozenNet, BackboneError> {
        let shared = Arc::new(self.trunk.clone());
        let views = (0..self.heads.len())
            .map(|k| match &self.isolation {
                Isolation::Hat(h) => {
                    Ok(TaskView { trunk: shared.clone(), hooks: Some(h.attention(k, h.s_max)), head: self.heads[k].clone() })
                }
                Isolation::Sup(_) => self.task_view(k),
            })
            .collect::<Result<_, BackboneError>>()?;
        Ok(FrozenNet { views, layout: self.layout })
    }

    /// Head-`task` logits, rebuilding the task's view on each call.
    pub fn logits(&self, x: &[f64], task: usize) -> Result<Vec<f64>, BackboneError> {
        Ok(self.task_view(task)?.logits(x)?)
    }
}

fn trunk(input: usize, hidden: &[usize], rng: &mut Rng) -> Result<DenseNet, BackboneError> {
    if hidden.is_empty() || hidden.contains(&0) || input == 0 {
        return Err(arg("trunk needs a positive input width and at least one positive hidden width"));
    }
    let sizes: Vec<usize> = std::iter::once(input).chain(hidden.iter().copied()).collect();
    Ok(DenseNet::glorot(&sizes, &vec![Activation::Relu; hidden.len()], rng))
}

/// `hat_forward`: head-`task` logits with attention at `s_max`.
pub fn hat_forward(net: &MaskedNet, x: &[f64], task: usize) -> Result<Vec<f64>, BackboneError> {
    if !matches!(net.isolation, Isolation::Hat(_)) {
        return Err(arg("hat_forward on a non-HAT network"));
    }
    net.logits(x, task)
}

/// `sup_masked_forward`: head-`task` logits through `W ⊗ M_task`.
pub fn sup_masked_forward(net: &MaskedNet, x: &[f64], task: usize) -> Result<Vec<f64>, BackboneError> {
    if !matches!(net.isolation, Isolation::Sup(_)) {
        return Err(arg("sup_masked_forward on a non-Sup network"));
    }
    net.logits(x, task)
}

/// One task's evaluation path.
#[derive(Debug, Clone)]
pub struct TaskView {
    trunk: Arc<DenseNet>,
    hooks: Option<Vec<Vec<f64>>>,
    head: DenseNet,
}

impl TaskView {
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, NumError> {
        Ok(self.trunk.forward(x, self.hooks.as_deref())?.0)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NumError> {
        Ok(self.head.forward(&self.features(x)?, None)?.0)
    }

    pub fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>, NumError> {
        let (h, trunk_cache) = self.trunk.forward(x, self.hooks.as_deref())?;
        let (_, head_cache) = self.head.forward(&h, None)?;
        let mut head_tape = GradTape::for_net(&self.head);
        self.head.backward(&mut head_tape, &head_cache, upstream)?;
        let mut trunk_tape = GradTape::for_net(&self.trunk);
        self.trunk.backward(&mut trunk_tape, &trunk_cache, &head_tape.input)?;
        Ok(trunk_tape.input)
    }
}

/// A finished network prepared for scoring; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct FrozenNet {
    views: Vec<TaskView>,
    layout: HeadLayout,
}

impl FrozenNet {
    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    pub fn view(&self, task: usize) -> &TaskView {
        &self.views[task]
    }

    pub fn features(&self, x: &[f64], task: usize) -> Result<Vec<f64>, BackboneError> {
        self.check(task)?;
        Ok(self.views[task].features(x)?)
    }

    fn check(&self, task: usize) -> Result<(), OodError> {
        if task >= self.views.len() {
            return Err(OodError::Argument(format!("no head for task {task}")));
        }
        Ok(())
    }
}

impl HeadModel for FrozenNet {
    fn task_count(&self) -> usize {
        self.views.len()
    }

    fn logits(&self, x: &[f64], task: usize) -> Result<Vec<f64>, OodError> {
        self.check(task)?;
        Ok(self.views[task].logits(x)?)
    }

    fn input_gradient(&self, x: &[f64], task: usize, upstream: &[f64]) -> Result<Vec<f64>, OodError> {
        self.check(task)?;
        Ok(self.views[task].input_gradient(x, upstream)?)
    }
}
