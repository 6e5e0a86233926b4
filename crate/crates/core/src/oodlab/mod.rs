//! Task-membership scoring: max-softmax, ODIN, rotation ensembles, contrastive features.

mod contrastive;
mod rotation;

pub use contrastive::{sup_con_loss, sup_con_loss_from_features, DEFAULT_CONTRASTIVE_TAU};
pub use rotation::{
    build_rotation_batch, ensemble_logits, finetune_rotation_head, hflip, rotate90, Augment, HeadFit,
    RotationBatch, ROTATIONS,
};

use serde::{Deserialize, Serialize};

use crate::metrics::{auc, ScoredPopulation};
use crate::numkit::{argmax, softmax, softmax_with_temperature, DenseNet, GradTape, NumError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OodError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate batch: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

pub(crate) fn arg(msg: impl Into<String>) -> OodError {
    OodError::Argument(msg.into())
}

/// A frozen multi-head model that can be differentiated with respect to its input.
pub trait HeadModel {
    fn task_count(&self) -> usize;
    fn logits(&self, x: &[f64], task: usize) -> Result<Vec<f64>, OodError>;
    /// `∂(upstream · logits(x, task)) / ∂x`.
    fn input_gradient(&self, x: &[f64], task: usize, upstream: &[f64]) -> Result<Vec<f64>, OodError>;
}

/// A bare network is a single-task model.
impl HeadModel for DenseNet {
    fn task_count(&self) -> usize {
        1
    }

    fn logits(&self, x: &[f64], task: usize) -> Result<Vec<f64>, OodError> {
        if task != 0 {
            return Err(arg(format!("single-head network has no task {task}")));
        }
        Ok(self.forward(x, None)?.0)
    }

    fn input_gradient(&self, x: &[f64], task: usize, upstream: &[f64]) -> Result<Vec<f64>, OodError> {
        if task != 0 {
            return Err(arg(format!("single-head network has no task {task}")));
        }
        let (_, cache) = self.forward(x, None)?;
        let mut tape = GradTape::for_net(self);
        self.backward(&mut tape, &cache, upstream)?;
        Ok(tape.input)
    }
}

/// Views a rotation-class head (`4·C` outputs) through its 0° slots `4j`.
pub struct UprightSlots<'a, M: ?Sized>(pub &'a M);

impl<M: HeadModel + ?Sized> HeadModel for UprightSlots<'_, M> {
    fn task_count(&self) -> usize {
        self.0.task_count()
    }

    fn logits(&self, x: &[f64], task: usize) -> Result<Vec<f64>, OodError> {
        Ok(self.0.logits(x, task)?.into_iter().step_by(ROTATIONS).collect())
    }

    fn input_gradient(&self, x: &[f64], task: usize, upstream: &[f64]) -> Result<Vec<f64>, OodError> {
        let mut full = vec![0.0; upstream.len() * ROTATIONS];
        full.iter_mut().step_by(ROTATIONS).zip(upstream).for_each(|(f, u)| *f = *u);
        self.0.input_gradient(x, task, &full)
    }
}

pub fn msp_score(logits: &[f64]) -> f64 {
    softmax(logits).into_iter().fold(0.0, f64::max)
}

/// Per-task ODIN temperature and input-perturbation magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdinParams {
    pub tau: Vec<f64>,
    pub eps: Vec<f64>,
}

impl OdinParams {
    pub fn uniform(tasks: usize, tau: f64, eps: f64) -> Result<Self, OodError> {
        let p = Self { tau: vec![tau; tasks], eps: vec![eps; tasks] };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), OodError> {
        if self.tau.len() != self.eps.len() {
            return Err(arg("ODIN temperature and epsilon lists differ in length"));
        }
        if let Some(t) = self.tau.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(arg(format!("ODIN temperature {t} must be positive")));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(arg(format!("ODIN epsilon {e} must be nonnegative")));
        }
        Ok(())
    }

    pub fn get(&self, task: usize) -> (f64, f64) {
        (self.tau[task], self.eps[task])
    }
}

/// `x̃ = x − ε·sign(−∇_x log s(x;τ)_ŷ)` with `ŷ` the head's argmax at `x`.
pub fn odin_perturb<M: HeadModel + ?Sized>(
    model: &M,
    x: &[f64],
    task: usize,
    tau: f64,
    eps: f64,
) -> Result<Vec<f64>, OodError> {
    if !(eps >= 0.0) || !(tau > 0.0) {
        return Err(arg(format!("ODIN needs τ > 0 and ε ≥ 0, got τ={tau}, ε={eps}")));
    }
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let f = model.logits(x, task)?;
    let y = argmax(&f);
    let s = softmax_with_temperature(&f, tau);
    // ∂ log s_ŷ / ∂f = (e_ŷ − s) / τ
    let upstream: Vec<f64> = s.iter().enumerate().map(|(j, sj)| (f64::from(j == y) - sj) / tau).collect();
    let g = model.input_gradient(x, task, &upstream)?;
    Ok(x.iter().zip(&g).map(|(xi, gi)| xi - eps * sign(-gi)).collect())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Temperature-scaled softmax of the head at the perturbed input.
pub fn odin_outputs<M: HeadModel + ?Sized>(
    model: &M,
    x: &[f64],
    task: usize,
    tau: f64,
    eps: f64,
) -> Result<Vec<f64>, OodError> {
    let xt = odin_perturb(model, x, task, tau, eps)?;
    Ok(softmax_with_temperature(&model.logits(&xt, task)?, tau))
}

pub fn odin_score<M: HeadModel + ?Sized>(
    model: &M,
    x: &[f64],
    task: usize,
    params: &OdinParams,
) -> Result<f64, OodError> {
    let (tau, eps) = params.get(task);
    Ok(odin_outputs(model, x, task, tau, eps)?.into_iter().fold(0.0, f64::max))
}

/// How a model's heads are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadLayout {
    Plain,
    /// `4·C` rotation-class outputs over square images of this side.
    Rotation { side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scorer {
    Msp,
    Odin(OdinParams),
    RotationEnsemble,
}

impl Scorer {
    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Msp => "msp",
            Scorer::Odin(_) => "odin",
            Scorer::RotationEnsemble => "rotation-ensemble",
        }
    }
}

/// Per-class outputs of one head under a scorer, and the head's membership score.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput {
    pub outputs: Vec<f64>,
    pub score: f64,
}

pub fn task_output<M: HeadModel + ?Sized>(
    model: &M,
    layout: HeadLayout,
    x: &[f64],
    task: usize,
    scorer: &Scorer,
) -> Result<TaskOutput, OodError> {
    match (scorer, layout) {
        (Scorer::RotationEnsemble, HeadLayout::Rotation { side }) => {
            let outputs = ensemble_logits(model, x, side, task)?;
            let score = msp_score(&outputs);
            Ok(TaskOutput { outputs, score })
        }
        (Scorer::RotationEnsemble, HeadLayout::Plain) => {
            Err(arg("rotation-ensemble scoring needs rotation-class heads"))
        }
        (_, HeadLayout::Rotation { .. }) => plain_output(&UprightSlots(model), x, task, scorer),
        (_, HeadLayout::Plain) => plain_output(model, x, task, scorer),
    }
}

fn plain_output<M: HeadModel + ?Sized>(model: &M, x: &[f64], task: usize, scorer: &Scorer) -> Result<TaskOutput, OodError> {
    let outputs = match scorer {
        Scorer::Odin(p) => {
            let (tau, eps) = p.get(task);
            let outputs = odin_outputs(model, x, task, tau, eps)?;
            let score = outputs.iter().copied().fold(0.0, f64::max);
            return Ok(TaskOutput { outputs, score });
        }
        _ => model.logits(x, task)?,
    };
    let score = msp_score(&outputs);
    Ok(TaskOutput { outputs, score })
}

/// Candidate ODIN settings searched per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdinGrid {
    pub taus: Vec<f64>,
    pub eps: Vec<f64>,
}

impl Default for OdinGrid {
    fn default() -> Self {
        Self { taus: vec![1.0, 5.0, 10.0, 100.0, 1000.0], eps: vec![0.0, 0.0007, 0.0014, 0.004] }
    }
}

/// Picks, per task, the grid point with the highest validation AUC of that task's head
/// separating its own validation inputs from every other task's. Ties keep the earlier point
/// in `(τ, ε)` order.
pub fn odin_grid_search<M: HeadModel + ?Sized>(
    model: &M,
    layout: HeadLayout,
    validation: &[Vec<Vec<f64>>],
    grid: &OdinGrid,
) -> Result<(OdinParams, Vec<f64>), OodError> {
    let t = validation.len();
    if t < 2 {
        return Err(arg("ODIN grid search needs validation data from at least two tasks"));
    }
    if grid.taus.is_empty() || grid.eps.is_empty() {
        return Err(arg("empty ODIN grid"));
    }
    let mut best = OdinParams { tau: vec![grid.taus[0]; t], eps: vec![grid.eps[0]; t] };
    let mut best_auc = vec![f64::NEG_INFINITY; t];
    for k in 0..t {
        for &tau in &grid.taus {
            for &eps in &grid.eps {
                let scorer = Scorer::Odin(OdinParams::uniform(t, tau, eps)?);
                let score = |x: &Vec<f64>| task_output(model, layout, x, k, &scorer).map(|o| o.score);
                let ind = validation[k].iter().map(score).collect::<Result<Vec<_>, _>>()?;
                let ood = (0..t)
                    .filter(|&j| j != k)
                    .flat_map(|j| validation[j].iter().map(score))
                    .collect::<Result<Vec<_>, _>>()?;
                let a = auc(&ScoredPopulation::new(ind, ood).map_err(|e| arg(e.to_string()))?);
                if a > best_auc[k] {
                    best_auc[k] = a;
                    best.tau[k] = tau;
                    best.eps[k] = eps;
                }
            }
        }
    }
    Ok((best, best_auc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{seeded_rng, Activation, Matrix};
    use rand::Rng as _;

    fn random_net(seed: u64, sizes: &[usize]) -> DenseNet {
        DenseNet::mlp(sizes, Activation::Identity, &mut seeded_rng(seed))
    }

    #[test]
    fn msp_examples() {
        assert_eq!(msp_score(&[1.0, 1.0, 1.0, 1.0]), 0.25);
        assert!((msp_score(&[10.0, 0.0]) - 0.9999546021312976).abs() < 1e-15);
        assert!((msp_score(&[3.0, 1.0]) - msp_score(&[103.0, 101.0])).abs() < 1e-15);
    }

    #[test]
    fn odin_reduces_to_msp() {
        let mut rng = seeded_rng(3);
        for s in 0..100 {
            let net = random_net(s, &[5, 7, 3]);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p = OdinParams::uniform(1, 1.0, 0.0).unwrap();
            let odin = odin_score(&net, &x, 0, &p).unwrap();
            let msp = msp_score(&net.logits(&x, 0).unwrap());
            assert!((odin - msp).abs() < 1e-15);
        }
    }

    #[test]
    fn odin_uniform_limit_and_tau_monotonicity() {
        let net = random_net(11, &[4, 6, 5]);
        let x = [0.3, 0.9, 0.1, 0.5];
        let huge = OdinParams::uniform(1, 1e6, 0.0).unwrap();
        assert!((odin_score(&net, &x, 0, &huge).unwrap() - 0.2).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for tau in [1.0, 2.0, 5.0, 10.0, 100.0, 1000.0] {
            let s = odin_score(&net, &x, 0, &OdinParams::uniform(1, tau, 0.0).unwrap()).unwrap();
            assert!(s <= prev + 1e-15);
            prev = s;
        }
    }

    #[test]
    fn odin_linear_binary_sign_is_analytic() {
        // f = Wx with two outputs: ∂ log s_ŷ/∂x = (1 − s_ŷ)(w_ŷ − w_other)/τ.
        let w = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, -1.0, 1.0, 1.5]).unwrap();
        let net = DenseNet::new(vec![crate::numkit::Dense { weight: w, bias: vec![0.0, 0.0], activation: Activation::Identity }]).unwrap();
        let x = [0.4, 0.1, 0.2];
        let xt = odin_perturb(&net, &x, 0, 1.0, 0.01).unwrap();
        // ŷ = 0 (0.3 vs 0.0); w_0 − w_1 = [2, −3, −1].
        let expect = [0.41, 0.09, 0.19];
        for (a, b) in xt.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(odin_perturb(&net, &x, 0, 1.0, 0.0).unwrap(), x.to_vec());
    }

    #[test]
    fn odin_perturbation_raises_confidence() {
        let mut rng = seeded_rng(5);
        for s in 0..50 {
            let net = DenseNet::mlp(&[6, 8, 3], Activation::Identity, &mut seeded_rng(100 + s));
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let f = net.logits(&x, 0).unwrap();
            let y = argmax(&f);
            let log_s = |v: &[f64]| softmax(&net.logits(v, 0).unwrap())[y].ln();
            let xt = odin_perturb(&net, &x, 0, 1.0, 1e-3).unwrap();
            let dir: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| (a - b) / 1e-3).collect();
            let h = 1e-6;
            let plus: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            let minus: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
            assert!((log_s(&plus) - log_s(&minus)) / (2.0 * h) >= -1e-9);
        }
    }

    #[test]
    fn grid_search_prefers_separating_settings() {
        let net = random_net(2, &[3, 4]);
        let mut rng = seeded_rng(9);
        let val: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..10).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect())
            .collect();
        // Single-head model: both "tasks" reuse head 0 through a wrapper.
        struct Twice(DenseNet);
        impl HeadModel for Twice {
            fn task_count(&self) -> usize {
                2
            }
            fn logits(&self, x: &[f64], _: usize) -> Result<Vec<f64>, OodError> {
                self.0.logits(x, 0)
            }
            fn input_gradient(&self, x: &[f64], _: usize, u: &[f64]) -> Result<Vec<f64>, OodError> {
                self.0.input_gradient(x, 0, u)
            }
        }
        let (p, aucs) = odin_grid_search(&Twice(net), HeadLayout::Plain, &val, &OdinGrid::default()).unwrap();
        p.validate().unwrap();
        assert!(aucs.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
