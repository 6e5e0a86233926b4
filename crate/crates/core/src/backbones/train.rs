use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{arg, attention_grad_to_embedding, anneal_s, hat_masked_gradients, hat_regularizer, sup_score_gradients, edge_popup_mask};
use super::{BackboneError, Isolation, MaskedNet};
use crate::data::Samples;
use crate::numkit::{derive_seed, seeded_rng, softmax_cross_entropy, Activation, DenseNet, GradTape, Matrix, Rng};
use crate::oodlab::{build_rotation_batch, finetune_rotation_head, rotate90, sup_con_loss_from_features, Augment, HeadLayout, ROTATIONS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossSpec {
    /// Cross-entropy over the task's classes.
    Ce,
    /// Cross-entropy over `4·C` rotation classes of augmented views.
    RotationCe,
    /// Contrastive trunk training on rotation classes, then a linear rotation head on frozen features.
    ContrastiveThenCe { tau: f64, contrastive_epochs: usize },
}

impl LossSpec {
    fn uses_rotations(&self) -> bool {
        !matches!(self, LossSpec::Ce)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub loss: LossSpec,
    /// Epochs of cross-entropy training (of the head alone after contrastive training).
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub augment: Augment,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean HAT regularizer per epoch (empty for Sup).
    pub epoch_reg: Vec<f64>,
    /// Mean contrastive loss per epoch of the contrastive stage.
    pub contrastive_loss: Vec<f64>,
    pub capacity_exhausted: bool,
}

impl MaskedNet {
    /// Creates task `task`'s head (`width` outputs) and its fresh isolation parameters.
    pub fn begin_task(&mut self, task: usize, width: usize, rng: &mut Rng) -> Result<(), BackboneError> {
        if task < self.finished {
            return Err(BackboneError::State(format!("task {task} is already finished")));
        }
        if task != self.finished || self.heads.len() != task {
            return Err(BackboneError::State(format!(
                "tasks are learned in order: expected task {}, got {task}",
                self.finished
            )));
        }
        self.heads.push(DenseNet::glorot(&[self.trunk.output_width(), width], &[Activation::Identity], rng));
        match &mut self.isolation {
            Isolation::Hat(h) => h.add_task(rng),
            Isolation::Sup(s) => {
                s.scores = Some(
                    self.trunk
                        .layers()
                        .iter()
                        .map(|l| {
                            let (r, c) = (l.weight.rows(), l.weight.cols());
                            let bound = (6.0 / (r + c) as f64).sqrt();
                            Matrix::from_fn(r, c, |_, _| rng.gen_range(-bound..bound))
                        })
                        .collect(),
                )
            }
        }
        Ok(())
    }

    fn finish_task(&mut self, task: usize) {
        match &mut self.isolation {
            Isolation::Hat(h) => h.finish_task(task),
            Isolation::Sup(s) => {
                let scores = s.scores.take().expect("scores exist while a Sup task trains");
                let p = s.p;
                s.masks.push(scores.iter().map(|v| edge_popup_mask(v, p)).collect());
            }
        }
        self.finished += 1;
    }
}

/// The trunk a step runs through and the hooks it applies.
type TrunkStep = (Option<DenseNet>, Option<Vec<Vec<f64>>>);

fn step_trunk(trunk: &DenseNet, iso: &Isolation, task: usize, s: f64) -> Result<TrunkStep, BackboneError> {
    match iso {
        Isolation::Hat(h) => Ok((None, Some(h.attention(task, s)))),
        Isolation::Sup(sup) => {
            let scores = sup.scores.as_ref().ok_or_else(|| BackboneError::State("Sup task has no scores".into()))?;
            let masks: Vec<Matrix> = scores.iter().map(|v| edge_popup_mask(v, sup.p)).collect();
            Ok((Some(trunk.with_weight_masks(&masks)?), None))
        }
    }
}

/// Sums CE over the batch into both tapes; returns the summed loss.
fn accumulate_ce(
    trunk: &DenseNet,
    hooks: Option<&[Vec<f64>]>,
    head: &DenseNet,
    xs: &[Vec<f64>],
    ys: &[usize],
    trunk_tape: &mut GradTape,
    head_tape: &mut GradTape,
) -> Result<f64, BackboneError> {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let (h, tc) = trunk.forward(x, hooks)?;
        let (f, hc) = head.forward(&h, None)?;
        let (l, g) = softmax_cross_entropy(&f, y)?;
        total += l;
        head.backward(head_tape, &hc, &g)?;
        let up = std::mem::take(&mut head_tape.input);
        trunk.backward(trunk_tape, &tc, &up)?;
    }
    Ok(total)
}

/// Contrastive loss on trunk features; gradients land in `trunk_tape` already averaged.
fn accumulate_contrastive(
    trunk: &DenseNet,
    hooks: Option<&[Vec<f64>]>,
    xs: &[Vec<f64>],
    ys: &[usize],
    tau: f64,
    trunk_tape: &mut GradTape,
) -> Result<f64, BackboneError> {
    let mut feats = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let (h, c) = trunk.forward(x, hooks)?;
        feats.push(h);
        caches.push(c);
    }
    let (loss, grads) = sup_con_loss_from_features(&feats, ys, tau)?;
    for (c, g) in caches.iter().zip(&grads) {
        trunk.backward(trunk_tape, c, g)?;
    }
    Ok(loss)
}

/// Applies one update from averaged tapes; returns `(L_r, capacity_exhausted)`.
fn apply_update(
    trunk: &mut DenseNet,
    iso: &mut Isolation,
    task: usize,
    s: f64,
    trunk_tape: &mut GradTape,
    lr: f64,
) -> Result<(f64, bool), BackboneError> {
    match iso {
        Isolation::Hat(h) => {
            let attention = h.attention(task, s);
            let reg = hat_regularizer(&attention, &h.accumulated, h.lambda(task));
            let grad_e: Vec<Vec<f64>> = (0..attention.len())
                .map(|l| {
                    let ga: Vec<f64> = trunk_tape.hooks[l].iter().zip(&reg.grad_attention[l]).map(|(a, b)| a + b).collect();
                    attention_grad_to_embedding(&ga, &attention[l], s)
                })
                .collect();
            if grad_e.iter().flatten().any(|g| !g.is_finite()) {
                return Err(BackboneError::Numeric(crate::numkit::NumError::NonFinite { context: "embedding gradient of task", index: task }));
            }
            hat_masked_gradients(trunk_tape, &h.accumulated);
            trunk.sgd_step(trunk_tape, lr)?;
            for (e, g) in h.embeddings[task].iter_mut().zip(&grad_e) {
                e.iter_mut().zip(g).for_each(|(v, d)| *v -= lr * d);
            }
            Ok((reg.loss, reg.capacity_exhausted))
        }
        Isolation::Sup(sup) => {
            let grads = sup_score_gradients(trunk_tape, trunk);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(BackboneError::Numeric(crate::numkit::NumError::NonFinite { context: "score gradient of task", index: task }));
            }
            let scores = sup.scores.as_mut().ok_or_else(|| BackboneError::State("Sup task has no scores".into()))?;
            for (v, g) in scores.iter_mut().zip(&grads) {
                v.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(p, d)| *p -= lr * d);
            }
            Ok((0.0, false))
        }
    }
}

fn s_max(iso: &Isolation) -> f64 {
    match iso {
        Isolation::Hat(h) => h.s_max,
        Isolation::Sup(_) => 1.0,
    }
}

/// Trains task `task` on `data` (labels local to the task) and freezes it.
pub fn train_task(
    net: &mut MaskedNet,
    task: usize,
    data: &Samples,
    classes: usize,
    spec: &TrainSpec,
) -> Result<TrainTrace, BackboneError> {
    if data.is_empty() || data.x.len() != data.y.len() {
        return Err(arg("training set is empty or misaligned"));
    }
    if let Some(y) = data.y.iter().find(|&&y| y >= classes) {
        return Err(arg(format!("label {y} outside {classes} classes")));
    }
    if spec.batch == 0 || !(spec.lr > 0.0) {
        return Err(arg("training needs a positive batch size and learning rate"));
    }
    let side = match (spec.loss.uses_rotations(), net.layout) {
        (false, HeadLayout::Plain) => None,
        (true, HeadLayout::Rotation { side }) => Some(side),
        (true, HeadLayout::Plain) => return Err(arg("rotation losses need a rotation head layout")),
        (false, HeadLayout::Rotation { .. }) => return Err(arg("plain cross-entropy needs a plain head layout")),
    };
    let mut rng = seeded_rng(derive_seed(spec.seed, task as u64));
    let width = if side.is_some() { ROTATIONS * classes } else { classes };
    net.begin_task(task, width, &mut rng)?;

    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batches = data.len().div_ceil(spec.batch);
    let smax = s_max(&net.isolation);
    let batch_inputs = |idx: &[usize], rng: &mut Rng| -> Result<(Vec<Vec<f64>>, Vec<usize>), BackboneError> {
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| data.x[i].clone()).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
        match side {
            None => Ok((xs, ys)),
            Some(side) => {
                let b = build_rotation_batch(&xs, &ys, side, classes, &spec.augment, rng)?;
                Ok((b.x, b.y))
            }
        }
    };

    if let LossSpec::ContrastiveThenCe { tau, contrastive_epochs } = spec.loss {
        for _ in 0..contrastive_epochs {
            order.shuffle(&mut rng);
            let (mut total, mut reg_total) = (0.0, 0.0);
            for (b, idx) in order.chunks(spec.batch).enumerate() {
                let s = anneal_s(b, batches, smax);
                let (xs, ys) = batch_inputs(idx, &mut rng)?;
                let MaskedNet { trunk, isolation, .. } = &mut *net;
                let (masked, hooks) = step_trunk(trunk, isolation, task, s)?;
                let run = masked.as_ref().unwrap_or(trunk);
                let mut tape = GradTape::for_net(run);
                total += accumulate_contrastive(run, hooks.as_deref(), &xs, &ys, tau, &mut tape)?;
                let (r, full) = apply_update(trunk, isolation, task, s, &mut tape, spec.lr)?;
                reg_total += r;
                trace.capacity_exhausted |= full;
            }
            trace.contrastive_loss.push(total / batches as f64);
            if matches!(net.isolation, Isolation::Hat(_)) {
                trace.epoch_reg.push(reg_total / batches as f64);
            }
        }
        // Linear rotation head on frozen features of the raw rotated images.
        let side = side.expect("contrastive training uses rotations");
        let (mut feats, mut labels) = (Vec::new(), Vec::new());
        let MaskedNet { trunk, isolation, .. } = &*net;
        let (masked, hooks) = step_trunk(trunk, isolation, task, smax)?;
        let run = masked.as_ref().unwrap_or(trunk);
        for (x, &y) in data.x.iter().zip(&data.y) {
            for r in 0..ROTATIONS {
                feats.push(run.forward(&rotate90(x, side, side, r)?, hooks.as_deref())?.0);
                labels.push(ROTATIONS * y + r);
            }
        }
        let fit = finetune_rotation_head(&feats, &labels, width, spec.epochs, spec.lr, spec.batch, &mut rng)?;
        trace.epoch_loss = fit.epoch_loss;
        net.heads[task] = DenseNet::new(vec![fit.head])?;
    } else {
        for _ in 0..spec.epochs {
            order.shuffle(&mut rng);
            let (mut total, mut count, mut reg_total) = (0.0, 0usize, 0.0);
            for (b, idx) in order.chunks(spec.batch).enumerate() {
                let s = anneal_s(b, batches, smax);
                let (xs, ys) = batch_inputs(idx, &mut rng)?;
                let MaskedNet { trunk, heads, isolation, .. } = &mut *net;
                let (masked, hooks) = step_trunk(trunk, isolation, task, s)?;
                let run = masked.as_ref().unwrap_or(trunk);
                let head = &mut heads[task];
                let mut trunk_tape = GradTape::for_net(run);
                let mut head_tape = GradTape::for_net(head);
                total += accumulate_ce(run, hooks.as_deref(), head, &xs, &ys, &mut trunk_tape, &mut head_tape)?;
                count += xs.len();
                let inv = 1.0 / xs.len() as f64;
                trunk_tape.scale(inv);
                head_tape.scale(inv);
                head.sgd_step(&head_tape, spec.lr)?;
                let (r, full) = apply_update(trunk, isolation, task, s, &mut trunk_tape, spec.lr)?;
                reg_total += r;
                trace.capacity_exhausted |= full;
            }
            trace.epoch_loss.push(total / count as f64);
            if matches!(net.isolation, Isolation::Hat(_)) {
                trace.epoch_reg.push(reg_total / batches as f64);
            }
        }
    }
    net.finish_task(task);
    Ok(trace)
}

/// Unmasked HAT objective `mean CE + L_r` at a fixed `s`, with its gradients.
#[derive(Debug, Clone)]
pub struct HatObjective {
    pub loss: f64,
    pub trunk: GradTape,
    pub head: GradTape,
    /// `∂/∂e^k` per layer.
    pub embeddings: Vec<Vec<f64>>,
}

pub fn hat_objective(
    net: &MaskedNet,
    task: usize,
    xs: &[Vec<f64>],
    ys: &[usize],
    s: f64,
) -> Result<HatObjective, BackboneError> {
    let Isolation::Hat(h) = &net.isolation else {
        return Err(arg("HAT objective on a non-HAT network"));
    };
    if task >= net.heads.len() || task >= h.embeddings.len() {
        return Err(arg(format!("task {task} has not begun")));
    }
    if xs.is_empty() {
        return Err(arg("empty batch"));
    }
    let attention = h.attention(task, s);
    let mut trunk_tape = GradTape::for_net(&net.trunk);
    let mut head_tape = GradTape::for_net(&net.heads[task]);
    let ce = accumulate_ce(&net.trunk, Some(&attention), &net.heads[task], xs, ys, &mut trunk_tape, &mut head_tape)?;
    let inv = 1.0 / xs.len() as f64;
    trunk_tape.scale(inv);
    head_tape.scale(inv);
    let reg = hat_regularizer(&attention, &h.accumulated, h.lambda(task));
    let embeddings = (0..attention.len())
        .map(|l| {
            let ga: Vec<f64> = trunk_tape.hooks[l].iter().zip(&reg.grad_attention[l]).map(|(a, b)| a + b).collect();
            attention_grad_to_embedding(&ga, &attention[l], s)
        })
        .collect();
    Ok(HatObjective { loss: ce * inv + reg.loss, trunk: trunk_tape, head: head_tape, embeddings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_tasks, synth_image_tasks, GaussianSpec, ImageSpec};
    use crate::numkit::{argmax, grad_check};

    fn gaussian(seed: u64) -> crate::data::TaskSequence {
        synth_gaussian_tasks(&GaussianSpec {
            tasks: 2,
            classes_per_task: 2,
            dim: 4,
            separation: 6.0,
            train_per_class: 60,
            test_per_class: 40,
            seed,
        })
        .unwrap()
    }

    fn spec(epochs: usize) -> TrainSpec {
        TrainSpec { loss: LossSpec::Ce, epochs, lr: 0.05, batch: 16, seed: 3, augment: Augment::NONE }
    }

    fn til(net: &MaskedNet, data: &Samples, task: usize) -> f64 {
        let ok = data.x.iter().zip(&data.y).filter(|(x, &y)| argmax(&net.logits(x, task).unwrap()) == y).count();
        100.0 * ok as f64 / data.len() as f64
    }

    fn all_logits(net: &MaskedNet, data: &Samples, task: usize) -> Vec<Vec<f64>> {
        data.x.iter().map(|x| net.logits(x, task).unwrap()).collect()
    }

    #[test]
    fn hat_learns_two_tasks_and_keeps_the_first() {
        let seq = gaussian(11);
        let mut rng = seeded_rng(1);
        let mut net = MaskedNet::hat(4, &[32, 32], HeadLayout::Plain, 400.0, vec![0.25, 0.1], true, &mut rng).unwrap();
        train_task(&mut net, 0, &seq.tasks[0].train, 2, &spec(15)).unwrap();
        let before = all_logits(&net, &seq.tasks[0].test, 0);
        let trace = train_task(&mut net, 1, &seq.tasks[1].train, 2, &spec(15)).unwrap();
        assert!(trace.epoch_reg.iter().all(|r| (0.0..=0.1).contains(r)));
        let after = all_logits(&net, &seq.tasks[0].test, 0);
        let drift = before.iter().flatten().zip(after.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
        for k in 0..2 {
            assert!(til(&net, &seq.tasks[k].test, k) >= 99.0);
        }
    }

    #[test]
    fn sup_old_tasks_are_bit_identical() {
        let seq = gaussian(12);
        let mut rng = seeded_rng(2);
        let mut net = MaskedNet::sup(4, &[64, 64], HeadLayout::Plain, 32.0, &mut rng).unwrap();
        train_task(&mut net, 0, &seq.tasks[0].train, 2, &spec(15)).unwrap();
        let before = all_logits(&net, &seq.tasks[0].test, 0);
        train_task(&mut net, 1, &seq.tasks[1].train, 2, &spec(15)).unwrap();
        assert_eq!(before, all_logits(&net, &seq.tasks[0].test, 0));
        for k in 0..2 {
            assert!(til(&net, &seq.tasks[k].test, k) >= 99.0, "task {k}: {}", til(&net, &seq.tasks[k].test, k));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let seq = gaussian(13);
        let run = || {
            let mut net = MaskedNet::hat(4, &[8], HeadLayout::Plain, 400.0, vec![0.5], true, &mut seeded_rng(5)).unwrap();
            let t = train_task(&mut net, 0, &seq.tasks[0].train, 2, &spec(2)).unwrap();
            (net, t)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn task_order_and_layout_are_enforced() {
        let seq = gaussian(14);
        let mut net = MaskedNet::hat(4, &[8], HeadLayout::Plain, 400.0, vec![0.5], true, &mut seeded_rng(5)).unwrap();
        assert!(matches!(train_task(&mut net, 1, &seq.tasks[0].train, 2, &spec(1)), Err(BackboneError::State(_))));
        train_task(&mut net, 0, &seq.tasks[0].train, 2, &spec(1)).unwrap();
        assert!(matches!(train_task(&mut net, 0, &seq.tasks[0].train, 2, &spec(1)), Err(BackboneError::State(_))));
        let rot = TrainSpec { loss: LossSpec::RotationCe, ..spec(1) };
        assert!(matches!(train_task(&mut net, 1, &seq.tasks[1].train, 2, &rot), Err(BackboneError::Argument(_))));
        let mut bad = seq.tasks[1].train.clone();
        bad.y[0] = 5;
        assert!(train_task(&mut net, 1, &bad, 2, &spec(1)).is_err());
    }

    fn pack(net: &MaskedNet, task: usize) -> Vec<f64> {
        let Isolation::Hat(h) = &net.isolation else { unreachable!() };
        let mut p = net.trunk.params();
        p.extend(net.heads[task].params());
        p.extend(h.embeddings[task].iter().flatten());
        p
    }

    fn unpack(net: &mut MaskedNet, task: usize, p: &[f64]) {
        let nt = net.trunk.param_count();
        let nh = net.heads[task].param_count();
        net.trunk.set_params(&p[..nt]).unwrap();
        net.heads[task].set_params(&p[nt..nt + nh]).unwrap();
        let Isolation::Hat(h) = &mut net.isolation else { unreachable!() };
        let mut rest = &p[nt + nh..];
        for e in &mut h.embeddings[task] {
            let (a, b) = rest.split_at(e.len());
            e.copy_from_slice(a);
            rest = b;
        }
    }

    #[test]
    fn hat_objective_matches_finite_differences() {
        let mut cfg_rng = seeded_rng(77);
        for trial in 0..12 {
            let mut rng = seeded_rng(derive_seed(90, trial));
            let mut net = MaskedNet::hat(3, &[5, 4], HeadLayout::Plain, 400.0, vec![0.7], false, &mut rng).unwrap();
            // Nonzero biases keep pre-activations off the ReLU kink.
            for l in net.trunk.layers_mut() {
                l.bias.iter_mut().for_each(|b| *b = rng.gen_range(0.1..0.5));
            }
            // Fractional accumulated attention from an unsnapped earlier task.
            net.begin_task(0, 2, &mut rng).unwrap();
            if let Isolation::Hat(h) = &mut net.isolation {
                h.embeddings[0].iter_mut().flatten().for_each(|e| *e *= 0.004);
                h.finish_task(0);
            }
            net.finished = 1;
            net.begin_task(1, 3, &mut rng).unwrap();
            let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| cfg_rng.gen_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<usize> = (0..4).map(|_| cfg_rng.gen_range(0..3)).collect();
            let s = cfg_rng.gen_range(0.5..4.0);
            let p0 = pack(&net, 1);
            let report = grad_check(
                |p| {
                    let mut n = net.clone();
                    unpack(&mut n, 1, p);
                    let o = hat_objective(&n, 1, &xs, &ys, s).unwrap();
                    let mut g = o.trunk.flat_params();
                    g.extend(o.head.flat_params());
                    g.extend(o.embeddings.iter().flatten());
                    (o.loss, g)
                },
                &p0,
                1e-6,
                1e-4,
            );
            assert!(report.passed(), "trial {trial}: max rel error {} at {:?} of {}", report.max_rel_error, report.failures, p0.len());
        }
    }

    #[test]
    fn contrastive_then_head_trains_on_images() {
        let seq = synth_image_tasks(&ImageSpec {
            tasks: 1,
            classes_per_task: 2,
            side: 6,
            train_per_class: 12,
            test_per_class: 4,
            noise: 0.05,
            seed: 4,
        })
        .unwrap();
        let mut net = MaskedNet::hat(36, &[24], HeadLayout::Rotation { side: 6 }, 400.0, vec![0.5], true, &mut seeded_rng(8)).unwrap();
        let spec = TrainSpec {
            loss: LossSpec::ContrastiveThenCe { tau: 0.5, contrastive_epochs: 3 },
            epochs: 20,
            lr: 0.05,
            batch: 8,
            seed: 1,
            augment: Augment::default(),
        };
        let trace = train_task(&mut net, 0, &seq.tasks[0].train, 2, &spec).unwrap();
        assert_eq!(trace.contrastive_loss.len(), 3);
        assert!(trace.contrastive_loss.iter().all(|l| l.is_finite()));
        assert!(trace.epoch_loss.last().unwrap() < trace.epoch_loss.first().unwrap());
        assert_eq!(net.logits(&seq.tasks[0].test.x[0], 0).unwrap().len(), 8);
        assert_eq!(net.finished, 1);
    }
}
