use super::{arg, Categorical, EntropyReport, GroundTruth, OodProfile, TaskTopology, TheoryError};
use crate::numkit::clamped_ln;

/// `−ln pred[target]`, with the argument of `ln` clamped at 1e-12.
pub fn cross_entropy(target: usize, pred: &Categorical) -> Result<f64, TheoryError> {
    if target >= pred.len() {
        return Err(arg(format!("target {target} out of range for {} classes", pred.len())));
    }
    Ok(-clamped_ln(pred.get(target)))
}

/// CIL distribution `P(k, j) = WP_k(j) · TP(k)` flattened in global class order.
pub fn compose_cil(
    wp: &[Categorical],
    tp: &Categorical,
    topo: &TaskTopology,
) -> Result<Categorical, TheoryError> {
    check_parts(wp, tp, topo)?;
    let mut out = Vec::with_capacity(topo.total_classes());
    for (w, &t) in wp.iter().zip(tp.probs()) {
        out.extend(w.probs().iter().map(|p| p * t));
    }
    Categorical::new(out)
}

fn check_parts(wp: &[Categorical], tp: &Categorical, topo: &TaskTopology) -> Result<(), TheoryError> {
    if tp.len() != topo.task_count() || wp.len() != topo.task_count() {
        return Err(arg(format!(
            "expected {} tasks, got |tp| = {} and |wp| = {}",
            topo.task_count(),
            tp.len(),
            wp.len()
        )));
    }
    for (k, w) in wp.iter().enumerate() {
        if w.len() != topo.class_count(k) {
            return Err(arg(format!(
                "task {k}: WP has {} classes, topology says {}",
                w.len(),
                topo.class_count(k)
            )));
        }
    }
    Ok(())
}

/// What an [`entropy_report`] is computed from.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    /// Separate WP and TP; the CIL distribution is their product.
    Decomposed { wp: &'a [Categorical], tp: &'a Categorical },
    /// A CIL distribution over all classes; WP and TP are its marginal and conditional.
    Joint(&'a Categorical),
}

/// Per-task OOD cross-entropies: `−ln P'_k` for the true task, `−ln(1 − P'_k)` otherwise.
pub fn ood_entropies(profile: &OodProfile, true_task: usize) -> Vec<f64> {
    profile
        .probs()
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == true_task { -clamped_ln(p) } else { -clamped_ln(1.0 - p) })
        .collect()
}

/// H_WP, H_TP, H_CIL and the OOD entropies of the detectors `P'_k = TP(k)`.
pub fn entropy_report(
    prediction: Prediction<'_>,
    truth: GroundTruth,
    topo: &TaskTopology,
) -> Result<EntropyReport, TheoryError> {
    truth.validate(topo)?;
    match prediction {
        Prediction::Decomposed { wp, tp } => {
            let cil = compose_cil(wp, tp, topo)?;
            let h_wp = cross_entropy(truth.class, &wp[truth.task])?;
            let h_tp = cross_entropy(truth.task, tp)?;
            let h_cil = cross_entropy(topo.global(truth.task, truth.class), &cil)?;
            let profile = OodProfile::new(tp.probs().to_vec())?;
            Ok(EntropyReport { h_wp, h_tp, h_cil, h_ood: ood_entropies(&profile, truth.task) })
        }
        Prediction::Joint(cil) => {
            if cil.len() != topo.total_classes() {
                return Err(arg(format!(
                    "CIL distribution has {} classes, topology has {}",
                    cil.len(),
                    topo.total_classes()
                )));
            }
            let tp_mass: Vec<f64> = (0..topo.task_count())
                .map(|k| {
                    let o = topo.offset(k);
                    cil.probs()[o..o + topo.class_count(k)].iter().sum()
                })
                .collect();
            let p_true = cil.get(topo.global(truth.task, truth.class));
            let t_true = tp_mass[truth.task];
            let h_cil = -clamped_ln(p_true);
            let h_tp = -clamped_ln(t_true);
            let h_wp = if t_true > 0.0 { -clamped_ln(p_true / t_true) } else { -clamped_ln(0.0) };
            let profile = OodProfile::new(tp_mass.iter().map(|p| p.min(1.0)).collect())?;
            Ok(EntropyReport { h_wp, h_tp, h_cil, h_ood: ood_entropies(&profile, truth.task) })
        }
    }
}
