use super::entropy::{cross_entropy, ood_entropies};
use super::{
    arg, le, Categorical, EntropyReport, GroundTruth, OodProfile, TaskTopology, TheoryError,
};
use crate::numkit::clamped_ln;

fn hypothesis(msg: String) -> TheoryError {
    TheoryError::Hypothesis(msg)
}

/// Given `H_WP ≤ ε` and `H_TP ≤ δ`, is `H_CIL ≤ ε + δ`?
pub fn check_theorem1(report: &EntropyReport, eps: f64, delta: f64) -> Result<bool, TheoryError> {
    if !le(report.h_wp, eps) {
        return Err(hypothesis(format!("H_WP = {} > ε = {eps}", report.h_wp)));
    }
    if !le(report.h_tp, delta) {
        return Err(hypothesis(format!("H_TP = {} > δ = {delta}", report.h_tp)));
    }
    Ok(le(report.h_cil, eps + delta))
}

/// Both directions of the in-expectation statement over a sample of inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corollary1Verdict {
    /// `E[H_TP] ≤ δ ⇒ E[H_CIL] ≤ E[H_WP] + δ`
    pub given_tp: bool,
    /// `E[H_WP] ≤ ε ⇒ E[H_CIL] ≤ ε + E[H_TP]`
    pub given_wp: bool,
}

pub fn check_corollary1(
    reports: &[EntropyReport],
    eps: f64,
    delta: f64,
) -> Result<Corollary1Verdict, TheoryError> {
    if reports.is_empty() {
        return Err(arg("corollary check needs at least one report"));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EntropyReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let (wp, tp, cil) = (mean(|r| r.h_wp), mean(|r| r.h_tp), mean(|r| r.h_cil));
    if !le(tp, delta) {
        return Err(hypothesis(format!("E[H_TP] = {tp} > δ = {delta}")));
    }
    if !le(wp, eps) {
        return Err(hypothesis(format!("E[H_WP] = {wp} > ε = {eps}")));
    }
    Ok(Corollary1Verdict { given_tp: le(cil, wp + delta), given_wp: le(cil, eps + tp) })
}

/// Detectors read straight off the task-id distribution: `P'_k = TP(k)`.
pub fn ood_from_tp(tp: &Categorical) -> OodProfile {
    OodProfile::new(tp.probs().iter().map(|p| p.min(1.0)).collect())
        .expect("categorical entries lie in [0,1]")
}

/// `TP(k) = P'_k / Σ_j P'_j`.
pub fn tp_from_ood(profile: &OodProfile) -> Result<Categorical, TheoryError> {
    Categorical::normalized(profile.probs().to_vec())
        .map_err(|_| TheoryError::Degenerate("every OOD probability is zero".into()))
}

/// `e^{δ_{k0}} · Σ_k (1 − e^{−δ_k})`: the TP cross-entropy bound implied by OOD bounds `δ_k`.
pub fn theorem2_bound(deltas: &[f64], true_task: usize) -> Result<f64, TheoryError> {
    if true_task >= deltas.len() {
        return Err(arg(format!("true task {true_task} out of range for {} tasks", deltas.len())));
    }
    if let Some(k) = deltas.iter().position(|d| !(*d >= 0.0)) {
        return Err(arg(format!("δ_{k} = {} is negative", deltas[k])));
    }
    Ok(deltas[true_task].exp() * deltas.iter().map(|d| -(-d).exp_m1()).sum::<f64>())
}

/// Part (i): `H_TP ≤ δ` implies `H_OOD,k ≤ δ` for every task when `P'_k = TP(k)`.
pub fn check_theorem2_i(tp: &Categorical, true_task: usize, delta: f64) -> Result<bool, TheoryError> {
    let h_tp = cross_entropy(true_task, tp)?;
    if !le(h_tp, delta) {
        return Err(hypothesis(format!("H_TP = {h_tp} > δ = {delta}")));
    }
    Ok(ood_entropies_of_tp(tp, true_task).iter().all(|&h| le(h, delta)))
}

/// `H_OOD,k` for `P' = TP`, with `1 − TP(k)` summed from the other entries so it does not
/// cancel when `TP(k) ≈ 1`.
fn ood_entropies_of_tp(tp: &Categorical, true_task: usize) -> Vec<f64> {
    let total = tp.sum();
    (0..tp.len())
        .map(|k| {
            if k == true_task {
                -clamped_ln(tp.get(k))
            } else {
                let rest: f64 = tp.probs().iter().enumerate().filter(|&(j, _)| j != k).map(|(_, p)| p).sum();
                -clamped_ln(rest / total)
            }
        })
        .collect()
}

/// Part (ii): `H_OOD,k ≤ δ_k` implies `H_TP ≤ theorem2_bound(δ)` for the normalized profile.
pub fn check_theorem2_ii(
    profile: &OodProfile,
    deltas: &[f64],
    true_task: usize,
) -> Result<bool, TheoryError> {
    check_ood_hypotheses(profile, deltas, true_task)?;
    let tp = tp_from_ood(profile)?;
    let h_tp = cross_entropy(true_task, &tp)?;
    Ok(le(h_tp, theorem2_bound(deltas, true_task)?))
}

fn check_ood_hypotheses(
    profile: &OodProfile,
    deltas: &[f64],
    true_task: usize,
) -> Result<(), TheoryError> {
    if deltas.len() != profile.len() {
        return Err(arg(format!("{} deltas for {} tasks", deltas.len(), profile.len())));
    }
    if true_task >= profile.len() {
        return Err(arg(format!("true task {true_task} out of range")));
    }
    let h_ood = ood_entropies(profile, true_task);
    for (k, (&h, &d)) in h_ood.iter().zip(deltas).enumerate() {
        if !le(h, d) {
            return Err(hypothesis(format!("H_OOD,{k} = {h} > δ_{k} = {d}")));
        }
    }
    Ok(())
}

/// Given `H_WP ≤ ε` and `H_OOD,k ≤ δ_k`, is `H_CIL ≤ ε + theorem2_bound(δ)`?
pub fn check_theorem3(
    report: &EntropyReport,
    eps: f64,
    deltas: &[f64],
    true_task: usize,
) -> Result<bool, TheoryError> {
    if !le(report.h_wp, eps) {
        return Err(hypothesis(format!("H_WP = {} > ε = {eps}", report.h_wp)));
    }
    if deltas.len() != report.h_ood.len() {
        return Err(arg(format!("{} deltas for {} tasks", deltas.len(), report.h_ood.len())));
    }
    for (k, (&h, &d)) in report.h_ood.iter().zip(deltas).enumerate() {
        if !le(h, d) {
            return Err(hypothesis(format!("H_OOD,{k} = {h} > δ_{k} = {d}")));
        }
    }
    Ok(le(report.h_cil, eps + theorem2_bound(deltas, true_task)?))
}

/// WP, TP and OOD detectors built from a CIL distribution, each no worse than it.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem4Construction {
    /// `WP_k(j) := CIL(k, j)`, left sub-normalized.
    pub wp: Vec<Categorical>,
    /// `WP_k(j) := CIL(k, j) / Σ_j CIL(k, j)`; uniform for tasks with no mass.
    pub wp_normalized: Vec<Categorical>,
    /// `TP(k) := Σ_j CIL(k, j)`
    pub tp: Categorical,
    /// `P'_k := TP(k)`
    pub ood: OodProfile,
    pub h_cil: f64,
    pub h_wp: f64,
    pub h_tp: f64,
    pub h_ood: Vec<f64>,
    /// `[H_WP ≤ H_CIL, H_TP ≤ H_CIL, max_k H_OOD,k ≤ H_CIL]`
    pub verdicts: [bool; 3],
}

pub fn theorem4_construct(
    cil: &Categorical,
    topo: &TaskTopology,
    truth: GroundTruth,
) -> Result<Theorem4Construction, TheoryError> {
    truth.validate(topo)?;
    if cil.len() != topo.total_classes() {
        return Err(arg(format!(
            "CIL distribution has {} classes, topology has {}",
            cil.len(),
            topo.total_classes()
        )));
    }
    let mut wp = Vec::with_capacity(topo.task_count());
    let mut wp_normalized = Vec::with_capacity(topo.task_count());
    let mut tp = Vec::with_capacity(topo.task_count());
    for k in 0..topo.task_count() {
        let o = topo.offset(k);
        let slice = cil.probs()[o..o + topo.class_count(k)].to_vec();
        let mass: f64 = slice.iter().sum();
        tp.push(mass);
        wp_normalized.push(if mass > 0.0 {
            Categorical::normalized(slice.clone())?
        } else {
            Categorical::uniform(slice.len())
        });
        wp.push(Categorical::sub_normalized(slice)?);
    }
    let tp = Categorical::new(tp)?;
    let ood = ood_from_tp(&tp);
    let h_cil = cross_entropy(topo.global(truth.task, truth.class), cil)?;
    let h_wp = -clamped_ln(wp[truth.task].get(truth.class));
    let h_tp = cross_entropy(truth.task, &tp)?;
    let h_ood = ood_entropies_of_tp(&tp, truth.task);
    let verdicts = [
        le(h_wp, h_cil),
        le(h_tp, h_cil),
        h_ood.iter().all(|&h| le(h, h_cil)),
    ];
    Ok(Theorem4Construction { wp, wp_normalized, tp, ood, h_cil, h_wp, h_tp, h_ood, verdicts })
}

fn check_taus(taus: &[f64], n: usize) -> Result<(), TheoryError> {
    if taus.len() != n {
        return Err(arg(format!("{} temperatures for {n} tasks", taus.len())));
    }
    if let Some(k) = taus.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(arg(format!("temperature τ_{k} = {} must be positive", taus[k])));
    }
    Ok(())
}

/// Tempered detectors `P'_k = TP(k)^{1/τ_k}` with their per-task OOD bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem5Ood {
    pub profile: OodProfile,
    pub h_ood: Vec<f64>,
    /// `max(δ/τ_k, −ln(1 − (1 − e^{−δ})^{1/τ_k}))` with `δ = H_TP`.
    pub bounds: Vec<f64>,
    pub delta: f64,
}

pub fn theorem5_ood_from_tp(
    tp: &Categorical,
    taus: &[f64],
    true_task: usize,
) -> Result<Theorem5Ood, TheoryError> {
    check_taus(taus, tp.len())?;
    let delta = cross_entropy(true_task, tp)?;
    theorem5_ood_with_delta(tp, taus, true_task, delta)
}

fn theorem5_ood_with_delta(
    tp: &Categorical,
    taus: &[f64],
    true_task: usize,
    delta: f64,
) -> Result<Theorem5Ood, TheoryError> {
    let profile = OodProfile::new(
        tp.probs().iter().zip(taus).map(|(p, t)| p.min(1.0).powf(1.0 / t)).collect(),
    )?;
    let h_ood = ood_entropies(&profile, true_task);
    let miss = -(-delta).exp_m1();
    let bounds = taus
        .iter()
        .map(|t| (delta / t).max(-clamped_ln(1.0 - miss.powf(1.0 / t))))
        .collect();
    Ok(Theorem5Ood { profile, h_ood, bounds, delta })
}

/// Part (i) of the tempered extension: `H_TP ≤ δ ⇒ H_OOD,k ≤ bound_k(δ)`.
pub fn check_theorem5_i(
    tp: &Categorical,
    taus: &[f64],
    true_task: usize,
    delta: f64,
) -> Result<bool, TheoryError> {
    check_taus(taus, tp.len())?;
    let h_tp = cross_entropy(true_task, tp)?;
    if !le(h_tp, delta) {
        return Err(hypothesis(format!("H_TP = {h_tp} > δ = {delta}")));
    }
    let r = theorem5_ood_with_delta(tp, taus, true_task, delta)?;
    Ok(r.h_ood.iter().zip(&r.bounds).all(|(&h, &b)| le(h, b)))
}

/// `TP(k) ∝ P'_k^{1/τ_k}`. Plain powers are used whenever they do not underflow, so
/// `τ = 1` reproduces [`tp_from_ood`] exactly; otherwise normalization runs in log space.
pub fn tp_from_ood_tempered(profile: &OodProfile, taus: &[f64]) -> Result<Categorical, TheoryError> {
    check_taus(taus, profile.len())?;
    let direct: Vec<f64> = profile.probs().iter().zip(taus).map(|(p, t)| p.powf(1.0 / t)).collect();
    let s: f64 = direct.iter().sum();
    if s > 0.0 && s.is_finite() && direct.iter().all(|w| *w == 0.0 || w.is_normal()) {
        return Categorical::normalized(direct);
    }
    let logs: Vec<f64> = profile
        .probs()
        .iter()
        .zip(taus)
        .map(|(&p, t)| if p > 0.0 { p.ln() / t } else { f64::NEG_INFINITY })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(TheoryError::Degenerate("every OOD probability is zero".into()));
    }
    Categorical::normalized(logs.iter().map(|l| (l - m).exp()).collect())
}

/// Tempered task-id distribution with its cross-entropy bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem5Tp {
    pub tp: Categorical,
    pub h_tp: f64,
    /// `None` when `(1 − e^{−δ_{k0}})^{1/τ_{k0}} = 1` makes the bound's denominator vanish.
    pub bound: Option<f64>,
}

pub fn theorem5_tp_from_ood(
    profile: &OodProfile,
    taus: &[f64],
    deltas: &[f64],
    true_task: usize,
) -> Result<Theorem5Tp, TheoryError> {
    check_taus(taus, profile.len())?;
    if deltas.len() != profile.len() || true_task >= profile.len() {
        return Err(arg("deltas / true task do not match the profile"));
    }
    if let Some(k) = deltas.iter().position(|d| !(*d >= 0.0)) {
        return Err(arg(format!("δ_{k} = {} is negative", deltas[k])));
    }
    let tp = tp_from_ood_tempered(profile, taus)?;
    let h_tp = cross_entropy(true_task, &tp)?;
    let miss = |k: usize| (-(-deltas[k]).exp_m1()).powf(1.0 / taus[k]);
    let numer: f64 = (0..deltas.len()).map(miss).sum();
    let denom = 1.0 - miss(true_task);
    let bound = (denom > 0.0).then(|| deltas[true_task] / taus[true_task] + numer / denom);
    Ok(Theorem5Tp { tp, h_tp, bound })
}

/// Part (ii) of the tempered extension. A degenerate (infinite) bound holds trivially.
pub fn check_theorem5_ii(
    profile: &OodProfile,
    taus: &[f64],
    deltas: &[f64],
    true_task: usize,
) -> Result<bool, TheoryError> {
    check_ood_hypotheses(profile, deltas, true_task)?;
    let r = theorem5_tp_from_ood(profile, taus, deltas, true_task)?;
    Ok(r.bound.is_none_or(|b| le(r.h_tp, b)))
}
