//! Seeded randomized suites for the identity and every bound in this module.
//!
//! Trial `i` of a suite draws from its own generator seeded by
//! `derive_seed(seed, i)`, so a reported counterexample replays from
//! `(suite, seed, trial)` alone.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use std::fmt;

use super::*;
use crate::numkit::{derive_seed, seeded_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Identity,
    Theorem1,
    Corollary1,
    Theorem2,
    Theorem3,
    Theorem4,
    Theorem5,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Identity,
        Suite::Theorem1,
        Suite::Corollary1,
        Suite::Theorem2,
        Suite::Theorem3,
        Suite::Theorem4,
        Suite::Theorem5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Identity => "identity",
            Suite::Theorem1 => "theorem1",
            Suite::Corollary1 => "corollary1",
            Suite::Theorem2 => "theorem2",
            Suite::Theorem3 => "theorem3",
            Suite::Theorem4 => "theorem4",
            Suite::Theorem5 => "theorem5",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub trials: usize,
    pub seed: u64,
    /// Negates every verdict; exercises the failure path of callers.
    pub inject_fault: bool,
}

#[derive(Debug, Clone)]
pub struct Counterexample {
    pub trial: usize,
    pub trial_seed: u64,
    pub instance: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub trials: usize,
    pub passed: usize,
    pub counterexample: Option<Counterexample>,
}

impl SuiteOutcome {
    pub fn ok(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Largest gap found between `h_cil` and `h_wp + h_tp`; only the identity suite sets it.
pub const IDENTITY_TOL: f64 = 1e-9;

/// Runs `cfg.trials` instances, stopping at the first counterexample.
pub fn run_suite(suite: Suite, cfg: SuiteConfig) -> SuiteOutcome {
    let mut passed = 0;
    for trial in 0..cfg.trials {
        let trial_seed = derive_seed(cfg.seed, trial as u64);
        let mut rng = seeded_rng(trial_seed);
        let (instance, verdict) = run_trial(suite, &mut rng);
        let verdict = match verdict {
            Ok(v) => Ok(v != cfg.inject_fault),
            Err(e) => Err(e),
        };
        match verdict {
            Ok(true) => passed += 1,
            other => {
                let reason = match other {
                    Ok(_) => "inequality violated".to_string(),
                    Err(e) => e.to_string(),
                };
                return SuiteOutcome {
                    suite,
                    trials: cfg.trials,
                    passed,
                    counterexample: Some(Counterexample { trial, trial_seed, instance, reason }),
                };
            }
        }
    }
    SuiteOutcome { suite, trials: cfg.trials, passed, counterexample: None }
}

/// Replays a single trial seed; returns the instance description and verdict.
pub fn replay(suite: Suite, trial_seed: u64) -> (String, Result<bool, TheoryError>) {
    run_trial(suite, &mut seeded_rng(trial_seed))
}

fn run_trial(suite: Suite, rng: &mut Rng) -> (String, Result<bool, TheoryError>) {
    match suite {
        Suite::Identity => {
            let inst = Decomposed::draw(rng, Extremes::Floored);
            let r = inst.report();
            let gap = (r.h_cil - r.h_wp - r.h_tp).abs();
            (format!("{inst:?} gap={gap:e}"), Ok(gap < IDENTITY_TOL))
        }
        Suite::Theorem1 => {
            let inst = Decomposed::draw(rng, Extremes::Allowed);
            let r = inst.report();
            let (eps, delta) = (r.h_wp + slack(rng), r.h_tp + slack(rng));
            (format!("{inst:?} eps={eps:e} delta={delta:e}"), check_theorem1(&r, eps, delta))
        }
        Suite::Corollary1 => {
            let n = rng.gen_range(1..=8);
            let insts: Vec<_> = (0..n).map(|_| Decomposed::draw(rng, Extremes::Allowed)).collect();
            let reports: Vec<_> = insts.iter().map(Decomposed::report).collect();
            let m = n as f64;
            let eps = reports.iter().map(|r| r.h_wp).sum::<f64>() / m + slack(rng);
            let delta = reports.iter().map(|r| r.h_tp).sum::<f64>() / m + slack(rng);
            let v = check_corollary1(&reports, eps, delta).map(|v| v.given_tp && v.given_wp);
            (format!("{insts:?} eps={eps:e} delta={delta:e}"), v)
        }
        Suite::Theorem2 => {
            let t = rng.gen_range(1..=6);
            let tp = draw_categorical(rng, t, Extremes::Allowed);
            let k0 = rng.gen_range(0..t);
            let delta = tight_tp_delta(&tp, k0) + slack(rng);
            let part_i = check_theorem2_i(&tp, k0, delta);
            let profile = draw_profile(rng, t);
            let deltas: Vec<f64> =
                ood_entropies(&profile, k0).into_iter().map(|h| h + slack(rng)).collect();
            let part_ii = check_theorem2_ii(&profile, &deltas, k0);
            let desc = format!("tp={tp:?} k0={k0} delta={delta:e} profile={profile:?} deltas={deltas:?}");
            (desc, part_i.and_then(|a| part_ii.map(|b| a && b)))
        }
        Suite::Theorem3 => {
            let inst = Decomposed::draw(rng, Extremes::Allowed);
            let r = inst.report();
            let eps = r.h_wp + slack(rng);
            let deltas: Vec<f64> = r.h_ood.iter().map(|h| h + slack(rng)).collect();
            let v = check_theorem3(&r, eps, &deltas, inst.truth.task);
            (format!("{inst:?} eps={eps:e} deltas={deltas:?}"), v)
        }
        Suite::Theorem4 => {
            let topo = draw_topology(rng);
            let cil = draw_categorical(rng, topo.total_classes(), Extremes::Allowed);
            let truth = draw_truth(rng, &topo);
            let v = theorem4_construct(&cil, &topo, truth).map(|c| c.verdicts.iter().all(|&b| b));
            (format!("topo={:?} cil={cil:?} truth={truth:?}", topo.sizes()), v)
        }
        Suite::Theorem5 => {
            let t = rng.gen_range(1..=6);
            let taus: Vec<f64> = (0..t).map(|_| 10f64.powf(rng.gen_range(-1.0..=1.0))).collect();
            let tp = draw_categorical(rng, t, Extremes::Allowed);
            let k0 = rng.gen_range(0..t);
            let delta = tight_tp_delta(&tp, k0) + slack(rng);
            let part_i = check_theorem5_i(&tp, &taus, k0, delta);
            let profile = draw_profile(rng, t);
            let deltas: Vec<f64> =
                ood_entropies(&profile, k0).into_iter().map(|h| h + slack(rng)).collect();
            let part_ii = check_theorem5_ii(&profile, &taus, &deltas, k0);
            let desc = format!(
                "taus={taus:?} tp={tp:?} k0={k0} delta={delta:e} profile={profile:?} deltas={deltas:?}"
            );
            (desc, part_i.and_then(|a| part_ii.map(|b| a && b)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Extremes {
    /// Probabilities may be arbitrarily close to 0 or 1.
    Allowed,
    /// Every probability stays above 1e-5 so no product reaches the log clamp.
    Floored,
}

#[derive(Debug)]
struct Decomposed {
    sizes: Vec<usize>,
    wp: Vec<Categorical>,
    tp: Categorical,
    truth: GroundTruth,
}

impl Decomposed {
    fn draw(rng: &mut Rng, extremes: Extremes) -> Self {
        let topo = draw_topology(rng);
        let wp = topo.sizes().iter().map(|&n| draw_categorical(rng, n, extremes)).collect();
        let tp = draw_categorical(rng, topo.task_count(), extremes);
        let truth = draw_truth(rng, &topo);
        Self { sizes: topo.sizes().to_vec(), wp, tp, truth }
    }

    fn report(&self) -> EntropyReport {
        let topo = TaskTopology::new(self.sizes.clone()).unwrap();
        entropy_report(Prediction::Decomposed { wp: &self.wp, tp: &self.tp }, self.truth, &topo)
            .expect("generated instances are well formed")
    }
}

fn draw_topology(rng: &mut Rng) -> TaskTopology {
    let t = rng.gen_range(1..=6);
    TaskTopology::new((0..t).map(|_| rng.gen_range(1..=5)).collect()).unwrap()
}

fn draw_truth(rng: &mut Rng, topo: &TaskTopology) -> GroundTruth {
    let task = rng.gen_range(0..topo.task_count());
    GroundTruth::new(task, rng.gen_range(0..topo.class_count(task)))
}

/// Flat-to-peaked draws: exponential weights raised to a random sharpness.
fn draw_categorical(rng: &mut Rng, n: usize, extremes: Extremes) -> Categorical {
    let sharpness = [1.0, 1.0, 3.0, 10.0, 40.0][rng.gen_range(0..5)];
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).map(|e: f64| e.powf(sharpness)).collect();
    if extremes == Extremes::Allowed && rng.gen_bool(0.05) {
        let hot = rng.gen_range(0..n);
        w.iter_mut().enumerate().for_each(|(i, x)| *x = if i == hot { 1.0 } else { 0.0 });
    }
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = if s > 0.0 && s.is_finite() {
        w.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    if extremes == Extremes::Floored {
        let floor = 1e-4;
        p.iter_mut().for_each(|x| *x = (1.0 - floor) * *x + floor / n as f64);
    }
    Categorical::normalized(p).unwrap()
}

fn draw_profile(rng: &mut Rng, n: usize) -> OodProfile {
    loop {
        let p: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => rng.gen_range(0.0..=1.0),
                1 => rng.gen_range(0.0..1e-3),
                2 => 1.0 - rng.gen_range(0.0..1e-3),
                _ => rng.gen::<f64>().powi(3),
            })
            .collect();
        if p.iter().any(|&x| x > 0.0) {
            return OodProfile::new(p).unwrap();
        }
    }
}

/// `−ln TP(k0)`, raised to `−ln(1 − Σ_{j≠k0} TP(j))` when rounding in `TP(k0)` would
/// otherwise make the tight instance claim more mass than the other entries leave.
fn tight_tp_delta(tp: &Categorical, k0: usize) -> f64 {
    let rest: f64 = tp.probs().iter().enumerate().filter(|&(j, _)| j != k0).map(|(_, p)| p).sum();
    let direct = super::cross_entropy(k0, tp).unwrap();
    if rest < 1.0 {
        direct.max(-(-rest).ln_1p())
    } else {
        direct
    }
}

/// Hypothesis slack: tight half the time, otherwise a random positive margin.
fn slack(rng: &mut Rng) -> f64 {
    if rng.gen_bool(0.5) {
        0.0
    } else {
        let e: f64 = Exp1.sample(rng);
        0.5 * e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_a_short_run() {
        for s in Suite::ALL {
            let o = run_suite(s, SuiteConfig { trials: 500, seed: 7, inject_fault: false });
            assert!(o.ok(), "{s}: {:?}", o.counterexample);
            assert_eq!(o.passed, 500);
        }
    }

    #[test]
    fn injected_fault_fails_on_first_trial_and_replays() {
        let o = run_suite(Suite::Theorem1, SuiteConfig { trials: 10, seed: 3, inject_fault: true });
        let c = o.counterexample.expect("fault must surface");
        assert_eq!(c.trial, 0);
        let (instance, verdict) = replay(Suite::Theorem1, c.trial_seed);
        assert_eq!(instance, c.instance);
        assert_eq!(verdict, Ok(true));
    }

    #[test]
    fn names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::from_name(s.name()), Some(s));
        }
        assert_eq!(Suite::from_name("theorem9"), None);
    }
}
