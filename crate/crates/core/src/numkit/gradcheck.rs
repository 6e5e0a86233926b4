/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub rel_errors: Vec<f64>,
    /// Indices whose relative error exceeded the tolerance.
    pub failures: Vec<usize>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Checks `loss` (returning value and analytic gradient) at `params` with step `h`.
pub fn grad_check<F>(mut loss: F, params: &[f64], h: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let mut p = params.to_vec();
    let mut rel_errors = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p).0;
        p[i] = orig - h;
        let down = loss(&p).0;
        p[i] = orig;
        rel_errors.push(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    let failures = rel_errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| !(e < tol))
        .map(|(i, _)| i)
        .collect();
    GradCheckReport {
        max_rel_error: rel_errors.iter().copied().fold(0.0, f64::max),
        rel_errors,
        failures,
        tolerance: tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{seeded_rng, softmax_cross_entropy};
    use rand::Rng;

    #[test]
    fn quadratic_matches_to_machine_precision() {
        let p = [0.3, -1.2, 2.0, 0.0];
        let r = grad_check(
            |p| (0.5 * p.iter().map(|x| x * x).sum::<f64>(), p.to_vec()),
            &p,
            1e-6,
            1e-8,
        );
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn softmax_ce_on_random_logits() {
        let mut rng = seeded_rng(42);
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t = rng.gen_range(0..n);
            let r = grad_check(|p| softmax_cross_entropy(p, t).unwrap(), &logits, 1e-6, 1e-6);
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let r = grad_check(|p| (p[0] * p[0], vec![p[0]]), &[1.0], 1e-6, 1e-4);
        assert!(!r.passed());
        assert_eq!(r.failures, vec![0]);
    }
}
